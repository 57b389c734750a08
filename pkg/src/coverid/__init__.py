"""coverid: desk-scale cover song identification toolkit.

Pipeline: constant-Q features -> Conformer encoder with attentive time
pooling -> joint focal/center/triplet training -> chunk-offset alignment
and a second training pass on aligned crops -> cosine retrieval with
mAP / MR1 / hit-rate evaluation.
"""

__version__ = "0.1.0"
