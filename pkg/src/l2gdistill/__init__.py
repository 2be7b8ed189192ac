"""Hybrid local-to-global cluster contrast with probability distillation.

Unsupervised metric learning on synthetic multi-camera identity data:
DBSCAN pseudo-labels, a momentum memory bank, hardest-example contrastive
losses, and an EMA teacher whose sharpened centroid probabilities
regularize the student.
"""

__version__ = "0.1.0"
