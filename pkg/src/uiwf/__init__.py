"""Desk-scale toolkit for screen-recording workflows: frame deduplication,
synthetic context augmentation, hierarchical contrastive training, and
embedding evaluation."""

__version__ = "0.1.0"
