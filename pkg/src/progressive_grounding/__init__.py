"""Coarse-to-fine temporal grounding over a pooled key/value cache, with the
evaluation, augmentation and curation tooling around it."""

__version__ = "0.1.0"

from .intervals import TimeInterval, center_bin, iou, mean_iou, query_center, recall_at  # noqa: E402

__all__ = ["TimeInterval", "center_bin", "iou", "mean_iou", "query_center", "recall_at", "__version__"]
