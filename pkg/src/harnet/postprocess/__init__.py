"""Raw head outputs to final detections, and their evaluation."""

from .decode import decode_detections, decode_levels
from .metrics import APMetrics, compute_ap, precision_recall
from .multiscale import ScaleLevel, ScaleOutputs, merge_multiscale, scale_outputs, shared_resolutions
from .nms import bbox_vote, soft_nms, soft_nms_per_class, vote_box
from .pipeline import detect_from_levels, finalize

__all__ = [
    "APMetrics", "ScaleLevel", "ScaleOutputs", "bbox_vote", "compute_ap", "decode_detections", "decode_levels",
    "detect_from_levels", "finalize", "merge_multiscale", "precision_recall", "scale_outputs",
    "shared_resolutions", "soft_nms", "soft_nms_per_class", "vote_box",
]
