"""Anchors, target assignment, losses, the network and its training loop."""

from .anchors import IGNORE, NEGATIVE, TargetAssignment, assign_targets, generate_anchors, grid_sizes
from .boxes import clip_boxes, decode_box, encode_box, iou, iou_matrix
from .losses import focal_loss, focal_loss_with_logits, smooth_l1_loss
from .model import HeadOutputs, active_param_names, baseline_forward, harnet_forward, init_params

__all__ = [
    "IGNORE", "NEGATIVE", "HeadOutputs", "TargetAssignment", "active_param_names", "assign_targets",
    "baseline_forward", "clip_boxes", "decode_box", "encode_box", "focal_loss", "focal_loss_with_logits",
    "generate_anchors", "grid_sizes", "harnet_forward", "init_params", "iou", "iou_matrix", "smooth_l1_loss",
]
