"""Batched inference, single- and multi-scale detection, and evaluation."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .config import DetectConfig
from .detector.anchors import generate_anchors
from .detector.model import harnet_forward
from .postprocess import compute_ap, detect_from_levels, merge_multiscale, scale_outputs
from .tensor import Tensor, no_grad


def resize_image(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a C×H×W image with pixel-centre alignment."""
    c, h, w = image.shape
    if (h, w) == (height, width):
        return image
    ys = (np.arange(height) + 0.5) * (h / height) - 0.5
    xs = (np.arange(width) + 0.5) * (w / width) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = [ndimage.map_coordinates(image[i], [yy, xx], order=1, mode="nearest") for i in range(c)]
    return np.stack(out).astype(image.dtype)


def predict(params, config: DetectConfig, images: np.ndarray, batch_size: int = 16) -> list:
    """HeadOutputs for N×3×H×W images, one per chunk of ``batch_size``."""
    outs = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            outs.append(harnet_forward(Tensor(images[start:start + batch_size]), params, config))
    return outs


def _per_image(outs):
    for head in outs:
        for j in range(head.cls_probs[0].dims[0]):
            yield head, j


def detect_scenes(scenes, params, config: DetectConfig, sizes=None, batch_size: int = 16) -> dict:
    """{image_id: [Detection]} in original-image pixels.

    ``sizes`` lists test short sides for multi-scale testing; None (or a
    single size equal to the native one) is plain single-scale detection.
    """
    post = config.post
    if not scenes:
        return {}
    h, w = scenes[0].image.shape[1:]
    native = np.stack([s.image for s in scenes])
    if sizes is None:
        anchors = generate_anchors(config, (h, w))
        outs = predict(params, config, native, batch_size)
        return {s.image_id: detect_from_levels(head.level_arrays(j), anchors, post, (w, h))
                for s, (head, j) in zip(scenes, _per_image(outs))}

    per_scale = []
    for side in sizes:
        scale = side / min(h, w)
        th, tw = int(round(h * scale)), int(round(w * scale))
        imgs = np.stack([resize_image(im, th, tw) for im in native])
        anchors = generate_anchors(config, (th, tw))
        outs = predict(params, config, imgs, batch_size)
        per_scale.append([scale_outputs(head, anchors, scale, j) for head, j in _per_image(outs)])
    return {s.image_id: merge_multiscale([ps[k] for ps in per_scale], post, (w, h))
            for k, s in enumerate(scenes)}


def ground_truth(scenes) -> dict:
    return {s.image_id: (s.boxes, s.classes) for s in scenes}


def evaluate(scenes, params, config: DetectConfig, sizes=None):
    """(APMetrics, detections) on annotated scenes."""
    dets = detect_scenes(scenes, params, config, sizes)
    ev = config.eval
    metrics = compute_ap(dets, ground_truth(scenes), small_max=ev.small_max, medium_max=ev.medium_max,
                         max_dets=config.post.max_dets)
    return metrics, dets
