"""Synthetic shapes corpus: generation, PPM/JSON storage, loading, flipping."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, IoError

CLASSES = ("circle", "square", "triangle")


@dataclass
class SyntheticScene:
    image: np.ndarray  # 3×H×W float32 in [0, 1]
    boxes: np.ndarray  # (n, 4) corner form, pixels
    classes: np.ndarray  # (n,) class ids into CLASSES
    image_id: int = 0

    @property
    def size(self) -> tuple:
        return self.image.shape[2], self.image.shape[1]


# ------------------------------------------------------------------ render


def _background(rng, size: int) -> np.ndarray:
    """Smooth colour gradient plus blurred blobs and fine grain."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.1, 0.9, size=3)
    slope = rng.uniform(-0.3, 0.3, size=(3, 2))
    img = base[:, None, None] + slope[:, 0, None, None] * (xx - 0.5) + slope[:, 1, None, None] * (yy - 0.5)
    cells = max(2, size // 8)
    coarse = rng.uniform(-0.15, 0.15, size=(3, cells, cells))
    reps = -(-size // cells)
    blob = np.kron(coarse, np.ones((reps, reps)))[:, :size, :size]
    img = img + blob + rng.normal(0.0, 0.03, size=(3, size, size))
    return img


def _shape_mask(kind: str, x1: int, y1: int, s: int, size: int) -> np.ndarray:
    cy, cx = np.mgrid[0:size, 0:size] + 0.5
    if kind == "square":
        return (cx >= x1) & (cx < x1 + s) & (cy >= y1) & (cy < y1 + s)
    if kind == "circle":
        r = s / 2.0
        return (cx - x1 - r) ** 2 + (cy - y1 - r) ** 2 <= r * r
    # apex at top centre, base along the bottom edge
    u = (cy - y1) / s
    half = 0.5 * u * s
    mid = x1 + s / 2.0
    return (u >= 0) & (u <= 1) & (cx >= mid - half) & (cx <= mid + half)


def _overlap(box, boxes) -> float:
    best = 0.0
    for b in boxes:
        iw = min(box[2], b[2]) - max(box[0], b[0])
        ih = min(box[3], b[3]) - max(box[1], b[1])
        if iw > 0 and ih > 0:
            inter = iw * ih
            union = (box[2] - box[0]) * (box[3] - box[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
            best = max(best, inter / union)
    return best


def make_scene(rng, image_size: int = 64, classes=CLASSES, min_size: int = 8, max_size: int | None = None,
               shapes: tuple = (1, 4), image_id: int = 0) -> SyntheticScene:
    """Render 1..4 non-overlapping shapes of log-uniform size on a textured background."""
    max_size = image_size // 2 if max_size is None else max_size
    img = _background(rng, image_size)
    n = int(rng.integers(shapes[0], shapes[1] + 1))
    boxes, labels = [], []
    for _ in range(n):
        for _attempt in range(50):
            s = int(round(np.exp(rng.uniform(np.log(min_size), np.log(max_size)))))
            x1 = int(rng.integers(0, image_size - s + 1))
            y1 = int(rng.integers(0, image_size - s + 1))
            box = (x1, y1, x1 + s, y1 + s)
            if _overlap(box, boxes) <= 0.1:
                break
        else:
            continue
        kind = classes[int(rng.integers(len(classes)))]
        mask = _shape_mask(kind, x1, y1, s, image_size)
        local = img[:, mask].mean(axis=1)
        color = rng.uniform(0.0, 1.0, size=3)
        # push the colour away from the local background for visible contrast
        while np.abs(color - local).mean() < 0.3:
            color = rng.uniform(0.0, 1.0, size=3)
        img[:, mask] = color[:, None] + rng.normal(0.0, 0.02, size=(3, int(mask.sum())))
        boxes.append(box)
        labels.append(CLASSES.index(kind))
    img = np.clip(img, 0.0, 1.0)
    return SyntheticScene(img.astype(np.float32), np.array(boxes, dtype=np.float64).reshape(-1, 4),
                          np.array(labels, dtype=np.int64), image_id)


def flip_horizontal(scene: SyntheticScene) -> SyntheticScene:
    w = scene.image.shape[2]
    boxes = scene.boxes.copy()
    boxes[:, [0, 2]] = w - scene.boxes[:, [2, 0]]
    return SyntheticScene(np.ascontiguousarray(scene.image[:, :, ::-1]), boxes, scene.classes.copy(),
                          scene.image_id)


# --------------------------------------------------------------------- I/O


def write_ppm(path, image: np.ndarray) -> None:
    """3×H×W float image in [0,1] -> binary P6 file."""
    _, h, w = image.shape
    pixels = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header", pos)
        tokens.append(raw[start:pos])
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise FormatError(f"{path}: not an 8-bit binary PPM")
    w, h = int(tokens[1]), int(tokens[2])
    body = raw[pos + 1:pos + 1 + 3 * w * h]
    if len(body) != 3 * w * h:
        raise FormatError(f"{path}: pixel data truncated", pos + 1 + len(body))
    return (np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1) / 255.0).astype(np.float32)


def _annotation_doc(scene: SyntheticScene) -> dict:
    return {
        "image_id": scene.image_id,
        "width": int(scene.image.shape[2]),
        "height": int(scene.image.shape[1]),
        "annotations": [{"box": [float(v) for v in b], "class_id": int(c), "class": CLASSES[int(c)]}
                        for b, c in zip(scene.boxes, scene.classes)],
    }


def gen_dataset(out_dir, seed: int, n_images: int, image_size: int = 64, classes=CLASSES, min_size: int = 8,
                max_size: int | None = None, shapes: tuple = (1, 4), stream: int = 0) -> Path:
    """Write ``n_images`` scenes as NNNNNN.ppm + NNNNNN.json; image i depends only on (seed, stream, i)."""
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for i in range(n_images):
            rng = np.random.default_rng([seed, stream, i])
            scene = make_scene(rng, image_size, classes, min_size, max_size, shapes, image_id=i)
            write_ppm(out / f"{i:06d}.ppm", scene.image)
            (out / f"{i:06d}.json").write_text(json.dumps(_annotation_doc(scene), indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset to {out}: {exc}") from None
    return out


def load_dataset(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise IoError(f"dataset directory {d} does not exist")
    scenes = []
    for ann_path in sorted(d.glob("*.json")):
        doc = json.loads(ann_path.read_text())
        image = read_ppm(ann_path.with_suffix(".ppm"))
        anns = doc["annotations"]
        boxes = np.array([a["box"] for a in anns], dtype=np.float64).reshape(-1, 4)
        classes = np.array([a["class_id"] for a in anns], dtype=np.int64)
        scenes.append(SyntheticScene(image, boxes, classes, int(doc["image_id"])))
    if not scenes:
        raise IoError(f"no annotated images in {d}")
    return scenes


def generate_scenes(seed: int, n_images: int, image_size: int = 64, stream: int = 0, **kw) -> list:
    """In-memory equivalent of :func:`gen_dataset` (pixels not quantised to 8 bits)."""
    return [make_scene(np.random.default_rng([seed, stream, i]), image_size, image_id=i, **kw)
            for i in range(n_images)]
