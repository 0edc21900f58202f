"""Plain data records passed between the detector and post-processing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import ShapeError
from .tensor import Tensor

Box = tuple  # (x1, y1, x2, y2) in pixels, corner form


@dataclass
class FeaturePyramid:
    """Per-level feature maps, finest first, with their strides in image pixels."""

    levels: list
    strides: list
    names: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.levels) != len(self.strides):
            raise ShapeError(f"{len(self.levels)} levels but {len(self.strides)} strides")
        if not self.names:
            self.names = [f"P{3 + i}" for i in range(len(self.levels))]

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def as_levels(pyramid) -> Sequence[Tensor]:
    return pyramid.levels if isinstance(pyramid, FeaturePyramid) else list(pyramid)


@dataclass
class Detection:
    """Scored box. ``prob`` keeps the undecayed classifier probability."""

    box: tuple
    score: float
    class_id: int
    prob: float | None = None

    def __post_init__(self):
        self.box = tuple(float(v) for v in self.box)
        self.score = float(self.score)
        self.class_id = int(self.class_id)
        self.prob = self.score if self.prob is None else float(self.prob)
