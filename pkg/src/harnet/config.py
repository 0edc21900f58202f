"""DetectConfig: the complete hyper-parameter record, with strict JSON I/O."""

from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, IoError


@dataclass
class ModelConfig:
    num_classes: int = 3
    stem_channels: int = 16
    backbone_channels: list = field(default_factory=lambda: [32, 64, 128])
    pyramid_width: int = 128
    head_width: int = 128
    head_convs: int = 4
    spatial_channels: int = 16
    dilations: list = field(default_factory=lambda: [1, 2, 5, 2, 1])
    clgn_group_size: int = 16
    clgn_eps: float = 1e-5
    clse_reduction: int = 8
    prior_prob: float = 0.01
    head_init_std: float = 0.01


@dataclass
class AttentionConfig:
    spatial: bool = True
    channel: bool = True
    aligned: bool = True


@dataclass
class AnchorConfig:
    strides: list = field(default_factory=lambda: [8, 16, 32, 64, 128])
    # anchor side = base_factor * stride; configs/desk_scale.json uses 2 for the 8-32 px corpus
    base_factor: float = 4.0
    scales: list = field(default_factory=lambda: [1.0, 2 ** 0.5])
    # height / width
    ratios: list = field(default_factory=lambda: [1.0, 0.5, 2.0])


@dataclass
class LossConfig:
    alpha: float = 0.25
    gamma: float = 2.0
    smooth_l1_beta: float = 1.0 / 9.0
    pos_iou: float = 0.5
    neg_iou: float = 0.4
    reg_weight: float = 1.0


@dataclass
class TrainConfig:
    iters: int = 2000
    batch_size: int = 16
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    # fractions of ``iters`` after which lr is divided by 10; both fall after phase 1
    lr_steps: list = field(default_factory=lambda: [0.85, 0.95])
    warmup_iters: int = 100
    schedule: str = "incremental"
    phase1_fraction: float = 0.7
    flip: bool = True
    # random RGB channel permutation and per-channel inversion (x -> 1 - x)
    color_augment: bool = True
    grad_clip: float = 10.0


@dataclass
class PostConfig:
    score_thresh: float = 0.05
    topk: int = 1000
    nms_method: str = "gaussian"
    nms_sigma: float = 0.5
    nms_nt: float = 0.5
    score_floor: float = 0.001
    voting: bool = True
    vote_iou: float = 0.5
    max_dets: int = 100
    multiscale: list = field(default_factory=lambda: [64, 128])


@dataclass
class DataConfig:
    image_size: int = 64
    n_train: int = 500
    n_val: int = 100
    min_size: int = 8
    max_size: int = 32
    max_shapes: int = 4


@dataclass
class EvalConfig:
    # sqrt(area) limits separating small / medium / large objects
    small_max: float = 16.0
    medium_max: float = 24.0


@dataclass
class DetectConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    post: PostConfig = field(default_factory=PostConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0

    @property
    def num_anchors(self) -> int:
        return len(self.anchors.scales) * len(self.anchors.ratios)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc) -> "DetectConfig":
        cfg = _build(cls, doc, "")
        validate(cfg)
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "DetectConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
        return cls.from_dict(doc)

    def replace(self, **sections) -> "DetectConfig":
        """Copy with whole sections or dotted fields (``"train.iters"``) replaced."""
        doc = self.to_dict()
        for key, value in sections.items():
            parts = key.replace("__", ".").split(".")
            node = doc
            for p in parts[:-1]:
                node = node[p]
            node[parts[-1]] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
        return DetectConfig.from_dict(doc)


def _build(cls, doc, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"expected an object, got {type(doc).__name__}", path or "<root>")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError("unknown key", _join(path, unknown[0]))
    kwargs = {}
    for name, value in doc.items():
        kp = _join(path, name)
        hint = hints[name]
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, kp)
        else:
            kwargs[name] = _coerce(value, hint, default, kp)
    return cls(**kwargs)


def _join(path, key):
    return f"{path}.{key}" if path else key


def _coerce(value, hint, default, kp):
    if hint is bool or isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", kp)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", kp)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"expected a finite number, got {value!r}", kp)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", kp)
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {value!r}", kp)
        proto = default[0] if default else None
        out = []
        for i, v in enumerate(value):
            if isinstance(proto, float):
                out.append(_coerce(v, float, proto, f"{kp}[{i}]"))
            elif isinstance(proto, int):
                out.append(_coerce(v, int, proto, f"{kp}[{i}]"))
            else:
                out.append(v)
        return out
    return value


def validate(cfg: DetectConfig) -> None:
    m = cfg.model
    checks = [
        (m.num_classes >= 1, "model.num_classes", "must be >= 1"),
        (len(m.backbone_channels) == 3 and min(m.backbone_channels) >= 4, "model.backbone_channels",
         "needs three stage widths >= 4"),
        (all(c % 4 == 0 for c in m.backbone_channels[1:]), "model.backbone_channels",
         "C4/C5 widths must be divisible by 4 (aligned attention)"),
        (m.head_width % m.clgn_group_size == 0, "model.clgn_group_size", "must divide model.head_width"),
        (m.head_width == m.pyramid_width, "model.head_width", "must equal model.pyramid_width"),
        (m.dilations == m.dilations[::-1] and len(m.dilations) >= 1, "model.dilations", "must be symmetric"),
        (0 < m.prior_prob < 1, "model.prior_prob", "must lie in (0, 1)"),
        (len(cfg.anchors.strides) == 5, "anchors.strides", "needs five pyramid strides (P3..P7)"),
        (cfg.loss.neg_iou <= cfg.loss.pos_iou, "loss.neg_iou", "must not exceed loss.pos_iou"),
        (cfg.train.schedule in ("incremental", "end_to_end"), "train.schedule",
         "must be 'incremental' or 'end_to_end'"),
        (0.0 <= cfg.train.phase1_fraction <= 1.0, "train.phase1_fraction", "must lie in [0, 1]"),
        (cfg.train.batch_size >= 1, "train.batch_size", "must be >= 1"),
        (cfg.post.nms_method in ("linear", "gaussian"), "post.nms_method", "must be 'linear' or 'gaussian'"),
        (cfg.data.image_size % 8 == 0, "data.image_size", "must be divisible by 8"),
        (cfg.data.min_size >= 6, "data.min_size", "must be >= 6"),
    ]
    for ok, key, msg in checks:
        if not ok:
            raise ConfigError(msg, key)


def load_config(path) -> DetectConfig:
    if path is None:
        return DetectConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from None
    return DetectConfig.from_json(text)


def save_config(cfg: DetectConfig, path) -> None:
    try:
        Path(path).write_text(cfg.to_json())
    except OSError as exc:
        raise IoError(f"cannot write config {path}: {exc}") from None
