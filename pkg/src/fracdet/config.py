"""Pipeline configuration: typed sections, JSON load/save, strict validation.

Every tunable in the pipeline lives here with a documented default.
Loading is strict: unknown keys are rejected by their full path
("train.learning_rat"), values are type-checked, and cross-field
invariants (e.g. the network's total stride must equal the anchor
stride) are enforced before any work starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

from .errors import ConfigError


def _fail(path: str, why: str):
    raise ConfigError(f"config: {path} {why}")


def _check(ok: bool, path: str, why: str) -> None:
    if not ok:
        _fail(path, why)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return _is_int(v) or isinstance(v, float)


def _coerce(value, template, path: str):
    """Coerce a JSON value onto the template field, or die with its path."""
    if isinstance(template, bool):
        _check(isinstance(value, bool), path, "must be true or false")
        return value
    if isinstance(template, int):
        _check(_is_int(value), path, "must be an integer")
        return value
    if isinstance(template, float):
        _check(_is_num(value), path, "must be a number")
        return float(value)
    if isinstance(template, tuple):
        _check(isinstance(value, (list, tuple)), path, "must be a list")
        out = []
        for i, item in enumerate(value):
            _check(_is_num(item) or isinstance(item, str), f"{path}[{i}]",
                   "must be a number or string")
            out.append(item)
        return tuple(out)
    if isinstance(template, str):
        _check(isinstance(value, str), path, "must be a string")
        return value
    # nullable fields (template is None): validators pin the type down
    return value


def _apply(section, data: dict, path: str) -> None:
    known = {f.name for f in fields(section)}
    for key, value in data.items():
        if key not in known:
            _fail(f"{path}.{key}", "is not a recognized setting")
        setattr(section, key, _coerce(value, getattr(section, key), f"{path}.{key}"))


def _all_pos_nums(values, path):
    for i, v in enumerate(values):
        _check(_is_num(v) and v > 0, f"{path}[{i}]", "must be a positive number")


def _all_pos_ints(values, path):
    for i, v in enumerate(values):
        _check(_is_int(v) and v > 0, f"{path}[{i}]", "must be a positive integer")


@dataclass
class AnchorsConfig:
    """Anchor grid shape and assignment thresholds."""

    scales: tuple = (12.0, 20.0, 32.0)
    ratios: tuple = (0.5, 1.0, 2.0)
    stride: int = 8
    pos_iou: float = 0.7
    neg_iou: float = 0.3

    def validate(self, path: str) -> None:
        _check(len(self.scales) > 0, f"{path}.scales", "must be non-empty")
        _all_pos_nums(self.scales, f"{path}.scales")
        _check(len(self.ratios) > 0, f"{path}.ratios", "must be non-empty")
        _all_pos_nums(self.ratios, f"{path}.ratios")
        _check(self.stride >= 1, f"{path}.stride", "must be >= 1")
        _check(0.0 <= self.neg_iou <= self.pos_iou <= 1.0, f"{path}.pos_iou",
               "and neg_iou must satisfy 0 <= neg_iou <= pos_iou <= 1")


@dataclass
class LossConfig:
    """Two-term objective: balance weight and anchor minibatch sampling."""

    lam: float = 10.0
    batch_size: int = 256
    pos_fraction: float = 0.5

    def validate(self, path: str) -> None:
        _check(self.lam >= 0, f"{path}.lam", "must be >= 0")
        _check(self.batch_size >= 1, f"{path}.batch_size", "must be >= 1")
        _check(0.0 <= self.pos_fraction <= 1.0, f"{path}.pos_fraction",
               "must be in [0, 1]")


@dataclass
class NetworkConfig:
    """Backbone/head architecture and weight initialization."""

    conv_channels: tuple = (12, 24, 32, 32)
    conv_strides: tuple = (2, 1, 1, 1)
    pool_after: tuple = (0, 1)
    rpn_channels: int = 32
    head_hidden: int = 64
    roi_grid: int = 4
    init_scheme: str = "he"
    init_sigma: float = 0.01

    def validate(self, path: str) -> None:
        _check(len(self.conv_channels) > 0, f"{path}.conv_channels", "must be non-empty")
        _all_pos_ints(self.conv_channels, f"{path}.conv_channels")
        _check(len(self.conv_strides) == len(self.conv_channels),
               f"{path}.conv_strides", "must match conv_channels in length")
        _all_pos_ints(self.conv_strides, f"{path}.conv_strides")
        for i, v in enumerate(self.pool_after):
            _check(_is_int(v) and 0 <= v < len(self.conv_channels),
                   f"{path}.pool_after[{i}]", "must index a conv layer")
        _check(len(set(self.pool_after)) == len(self.pool_after),
               f"{path}.pool_after", "must not repeat layers")
        _check(self.rpn_channels >= 1, f"{path}.rpn_channels", "must be >= 1")
        _check(self.head_hidden >= 1, f"{path}.head_hidden", "must be >= 1")
        _check(self.roi_grid >= 1, f"{path}.roi_grid", "must be >= 1")
        _check(self.init_scheme in ("he", "gaussian"), f"{path}.init_scheme",
               "must be 'he' or 'gaussian'")
        _check(self.init_sigma > 0, f"{path}.init_sigma", "must be > 0")

    def stride(self) -> int:
        total = 2 ** len(self.pool_after)
        for s in self.conv_strides:
            total *= s
        return total


@dataclass
class TrainConfig:
    """Optimizer schedule and region sampling for the second stage."""

    epochs: int = 45
    learning_rate: float = 0.01
    momentum: float = 0.9
    roi_batch: int = 32
    roi_fg_fraction: float = 0.5
    roi_fg_iou: float = 0.5
    append_gt_to_proposals: bool = True

    def validate(self, path: str) -> None:
        _check(self.epochs >= 1, f"{path}.epochs", "must be >= 1")
        _check(self.learning_rate > 0, f"{path}.learning_rate", "must be > 0")
        _check(0.0 <= self.momentum < 1.0, f"{path}.momentum", "must be in [0, 1)")
        _check(self.roi_batch >= 1, f"{path}.roi_batch", "must be >= 1")
        _check(0.0 <= self.roi_fg_fraction <= 1.0, f"{path}.roi_fg_fraction",
               "must be in [0, 1]")
        _check(0.0 < self.roi_fg_iou <= 1.0, f"{path}.roi_fg_iou",
               "must be in (0, 1]")


@dataclass
class ProposalsConfig:
    """First-stage proposal filtering."""

    pre_nms_top_k: int = 200
    nms_threshold: float = 0.7
    post_nms_top_k: int = 32
    min_size: float = 2.0

    def validate(self, path: str) -> None:
        _check(self.pre_nms_top_k >= 1, f"{path}.pre_nms_top_k", "must be >= 1")
        _check(self.post_nms_top_k >= 1, f"{path}.post_nms_top_k", "must be >= 1")
        _check(0.0 <= self.nms_threshold <= 1.0, f"{path}.nms_threshold",
               "must be in [0, 1]")
        _check(self.min_size >= 0, f"{path}.min_size", "must be >= 0")


@dataclass
class DetectConfig:
    """Final detection filtering at inference time."""

    score_threshold: float = 0.5
    nms_threshold: float = 0.3

    def validate(self, path: str) -> None:
        _check(0.0 <= self.score_threshold <= 1.0, f"{path}.score_threshold",
               "must be in [0, 1]")
        _check(0.0 <= self.nms_threshold <= 1.0, f"{path}.nms_threshold",
               "must be in [0, 1]")


@dataclass
class EvalConfig:
    """Matching and scoring rules for evaluation runs."""

    iou_threshold: float = 0.5
    interpolation: str = "voc2007_11pt"
    score_threshold: float = 0.05
    decision_threshold: float = 0.5
    augment_test: bool = False

    def validate(self, path: str) -> None:
        _check(0.0 < self.iou_threshold <= 1.0, f"{path}.iou_threshold",
               "must be in (0, 1]")
        _check(self.interpolation in ("voc2007_11pt", "all_points"),
               f"{path}.interpolation", "must be 'voc2007_11pt' or 'all_points'")
        _check(0.0 <= self.score_threshold <= 1.0, f"{path}.score_threshold",
               "must be in [0, 1]")
        _check(0.0 <= self.decision_threshold <= 1.0, f"{path}.decision_threshold",
               "must be in [0, 1]")


@dataclass
class AugmentConfig:
    """Dataset expansion: multiplier and photometric parameter ranges."""

    multiplier: int = 4
    mirror: bool = True
    brightness_delta: float = 40.0
    contrast_min: float = 0.6
    contrast_max: float = 1.8
    sharpness_max: float = 1.5
    splits: tuple = ("train",)

    def validate(self, path: str) -> None:
        _check(self.multiplier >= 1, f"{path}.multiplier", "must be >= 1")
        _check(self.brightness_delta >= 0, f"{path}.brightness_delta", "must be >= 0")
        _check(0.0 < self.contrast_min <= self.contrast_max, f"{path}.contrast_min",
               "and contrast_max must satisfy 0 < min <= max")
        _check(self.sharpness_max >= 0, f"{path}.sharpness_max", "must be >= 0")
        for i, s in enumerate(self.splits):
            _check(isinstance(s, str) and s, f"{path}.splits[{i}]",
                   "must be a non-empty split name")


@dataclass
class SynthConfig:
    """Synthetic radiograph-like dataset shape."""

    num_positive: int = 38
    num_hand_negative: int = 30
    num_pure_negative: int = 20
    image_size: int = 96
    lesion_min: int = 12
    lesion_max: int = 26
    max_lesions: int = 2
    train_fraction: float = 0.8

    def validate(self, path: str) -> None:
        for name in ("num_positive", "num_hand_negative", "num_pure_negative"):
            _check(getattr(self, name) >= 0, f"{path}.{name}", "must be >= 0")
        _check(self.num_positive + self.num_hand_negative + self.num_pure_negative >= 1,
               f"{path}.num_positive", "counts must sum to at least 1")
        _check(self.image_size >= 16, f"{path}.image_size", "must be >= 16")
        _check(1 <= self.lesion_min <= self.lesion_max < self.image_size,
               f"{path}.lesion_min", "must satisfy 1 <= min <= max < image_size")
        _check(self.max_lesions >= 1, f"{path}.max_lesions", "must be >= 1")
        _check(0.0 < self.train_fraction < 1.0, f"{path}.train_fraction",
               "must be in (0, 1)")


@dataclass
class DatasetConfig:
    """Input data handling."""

    format: str = "voc_xml"
    resolution: object = None  # optional square side images are resized to

    def validate(self, path: str) -> None:
        _check(self.format in ("voc_xml", "vott_json"), f"{path}.format",
               "must be 'voc_xml' or 'vott_json'")
        if self.resolution is not None:
            _check(_is_int(self.resolution) and self.resolution >= 16,
                   f"{path}.resolution", "must be null or an integer >= 16")


@dataclass
class PipelineConfig:
    """All pipeline settings, grouped by stage."""

    anchors: AnchorsConfig = field(default_factory=AnchorsConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    proposals: ProposalsConfig = field(default_factory=ProposalsConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)

    def validate(self) -> None:
        for f in fields(self):
            getattr(self, f.name).validate(f.name)
        _check(self.network.stride() == self.anchors.stride, "anchors.stride",
               f"must equal the network's total stride ({self.network.stride()})")

    def network_arch(self) -> dict:
        """Architecture dict consumed by parameter initialization."""
        return {
            "conv_channels": tuple(self.network.conv_channels),
            "conv_strides": tuple(self.network.conv_strides),
            "pool_after": tuple(self.network.pool_after),
            "rpn_channels": self.network.rpn_channels,
            "head_hidden": self.network.head_hidden,
            "roi_grid": self.network.roi_grid,
            "num_classes": 3,
            "anchors_per_cell": len(self.anchors.scales) * len(self.anchors.ratios),
            "init_scheme": self.network.init_scheme,
            "init_sigma": self.network.init_sigma,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be an object")
        cfg = cls()
        known = {f.name for f in fields(cls)}
        for key, value in data.items():
            if key not in known:
                _fail(key, "is not a recognized section")
            if not isinstance(value, dict):
                _fail(key, "must be an object")
            _apply(getattr(cfg, key), value, key)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            sec = getattr(self, f.name)
            out[f.name] = {g.name: _jsonable(getattr(sec, g.name))
                           for g in fields(sec)}
        return out


def _jsonable(v):
    if isinstance(v, tuple):
        return list(v)
    return v


def load_config(path) -> PipelineConfig:
    """Read and validate a JSON config file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(data)


def save_config(cfg: PipelineConfig, path) -> None:
    """Write a config back out as formatted JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def default_config() -> PipelineConfig:
    return PipelineConfig()
