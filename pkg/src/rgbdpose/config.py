"""Pipeline configuration: a single YAML file with every tunable knob.

`default_config_text()` is the canonical, commented reference emitted by
`config init`; `load_config` parses and validates a file against it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .preprocess import MserParams
from .training import TrainConfig

DEFAULT_CONFIG_TEXT = """\
# rgbdpose pipeline configuration

paths:
  dataset: dataset            # sequence directory (manifest.txt [+ annotations.json])
  negatives: negatives        # person-free sequence directory (training only)
  model: model.4ddpm          # parts-model file
  output: out                 # outputs (poses.json, overlays, dumps)

preprocess:
  delta: 2                    # stability window, in quantized levels
  min_area: 50                # smallest region kept, pixels
  max_area: null              # largest region kept; null = no cap
  area_threshold: null        # regions above this count as background; null = 25% of pixels
  stability_cutoff: 0.5       # max relative area change over the window
  levels: 256                 # depth quantization levels

features:
  cell_size: 8                # pixels per descriptor cell
  bin_count: 9                # unsigned orientation bins

model:
  type_count: 2               # mixture types per non-root part
  filter_size: 3              # filter side, cells
  threshold: 0.0              # detection score floor (best pose always kept)
  top_k: 5                    # detections retained per frame after suppression
  nms_iou: 0.3                # suppression overlap on pose boxes
  engine: auto                # spring maximization: auto | envelope | exhaustive
  pyramid: false              # multi-scale search
  pyramid_scale: 1.0905077326652577   # per-step factor (2^(1/8))
  pyramid_octaves: 2

train:
  C: 0.1                      # margin/regularization trade-off
  epochs: 60
  learning_rate: 0.1
  tolerance: 1.0e-4           # objective improvement counted as progress
  patience: 15                # stale epochs before stopping
  seed: 0
  negative_cache: 400         # mined hard negatives kept

tracker:
  enabled: true
  coupling: -1.0              # partner velocity/acceleration coupling constant
  q_scale: 1.0                # process noise (identity scale)
  r_scale: 4.0                # measurement noise on observed positions
  p0_scale: 10.0              # initial state covariance scale
  pairing: default            # 'default' (end effector -> proximal joint) or [[i, j], ...]
  min_joint_score: null       # joints scoring below are treated as missing

kinematics:
  enabled: true
  lift_window: 2              # depth median half-window, pixels
  mm_per_px: 1.0              # converts pixel x/y to the z unit for completion
  limb_lengths: null          # {arm_upper, arm_lower, leg_upper, leg_lower} in z units; null = estimate
  upper_fraction: 0.48        # upper/lower split of the estimated limb span
  branches: {l_elbow: 1, r_elbow: 1, l_knee: 1, r_knee: 1}
  branch_policy: fixed        # fixed | previous (track the prior frame's joint)

metrics:
  alpha: 0.2                  # correctness radius as a fraction of max(bbox h, w)

synth:
  frame_count: 30
  seed: 0
  negatives: false            # render person-free frames instead
  figure: {}                  # FigureSpec field overrides
"""


@dataclass
class PathsConfig:
    dataset: str = "dataset"
    negatives: str = "negatives"
    model: str = "model.4ddpm"
    output: str = "out"


@dataclass
class FeaturesConfig:
    cell_size: int = 8
    bin_count: int = 9

    def __post_init__(self):
        if self.cell_size < 1 or self.bin_count < 1:
            raise ConfigError("cell_size and bin_count must be positive")


@dataclass
class ModelConfig:
    type_count: int = 2
    filter_size: int = 3
    threshold: float | None = 0.0
    top_k: int = 5
    nms_iou: float = 0.3
    engine: str = "auto"
    pyramid: bool = False
    pyramid_scale: float = 2 ** 0.125
    pyramid_octaves: int = 2

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if not 0 <= self.nms_iou <= 1:
            raise ConfigError("nms_iou must lie in [0, 1]")
        if self.engine not in ("auto", "envelope", "exhaustive"):
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.pyramid and not self.pyramid_scale > 1:
            raise ConfigError("pyramid_scale must exceed 1")


@dataclass
class TrackerConfig:
    enabled: bool = True
    coupling: float = -1.0
    q_scale: float = 1.0
    r_scale: float = 4.0
    p0_scale: float = 10.0
    pairing: object = "default"
    min_joint_score: float | None = None

    def __post_init__(self):
        if self.q_scale < 0 or self.r_scale < 0 or self.p0_scale < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.pairing != "default":
            try:
                self.pairing = tuple((int(i), int(j)) for i, j in self.pairing)
            except (TypeError, ValueError) as e:
                raise ConfigError(f"pairing must be 'default' or a pair list: {e}") from e


@dataclass
class KinematicsConfig:
    enabled: bool = True
    lift_window: int = 2
    mm_per_px: float = 1.0
    limb_lengths: dict | None = None
    upper_fraction: float = 0.48
    branches: dict = field(default_factory=lambda: {
        "l_elbow": 1, "r_elbow": 1, "l_knee": 1, "r_knee": 1})
    branch_policy: str = "fixed"

    def __post_init__(self):
        if self.lift_window < 0:
            raise ConfigError("lift_window must be >= 0")
        if not 0 < self.upper_fraction < 1:
            raise ConfigError("upper_fraction must lie in (0, 1)")
        if self.branch_policy not in ("fixed", "previous"):
            raise ConfigError(f"unknown branch_policy {self.branch_policy!r}")


@dataclass
class MetricsConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")


@dataclass
class SynthConfig:
    frame_count: int = 30
    seed: int = 0
    negatives: bool = False
    figure: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.frame_count < 1:
            raise ConfigError("frame_count must be >= 1")


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    preprocess: MserParams = field(default_factory=MserParams)
    features: FeaturesConfig = field(default_factory=FeaturesConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    kinematics: KinematicsConfig = field(default_factory=KinematicsConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    base_dir: Path = field(default_factory=Path)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


_SECTIONS = {
    "paths": PathsConfig,
    "preprocess": MserParams,
    "features": FeaturesConfig,
    "model": ModelConfig,
    "train": None,  # TrainConfig carries solver knobs shared with the model section
    "tracker": TrackerConfig,
    "kinematics": KinematicsConfig,
    "metrics": MetricsConfig,
    "synth": SynthConfig,
}


def _build(cls, section: str, data: dict):
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"config section '{section}': {e}") from e
    except ValueError as e:
        raise ConfigError(f"config section '{section}': {e}") from e


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {sorted(unknown)}")

    cfg = PipelineConfig(base_dir=path.resolve().parent)
    for section, cls in _SECTIONS.items():
        data = raw.get(section, {})
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: section '{section}' must be a mapping")
        if section == "train":
            train_kwargs = dict(data)
            train_kwargs.setdefault("type_count", raw.get("model", {}).get("type_count", 2))
            train_kwargs.setdefault("filter_size", raw.get("model", {}).get("filter_size", 3))
            train_kwargs.setdefault("engine", raw.get("model", {}).get("engine", "auto"))
            cfg.train = _build(TrainConfig, section, train_kwargs)
        else:
            setattr(cfg, section, _build(cls, section, data))
    return cfg


def write_default_config(path: str | Path) -> Path:
    path = Path(path)
    path.write_text(DEFAULT_CONFIG_TEXT, encoding="utf-8")
    return path
