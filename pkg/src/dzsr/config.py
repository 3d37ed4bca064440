"""Training configuration: a flat key=value file mapping 1:1 onto TrainConfig.

`fingerprint()` hashes exactly the fields that determine network
architecture; checkpoints store it and refuse to load under a different
architecture.
"""

from __future__ import annotations

import dataclasses
import hashlib

from .errors import ConfigError

ABLATION_MODES = ("full", "no_lr_align", "no_ref_align", "none", "stn", "deform_direct")

# Fields that change parameter shapes or the compute graph topology.
_ARCH_FIELDS = (
    "ratio", "channels", "blocks", "feat_channels", "match_channels",
    "match_patch", "match_stride", "est_channels", "stages", "deg_channels",
    "align_mode",
)


@dataclasses.dataclass
class TrainConfig:
    # problem geometry
    ratio: int = 2
    lr_patch: int = 48

    # optimization
    batch: int = 4
    epochs: int = 40
    stage1_epochs: int = 30
    lr: float = 1e-4
    lr_final: float = 5e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    seed: int = 0

    # alignment / losses
    zero_prob: float = 0.3
    lambda_centroid: float = 100.0
    lambda_sw: float = 0.08

    # augmentation
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True

    # architecture
    channels: int = 32          # restoration width
    blocks: int = 16            # residual blocks
    feat_channels: int = 32     # LR feature stem width
    match_channels: int = 32    # matching extractor width
    match_patch: int = 3
    match_stride: int = 1
    est_channels: int = 32      # offset estimator width
    stages: int = 3             # alignment units on the LR path
    deg_channels: int = 32      # degradation backbone width
    sw_projections: int = 0     # 0 -> one per channel
    perceptual_seed: int = 77

    # noise ranges for on-the-fly pseudo-LR noise (match the data generator)
    noise_sigma_lo: float = 5.0 / 255.0
    noise_sigma_hi: float = 30.0 / 255.0
    noise_jpeg_lo: int = 60
    noise_jpeg_hi: int = 95
    noise_a_lo: float = 1e-4
    noise_a_hi: float = 1e-3
    noise_b_lo: float = 1e-6
    noise_b_hi: float = 1e-5

    # execution
    threads: int = 0            # 0 = leave the global setting alone

    def __post_init__(self):
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ConfigError(f"zero_prob must lie in [0, 1], got {self.zero_prob}")
        for name in ("ratio", "lr_patch", "batch", "epochs", "stage1_epochs",
                     "channels", "blocks", "feat_channels", "match_channels",
                     "est_channels", "stages", "deg_channels"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.lr_patch % self.ratio:
            raise ConfigError(
                f"lr_patch {self.lr_patch} must be divisible by ratio {self.ratio}")

    def fingerprint(self, kind: str = "zooming", align_mode: str = "adastn") -> str:
        """Architecture hash; degradation checkpoints depend only on the
        degradation net's own shape parameters."""
        if kind == "degradation":
            vals = {"ratio": self.ratio, "deg_channels": self.deg_channels}
        else:
            vals = {f: getattr(self, f) for f in _ARCH_FIELDS if f != "align_mode"}
            vals["align_mode"] = align_mode
        text = "\n".join(f"{k}={v}" for k, v in sorted(vals.items()))
        return hashlib.sha256(f"{kind}\n{text}".encode()).hexdigest()[:16]


def align_mode_for(ablation: str) -> str:
    if ablation not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode {ablation!r}; expected one of {ABLATION_MODES}")
    if ablation == "stn":
        return "stn_global"
    if ablation == "deform_direct":
        return "deform_direct"
    return "adastn"


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def save_config(cfg: TrainConfig, path: str) -> None:
    with open(path, "w") as f:
        for field in dataclasses.fields(cfg):
            f.write(f"{field.name}={getattr(cfg, field.name)}\n")


def config_to_text(cfg: TrainConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


def _parse_field(ftype, raw: str, name: str):
    if ftype is bool:
        low = raw.strip().lower()
        if low in _BOOL_TRUE:
            return True
        if low in _BOOL_FALSE:
            return False
        raise ConfigError(f"cannot parse boolean {name}={raw!r}")
    try:
        return ftype(raw)
    except ValueError as e:
        raise ConfigError(f"cannot parse {name}={raw!r}: {e}") from e


def config_from_text(text: str) -> TrainConfig:
    defaults = TrainConfig()
    field_types = {f.name: type(getattr(defaults, f.name))
                   for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in field_types:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        values[key] = _parse_field(field_types[key], raw.strip(), key)
    return TrainConfig(**values)


def load_config(path: str) -> TrainConfig:
    with open(path) as f:
        return config_from_text(f.read())
