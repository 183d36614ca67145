"""Model and run configuration.

ModelConfig collects every architecture/inference knob with desk-scale
defaults; RunConfig adds training/data fields and round-trips through a
`key=value` text file (one pair per line, `#` comments). Unknown keys are
rejected so config typos fail loudly.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

FUSION_MODES = ("guided", "concat")
CONTEXT_MODES = ("st", "frame", "event")
GUIDANCE_MODES = ("ice", "frame")


@dataclass
class ModelConfig:
    d_corr: int = 32       # correlation feature channels
    d_ctx: int = 32        # context channels
    d_motion: int = 64     # motion feature channels
    d_hidden: int = 48     # GRU hidden channels
    stride: int = 8        # feature map downsampling factor
    n_targets: int = 5     # temporal target segments per interval
    bins: int = 15         # voxel bins over the full interval
    bins_seg: int = 3      # voxel bins per segment (bins / n_targets)
    radius: int = 4        # correlation lookup radius
    iters: int = 6         # refinement iterations
    gamma: float = 0.85    # loss decay factor
    eps: float = 0.1       # voxel normalization constant
    fusion: str = "guided"      # guided | concat
    context: str = "st"         # st | frame | event
    guidance: str = "ice"       # ice | frame
    self_aggregate: bool = True  # also aggregate the guide features themselves

    def validate(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if self.context not in CONTEXT_MODES:
            raise ValueError(f"context must be one of {CONTEXT_MODES}")
        if self.guidance not in GUIDANCE_MODES:
            raise ValueError(f"guidance must be one of {GUIDANCE_MODES}")
        if self.stride not in (1, 2, 4, 8):
            raise ValueError("stride must be a power of two <= 8")
        if self.n_targets < 1 or self.bins < 1 or self.bins_seg < 1:
            raise ValueError("n_targets, bins, bins_seg must be >= 1")
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError("gamma must be in (0, 1]")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        return self

    @property
    def guide_channels(self):
        return self.bins_seg + 1 if self.guidance == "ice" else 1

    @property
    def cost_channels(self):
        return (2 * self.radius + 1) ** 2


@dataclass
class RunConfig:
    """Everything a training/eval run needs, flat for key=value files."""

    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    seed: int = 0
    optimizer: str = "sgd"      # sgd | adam
    lr: float = 1e-3
    momentum: float = 0.9
    clip_norm: float = 1.0
    batch: int = 2
    steps: int = 2000
    ckpt_every: int = 500
    val_every: int = 250
    data: str = ""
    val_data: str = ""
    out: str = ""

    _MODEL_KEYS = frozenset(f.name for f in dataclasses.fields(ModelConfig))
    _RUN_KEYS = frozenset(f.name for f in dataclasses.fields(ModelConfig)) | {
        "seed", "optimizer", "lr", "momentum", "clip_norm", "batch", "steps",
        "ckpt_every", "val_every", "data", "val_data", "out",
    }

    def set_key(self, key, raw):
        if key not in self._RUN_KEYS:
            raise KeyError(f"unknown config key: {key!r}")
        target = self.model if key in self._MODEL_KEYS else self
        current = getattr(target, key)
        if isinstance(current, bool):
            value = raw.strip().lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            value = raw.strip()
        setattr(target, key, value)

    @classmethod
    def from_file(cls, path):
        cfg = cls()
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}: line {lineno}: expected key=value")
                key, raw = line.split("=", 1)
                try:
                    cfg.set_key(key.strip(), raw)
                except KeyError as exc:
                    raise ValueError(f"{path}: line {lineno}: {exc}") from exc
        cfg.model.validate()
        return cfg

    def to_file(self, path):
        with open(path, "w") as fh:
            for f in dataclasses.fields(ModelConfig):
                fh.write(f"{f.name}={getattr(self.model, f.name)}\n")
            for key in ("seed", "optimizer", "lr", "momentum", "clip_norm", "batch",
                        "steps", "ckpt_every", "val_every", "data", "val_data", "out"):
                fh.write(f"{key}={getattr(self, key)}\n")
