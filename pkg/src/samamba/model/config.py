"""Model hyperparameters and their plain-text key/value file format.

File schema: one ``key = value`` pair per line, ``#`` starts a comment,
list values are comma separated, booleans are ``true``/``false``.  Unknown
keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

DESK_CHANNELS = (16, 32, 64, 128)
FULL_CHANNELS = (96, 192, 384, 768)
FUSIONS = ("adaptive", "add", "concat")


@dataclass
class ModelConfig:
    in_channels: int = 3
    stage_channels: tuple[int, ...] = DESK_CHANNELS
    blocks_per_stage: int = 1
    freeze_encoder: bool = False
    use_adapter: bool = True
    use_csi: bool = True
    csi_width: int = 32
    csi_heads: int = 4
    state_dim: int = 16
    bidirectional: bool = True
    positional_embedding: bool = False
    mlp_ratio: float = 2.0
    attention_ratio: int = 4
    attention_kernel: int = 7
    attention_pooling: str = "avgmax"
    dpcf_segments: int = 4
    fusion: str = "adaptive"
    head_channels: int = 8
    prior: float = 0.01
    seed: int = 0
    extra: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        self.validate()

    def validate(self) -> None:
        if len(self.stage_channels) != 4:
            raise ValueError(f"encoder needs exactly 4 stage widths, got {self.stage_channels}")
        if self.csi_width % self.csi_heads:
            raise ValueError(f"CSI width {self.csi_width} is not divisible by {self.csi_heads} heads")
        if self.csi_width % self.dpcf_segments:
            raise ValueError(f"CSI width {self.csi_width} is not divisible by {self.dpcf_segments} DPCF segments")
        if self.fusion not in FUSIONS:
            raise ValueError(f"fusion must be one of {FUSIONS}, got {self.fusion!r}")
        if not 0.0 < self.prior < 1.0:
            raise ValueError("prior must lie in (0, 1)")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        return cls(**{"stage_channels": FULL_CHANNELS, "csi_width": 128, **overrides})

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    # -- key/value serialisation ------------------------------------------------
    def to_text(self) -> str:
        lines = ["# samamba model config"]
        for f in fields(self):
            if f.name == "extra":
                continue
            lines.append(f"{f.name} = {_fmt(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls(**parse_kv(text, {f.name: f.type for f in fields(cls) if f.name != "extra"}, cls()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    return str(v)


def parse_kv(text: str, types: dict, defaults) -> dict:
    """Parse ``key = value`` lines, coercing by the type of the default value."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        out[key] = coerce(value, getattr(defaults, key))
    return out


def coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {value!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value
