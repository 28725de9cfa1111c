"""Model and training hyperparameters, plus the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, get_type_hints


@dataclass
class ModelConfig:
    # data
    vocab_size: int = 24
    mel_dim: int = 20
    # style
    style_dim: int = 64
    lm_dim: int = 32
    adapt_hidden: int = 128
    ref_channels: tuple[int, ...] = (8, 8, 16, 16, 32, 32)
    ref_kernel: int = 3
    ref_min_frames: int = 64
    style_stop_grad_ref: bool = False
    # text encoder
    text_hidden: int = 64
    text_kernel: int = 5
    text_dilations: tuple[int, ...] = (1, 2, 4, 1, 2, 4, 1, 2)
    # duration predictor
    dur_hidden: int = 64
    dur_kernel: int = 5
    dur_dilations: tuple[int, ...] = (1, 1, 1, 1, 1)
    # mel decoder
    dec_hidden: int = 64
    dec_kernel: int = 3
    dec_dilations: tuple[int, ...] = (1, 2, 4, 8, 1, 2, 4, 8, 1, 2, 4, 8)
    # aligner flow
    flow_blocks: int = 4
    flow_hidden: int = 32
    flow_kernel: int = 5
    flow_layers: int = 4
    # losses
    w_mel: float = 1.0
    w_dur: float = 1.0
    w_align: float = 1.0
    w_style: float = 1.0
    huber_delta: float = 1.0
    # optimization
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    noam_scale: float = 0.02
    warmup_steps: int = 500
    batch_size: int = 16
    max_steps: int = 5000
    seed: int = 0
    precision: str = "single"
    log_interval: int = 50
    checkpoint_interval: int = 0
    # tag embedding provider
    provider_kind: str = "synthetic"
    provider_centroid_scale: float = 1.0
    provider_jitter: float = 0.5
    provider_seed: int = 0
    augment_tags: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("w_mel", "w_dur", "w_align", "w_style"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.mel_dim < 2:
            raise ValueError("mel_dim must be >= 2 for affine coupling")
        for name in ("text_kernel", "dur_kernel", "dec_kernel", "flow_kernel", "ref_kernel"):
            if getattr(self, name) % 2 != 1:
                raise ValueError(f"{name} must be odd")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        """Layer counts and widths of the full-size model (80-dim mels, 500k steps)."""
        base = dict(
            mel_dim=80, style_dim=256, lm_dim=768, adapt_hidden=256,
            ref_channels=(32, 32, 64, 64, 128, 128),
            text_hidden=256, text_kernel=5, text_dilations=(1, 2, 4) * 4,
            dur_hidden=256, dur_kernel=5, dur_dilations=(1,) * 5,
            dec_hidden=256, dec_kernel=3, dec_dilations=(1, 2, 4, 8, 16) * 6,
            flow_blocks=6, flow_hidden=128, flow_kernel=5, flow_layers=4,
            warmup_steps=4000, max_steps=500_000, provider_kind="external",
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """Smallest useful model, for gradient checks."""
        base = dict(
            vocab_size=6, mel_dim=4, style_dim=3, lm_dim=4, adapt_hidden=5,
            ref_channels=(2, 2, 2, 2, 2, 2), ref_min_frames=64,
            text_hidden=8, text_kernel=3, text_dilations=(1, 2),
            dur_hidden=8, dur_kernel=3, dur_dilations=(1, 1),
            dec_hidden=8, dec_kernel=3, dec_dilations=(1, 2),
            flow_blocks=2, flow_hidden=8, flow_kernel=3, flow_layers=2,
            precision="double", batch_size=2,
        )
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in data.items():
            if hints[k] == tuple[int, ...]:
                v = tuple(int(x) for x in v)
            kwargs[k] = v
        return cls(**kwargs)


def _parse_value(text: str, hint) -> Any:
    text = text.strip()
    if hint is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint == tuple[int, ...]:
        return tuple(int(x) for x in text.replace("(", "").replace(")", "").split(",") if x.strip())
    return text


def parse_config_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    hints = get_type_hints(ModelConfig)
    values = (base or ModelConfig()).to_dict()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in hints:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(value, hints[key])
    return ModelConfig.from_dict(values)


def load_config(path: str | Path, base: ModelConfig | None = None) -> ModelConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base)


def format_config(config: ModelConfig) -> str:
    lines = []
    for k, v in config.to_dict().items():
        if isinstance(v, list):
            v = ",".join(str(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
