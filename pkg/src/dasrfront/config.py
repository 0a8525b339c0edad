"""Pipeline configuration.

JSON layout (every section and key optional; missing values take the
defaults below)::

    {
      "stft":       {"frame_len": 1024, "hop": 256, "window": "hann"},
      "selection":  {"k_pct": 0.65, "min_mics": 15},
      "counting":   {"window_s": 120, "max_lag_ms": 100, "threshold": 0.3,
                     "seg_len_s": 15, "max_speakers": 8, "background": 0.1},
      "beamformer": {"mu": 0.0, "floor": 0.1, "loading": 1e-6, "context_s": 0.0},
      "paths":      {"c50": null, "masks": null, "embeddings": null, "segments": null}
    }

Relative paths are resolved against the session directory.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .audio import StftConfig
from .channel_select import SelectionPolicy
from .errors import ConfigError


@dataclass(frozen=True)
class CountingParams:
    window_s: float = 120.0
    max_lag_ms: float = 100.0
    threshold: float = 0.3
    seg_len_s: float = 15.0
    max_speakers: int = 8
    background: float = 0.1

    def __post_init__(self):
        if self.window_s <= 0 or self.max_lag_ms < 0 or self.seg_len_s <= 0:
            raise ConfigError("counting window, lag and segment length must be positive")
        if not -1.0 <= self.threshold <= 1.0:
            raise ConfigError(f"correlation threshold must be in [-1, 1], got {self.threshold}")
        if not 1 <= self.max_speakers <= 64:
            raise ConfigError(f"max_speakers must be in 1..64, got {self.max_speakers}")
        if self.background < 0:
            raise ConfigError("background must be >= 0")


@dataclass(frozen=True)
class BeamformerParams:
    mu: float = 0.0
    floor: float = 0.1
    loading: float = 1e-6
    context_s: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ConfigError(f"mu must be >= 0, got {self.mu}")
        if not 0 <= self.floor <= 1:
            raise ConfigError(f"mask floor must be in [0, 1], got {self.floor}")
        if self.loading < 0 or self.context_s < 0:
            raise ConfigError("loading and context_s must be >= 0")


@dataclass(frozen=True)
class Paths:
    c50: str | None = None
    masks: str | None = None
    embeddings: str | None = None
    segments: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    selection: SelectionPolicy = field(default_factory=SelectionPolicy)
    counting: CountingParams = field(default_factory=CountingParams)
    beamformer: BeamformerParams = field(default_factory=BeamformerParams)
    paths: Paths = field(default_factory=Paths)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        sections = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            target = cls.__dataclass_fields__[name].default_factory
            if not isinstance(value, dict):
                raise ConfigError(f"config section {name!r} must be an object")
            allowed = {f.name for f in fields(target)}
            bad = set(value) - allowed
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = target(**value)
            except TypeError as exc:
                raise ConfigError(f"section {name!r}: {exc}") from exc
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return asdict(self)

    def override(self, **flags) -> "PipelineConfig":
        """Apply command-line overrides; ``None`` values are ignored."""
        cfg = self
        sel = {k: v for k, v in (("k_pct", flags.get("k_pct")), ("min_mics", flags.get("min_mics"))) if v is not None}
        if sel:
            cfg = replace(cfg, selection=replace(cfg.selection, **sel))
        cnt = {k: v for k, v in (("threshold", flags.get("corr_threshold")),
                                 ("max_speakers", flags.get("max_speakers"))) if v is not None}
        if cnt:
            cfg = replace(cfg, counting=replace(cfg.counting, **cnt))
        if flags.get("mu") is not None:
            cfg = replace(cfg, beamformer=replace(cfg.beamformer, mu=flags["mu"]))
        return cfg


def load_config(path=None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        obj = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return PipelineConfig.from_dict(obj)
