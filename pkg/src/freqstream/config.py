"""Experiment configuration: one JSON document drives every CLI command."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import wavelet
from .blocks import ALL_VARIANTS, ModelSpec
from .data import CONVENTIONAL, TARGET, generate_synthetic_wells, prepare_dataset, tem_names
from .evaluation import TrainConfig
from .noise import STANDARD_CONDITIONS, NoiseSpec


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


@dataclass(frozen=True)
class DataConfig:
    seed: int = 0
    wells: int = 3
    rows: int = 2000
    n_tem_channels: int = 35
    n_conv_channels: int = 4
    channels: tuple[str, ...] | None = None  # None: every generated input channel

    def __post_init__(self):
        if self.wells < 1 or self.rows < 1:
            raise ConfigError("wells and rows must be positive")
        if self.channels is not None:
            object.__setattr__(self, "channels", tuple(self.channels))

    def available_channels(self) -> list[str]:
        return tem_names(self.n_tem_channels) + list(CONVENTIONAL[:self.n_conv_channels])

    def input_names(self) -> list[str]:
        return self.available_channels() if self.channels is None else list(self.channels)


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    models: tuple[ModelSpec, ...] = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: tuple[NoiseSpec, ...] = STANDARD_CONDITIONS
    seeds: tuple[int, ...] = (0, 1, 2)
    band_bank: str = wavelet.DEFAULT_BANK
    band_levels: int = 2
    out_dir: str = "runs/default"
    emit: tuple[str, ...] = ("json", "csv", "svg")

    def __post_init__(self):
        n_in = len(self.data.input_names())
        models = self.models or tuple(ModelSpec(v, n_in) for v in ALL_VARIANTS)
        object.__setattr__(self, "models", tuple(models))
        object.__setattr__(self, "noise", tuple(self.noise))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "emit", tuple(self.emit))
        self.validate()

    def validate(self) -> None:
        names = self.data.input_names()
        known = set(self.data.available_channels())
        unknown = [n for n in names if n not in known]
        if unknown:
            raise ConfigError(f"unknown input channel(s): {unknown}")
        if not names:
            raise ConfigError("no input channels selected")
        for m in self.models:
            if m.input_features != len(names):
                raise ConfigError(f"model {m.variant.value} expects {m.input_features} features, "
                                  f"data provides {len(names)}")
        for ns in self.noise:
            if ns.target_channels is not None:
                bad = [c for c in ns.target_channels if c not in names]
                if bad:
                    raise ConfigError(f"noise {ns.label} targets unknown channel(s): {bad}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        bad_emit = set(self.emit) - {"json", "csv", "svg"}
        if bad_emit:
            raise ConfigError(f"unknown emit format(s): {sorted(bad_emit)}")
        wavelet.get_bank(self.band_bank)

    # -- serialization --------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self.data)
        d["channels"] = None if self.data.channels is None else list(self.data.channels)
        return {
            "data": d,
            "models": [m.to_dict() for m in self.models],
            "train": self.train.to_dict(),
            "noise": [n.to_dict() for n in self.noise],
            "seeds": list(self.seeds),
            "band_bank": self.band_bank,
            "band_levels": self.band_levels,
            "out_dir": self.out_dir,
            "emit": list(self.emit),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigError(f"unknown config fields: {sorted(extra)}")
        try:
            kw = dict(d)
            if "data" in kw:
                kw["data"] = DataConfig(**kw["data"])
            if "models" in kw:
                kw["models"] = tuple(ModelSpec.from_dict(m) for m in kw["models"])
            if "train" in kw:
                kw["train"] = TrainConfig.from_dict(kw["train"])
            if "noise" in kw:
                kw["noise"] = tuple(NoiseSpec.from_dict(n) for n in kw["noise"])
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_json(text)

    def config_hash(self) -> str:
        """Hash of everything that affects results (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        d.pop("emit")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    # -- helpers ---------------------------------------------------------------
    def frames(self):
        c = self.data
        return generate_synthetic_wells(seed=c.seed, n_wells=c.wells, rows=c.rows,
                                        n_tem_channels=c.n_tem_channels, n_conv_channels=c.n_conv_channels)

    def dataset(self, frames=None):
        frames = self.frames() if frames is None else frames
        return prepare_dataset(frames, S=self.train.sequence_length, input_names=self.data.input_names())


__all__ = ["ConfigError", "DataConfig", "ExperimentConfig", "TARGET"]
