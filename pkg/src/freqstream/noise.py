"""Gaussian and impulse corruption of input channels.

Both injectors perturb a channel by ``alpha * e`` with ``e ~ Normal(0, sigma)``,
``sigma`` being the clean channel's own standard deviation.  The impulse
variant only fires on rows whose uniform draw ``z <= 1/T``.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from .data import SeriesFrame


class NoiseKind(str, Enum):
    GAUSSIAN = "GAUSSIAN"
    IMPULSE = "IMPULSE"


@dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind = NoiseKind.GAUSSIAN
    alpha: float = 0.1
    period_samples: int = 5
    seed: int = 0
    target_channels: tuple[str, ...] | None = None  # None: every input channel

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(str(getattr(self.kind, "value", self.kind)).upper()))
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.period_samples < 1:
            raise ValueError("period_samples must be >= 1")
        if self.target_channels is not None:
            object.__setattr__(self, "target_channels", tuple(self.target_channels))

    @property
    def label(self) -> str:
        return f"{self.kind.value}_{self.alpha:g}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["target_channels"] = None if self.target_channels is None else list(self.target_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown NoiseSpec fields: {sorted(extra)}")
        return cls(**d)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(**{**asdict(self), "seed": seed})


@dataclass
class InjectionRecord:
    skipped: list[str] = field(default_factory=list)
    fired_fraction: dict[str, float] = field(default_factory=dict)


def _channels(frame: SeriesFrame, spec: NoiseSpec) -> list[str]:
    names = frame.input_names if spec.target_channels is None else list(spec.target_channels)
    unknown = [n for n in names if n not in frame.channels]
    if unknown:
        raise ValueError(f"noise targets unknown channels: {unknown}")
    return names


def _inject(frame: SeriesFrame, spec: NoiseSpec, gated: bool, record: InjectionRecord | None) -> SeriesFrame:
    if spec.alpha == 0:
        return frame.replace_channels({})
    rng = np.random.default_rng([spec.seed, 0 if not gated else 1])
    updates = {}
    for name in _channels(frame, spec):
        clean = frame.channels[name]
        sigma = float(clean.std())
        # draw for every channel, skipped or not, so streams do not shift
        e = rng.normal(0.0, 1.0, size=clean.size)
        z = rng.uniform(0.0, 1.0, size=clean.size) if gated else None
        if not sigma > 0:
            warnings.warn(f"channel {name!r} has zero variance; noise skipped", RuntimeWarning, stacklevel=3)
            if record is not None:
                record.skipped.append(name)
            continue
        noisy = clean.copy()
        if gated:
            fire = z <= 1.0 / spec.period_samples
            noisy[fire] = clean[fire] + spec.alpha * sigma * e[fire]
            if record is not None:
                record.fired_fraction[name] = float(fire.mean())
        else:
            noisy = clean + spec.alpha * sigma * e
        updates[name] = noisy
    return frame.replace_channels(updates)


def inject_gaussian(frame: SeriesFrame, spec: NoiseSpec, record: InjectionRecord | None = None) -> SeriesFrame:
    if spec.kind is not NoiseKind.GAUSSIAN:
        raise ValueError("inject_gaussian needs a GAUSSIAN spec")
    return _inject(frame, spec, gated=False, record=record)


def inject_impulse(frame: SeriesFrame, spec: NoiseSpec, record: InjectionRecord | None = None) -> SeriesFrame:
    if spec.kind is not NoiseKind.IMPULSE:
        raise ValueError("inject_impulse needs an IMPULSE spec")
    return _inject(frame, spec, gated=True, record=record)


def inject(frame: SeriesFrame, spec: NoiseSpec, record: InjectionRecord | None = None) -> SeriesFrame:
    if spec.kind is NoiseKind.GAUSSIAN:
        return inject_gaussian(frame, spec, record)
    return inject_impulse(frame, spec, record)


STANDARD_CONDITIONS = (
    NoiseSpec(NoiseKind.GAUSSIAN, 0.1),
    NoiseSpec(NoiseKind.GAUSSIAN, 0.2),
    NoiseSpec(NoiseKind.IMPULSE, 0.1),
    NoiseSpec(NoiseKind.IMPULSE, 0.2),
)
