"""Well-log series handling: synthetic wells, alignment, scaling, windows, splits."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

TARGET = "RT"
CONVENTIONAL = ("AC", "GR", "CON", "SP")
STREAK_AMP = 6.0  # ohm.m per unit thin-bed streak
DENSE_AMP = 3.0  # ohm.m scale of the dense fine-scale texture


def tem_names(n: int) -> list[str]:
    return [f"STEMUB{i + 1:02d}" for i in range(n)]


@dataclass(frozen=True)
class SeriesFrame:
    """Depth-indexed multichannel table.  Row ``i`` sits at ``depth_start + i * depth_step``."""

    depth_start: float
    depth_step: float
    channels: dict[str, np.ndarray]
    target_name: str | None = TARGET
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.depth_step > 0:
            raise ValueError("depth_step must be positive")
        frozen = {}
        length = None
        for name, values in self.channels.items():
            arr = np.array(values, dtype=np.float64)
            if arr.ndim != 1:
                raise ValueError(f"channel {name!r} must be one-dimensional")
            if length is None:
                length = arr.size
            elif arr.size != length:
                raise ValueError(f"channel {name!r} has {arr.size} rows, expected {length}")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "channels", frozen)
        if self.target_name is not None and self.target_name not in frozen:
            raise ValueError(f"target channel {self.target_name!r} not present")

    @property
    def n_rows(self) -> int:
        return next(iter(self.channels.values())).size if self.channels else 0

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    @property
    def input_names(self) -> list[str]:
        return [n for n in self.channels if n != self.target_name]

    @property
    def depth(self) -> np.ndarray:
        return self.depth_start + np.arange(self.n_rows) * self.depth_step

    def matrix(self, names: list[str] | None = None) -> np.ndarray:
        names = self.input_names if names is None else names
        return np.stack([self.channels[n] for n in names], axis=1)

    @property
    def target(self) -> np.ndarray:
        return self.channels[self.target_name]

    def replace_channels(self, updates: dict[str, np.ndarray]) -> "SeriesFrame":
        merged = dict(self.channels)
        merged.update(updates)
        return SeriesFrame(self.depth_start, self.depth_step, merged, self.target_name, dict(self.meta))

    def rows(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(self.depth_start + start * self.depth_step, self.depth_step,
                           {k: v[start:stop] for k, v in self.channels.items()}, self.target_name,
                           dict(self.meta))

    def equals(self, other: "SeriesFrame") -> bool:
        return (self.depth_start == other.depth_start and self.depth_step == other.depth_step
                and self.names == other.names
                and all(np.array_equal(self.channels[n], other.channels[n]) for n in self.names))

    # -- CSV ------------------------------------------------------------------
    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["DEPT", *self.names])
        cols = [self.depth.tolist()] + [self.channels[n].tolist() for n in self.names]
        for row in zip(*cols):
            w.writerow([repr(v) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    @classmethod
    def from_csv(cls, path: str | Path, target_name: str | None = TARGET) -> "SeriesFrame":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ValueError(f"{path}: empty file") from None
            if not header or header[0].strip().upper() != "DEPT":
                raise ValueError(f"{path}: first column must be DEPT")
            rows = [[float(v) for v in r] for r in reader if r]
        if not rows:
            raise ValueError(f"{path}: no data rows")
        data = np.asarray(rows)
        names = [h.strip() for h in header[1:]]
        if len(set(names)) != len(names):
            raise ValueError(f"{path}: duplicate channel names")
        depth = data[:, 0]
        step = float(np.median(np.diff(depth))) if len(depth) > 1 else 1.0
        if len(depth) > 1 and not np.allclose(np.diff(depth), step, rtol=0, atol=1e-6 * max(1.0, abs(step))):
            raise ValueError(f"{path}: DEPT is not uniformly sampled")
        if target_name is not None and target_name not in names:
            target_name = None
        return cls(float(depth[0]), step, {n: data[:, i + 1] for i, n in enumerate(names)}, target_name)


# -- synthetic wells -----------------------------------------------------------
def _smooth(x: np.ndarray, width: float) -> np.ndarray:
    """Gaussian smoothing with standard deviation ``width`` samples (reflect edges)."""
    if width <= 0:
        return x.copy()
    half = int(np.ceil(4 * width))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / width) ** 2)
    k /= k.sum()
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, k, mode="valid")


def _band_noise(rng, n: int, lo: float, hi: float) -> np.ndarray:
    """Unit-variance noise with spatial frequencies in ``[lo, hi]`` cycles/sample."""
    spec = np.fft.rfft(rng.normal(size=n))
    f = np.fft.rfftfreq(n)
    spec[(f < lo) | (f > hi)] = 0
    out = np.fft.irfft(spec, n)
    return out / out.std()


def _thin_beds(rng, n: int, mean_gap: float, min_len: float, max_len: float) -> np.ndarray:
    """Sparse positive streaks: exponential gaps, uniform thickness, gamma amplitude."""
    out = np.zeros(n)
    i = int(rng.exponential(mean_gap))
    while i < n:
        length = max(1, int(rng.uniform(min_len, max_len)))
        out[i:i + length] = rng.gamma(3.0, 1.0 / 3.0)
        i += length + 1 + int(rng.exponential(mean_gap))
    return out


def _layer_sequence(rng, n: int, mean_len: float, n_props: int) -> np.ndarray:
    """Piecewise-constant properties with gamma-distributed bed thickness."""
    out = np.empty((n, n_props))
    i = 0
    while i < n:
        length = max(2, int(rng.gamma(2.0, mean_len / 2.0)))
        out[i:i + length] = rng.normal(size=n_props)
        i += length
    return out


def generate_synthetic_wells(seed: int = 0, n_wells: int = 3, depth_m: float | None = None,
                             step_m: float = 0.125, n_tem_channels: int = 35, n_conv_channels: int = 4,
                             rows: int | None = 2000, fine_step_m: float = 0.01) -> list[SeriesFrame]:
    """Seeded stand-in for the cased-hole dataset.

    Formation latents combine a layered (piecewise-constant) sequence, a slow
    trend and two kinds of fine-scale texture: sparse thin-bed streaks and a
    dense band-limited texture with a slowly varying envelope.  RT is a
    log-linear function of the layered latents plus both textures.  TEM-like
    channels come in near-collinear groups of five: each group sees the
    latents through its own vertical smoothing (so fine texture is
    attenuated), plus a strong low-frequency casing drift and channel noise
    of varied level.  ``meta["redundant_groups"]`` lists the low-noise groups.  Conventional curves are simulated on a ``fine_step_m`` grid and
    sparsely aligned to ``step_m``.
    """
    if n_wells < 1 or n_tem_channels < 0 or n_conv_channels < 0 or n_tem_channels + n_conv_channels < 1:
        raise ValueError("need at least one well and one input channel")
    if rows is None:
        if depth_m is None:
            raise ValueError("give rows or depth_m")
        rows = int(round(depth_m / step_m))
    if rows < 1:
        raise ValueError("rows must be positive")
    if n_conv_channels > len(CONVENTIONAL):
        raise ValueError(f"at most {len(CONVENTIONAL)} conventional channels are modelled")
    ratio = _step_ratio(step_m, fine_step_m)
    n_fine = int(align_indices(rows, step_m, fine_step_m)[-1]) + 1

    frames = []
    for w in range(n_wells):
        rng = np.random.default_rng([seed, w])
        n = n_fine
        per_coarse = float(ratio)

        def fine(samples: float) -> float:
            return samples * per_coarse

        layers = _layer_sequence(rng, n, mean_len=fine(18.0), n_props=3)
        layers[:, 0] = _smooth(layers[:, 0], fine(0.4))
        depth_axis = np.linspace(0.0, 1.0, n)
        trend = 0.6 * np.sin(2 * np.pi * (depth_axis * rng.uniform(0.7, 1.3) + rng.uniform()))
        streaks = _smooth(_thin_beds(rng, n, mean_gap=fine(12.0), min_len=fine(1.0), max_len=fine(3.0)), fine(0.3))
        dense = _band_noise(rng, n, 1.0 / fine(7.0), 1.0 / fine(2.5))
        dense = dense * (0.6 + 0.4 * np.sin(2 * np.pi * (depth_axis * 3.0 + rng.uniform())))
        texture = streaks + dense
        drift = _smooth(rng.normal(size=n), fine(60.0))
        drift /= drift.std() + 1e-12

        # latent channels: porosity-like, shale-like, fluid-like
        poro = layers[:, 0] + 0.5 * trend
        shale = layers[:, 1] - 0.3 * trend
        fluid = layers[:, 2]
        log_rt = 1.6 + 0.45 * poro - 0.35 * shale + 0.25 * fluid * (fluid > 0)
        rt = np.exp(log_rt) + STREAK_AMP * streaks + DENSE_AMP * np.logaddexp(0.0, 1.5 * dense)

        latents = np.stack([poro, shale, fluid, texture, np.log(rt)], axis=1)

        idx = align_indices(rows, step_m, fine_step_m)
        channels: dict[str, np.ndarray] = {}

        n_groups = max(1, int(np.ceil(n_tem_channels / 5)))
        group_mix = rng.normal(size=(n_groups, latents.shape[1]))
        group_mix[:, 4] += 1.0  # every gate responds to formation conductivity
        group_width = np.linspace(0.8, 3.0, n_groups)  # coarse samples
        redundant = np.arange(n_groups) < max(1, (2 * n_groups) // 3)
        group_noise = np.where(redundant, 0.12, 0.4)
        # casing drift dominates the channel noise
        group_drift = rng.uniform(0.6, 1.6, size=n_groups)
        for c, name in enumerate(tem_names(n_tem_channels)):
            g = c // 5
            mix = group_mix[g] + 0.05 * rng.normal(size=latents.shape[1])
            base = latents @ mix
            resp = _smooth(base, fine(group_width[g]))[idx]
            resp = resp / resp.std()
            sig = resp + group_drift[g] * drift[idx] + group_noise[g] * rng.normal(size=rows)
            gate_scale = np.exp(-c / 12.0)
            channels[name] = 5.0 * gate_scale * (sig + 3.0)

        conv_fine = {
            "AC": 70.0 + 12.0 * _smooth(poro + 0.35 * texture, fine(0.3)),
            "GR": 60.0 + 18.0 * _smooth(shale - 0.5 * texture, fine(0.3)),
            "CON": 1000.0 / _smooth(rt, fine(2.5)),
            "SP": -20.0 + 8.0 * _smooth(shale, fine(1.0)) + 6.0 * drift,
        }
        conv_noise = {"AC": 2.0, "GR": 4.0, "CON": 30.0, "SP": 1.0}
        for name in CONVENTIONAL[:n_conv_channels]:
            aligned = conv_fine[name][idx]
            channels[name] = aligned + conv_noise[name] * rng.normal(size=rows)
        channels[TARGET] = rt[idx]

        groups = [tem_names(n_tem_channels)[5 * g:5 * g + 5] for g in range(n_groups)]
        meta = {"well": f"W{w + 1}", "seed": seed,
                "redundant_groups": [grp for g, grp in enumerate(groups) if redundant[g]]}
        frames.append(SeriesFrame(1000.0 + 400.0 * w, step_m, channels, TARGET, meta))
    return frames


# -- granularity alignment -----------------------------------------------------
def _step_ratio(target_step: float, fine_step: float) -> Fraction:
    return Fraction(str(target_step)) / Fraction(str(fine_step))


def align_indices(n_out: int, target_step: float, fine_step: float) -> np.ndarray:
    """Fine-grid row for each coarse row: ``j = round(i * target/fine)``, halves up."""
    r = _step_ratio(target_step, fine_step)
    i = np.arange(n_out, dtype=np.int64)
    return (2 * i * r.numerator + r.denominator) // (2 * r.denominator)


def align_granularity(fine: SeriesFrame, target_step: float = 0.125) -> SeriesFrame:
    """Nearest-index resampling onto a coarser depth grid (no interpolation)."""
    if fine.n_rows == 0:
        raise ValueError("cannot align an empty frame")
    r = _step_ratio(target_step, fine.depth_step)
    if r < 1:
        raise ValueError("target_step must not be finer than the frame step")
    n_out = int((fine.n_rows - 1) / r) + 1
    idx = align_indices(n_out, target_step, fine.depth_step)
    idx = idx[idx < fine.n_rows]
    return SeriesFrame(fine.depth_start, float(target_step),
                       {k: v[idx] for k, v in fine.channels.items()}, fine.target_name, dict(fine.meta))


# -- standardization -----------------------------------------------------------
@dataclass
class StandardizerStats:
    mean: dict[str, float]
    std: dict[str, float]

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizerStats":
        return cls({k: float(v) for k, v in d["mean"].items()}, {k: float(v) for k, v in d["std"].items()})


def fit_stats(frames: SeriesFrame | list[SeriesFrame], names: list[str] | None = None) -> StandardizerStats:
    """Per-channel mean and population standard deviation over all given rows."""
    frames = [frames] if isinstance(frames, SeriesFrame) else list(frames)
    if not frames:
        raise ValueError("fit_stats needs at least one frame")
    names = frames[0].names if names is None else names
    mean, std = {}, {}
    for n in names:
        values = np.concatenate([f.channels[n] for f in frames])
        mu = float(values.mean())
        sd = float(values.std())
        if not sd > 1e-12 * max(1.0, abs(mu)):
            raise ValueError(f"channel {n!r} is constant on the fitting rows; cannot standardize")
        mean[n], std[n] = mu, sd
    return StandardizerStats(mean, std)


def standardize(frame: SeriesFrame, stats: StandardizerStats) -> SeriesFrame:
    out = {}
    for n, v in frame.channels.items():
        out[n] = (v - stats.mean[n]) / stats.std[n] if n in stats.mean else v
    return SeriesFrame(frame.depth_start, frame.depth_step, out, frame.target_name, dict(frame.meta))


def inverse_standardize(values: np.ndarray, stats: StandardizerStats, name: str) -> np.ndarray:
    return np.asarray(values) * stats.std[name] + stats.mean[name]


def destandardize(frame: SeriesFrame, stats: StandardizerStats) -> SeriesFrame:
    out = {n: inverse_standardize(v, stats, n) if n in stats.mean else v for n, v in frame.channels.items()}
    return SeriesFrame(frame.depth_start, frame.depth_step, out, frame.target_name, dict(frame.meta))


# -- windows, splits, averaging ---------------------------------------------
@dataclass
class WindowSet:
    inputs: np.ndarray  # [n, S, F]
    targets: np.ndarray  # [n, S]
    S: int
    stride: int
    origin_index: np.ndarray  # [n]

    def __len__(self) -> int:
        return len(self.origin_index)

    def __getitem__(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[k], self.targets[k]


def window_origins(n_rows: int, S: int, stride: int = 1, start: int = 0) -> np.ndarray:
    if S < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    if n_rows < S:
        raise ValueError(f"{n_rows} rows cannot hold a window of {S} samples")
    return start + np.arange(0, n_rows - S + 1, stride)


def make_windows_arrays(inputs: np.ndarray, target: np.ndarray, S: int = 40, stride: int = 1,
                        start: int = 0, stop: int | None = None) -> WindowSet:
    stop = len(target) if stop is None else stop
    origins = window_origins(stop - start, S, stride, start)
    offs = origins[:, None] + np.arange(S)[None, :]
    return WindowSet(inputs[offs], target[offs], S, stride, origins)


def make_windows(frame: SeriesFrame, S: int = 40, stride: int = 1, start: int = 0,
                 stop: int | None = None) -> WindowSet:
    """Sliding windows over rows ``[start, stop)``; targets are the RT rows of each window."""
    return make_windows_arrays(frame.matrix(), frame.target, S, stride, start, stop)


def split_by_depth(n_rows: int | SeriesFrame, min_rows: int = 1) -> tuple[range, range, range]:
    """Contiguous 70/10/20 row ranges in depth order (floor at both cuts)."""
    n = n_rows.n_rows if isinstance(n_rows, SeriesFrame) else int(n_rows)
    if n < 1:
        raise ValueError("cannot split an empty frame")
    a = (7 * n) // 10
    b = (8 * n) // 10
    parts = (range(0, a), range(a, b), range(b, n))
    for label, part in zip(("train", "validation", "test"), parts):
        if len(part) < min_rows:
            raise ValueError(f"{n} rows give a {label} partition of {len(part)} rows; need at least {min_rows}")
    return parts


def depth_average(predictions: np.ndarray, origins: np.ndarray, n_rows: int | None = None,
                  start: int = 0) -> np.ndarray:
    """Average overlapping window outputs per row.  Returns rows ``[start, start + n_rows)``."""
    predictions = np.asarray(predictions, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.int64)
    S = predictions.shape[1]
    if n_rows is None:
        n_rows = int(origins.max()) + S - start if len(origins) else 0
    total = np.zeros(n_rows)
    count = np.zeros(n_rows)
    rows = origins[:, None] - start + np.arange(S)[None, :]
    keep = (rows >= 0) & (rows < n_rows)
    np.add.at(total, rows[keep], predictions[keep])
    np.add.at(count, rows[keep], 1)
    missing = np.flatnonzero(count == 0)
    if missing.size:
        raise ValueError(f"row {int(missing[0]) + start} is not covered by any window")
    mean = total / count
    # second pass on the residuals, so rows whose windows agree come back exact
    resid = np.zeros(n_rows)
    np.add.at(resid, rows[keep], predictions[keep] - mean[rows[keep]])
    return mean + resid / count


# -- prepared experiment data -------------------------------------------------
@dataclass
class WellData:
    name: str
    frame: SeriesFrame  # raw units
    inputs: np.ndarray  # standardized [N, F]
    target: np.ndarray  # standardized [N]
    parts: tuple[range, range, range]

    def part(self, which: str) -> range:
        return self.parts[("train", "val", "test").index(which)]


@dataclass
class Dataset:
    wells: list[WellData]
    stats: StandardizerStats
    input_names: list[str]
    target_name: str
    S: int

    def windows(self, which: str, stride: int = 1) -> tuple[WindowSet, np.ndarray]:
        """Concatenate per-well windows of one partition; also returns the well index per window."""
        sets, owner = [], []
        for k, w in enumerate(self.wells):
            r = w.part(which)
            ws = make_windows_arrays(w.inputs, w.target, self.S, stride, r.start, r.stop)
            sets.append(ws)
            owner.append(np.full(len(ws), k))
        inputs = np.concatenate([s.inputs for s in sets])
        targets = np.concatenate([s.targets for s in sets])
        origins = np.concatenate([s.origin_index for s in sets])
        return WindowSet(inputs, targets, self.S, stride, origins), np.concatenate(owner)

    def with_frames(self, frames: list[SeriesFrame]) -> "Dataset":
        """Same stats and partitions, inputs recomputed from new (e.g. noisy) raw frames."""
        wells = []
        for w, f in zip(self.wells, frames):
            std = standardize(f, self.stats)
            wells.append(WellData(w.name, f, std.matrix(self.input_names), std.channels[self.target_name], w.parts))
        return Dataset(wells, self.stats, self.input_names, self.target_name, self.S)


def prepare_dataset(frames: list[SeriesFrame], S: int = 40, input_names: list[str] | None = None) -> Dataset:
    """Split every well 70/10/20 by depth, fit stats on training rows only, standardize."""
    if not frames:
        raise ValueError("no wells given")
    target = frames[0].target_name
    if target is None:
        raise ValueError("frames carry no target channel")
    input_names = frames[0].input_names if input_names is None else list(input_names)
    missing = [n for n in input_names if n not in frames[0].channels]
    if missing:
        raise ValueError(f"unknown input channels: {missing}")
    parts = [split_by_depth(f.n_rows, min_rows=S) for f in frames]
    train_rows = [f.rows(p[0].start, p[0].stop) for f, p in zip(frames, parts)]
    stats = fit_stats(train_rows, input_names + [target])
    wells = []
    for k, (f, p) in enumerate(zip(frames, parts)):
        std = standardize(f, stats)
        wells.append(WellData(f.meta.get("well", f"W{k + 1}"), f, std.matrix(input_names),
                              std.channels[target], p))
    return Dataset(wells, stats, input_names, target, S)


def correlation_report(frames: list[SeriesFrame]) -> dict:
    """Channel/target correlations and channel redundancy, pooled over wells."""
    names = frames[0].input_names
    X = np.concatenate([f.matrix(names) for f in frames])
    y = np.concatenate([f.target for f in frames])
    corr = np.corrcoef(np.column_stack([X, y]), rowvar=False)
    with_target = corr[:-1, -1]
    cc = corr[:-1, :-1]
    off = cc[~np.eye(len(names), dtype=bool)]
    return {
        "channels": names,
        "target": frames[0].target_name,
        "corr_with_target": {n: float(c) for n, c in zip(names, with_target)},
        "channel_corr": cc.round(6).tolist(),
        "fraction_pairs_abs_corr_gt_0.9": float(np.mean(np.abs(off) > 0.9)),
        "max_abs_corr_with_target": float(np.max(np.abs(with_target))),
    }


def write_manifest(path: str | Path, entries: dict) -> None:
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True))
