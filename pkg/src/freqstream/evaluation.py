"""Training, metrics and the ablation / noise-robustness runners."""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import wavelet
from .blocks import ALL_VARIANTS, ModelParams, ModelSpec, Variant, forward, init_params, mae_loss, predict_array
from .data import Dataset, depth_average, inverse_standardize, make_windows_arrays
from .noise import NoiseSpec, inject
from .numerics import AdamState, Tensor, adam_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "MAE"
    learning_rate: float = 0.001
    batch_size: int = 64
    sequence_length: int = 40
    max_epochs: int = 200
    stop_delta: float = 0.001
    seed: int = 0
    train_stride: int = 1

    def __post_init__(self):
        if self.loss.upper() != "MAE":
            raise ValueError("only the MAE loss is supported")
        if self.learning_rate < 0 or self.batch_size < 1 or self.sequence_length < 1 or self.max_epochs < 1:
            raise ValueError("invalid training configuration")
        if self.train_stride < 1:
            raise ValueError("train_stride must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ValueError(f"unknown TrainConfig fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class MetricsReport:
    r2: float
    mae: float
    rmse: float
    mse: float
    band: str = "FULL"
    condition: str = "CLEAN"
    training_loss_final: float | None = None
    wall_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite training loss at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


# -- metrics ---------------------------------------------------------------------
def metrics(pred, target, band: str = "FULL", condition: str = "CLEAN") -> MetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1 or pred.size < 2:
        raise ValueError("pred and target must be equal-length series with at least two points")
    err = pred - target
    ss_tot = float(np.sum((target - target.mean()) ** 2))
    if ss_tot <= 0:
        raise ValueError("target is constant; R^2 is undefined")
    mse = float(np.mean(err**2))
    return MetricsReport(
        r2=1.0 - float(np.sum(err**2)) / ss_tot,
        mae=float(np.mean(np.abs(err))),
        rmse=math.sqrt(mse),
        mse=mse,
        band=band,
        condition=condition,
    )


def band_components(series: list[np.ndarray], bank: str, levels: int) -> tuple[np.ndarray, np.ndarray]:
    """Band-split each series separately and concatenate the components."""
    lows, highs = zip(*(wavelet.band_split(s, bank, levels) for s in series))
    return np.concatenate(lows), np.concatenate(highs)


def band_metrics(pred, target, bank: str = wavelet.DEFAULT_BANK, levels: int = 2,
                 condition: str = "CLEAN") -> tuple[MetricsReport, MetricsReport]:
    """LOW and HIGH band metrics.  ``pred``/``target`` may be one series or a list of segments."""
    if isinstance(pred, np.ndarray) or not isinstance(pred, (list, tuple)):
        pred, target = [np.asarray(pred, dtype=np.float64)], [np.asarray(target, dtype=np.float64)]
    p_lo, p_hi = band_components(pred, bank, levels)
    t_lo, t_hi = band_components(target, bank, levels)
    return metrics(p_lo, t_lo, "LOW", condition), metrics(p_hi, t_hi, "HIGH", condition)


# -- prediction -------------------------------------------------------------------
def predict_part(spec: ModelSpec, params: ModelParams, dataset: Dataset, which: str = "test"):
    """Depth-averaged, inverse-standardized predictions per well for one partition.

    Returns ``(predictions, targets)``: lists of raw-unit series, one per well.
    """
    preds, targets = [], []
    for w in dataset.wells:
        r = w.part(which)
        ws = make_windows_arrays(w.inputs, w.target, dataset.S, 1, r.start, r.stop)
        out = predict_array(spec, params, ws.inputs)
        avg = depth_average(out, ws.origin_index, len(r), start=r.start)
        preds.append(inverse_standardize(avg, dataset.stats, dataset.target_name))
        targets.append(w.frame.target[r.start:r.stop].copy())
    return preds, targets


def _validation_r2(spec, params, dataset) -> float:
    p, t = predict_part(spec, params, dataset, "val")
    return metrics(np.concatenate(p), np.concatenate(t)).r2


# -- training ---------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_r2: float
    seconds: float


@dataclass
class TrainTrace:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_r2: float = -math.inf
    stopped_by: str = "max_epochs"

    @property
    def losses(self) -> list[float]:
        return [e.train_loss for e in self.epochs]

    @property
    def final_loss(self) -> float:
        return self.epochs[-1].train_loss if self.epochs else math.nan

    @property
    def seconds(self) -> float:
        return sum(e.seconds for e in self.epochs)

    def to_dict(self) -> dict:
        return asdict(self)


def train(spec: ModelSpec, cfg: TrainConfig, dataset: Dataset) -> tuple[ModelParams, TrainTrace]:
    """Minibatch Adam on MAE with best-validation-R^2 parameter selection.

    Stops once the epoch loss changes by less than ``cfg.stop_delta`` or at
    ``cfg.max_epochs``.
    """
    if dataset.S != cfg.sequence_length:
        raise ValueError(f"dataset windows have S={dataset.S}, config asks for {cfg.sequence_length}")
    ws, _ = dataset.windows("train", cfg.train_stride)
    if len(ws) == 0:
        raise ValueError("no training windows")
    X, Y = ws.inputs, ws.targets[..., None]
    params = init_params(spec)
    tensors = list(params.values())
    state = AdamState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng([cfg.seed, spec.seed])
    trace = TrainTrace()
    best = {k: t.data.copy() for k, t in params.items()}
    n = len(X)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = np.sort(order[start:start + cfg.batch_size])
            loss = mae_loss(forward(spec, params, Tensor(X[idx])), Tensor(Y[idx]))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch, b)
            loss.backward()
            adam_step(tensors, state)
            for t in tensors:
                t.grad = None
            total += value * len(idx)
        epoch_loss = total / n
        val_r2 = _validation_r2(spec, params, dataset)
        trace.epochs.append(EpochRecord(epoch, epoch_loss, val_r2, time.perf_counter() - t0))
        if val_r2 > trace.best_val_r2:
            trace.best_val_r2, trace.best_epoch = val_r2, epoch
            best = {k: t.data.copy() for k, t in params.items()}
        log.debug("%s seed=%d epoch=%d loss=%.5f val_r2=%.4f", spec.variant.value, spec.seed, epoch,
                  epoch_loss, val_r2)
        if epoch > 1 and abs(epoch_loss - trace.epochs[-2].train_loss) < cfg.stop_delta:
            trace.stopped_by = "stop_delta"
            break
    return {k: Tensor(v, requires_grad=True) for k, v in best.items()}, trace


# -- experiment runners ---------------------------------------------------------
def max_workers() -> int:
    env = os.environ.get("FREQSTREAM_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            raise ValueError(f"FREQSTREAM_THREADS must be an integer, got {env!r}") from None
    return cap


def _map(fn, jobs: list) -> list:
    workers = min(max_workers(), len(jobs))
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class ArmResult:
    """One trained model (variant x seed) with its evaluation rows."""

    variant: str
    seed: int
    rows: list[MetricsReport] = field(default_factory=list)
    per_well_r2: list[float] = field(default_factory=list)
    trace: TrainTrace | None = None
    params: ModelParams | None = None
    error: str | None = None

    def row(self, band: str = "FULL", condition: str = "CLEAN") -> MetricsReport | None:
        for r in self.rows:
            if r.band == band and r.condition == condition:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "error": self.error,
            "per_well_r2": self.per_well_r2,
            "best_epoch": self.trace.best_epoch if self.trace else None,
            "epochs_run": len(self.trace.epochs) if self.trace else 0,
            "stopped_by": self.trace.stopped_by if self.trace else None,
            "rows": [r.to_dict() for r in self.rows],
        }


def evaluate_condition(spec: ModelSpec, params: ModelParams, dataset: Dataset, condition: str = "CLEAN",
                       bands: bool = True, bank: str = wavelet.DEFAULT_BANK, levels: int = 2):
    t0 = time.perf_counter()
    preds, targets = predict_part(spec, params, dataset, "test")
    pred_seconds = time.perf_counter() - t0
    full = metrics(np.concatenate(preds), np.concatenate(targets), "FULL", condition)
    full.wall_times = {"prediction_s": pred_seconds}
    rows = [full]
    if bands:
        rows.extend(band_metrics(preds, targets, bank, levels, condition))
    per_well = [metrics(p, t).r2 for p, t in zip(preds, targets)]
    return rows, per_well, preds


def _train_arm(job) -> ArmResult:
    spec, cfg, dataset, band_bank, band_levels = job
    arm = ArmResult(spec.variant.value, spec.seed)
    try:
        t0 = time.perf_counter()
        params, trace = train(spec, TrainConfig(**{**cfg.to_dict(), "seed": spec.seed}), dataset)
        train_s = time.perf_counter() - t0
        rows, per_well, _ = evaluate_condition(spec, params, dataset, "CLEAN", True, band_bank, band_levels)
        for r in rows:
            r.training_loss_final = trace.final_loss
            r.wall_times = {**r.wall_times, "training_s": train_s}
        arm.rows, arm.per_well_r2, arm.trace, arm.params = rows, per_well, trace, params
    except Exception as exc:  # a failed arm is recorded, the table goes on
        log.exception("arm %s seed %d failed", spec.variant.value, spec.seed)
        arm.error = f"{type(exc).__name__}: {exc}"
    return arm


def default_specs(n_features: int, hidden_size: int = 16, num_heads: int = 4, levels: int = 2,
                  bank: str = wavelet.DEFAULT_BANK) -> list[ModelSpec]:
    return [ModelSpec(v, n_features, hidden_size, num_heads, levels, bank) for v in ALL_VARIANTS]


def run_ablation(dataset: Dataset, cfg: TrainConfig, specs: list[ModelSpec] | None = None,
                 seeds: list[int] | None = None, band_bank: str = wavelet.DEFAULT_BANK,
                 band_levels: int = 2) -> list[ArmResult]:
    """Train every spec at every seed from identical splits; FULL/LOW/HIGH rows per arm."""
    specs = default_specs(len(dataset.input_names)) if specs is None else specs
    seeds = [s.seed for s in specs[:1]] if seeds is None else seeds
    jobs = [(s.with_seed(seed), cfg, dataset, band_bank, band_levels) for seed in seeds for s in specs]
    return _map(_train_arm, jobs)


def noisy_dataset(dataset: Dataset, spec: NoiseSpec) -> Dataset:
    """Corrupt the raw input channels of every well (labels untouched)."""
    frames = [inject(w.frame, spec.with_seed(spec.seed * 1000 + k)) for k, w in enumerate(dataset.wells)]
    return dataset.with_frames(frames)


def run_noise_bench(dataset: Dataset, cfg: TrainConfig, noise_specs: list[NoiseSpec],
                    specs: list[ModelSpec] | None = None, seeds: list[int] | None = None,
                    trained: list[ArmResult] | None = None, band_bank: str = wavelet.DEFAULT_BANK,
                    band_levels: int = 2) -> list[ArmResult]:
    """Evaluate clean-trained models on noise-corrupted test inputs.

    Adds one FULL row per noise condition to each arm; :func:`delta_r2` and
    :func:`noise_table` compare it with the clean row.  Noise seeds follow the
    model seed.
    """
    arms = trained if trained is not None else run_ablation(dataset, cfg, specs, seeds, band_bank, band_levels)
    for arm in arms:
        if arm.error is not None or arm.params is None:
            continue
        spec = _spec_for(arm, specs, dataset)
        for ns in noise_specs:
            noisy = noisy_dataset(dataset, ns.with_seed(arm.seed * 7919 + ns.seed))
            rows, _, _ = evaluate_condition(spec, arm.params, noisy, ns.label, False)
            arm.rows = [r for r in arm.rows if r.condition != ns.label] + rows
    return arms


def _spec_for(arm: ArmResult, specs: list[ModelSpec] | None, dataset: Dataset) -> ModelSpec:
    if specs:
        for s in specs:
            if s.variant.value == arm.variant:
                return s.with_seed(arm.seed)
    return ModelSpec(Variant(arm.variant), len(dataset.input_names), seed=arm.seed)


# -- tables --------------------------------------------------------------------
def mean_over_seeds(arms: list[ArmResult], variant: str, band: str = "FULL",
                    condition: str = "CLEAN", key: str = "r2") -> float:
    vals = [getattr(a.row(band, condition), key) for a in arms
            if a.variant == variant and a.error is None and a.row(band, condition) is not None]
    return float(np.mean(vals)) if vals else math.nan


def delta_r2(arm: ArmResult, condition: str) -> float:
    clean, noisy = arm.row("FULL", "CLEAN"), arm.row("FULL", condition)
    if clean is None or noisy is None:
        return math.nan
    return clean.r2 - noisy.r2


def mean_delta_r2(arms: list[ArmResult], variant: str, condition: str) -> float:
    vals = [delta_r2(a, condition) for a in arms if a.variant == variant and a.error is None]
    vals = [v for v in vals if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def ablation_table(arms: list[ArmResult]) -> list[dict]:
    """Seed-averaged rows: one per variant and band."""
    variants = list(dict.fromkeys(a.variant for a in arms))
    out = []
    for v in variants:
        for band in ("FULL", "LOW", "HIGH"):
            row = {"model": Variant(v).label, "variant": v, "band": band}
            for key in ("r2", "mae", "rmse", "mse"):
                row[key] = mean_over_seeds(arms, v, band, "CLEAN", key)
            good = [a for a in arms if a.variant == v and a.error is None]
            row["n_seeds"] = len(good)
            row["failed_seeds"] = [a.seed for a in arms if a.variant == v and a.error is not None]
            if band == "FULL":
                row["training_loss"] = float(np.mean([a.trace.final_loss for a in good])) if good else math.nan
                row["per_well_r2"] = (np.mean([a.per_well_r2 for a in good], axis=0).tolist() if good else [])
            out.append(row)
    return out


def noise_table(arms: list[ArmResult], conditions: list[str]) -> list[dict]:
    """Seed-averaged model x condition grid (CLEAN rows first), with delta R^2."""
    variants = list(dict.fromkeys(a.variant for a in arms))
    out = []
    for cond in ["CLEAN", *conditions]:
        for v in variants:
            row = {"model": Variant(v).label, "variant": v, "condition": cond}
            for key in ("r2", "mae", "rmse", "mse"):
                row[key] = mean_over_seeds(arms, v, "FULL", cond, key)
            if cond != "CLEAN":
                row["delta_r2"] = mean_delta_r2(arms, v, cond)
                clean = mean_over_seeds(arms, v, "FULL", "CLEAN")
                row["relative_drop"] = row["delta_r2"] / clean if clean else math.nan
            out.append(row)
    return out
