"""Command-line entry point: ``python3 -m freqstream <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from . import wavelet
from .blocks import CheckpointError, ModelSpec, Variant, load_checkpoint, predict_array, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .data import (SeriesFrame, StandardizerStats, correlation_report, depth_average, generate_synthetic_wells,
                   make_windows_arrays, write_manifest)

log = logging.getLogger("freqstream")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- output helpers ---------------------------------------------------------------
def _prepare_out(path: str | Path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output path {out} is not writable: {exc}") from None
    return out


def _clean(obj):
    """JSON-safe copy: NaN becomes null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    path.write_text(buf.getvalue())


def _provenance(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "data_seed": cfg.data.seed, "model_seeds": list(cfg.seeds)}


def _load_config(path: str | None) -> ExperimentConfig:
    return ExperimentConfig() if path is None else ExperimentConfig.load(path)


def _dataset(cfg: ExperimentConfig, data_dir: str | None = None):
    frames = None
    if data_dir is not None:
        paths = sorted(Path(data_dir).glob("*.csv"))
        if not paths:
            raise ConfigError(f"no CSV files in {data_dir}")
        frames = [SeriesFrame.from_csv(p) for p in paths]
        for f, p in zip(frames, paths):
            f.meta["well"] = p.stem
    try:
        return cfg.dataset(frames)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- commands -------------------------------------------------------------------
def cmd_gen_data(args) -> int:
    if args.rows < 1:
        raise UsageError("--rows must be a positive integer")
    if args.wells < 1:
        raise UsageError("--wells must be a positive integer")
    out = _prepare_out(args.out)
    frames = generate_synthetic_wells(seed=args.seed, n_wells=args.wells, rows=args.rows)
    files = []
    for k, f in enumerate(frames):
        name = f"well_{k + 1}.csv"
        f.to_csv(out / name)
        files.append({"file": name, "well": f.meta["well"], "rows": f.n_rows, "depth_start": f.depth_start,
                      "depth_step": f.depth_step})
    write_manifest(out / "manifest.json", {
        "seed": args.seed, "wells": args.wells, "rows": args.rows, "target": frames[0].target_name,
        "channels": frames[0].names, "files": files, "redundant_groups": frames[0].meta["redundant_groups"],
    })
    print(f"wrote {len(frames)} wells to {out}")
    return EXIT_OK


def _pick_model(cfg: ExperimentConfig, variant: str | None) -> ModelSpec:
    if variant is None:
        return cfg.models[0]
    v = Variant.parse(variant)
    for m in cfg.models:
        if m.variant is v:
            return m
    return ModelSpec(v, len(cfg.data.input_names()))


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    try:
        spec = _pick_model(cfg, args.variant).with_seed(cfg.seeds[0] if args.seed is None else args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dataset = _dataset(cfg, args.data)
    out = _prepare_out(args.out)
    params, trace = ev.train(spec, ev.TrainConfig(**{**cfg.train.to_dict(), "seed": spec.seed}), dataset)
    save_checkpoint(out / "checkpoint.json", spec, params, {
        "stats": dataset.stats.to_dict(), "input_names": dataset.input_names,
        "target_name": dataset.target_name, "sequence_length": dataset.S,
        "best_epoch": trace.best_epoch, "best_val_r2": trace.best_val_r2, **_provenance(cfg),
    })
    rows = [{"epoch": e.epoch, "train_loss": repr(e.train_loss), "val_r2": repr(e.val_r2)} for e in trace.epochs]
    _write_csv(out / "loss_trace.csv", rows, ["epoch", "train_loss", "val_r2"])
    if "svg" in cfg.emit:
        from .plots import loss_plot
        loss_plot(out / "loss_trace.svg", trace.losses, [e.val_r2 for e in trace.epochs])
    print(f"{spec.variant.label}: {len(trace.epochs)} epochs, best epoch {trace.best_epoch} "
          f"(val R2 {trace.best_val_r2:.4f})")
    return EXIT_OK


def _read_series_csv(path: str | Path, prefer: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    frame = SeriesFrame.from_csv(path, target_name=None)
    for name in prefer:
        if name in frame.channels:
            return frame.depth, frame.channels[name]
    if len(frame.names) == 1:
        return frame.depth, frame.channels[frame.names[0]]
    raise ConfigError(f"{path}: none of the columns {list(prefer)} found")


def cmd_predict(args) -> int:
    try:
        spec, params, extra = load_checkpoint(args.model)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load checkpoint {args.model}: {exc}") from None
    for key in ("stats", "input_names", "target_name", "sequence_length"):
        if key not in extra:
            raise CheckpointError(f"checkpoint lacks {key!r}; it was not written by the train command")
    stats = StandardizerStats.from_dict(extra["stats"])
    names, target, S = extra["input_names"], extra["target_name"], int(extra["sequence_length"])
    frame = SeriesFrame.from_csv(args.data, target_name=None)
    missing = [n for n in names if n not in frame.channels]
    if missing:
        raise ConfigError(f"{args.data}: missing input channel(s) {missing}")
    if frame.n_rows < S:
        raise ConfigError(f"{args.data}: {frame.n_rows} rows is shorter than the window length {S}")
    X = np.stack([(frame.channels[n] - stats.mean[n]) / stats.std[n] for n in names], axis=1)
    ws = make_windows_arrays(X, np.zeros(frame.n_rows), S, 1)
    avg = depth_average(predict_array(spec, params, ws.inputs), ws.origin_index, frame.n_rows)
    pred = avg * stats.std[target] + stats.mean[target]
    out = Path(args.out)
    if out.parent != Path(""):
        _prepare_out(out.parent)
    SeriesFrame(frame.depth_start, frame.depth_step, {f"{target}_PRED": pred}, None).to_csv(out)
    print(f"wrote {frame.n_rows} predictions to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    d_pred, pred = _read_series_csv(args.pred, ("RT_PRED", "PRED"))
    d_true, truth = _read_series_csv(args.truth, ("RT",))
    if d_pred.shape != d_true.shape or not np.allclose(d_pred, d_true, rtol=0, atol=1e-9):
        raise ConfigError("prediction and truth depths do not match")
    rows = [ev.metrics(pred, truth)]
    if args.bands:
        rows.extend(ev.band_metrics(pred, truth, args.bank, args.levels))
    doc = {"rows": [r.to_dict() for r in rows], "bank": args.bank, "levels": args.levels}
    text = json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        if out.parent != Path(""):
            _prepare_out(out.parent)
        out.write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


_TABLE_COLUMNS = ["model", "band", "r2", "mae", "rmse", "mse", "training_loss", "n_seeds"]
_NOISE_COLUMNS = ["model", "condition", "r2", "mae", "rmse", "mse", "delta_r2", "relative_drop"]


def _emit_arms(out: Path, arms: list[ev.ArmResult]) -> None:
    arm_dir = out / "arms"
    arm_dir.mkdir(exist_ok=True)
    for a in arms:
        _write_json(arm_dir / f"{a.variant}_seed{a.seed}.json", a.to_dict())


def _emit_plots(out: Path, cfg: ExperimentConfig, dataset, arms: list[ev.ArmResult]) -> None:
    from .plots import prediction_plot
    first = {}
    for a in arms:
        if a.error is None and a.variant not in first:
            first[a.variant] = a
    preds = {}
    for v, a in first.items():
        spec = next(m for m in cfg.models if m.variant.value == v).with_seed(a.seed)
        preds[Variant(v).label], targets = ev.predict_part(spec, a.params, dataset, "test")
    if not preds:
        return
    for k, w in enumerate(dataset.wells):
        r = w.part("test")
        prediction_plot(out / f"prediction_{w.name}.svg", w.frame.depth[r.start:r.stop], targets[k],
                        {name: p[k] for name, p in preds.items()}, title=w.name)


def _run_table(args, noise: bool) -> int:
    cfg = _load_config(args.config)
    dataset = _dataset(cfg, getattr(args, "data", None))
    out = _prepare_out(args.out or cfg.out_dir)
    arms = ev.run_ablation(dataset, cfg.train, list(cfg.models), list(cfg.seeds), cfg.band_bank, cfg.band_levels)
    _emit_arms(out, arms)
    doc = {**_provenance(cfg), "config": cfg.to_dict(), "arms": [a.to_dict() for a in arms]}
    if noise:
        arms = ev.run_noise_bench(dataset, cfg.train, list(cfg.noise), list(cfg.models), trained=arms)
        table = ev.noise_table(arms, [n.label for n in cfg.noise])
        doc.update(arms=[a.to_dict() for a in arms], table=table)
        name, columns = "noise_bench", _NOISE_COLUMNS
    else:
        table = ev.ablation_table(arms)
        doc["table"] = table
        name, columns = "ablation", _TABLE_COLUMNS
    if "json" in cfg.emit:
        _write_json(out / f"{name}.json", doc)
    if "csv" in cfg.emit:
        _write_csv(out / f"{name}.csv", _clean(table), columns)
    if "svg" in cfg.emit:
        _emit_plots(out, cfg, dataset, arms)
    failed = [f"{a.variant}/seed{a.seed}" for a in arms if a.error is not None]
    for row in table:
        band = row.get("band", row.get("condition"))
        print(f"{row['model']:>15} {band:>13}  R2={row['r2']:.4f}  MAE={row['mae']:.4f}")
    if failed:
        print(f"failed arms: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_ablate(args) -> int:
    return _run_table(args, noise=False)


def cmd_noise_bench(args) -> int:
    return _run_table(args, noise=True)


def cmd_correlate(args) -> int:
    cfg = _load_config(args.config)
    frames = cfg.frames()
    report = correlation_report(frames)
    report["redundant_groups"] = frames[0].meta["redundant_groups"]
    text = json.dumps(_clean(report), indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(f"max |corr(channel, RT)| = {report['max_abs_corr_with_target']:.3f}; "
              f"channel pairs with |corr| > 0.9: {report['fraction_pairs_abs_corr_gt_0.9']:.3f}")
    return EXIT_OK


def cmd_dump_coeffs(args) -> int:
    frame = SeriesFrame.from_csv(args.data, target_name=None)
    if args.channel not in frame.channels:
        raise ConfigError(f"unknown channel {args.channel!r}")
    x = frame.channels[args.channel]
    try:
        c = wavelet.dwt_analyze(x, args.bank, args.levels)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    arrays = {"approx": c.approx, **{f"detail_{j + 1}": d for j, d in enumerate(c.details)}}
    rows = []
    for name, arr in arrays.items():
        rows.extend({"array": name, "index": i, "value": repr(float(v))} for i, v in enumerate(arr))
    _write_csv(Path(args.out), rows, ["array", "index", "value"])
    return EXIT_OK


# -- argument parsing ---------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="freqstream", description="Frequency-aware LSTM experiments on synthetic well logs")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate synthetic wells as CSV plus a manifest")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--wells", type=int, default=3)
    g.add_argument("--rows", type=int, default=2000)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train one model, write checkpoint and loss trace")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--variant", help="model variant (default: first model in the config)")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", help="directory of well CSVs (default: generate from the config)")
    t.set_defaults(fn=cmd_train)

    pr = sub.add_parser("predict", help="depth-averaged predictions for one well CSV")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--out", required=True)
    pr.set_defaults(fn=cmd_predict)

    e = sub.add_parser("evaluate", help="metrics of a prediction CSV against a truth CSV")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--bands", action="store_true", help="add LOW and HIGH band rows")
    e.add_argument("--bank", default=wavelet.DEFAULT_BANK, choices=sorted(wavelet.BANKS))
    e.add_argument("--levels", type=int, default=2)
    e.add_argument("--out")
    e.set_defaults(fn=cmd_evaluate)

    for name, fn, help_ in (("ablate", cmd_ablate, "train every variant at every seed"),
                            ("noise-bench", cmd_noise_bench, "ablation plus noisy-input evaluation")):
        a = sub.add_parser(name, help=help_)
        a.add_argument("--config")
        a.add_argument("--out")
        a.add_argument("--data", help="directory of well CSVs (default: generate from the config)")
        a.set_defaults(fn=fn)

    c = sub.add_parser("correlate", help="channel correlation report for the configured wells")
    c.add_argument("--config")
    c.add_argument("--out")
    c.set_defaults(fn=cmd_correlate)

    d = sub.add_parser("dump-coeffs", help="wavelet coefficients of one channel as CSV")
    d.add_argument("--data", required=True)
    d.add_argument("--channel", default="RT")
    d.add_argument("--bank", default=wavelet.DEFAULT_BANK, choices=sorted(wavelet.BANKS))
    d.add_argument("--levels", type=int, default=2)
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_dump_coeffs)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"freqstream: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, ConfigError, CheckpointError) as exc:
        print(f"freqstream: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"freqstream: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
