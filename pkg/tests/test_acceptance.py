"""Acceptance gate.  One ``test_criterion_NN_*`` group per criterion; the
terminal summary prints a PASS/FAIL line per criterion (see conftest).

Criteria 7-9 share one benchmark: the default synthetic wells, the default
training protocol, and LSTM/FAF/TAL/FAL at three model seeds, followed by
the four standard noise conditions on the test inputs.
"""

import json
import time

import numpy as np
import pytest

from freqstream import evaluation as ev
from freqstream import wavelet
from freqstream.blocks import ALL_VARIANTS, ModelSpec, anti_noise_block, forward, init_params
from freqstream.cli import main
from freqstream.data import (SeriesFrame, depth_average, destandardize, fit_stats, generate_synthetic_wells,
                             make_windows_arrays, prepare_dataset, split_by_depth, standardize)
from freqstream.layers import (BatchNormState, LstmParams, MhaParams, batch_norm, dense, dense_init, global_avg_pool,
                               lstm_forward, lstm_init, mha_forward, mha_init)
from freqstream.noise import STANDARD_CONDITIONS, NoiseKind, NoiseSpec, inject
from freqstream.numerics import Tensor, grad_check, soft_threshold, tsum

BANKS = ("haar", "daub4")
BENCH_VARIANTS = ("LSTM", "FAF", "TAL", "FAL")
BENCH_SEEDS = (0, 1, 2)


# -- 1. perfect reconstruction ------------------------------------------------------
@pytest.mark.parametrize("bank", BANKS)
def test_criterion_01_perfect_reconstruction(bank):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for n in (32, 40, 64, 128):
        for levels in range(1, wavelet.max_level(n) + 1):
            for _ in range(100):
                x = rng.normal(size=n)
                rec = wavelet.dwt_synthesize(wavelet.dwt_analyze(x, bank, levels), bank)
                worst = max(worst, float(np.max(np.abs(rec - x))))
    assert worst < 1e-10
    assert time.perf_counter() - t0 < 10.0


# -- 2. additivity and Parseval --------------------------------------------------------
@pytest.mark.parametrize("bank", BANKS)
def test_criterion_02_additivity_and_parseval(bank):
    rng = np.random.default_rng(2)
    for _ in range(100):
        x = rng.normal(size=40) * rng.uniform(0.1, 100)
        for levels in (1, 2, 3):
            low, high = wavelet.band_split(x, bank, levels)
            assert np.max(np.abs(low + high - x)) < 1e-10
        y = rng.normal(size=64) * rng.uniform(0.1, 100)
        for levels in range(1, 7):
            c = wavelet.dwt_analyze(y, bank, levels)
            energy = np.sum(c.approx**2) + sum(np.sum(d**2) for d in c.details)
            assert abs(energy - np.sum(y**2)) <= 1e-9 * np.sum(y**2)


# -- 3. soft threshold ------------------------------------------------------------------
def soft(x, tau):
    return soft_threshold(Tensor(x), Tensor(tau)).data


def test_criterion_03_soft_threshold_examples():
    assert soft(5.0, 2.0) == 3.0 and soft(-5.0, 2.0) == -3.0 and soft(1.0, 2.0) == 0.0


def test_criterion_03_soft_threshold_properties():
    rng = np.random.default_rng(3)
    x = rng.normal(0, 5, size=10_000)
    y = rng.normal(0, 5, size=10_000)
    tau = rng.exponential(2.0, size=10_000)
    sx, sy = soft(x, tau), soft(y, tau)
    assert np.array_equal(soft(-x, tau), -sx)
    assert np.all(np.abs(sx) <= np.abs(x))
    # the differences themselves round, so allow a few ulps of the operands
    slack = 4 * np.finfo(float).eps * (np.abs(x) + np.abs(y))
    assert np.all(np.abs(sx - sy) <= np.abs(x - y) + slack)
    np.testing.assert_array_equal(sx, np.sign(x) * np.maximum(np.abs(x) - tau, 0.0))


# -- 4. gradient suite -----------------------------------------------------------------
F, H, S, B = 6, 8, 8, 2


def _layer_cases(rng):
    x = Tensor(rng.normal(size=(B, S, F)))
    wt = Tensor(rng.normal(size=(B, S, H)))
    lstm = {k: Tensor(v) for k, v in lstm_init(rng, F, H).items()}
    mha = {k: Tensor(v) for k, v in mha_init(rng, H, 4).items()}
    fc = {k: Tensor(v) for k, v in dense_init(rng, F, H).items()}
    h = Tensor(rng.normal(size=(B, S, H)))
    gamma, beta = Tensor(rng.normal(size=H)), Tensor(rng.normal(size=H))
    tau = Tensor(np.abs(rng.normal(size=(B, H))))
    an = {}
    for name, d in (("mha.", mha_init(rng, H, 4)), ("gate.", dense_init(rng, H, H)), ("fc.", dense_init(rng, H, H))):
        an.update({f"anti_noise.{name}{k}": Tensor(v) for k, v in d.items()})
    an_names = list(an)
    ln, mn = list(lstm), list(mha)

    return {
        "lstm": (lambda x_, *p: tsum(lstm_forward(x_, LstmParams.from_flat(dict(zip(ln, p)), ""))[0] * wt),
                 [x, *lstm.values()]),
        "mha": (lambda h_, *p: tsum(mha_forward(h_, h_, h_, MhaParams.from_flat(dict(zip(mn, p)), "", 4)) * wt),
                [h, *mha.values()]),
        "dense": (lambda x_, w_, b_: tsum(dense(x_, w_, b_) * wt), [x, fc["W"], fc["b"]]),
        "batch_norm": (lambda h_, g_, b_: tsum(batch_norm(h_, g_, b_, BatchNormState.fresh(H)) * wt),
                       [h, gamma, beta]),
        "global_avg_pool": (lambda h_: tsum(global_avg_pool(h_ * h_) * tau), [h]),
        "soft_threshold": (lambda h_, t_: tsum(soft_threshold(h_, t_) * wt), [h, tau]),
        "anti_noise_block": (lambda h_, *p: tsum(anti_noise_block(h_, dict(zip(an_names, p))) * wt),
                             [h, *an.values()]),
    }


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_criterion_04_gradient_suite(seed):
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for name, (f, args) in _layer_cases(rng).items():
        assert grad_check(f, args, max_probes=30, seed=seed) < 1e-4, name
    for variant in ALL_VARIANTS:
        spec = ModelSpec(variant, F, H, 4, 2, "daub4", seed)
        params = init_params(spec)
        names = list(params)
        x = Tensor(rng.normal(size=(B, S, F)))
        y = Tensor(rng.normal(size=(B, S, 1)))

        def loss(x_, *ps):
            out = forward(spec, dict(zip(names, ps)), x_)
            return tsum((out - y) * (out - y))

        assert grad_check(loss, [x, *params.values()], max_probes=25, seed=seed) < 1e-4, variant.value
    assert time.perf_counter() - t0 < 60.0 / 3


# -- 5. noise injectors ----------------------------------------------------------------
@pytest.fixture(scope="module")
def big_frame():
    rng = np.random.default_rng(5)
    return SeriesFrame(0.0, 0.125, {"a": rng.normal(10, 3, 100_000), "b": rng.gamma(2.0, 2.0, 100_000),
                                    "RT": rng.uniform(1, 2, 100_000)})


@pytest.mark.parametrize("alpha", [0.1, 0.2])
def test_criterion_05_gaussian_std(big_frame, alpha):
    noisy = inject(big_frame, NoiseSpec(NoiseKind.GAUSSIAN, alpha, seed=11))
    for name in ("a", "b"):
        diff = noisy.channels[name] - big_frame.channels[name]
        assert abs(diff.std() / (alpha * big_frame.channels[name].std()) - 1) < 0.02


def test_criterion_05_impulse_firing_fraction(big_frame):
    noisy = inject(big_frame, NoiseSpec(NoiseKind.IMPULSE, 0.2, period_samples=5, seed=12))
    for name in ("a", "b"):
        assert abs(np.mean(noisy.channels[name] != big_frame.channels[name]) - 0.2) <= 0.01


def test_criterion_05_alpha_zero_identity(big_frame):
    for kind in NoiseKind:
        noisy = inject(big_frame, NoiseSpec(kind, 0.0, seed=13))
        assert all(np.array_equal(noisy.channels[k], big_frame.channels[k]) for k in big_frame.names)


# -- 6. pipeline identities ---------------------------------------------------------------
def test_criterion_06_standardize_round_trip():
    frame = generate_synthetic_wells(seed=6)[0]
    stats = fit_stats(frame)
    back = destandardize(standardize(frame, stats), stats)
    for name in frame.names:
        x = frame.channels[name]
        assert np.max(np.abs(back.channels[name] - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


def test_criterion_06_window_average_round_trip():
    rng = np.random.default_rng(6)
    for n, S_ in ((2000, 40), (137, 40), (50, 1), (64, 7)):
        y = rng.lognormal(size=n)
        ws = make_windows_arrays(np.zeros((n, 1)), y, S_, 1)
        assert np.array_equal(depth_average(ws.targets, ws.origin_index, n), y)


def test_criterion_06_split_partition():
    a, b, c = split_by_depth(1000)
    assert (a, b, c) == (range(0, 700), range(700, 800), range(800, 1000))
    for n in (40, 999, 2000, 12345):
        a, b, c = split_by_depth(n)
        assert list(a) + list(b) + list(c) == list(range(n))


# -- 7-9. directional benchmark ------------------------------------------------------------
@pytest.fixture(scope="session")
def benchmark():
    dataset = prepare_dataset(generate_synthetic_wells(seed=0))
    cfg = ev.TrainConfig()
    specs = [ModelSpec(v, len(dataset.input_names)) for v in BENCH_VARIANTS]
    t0 = time.perf_counter()
    arms = ev.run_ablation(dataset, cfg, specs, seeds=list(BENCH_SEEDS))
    arms = ev.run_noise_bench(dataset, cfg, list(STANDARD_CONDITIONS), specs, trained=arms)
    seconds = time.perf_counter() - t0
    assert all(a.error is None for a in arms), [a.error for a in arms]
    r2 = {(v, band): ev.mean_over_seeds(arms, v, band) for v in BENCH_VARIANTS for band in ("FULL", "LOW", "HIGH")}
    delta = {(v, c.label): ev.mean_delta_r2(arms, v, c.label) for v in BENCH_VARIANTS for c in STANDARD_CONDITIONS}
    print("\nbenchmark (%.0f s):" % seconds)
    for v in BENCH_VARIANTS:
        print("  %-4s FULL %.4f LOW %.4f HIGH %.4f  dR2 %s" % (
            v, r2[v, "FULL"], r2[v, "LOW"], r2[v, "HIGH"],
            " ".join("%s=%.4f" % (c.label, delta[v, c.label]) for c in STANDARD_CONDITIONS)))
    return {"r2": r2, "delta": delta, "seconds": seconds}


def test_criterion_07_fal_beats_tal(benchmark):
    assert benchmark["r2"]["FAL", "FULL"] > benchmark["r2"]["TAL", "FULL"]


def test_criterion_07_fal_beats_faf(benchmark):
    assert benchmark["r2"]["FAL", "FULL"] > benchmark["r2"]["FAF", "FULL"]


def test_criterion_07_fal_beats_lstm_by_margin(benchmark):
    assert benchmark["r2"]["FAL", "FULL"] - benchmark["r2"]["LSTM", "FULL"] >= 0.02


def test_criterion_07_runtime(benchmark):
    assert benchmark["seconds"] < 600.0


def gain(benchmark, variant, band):
    return benchmark["r2"][variant, band] - benchmark["r2"]["LSTM", band]


def test_criterion_08_faf_gains_more_in_high_band(benchmark):
    assert gain(benchmark, "FAF", "HIGH") > gain(benchmark, "FAF", "LOW")


def test_criterion_08_tal_gains_more_in_low_band(benchmark):
    assert gain(benchmark, "TAL", "LOW") > gain(benchmark, "TAL", "HIGH")


@pytest.mark.parametrize("condition", ["GAUSSIAN_0.2", "IMPULSE_0.2"])
def test_criterion_09_fal_degrades_less_than_lstm(benchmark, condition):
    assert benchmark["delta"]["FAL", condition] < benchmark["delta"]["LSTM", condition]


@pytest.mark.parametrize("kind", ["GAUSSIAN", "IMPULSE"])
def test_criterion_09_degradation_monotone_in_alpha(benchmark, kind):
    d = benchmark["delta"]
    for v in BENCH_VARIANTS:
        assert d[v, f"{kind}_0.1"] <= d[v, f"{kind}_0.2"], v


# -- 10. reproducibility --------------------------------------------------------------------
REPRO = {
    "data": {"seed": 3, "wells": 2, "rows": 240, "n_tem_channels": 5, "n_conv_channels": 3},
    "models": [{"variant": v.value, "input_features": 8, "hidden_size": 4, "num_heads": 2} for v in ALL_VARIANTS],
    "train": {"sequence_length": 16, "max_epochs": 3},
    "seeds": [0, 1],
    "emit": ["json", "csv"],
}


def _without_times(obj):
    if isinstance(obj, dict):
        return {k: _without_times(v) for k, v in obj.items() if k != "wall_times"}
    if isinstance(obj, list):
        return [_without_times(v) for v in obj]
    return obj


@pytest.mark.parametrize("command, name", [("ablate", "ablation"), ("noise-bench", "noise_bench")])
def test_criterion_10_rerun_identical(tmp_path, command, name):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(REPRO))
    docs = []
    for run in ("first", "second"):
        assert main([command, "--config", str(cfg), "--out", str(tmp_path / run)]) == 0
        docs.append(_without_times(json.loads((tmp_path / run / f"{name}.json").read_text())))
    assert docs[0] == docs[1]
    assert (tmp_path / "first" / f"{name}.csv").read_bytes() == (tmp_path / "second" / f"{name}.csv").read_bytes()
