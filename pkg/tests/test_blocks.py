import json

import numpy as np
import pytest

from freqstream import wavelet
from freqstream.blocks import (ALL_VARIANTS, CheckpointError, ModelSpec, Variant, anti_noise_block,
                               baseline_forward, count_params, fal_forward, faf_forward, forward, init_params,
                               inventory, load_checkpoint, lstm_head_forward, mae_loss, params_from_json,
                               params_to_json, predict_array, save_checkpoint, split_bands, tal_forward)
from freqstream.layers import LstmParams, MhaParams, dense, global_avg_pool, lstm_forward, mha_forward
from freqstream.numerics import ShapeError, Tensor, grad_check, soft_threshold, tsum

SMALL = dict(input_features=6, hidden_size=8, num_heads=4)


def spec(variant, seed=0, **kw):
    return ModelSpec(variant, **{**SMALL, **kw}, seed=seed)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def test_variant_parsing_and_labels():
    assert Variant.parse("attention-lstm") is Variant.ATTENTION_LSTM
    assert Variant.parse("Res_LSTM") is Variant.RES_LSTM
    assert [v.label for v in ALL_VARIANTS] == ["LSTM", "Attention-LSTM", "Res-LSTM", "FAF", "TAL", "FAL"]
    with pytest.raises(ValueError):
        Variant.parse("GRU")


def test_spec_round_trip_and_validation():
    s = spec("FAL", seed=3)
    assert ModelSpec.from_dict(s.to_dict()) == s
    with pytest.raises(ValueError, match="unknown"):
        ModelSpec.from_dict({**s.to_dict(), "dropout": 0.1})
    with pytest.raises(ValueError, match="divisible"):
        ModelSpec("TAL", 6, hidden_size=6, num_heads=4)


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_init_is_deterministic(variant):
    a, b = init_params(spec(variant)), init_params(spec(variant))
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)


def test_inventory_of_each_variant():
    lstm = inventory(spec("LSTM"))
    assert set(lstm) == {f"lstm.{w}" for w in ("W_i", "W_f", "W_g", "W_o", "b_i", "b_f", "b_g", "b_o")} | {
        "head.W", "head.b"}
    assert set(inventory(spec("ATTENTION_LSTM"))) - set(lstm) == {f"attention.W_{c}" for c in "qkvo"}
    assert set(inventory(spec("RES_LSTM"))) - set(lstm) == {"skip.W"}
    tal = set(inventory(spec("TAL")))
    assert tal - set(lstm) == ({f"anti_noise.mha.W_{c}" for c in "qkvo"}
                               | {"anti_noise.gate.W", "anti_noise.gate.b", "anti_noise.fc.W", "anti_noise.fc.b"})
    assert set(inventory(spec("FAF"))) == {f"{s}.{k}" for s in ("low", "high") for k in lstm}
    assert set(inventory(spec("FAL"))) == {f"{s}.{k}" for s in ("low", "high") for k in tal}


def test_forget_bias_slices_are_one():
    p = init_params(spec("FAL"))
    for k, t in p.items():
        if k.endswith("lstm.b_f"):
            assert np.all(t.data == 1.0)
        elif k.endswith(".b") or k.endswith("b_i") or k.endswith("b_g") or k.endswith("b_o"):
            assert np.all(t.data == 0.0)


def test_weights_respect_fan_in_bound():
    p = init_params(spec("TAL"))
    W = p["lstm.W_i"].data
    assert np.all(np.abs(W) <= 1 / np.sqrt(W.shape[1]))
    assert np.all(np.abs(p["head.W"].data) <= 1 / np.sqrt(8))


def test_faf_has_fewer_params_than_fal():
    assert count_params(init_params(spec("FAF"))) < count_params(init_params(spec("FAL")))


@pytest.mark.parametrize("variant", ALL_VARIANTS)
def test_every_variant_emits_b_s_1(variant, rng):
    s = spec(variant)
    y = forward(s, init_params(s), Tensor(rng.normal(size=(3, 8, 6))))
    assert y.shape == (3, 8, 1) and np.all(np.isfinite(y.data))


def test_fal_default_widths_finite_at_init(rng):
    s = ModelSpec("FAL")
    y = forward(s, init_params(s), Tensor(rng.normal(size=(2, 40, 39)) * 5))
    assert y.shape == (2, 40, 1) and np.all(np.isfinite(y.data))


def test_anti_noise_zero_input_gives_bias(rng):
    p = init_params(spec("TAL"))
    p["anti_noise.fc.b"] = Tensor(rng.normal(size=8))
    out = anti_noise_block(Tensor(np.zeros((1, 4, 8))), p)
    np.testing.assert_array_equal(out.data, np.broadcast_to(p["anti_noise.fc.b"].data, (1, 4, 8)))


def test_anti_noise_tau_bounded_by_mean_abs(rng):
    p = init_params(spec("TAL"))
    x = rng.normal(size=(3, 5, 8))
    _, tau = anti_noise_block(Tensor(x), p, return_tau=True)
    u = np.abs(x).mean(axis=1)
    assert np.all(tau.data >= 0) and np.all(tau.data <= u)


def test_anti_noise_matches_composition_oracle(rng):
    p = init_params(spec("TAL", hidden_size=4, num_heads=2))
    x = rng.normal(size=(1, 4, 4))
    u = np.abs(x).mean(axis=1)  # [1, 4]
    W = {c: p[f"anti_noise.mha.W_{c}"].data for c in "qkvo"}
    att = u @ W["v"] @ W["o"]  # single key: weight is exactly 1
    s = sigmoid(att @ p["anti_noise.gate.W"].data + p["anti_noise.gate.b"].data)
    tau = (s * u)[:, None, :]
    soft = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    expected = (soft + x) @ p["anti_noise.fc.W"].data + p["anti_noise.fc.b"].data
    got = anti_noise_block(Tensor(x), p, num_heads=2).data
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_tal_degenerates_when_gate_is_closed(rng):
    p = init_params(spec("TAL"))
    p["anti_noise.gate.b"] = Tensor(np.full(8, -1e4))  # sigmoid -> 0, so tau = 0
    x = Tensor(rng.normal(size=(2, 5, 6)))
    h, _, _ = lstm_forward(x, LstmParams.from_flat(p, "lstm."))
    branch = dense(Tensor(2.0 * h.data), p["anti_noise.fc.W"], p["anti_noise.fc.b"])
    expected = dense(branch, p["head.W"], p["head.b"]).data
    np.testing.assert_allclose(tal_forward(x, p).data, expected, atol=1e-12)


def test_lstm_variant_equals_tal_without_block(rng):
    p = init_params(spec("TAL"))
    x = Tensor(rng.normal(size=(2, 5, 6)))
    np.testing.assert_allclose(tal_forward(x, p, bypass_anti_noise=True).data,
                               lstm_head_forward(x, p).data, atol=0)


def test_sub_threshold_offsets_do_not_reach_thresholded_path(rng):
    x = rng.normal(size=(2, 6, 3))
    tau = np.abs(x).max() + 1.0
    offsets = rng.uniform(-0.5, 0.5, size=(1, 1, 3)) * np.ones_like(x)
    a = soft_threshold(Tensor(x), Tensor(tau)).data
    b = soft_threshold(Tensor(x + offsets), Tensor(tau)).data
    np.testing.assert_array_equal(a, b)


def test_split_bands_additivity_and_constant(rng):
    x = Tensor(rng.normal(size=(2, 8, 3)))
    low, high = split_bands(x, 2)
    np.testing.assert_allclose(low.data + high.data, x.data, atol=1e-12)
    ref_low, _ = wavelet.band_split(np.moveaxis(x.data, 1, -1), wavelet.DEFAULT_BANK, 2)
    np.testing.assert_allclose(low.data, np.moveaxis(ref_low, -1, 1), atol=1e-12)
    const = Tensor(np.ones((1, 8, 2)) * 3.0)
    assert np.max(np.abs(split_bands(const, 2)[1].data)) < 1e-12


def test_split_bands_rejects_short_windows():
    with pytest.raises(ShapeError, match="admissible levels"):
        split_bands(Tensor(np.zeros((1, 4, 2))), 3)


def test_zero_high_stream_equals_low_stream(rng):
    p = init_params(spec("FAF"))
    for k in p:
        if k.startswith("high."):
            p[k] = Tensor(np.zeros_like(p[k].data))
    x = Tensor(rng.normal(size=(2, 8, 6)))
    y, y_low, y_high = faf_forward(x, p, return_streams=True)
    assert np.all(y_high.data == 0)
    np.testing.assert_array_equal(y.data, y_low.data)


def test_fal_bypassed_matches_faf(rng):
    fal_p = init_params(spec("FAL"))
    faf_p = {k: fal_p[k] for k in inventory(spec("FAF"))}
    x = Tensor(rng.normal(size=(2, 8, 6)))
    np.testing.assert_allclose(fal_forward(x, fal_p, bypass_anti_noise=True).data, faf_forward(x, faf_p).data,
                               atol=0)


def test_stream_independence(rng):
    p = init_params(spec("FAL"))
    x = Tensor(rng.normal(size=(2, 8, 6)))
    _, lo1, hi1 = fal_forward(x, p, return_streams=True)
    for k in p:
        if k.startswith("high."):
            p[k] = Tensor(p[k].data + 0.1)
    _, lo2, hi2 = fal_forward(x, p, return_streams=True)
    np.testing.assert_array_equal(lo1.data, lo2.data)
    assert not np.allclose(hi1.data, hi2.data)


def test_attention_baseline_composition(rng):
    p = init_params(spec("ATTENTION_LSTM"))
    x = Tensor(rng.normal(size=(1, 5, 6)))
    h, _, _ = lstm_forward(x, LstmParams.from_flat(p, "lstm."))
    att = mha_forward(h, h, h, MhaParams.from_flat(p, "attention.", 1))
    expected = dense(att, p["head.W"], p["head.b"]).data
    np.testing.assert_allclose(baseline_forward("Attention-LSTM", x, p).data, expected, atol=0)


def test_res_baseline_composition(rng):
    p = init_params(spec("RES_LSTM"))
    x = Tensor(rng.normal(size=(1, 5, 6)))
    h, _, _ = lstm_forward(x, LstmParams.from_flat(p, "lstm."))
    expected = (h.data + x.data @ p["skip.W"].data) @ p["head.W"].data + p["head.b"].data
    np.testing.assert_allclose(baseline_forward("RES_LSTM", x, p).data, expected, atol=1e-13)


def test_baseline_rejects_composite_variant(rng):
    with pytest.raises(ValueError, match="not a baseline"):
        baseline_forward("FAL", Tensor(rng.normal(size=(1, 4, 6))), init_params(spec("LSTM")))


def test_forward_rejects_wrong_feature_count(rng):
    s = spec("LSTM")
    with pytest.raises(ShapeError, match="features"):
        forward(s, init_params(s), Tensor(np.zeros((1, 4, 5))))


@pytest.mark.parametrize("variant", ALL_VARIANTS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_variant_gradients(variant, seed):
    s = spec(variant, seed=seed)
    p = init_params(s)
    rng = np.random.default_rng(100 + seed)
    x = Tensor(rng.normal(size=(2, 8, 6)))
    y = Tensor(rng.normal(size=(2, 8, 1)))
    names = list(p)

    def f(*ps):
        return mae_loss(forward(s, dict(zip(names, ps)), x), y)

    assert grad_check(f, list(p.values()), max_probes=25, seed=seed) < 1e-4


def test_anti_noise_block_gradients(rng):
    p = {k: v for k, v in init_params(spec("TAL")).items() if k.startswith("anti_noise.")}
    x = Tensor(rng.normal(size=(2, 5, 8)))
    w = Tensor(rng.normal(size=(2, 5, 8)))
    names = list(p)

    def f(x_, *ps):
        return tsum(anti_noise_block(x_, dict(zip(names, ps))) * w)

    assert grad_check(f, [x, *p.values()]) < 1e-4


def test_predict_array_matches_forward(rng):
    s = spec("FAL")
    p = init_params(s)
    x = rng.normal(size=(5, 8, 6))
    np.testing.assert_allclose(predict_array(s, p, x, batch_size=2), forward(s, p, Tensor(x)).data[..., 0],
                               atol=1e-12)


def test_global_pool_on_hidden_sequence_shape(rng):
    assert global_avg_pool(Tensor(rng.normal(size=(2, 5, 8)))).shape == (2, 8)


# -- checkpoints -------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    s = spec("FAL", seed=4)
    p = init_params(s)
    save_checkpoint(tmp_path / "m.json", s, p, {"note": "x"})
    s2, p2, extra = load_checkpoint(tmp_path / "m.json")
    assert s2 == s and extra == {"note": "x"}
    assert all(np.array_equal(p[k].data, p2[k].data) for k in p)


def test_checkpoint_mismatch_names_offending_path():
    s = spec("LSTM")
    doc = params_to_json(init_params(s))
    missing = {k: v for k, v in doc.items() if k != "head.b"}
    with pytest.raises(CheckpointError, match="head.b"):
        params_from_json(s, missing)
    with pytest.raises(CheckpointError, match="skip.W"):
        params_from_json(s, {**doc, "skip.W": {"shape": [6, 8], "values": [0.0] * 48}})
    bad = json.loads(json.dumps(doc))
    bad["lstm.W_f"]["shape"] = [8, 13]
    with pytest.raises(CheckpointError, match="lstm.W_f"):
        params_from_json(s, bad)


def test_checkpoint_of_other_variant_is_rejected(tmp_path):
    doc = params_to_json(init_params(spec("TAL")))
    with pytest.raises(CheckpointError, match="anti_noise"):
        params_from_json(spec("LSTM"), doc)
