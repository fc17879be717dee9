"""Model assemblies: anti-noise block, TAL, the dual-stream FAF/FAL and baselines.

Every model maps ``x [B, S, F]`` to ``y [B, S, 1]`` and reads its weights from a
flat ``{path: Tensor}`` map produced by :func:`init_params`.  Paths are
dotted, e.g. ``low.lstm.W_i`` or ``high.anti_noise.gate.b``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import wavelet
from .layers import (
    LstmParams,
    MhaParams,
    dense,
    dense_init,
    global_avg_pool,
    lstm_forward,
    lstm_init,
    mha_forward,
    mha_init,
    soft_threshold,
)
from .numerics import ShapeError, Tensor, add, constant_matmul_last, reshape, sigmoid, sub, tabs, mul

ModelParams = dict[str, Tensor]


class Variant(str, Enum):
    LSTM = "LSTM"
    ATTENTION_LSTM = "ATTENTION_LSTM"
    RES_LSTM = "RES_LSTM"
    FAF = "FAF"
    TAL = "TAL"
    FAL = "FAL"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, name: "str | Variant") -> "Variant":
        if isinstance(name, Variant):
            return name
        key = str(name).strip().upper().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown model variant {name!r}; choose from {[v.value for v in cls]}") from None


_LABELS = {
    Variant.LSTM: "LSTM",
    Variant.ATTENTION_LSTM: "Attention-LSTM",
    Variant.RES_LSTM: "Res-LSTM",
    Variant.FAF: "FAF",
    Variant.TAL: "TAL",
    Variant.FAL: "FAL",
}

ALL_VARIANTS = tuple(Variant)


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.FAL
    input_features: int = 39
    hidden_size: int = 16
    num_heads: int = 4
    wavelet_levels: int = 2
    wavelet_bank: str = wavelet.DEFAULT_BANK
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.input_features < 1 or self.hidden_size < 1 or self.num_heads < 1:
            raise ValueError("input_features, hidden_size and num_heads must be positive")
        if self.wavelet_levels < 1:
            raise ValueError("wavelet_levels must be positive")
        wavelet.get_bank(self.wavelet_bank)
        if self.variant in (Variant.TAL, Variant.FAL) and self.hidden_size % self.num_heads:
            raise ValueError(f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variant"] = self.variant.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ModelSpec fields: {sorted(extra)}")
        return cls(**d)

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(**{**asdict(self), "seed": seed})


# -- initialization ---------------------------------------------------------
def _prefixed(prefix: str, d: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {f"{prefix}{k}": v for k, v in d.items()}


def _init_lstm_head(rng, F, H, prefix="") -> dict[str, np.ndarray]:
    out = _prefixed(f"{prefix}lstm.", lstm_init(rng, F, H))
    out.update(_prefixed(f"{prefix}head.", dense_init(rng, H, 1)))
    return out


def _init_tal(rng, F, H, heads, prefix="") -> dict[str, np.ndarray]:
    out = _prefixed(f"{prefix}lstm.", lstm_init(rng, F, H))
    out.update(_prefixed(f"{prefix}anti_noise.mha.", mha_init(rng, H, heads)))
    out.update(_prefixed(f"{prefix}anti_noise.gate.", dense_init(rng, H, H)))
    out.update(_prefixed(f"{prefix}anti_noise.fc.", dense_init(rng, H, H)))
    out.update(_prefixed(f"{prefix}head.", dense_init(rng, H, 1)))
    return out


def init_params(spec: ModelSpec) -> ModelParams:
    """Seeded initialization: weights U(+-1/sqrt(fan_in)), zero biases, forget bias 1."""
    rng = np.random.default_rng(spec.seed)
    F, H = spec.input_features, spec.hidden_size
    v = spec.variant
    if v is Variant.LSTM:
        raw = _init_lstm_head(rng, F, H)
    elif v is Variant.ATTENTION_LSTM:
        raw = _prefixed("lstm.", lstm_init(rng, F, H))
        raw.update(_prefixed("attention.", mha_init(rng, H, 1)))
        raw.update(_prefixed("head.", dense_init(rng, H, 1)))
    elif v is Variant.RES_LSTM:
        raw = _prefixed("lstm.", lstm_init(rng, F, H))
        raw.update(_prefixed("skip.", dense_init(rng, F, H, bias=False)))
        raw.update(_prefixed("head.", dense_init(rng, H, 1)))
    elif v is Variant.TAL:
        raw = _init_tal(rng, F, H, spec.num_heads)
    elif v is Variant.FAF:
        raw = _init_lstm_head(rng, F, H, "low.")
        raw.update(_init_lstm_head(rng, F, H, "high."))
    elif v is Variant.FAL:
        raw = _init_tal(rng, F, H, spec.num_heads, "low.")
        raw.update(_init_tal(rng, F, H, spec.num_heads, "high."))
    else:  # pragma: no cover - Variant is closed
        raise ValueError(f"unknown variant {v}")
    return {k: Tensor(a, requires_grad=True) for k, a in raw.items()}


def inventory(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    return {k: t.shape for k, t in init_params(spec).items()}


def count_params(params: ModelParams) -> int:
    return sum(t.size for t in params.values())


# -- blocks -------------------------------------------------------------------
def _check_input(x: Tensor, params: ModelParams, prefix: str) -> None:
    if x.ndim != 3:
        raise ShapeError("model", f"expected input [B, S, F], got {x.shape}")
    F = params[f"{prefix}lstm.W_i"].shape[1] - params[f"{prefix}lstm.W_i"].shape[0]
    if x.shape[2] != F:
        raise ShapeError("model", f"input has {x.shape[2]} features, model expects {F}")


def anti_noise_block(x: Tensor, params: ModelParams, prefix: str = "anti_noise.", num_heads: int = 4,
                     return_tau: bool = False):
    """Attention-learned soft-threshold shrinkage with a residual path.

    ``u = GAP(|x|)``; ``s = sigmoid(dense(MHA(u)))``; ``tau = s * u``;
    ``out = dense(soft(x, tau) + x)``.  Thresholds are per sample and feature
    and shared along the sequence axis, so ``0 <= tau <= mean|x|``.
    """
    if x.ndim != 3:
        raise ShapeError("anti_noise_block", f"expected [B, S, F], got {x.shape}")
    B, S, F = x.shape
    mha = MhaParams.from_flat(params, f"{prefix}mha.", num_heads)
    if F != mha.model_dim:
        raise ShapeError("anti_noise_block", f"feature count {F} != attention width {mha.model_dim}")
    u = global_avg_pool(tabs(x), axis=1)  # [B, F]
    u_seq = reshape(u, (B, 1, F))
    att = reshape(mha_forward(u_seq, u_seq, u_seq, mha), (B, F))
    scale = sigmoid(dense(att, params[f"{prefix}gate.W"], params[f"{prefix}gate.b"]))
    tau = mul(scale, u)
    shrunk = add(soft_threshold(x, tau), x)
    out = dense(shrunk, params[f"{prefix}fc.W"], params[f"{prefix}fc.b"])
    return (out, tau) if return_tau else out


def _lstm_hidden(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    hs, _, _ = lstm_forward(x, LstmParams.from_flat(params, f"{prefix}lstm."))
    return hs


def _head(h: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return dense(h, params[f"{prefix}head.W"], params[f"{prefix}head.b"])


def lstm_head_forward(x: Tensor, params: ModelParams, prefix: str = "") -> Tensor:
    _check_input(x, params, prefix)
    return _head(_lstm_hidden(x, params, prefix), params, prefix)


def tal_forward(x: Tensor, params: ModelParams, prefix: str = "", num_heads: int = 4,
                bypass_anti_noise: bool = False) -> Tensor:
    """LSTM, then the anti-noise block over the hidden sequence, then a 1-unit head.

    ``bypass_anti_noise`` skips the block entirely (debug ablation).
    """
    _check_input(x, params, prefix)
    h = _lstm_hidden(x, params, prefix)
    if not bypass_anti_noise:
        h = anti_noise_block(h, params, f"{prefix}anti_noise.", num_heads)
    return _head(h, params, prefix)


def split_bands(x: Tensor, levels: int, bank: str = wavelet.DEFAULT_BANK) -> tuple[Tensor, Tensor]:
    """Per-channel low/high split of ``x [B, S, F]`` along the sequence axis."""
    S = x.shape[1]
    if S < 2**levels:
        raise ShapeError(
            "band_split",
            f"sequence length {S} is inadmissible for {levels} wavelet levels; "
            f"admissible levels for S={S} are 1..{wavelet.max_level(S)} (or use S >= {2**levels})")
    P = wavelet.low_pass_operator(S, bank, levels)
    low = constant_matmul_last(x, P, axis=1)
    return low, sub(x, low)


def dual_stream_forward(x: Tensor, params: ModelParams, stream: Callable[[Tensor, str], Tensor],
                        levels: int, bank: str = wavelet.DEFAULT_BANK, return_streams: bool = False):
    x_low, x_high = split_bands(x, levels, bank)
    y_low = stream(x_low, "low.")
    y_high = stream(x_high, "high.")
    y = add(y_low, y_high)
    return (y, y_low, y_high) if return_streams else y


def faf_forward(x: Tensor, params: ModelParams, levels: int = 2, bank: str = wavelet.DEFAULT_BANK,
                return_streams: bool = False):
    return dual_stream_forward(x, params, lambda xs, p: lstm_head_forward(xs, params, p),
                               levels, bank, return_streams)


def fal_forward(x: Tensor, params: ModelParams, levels: int = 2, bank: str = wavelet.DEFAULT_BANK,
                num_heads: int = 4, bypass_anti_noise: bool = False, return_streams: bool = False):
    return dual_stream_forward(
        x, params, lambda xs, p: tal_forward(xs, params, p, num_heads, bypass_anti_noise),
        levels, bank, return_streams)


def baseline_forward(variant: Variant | str, x: Tensor, params: ModelParams) -> Tensor:
    variant = Variant.parse(variant)
    if variant is Variant.LSTM:
        return lstm_head_forward(x, params)
    _check_input(x, params, "")
    h = _lstm_hidden(x, params, "")
    if variant is Variant.ATTENTION_LSTM:
        att = MhaParams.from_flat(params, "attention.", 1)
        return _head(mha_forward(h, h, h, att), params, "")
    if variant is Variant.RES_LSTM:
        return _head(add(h, dense(x, params["skip.W"])), params, "")
    raise ValueError(f"{variant.value} is not a baseline variant")


def forward(spec: ModelSpec, params: ModelParams, x: Tensor) -> Tensor:
    """Dispatch on ``spec.variant``; output is ``[B, S, 1]``."""
    v = spec.variant
    if v is Variant.FAL:
        return fal_forward(x, params, spec.wavelet_levels, spec.wavelet_bank, spec.num_heads)
    if v is Variant.FAF:
        return faf_forward(x, params, spec.wavelet_levels, spec.wavelet_bank)
    if v is Variant.TAL:
        return tal_forward(x, params, "", spec.num_heads)
    return baseline_forward(v, x, params)


def predict_array(spec: ModelSpec, params: ModelParams, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference on raw windows ``[N, S, F]`` without recording gradients."""
    detached = {k: Tensor(t.data) for k, t in params.items()}
    outs = [forward(spec, detached, Tensor(x[i:i + batch_size])).data[..., 0]
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, x.shape[1]))


def mae_loss(pred: Tensor, target: Tensor) -> Tensor:
    return tabs(sub(pred, target)).mean()


# -- checkpoints --------------------------------------------------------------
class CheckpointError(ValueError):
    pass


def params_to_json(params: ModelParams) -> dict:
    return {k: {"shape": list(t.shape), "values": t.data.reshape(-1).tolist()} for k, t in params.items()}


def params_from_json(spec: ModelSpec, doc: dict) -> ModelParams:
    expected = inventory(spec)
    for path in expected:
        if path not in doc:
            raise CheckpointError(f"checkpoint is missing parameter {path!r}")
    for path in doc:
        if path not in expected:
            raise CheckpointError(f"checkpoint has unexpected parameter {path!r}")
    out = {}
    for path, shape in expected.items():
        entry = doc[path]
        got_shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if got_shape != shape or values.size != int(np.prod(shape)):
            raise CheckpointError(f"parameter {path!r} has shape {got_shape}, expected {shape}")
        out[path] = Tensor(values.reshape(shape), requires_grad=True)
    return out


def save_checkpoint(path: str | Path, spec: ModelSpec, params: ModelParams, extra: dict | None = None) -> None:
    doc = {"spec": spec.to_dict(), "params": params_to_json(params)}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[ModelSpec, ModelParams, dict]:
    doc = json.loads(Path(path).read_text())
    try:
        spec = ModelSpec.from_dict(doc["spec"])
        raw = doc["params"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc}") from None
    params = params_from_json(spec, raw)
    extra = {k: v for k, v in doc.items() if k not in ("spec", "params")}
    return spec, params, extra
