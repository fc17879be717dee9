"""Neural building blocks on top of :mod:`freqstream.numerics`.

Parameter containers (:class:`LstmParams`, :class:`MhaParams`) are thin views
over tensors stored in a flat ``{path: Tensor}`` map, so a whole model can be
optimized, checkpointed and gradient-checked as one list of tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    ShapeError,
    Tensor,
    linear,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid_array,
    soft_threshold,
    softmax,
    tabs,
    transpose,
)

GATES = ("i", "f", "g", "o")

__all__ = [
    "BatchNormState", "LstmParams", "MhaParams", "abs_", "batch_norm", "dense", "dense_init",
    "global_avg_pool", "lstm_forward", "lstm_init", "mha_forward", "mha_init", "relu",
    "soft_threshold",
]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# -- dense -------------------------------------------------------------------
def dense_init(rng: np.random.Generator, n_in: int, n_out: int, bias: bool = True) -> dict[str, np.ndarray]:
    out = {"W": _uniform(rng, (n_in, n_out), n_in)}
    if bias:
        out["b"] = np.zeros(n_out)
    return out


def dense(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    return linear(x, W, b)


def abs_(x) -> Tensor:
    return tabs(x)


def global_avg_pool(x: Tensor, axis: int = 1) -> Tensor:
    """Mean over the sequence axis: ``[B, S, F] -> [B, F]``."""
    if x.shape[axis] < 1:
        raise ShapeError("global_avg_pool", "sequence axis is empty")
    return mean(x, axis=axis)


# -- LSTM --------------------------------------------------------------------
@dataclass
class LstmParams:
    """Gate weights are ``hidden x (input + hidden)``; the input block comes first."""

    W_i: Tensor
    W_f: Tensor
    W_g: Tensor
    W_o: Tensor
    b_i: Tensor
    b_f: Tensor
    b_g: Tensor
    b_o: Tensor

    def __post_init__(self):
        H, FH = self.W_i.shape
        for name in ("W_f", "W_g", "W_o"):
            if getattr(self, name).shape != (H, FH):
                raise ShapeError("lstm", f"{name} shape {getattr(self, name).shape} != {(H, FH)}")
        for name in ("b_i", "b_f", "b_g", "b_o"):
            if getattr(self, name).shape != (H,):
                raise ShapeError("lstm", f"{name} shape {getattr(self, name).shape} != {(H,)}")
        if FH <= H:
            raise ShapeError("lstm", "gate weights leave no room for input features")

    @property
    def hidden_size(self) -> int:
        return self.W_i.shape[0]

    @property
    def input_size(self) -> int:
        return self.W_i.shape[1] - self.W_i.shape[0]

    def tensors(self) -> list[Tensor]:
        return [self.W_i, self.W_f, self.W_g, self.W_o, self.b_i, self.b_f, self.b_g, self.b_o]

    @classmethod
    def from_flat(cls, params: dict[str, Tensor], prefix: str) -> "LstmParams":
        return cls(*(params[f"{prefix}W_{g}"] for g in GATES), *(params[f"{prefix}b_{g}"] for g in GATES))


def lstm_init(rng: np.random.Generator, input_size: int, hidden_size: int) -> dict[str, np.ndarray]:
    fan_in = input_size + hidden_size
    out = {f"W_{g}": _uniform(rng, (hidden_size, fan_in), fan_in) for g in GATES}
    for g in GATES:
        out[f"b_{g}"] = np.ones(hidden_size) if g == "f" else np.zeros(hidden_size)
    return out


def _lstm_packed(x: Tensor, p: LstmParams, h0: Tensor, c0: Tensor) -> Tensor:
    """Run the recurrence; returns ``[B, S+1, H]``: hidden states then final cell."""
    B, S, F = x.shape
    H = p.hidden_size
    Wcat = np.concatenate([p.W_i.data, p.W_f.data, p.W_g.data, p.W_o.data], axis=0)  # (4H, F+H)
    WxT = Wcat[:, :F].T
    WhT = Wcat[:, F:].T
    bcat = np.concatenate([p.b_i.data, p.b_f.data, p.b_g.data, p.b_o.data])

    xa = x.data @ WxT + bcat  # input contribution for every step at once
    hs = np.empty((B, S, H))
    cs = np.empty((B, S + 1, H))
    gates = np.empty((B, S, 4 * H))
    h, c = h0.data, c0.data
    cs[:, 0] = c
    for t in range(S):
        pre = xa[:, t] + h @ WhT
        a = sigmoid_array(pre)
        a[:, 2 * H : 3 * H] = np.tanh(pre[:, 2 * H : 3 * H])
        i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, t] = h
        cs[:, t + 1] = c
        gates[:, t] = a
    packed = np.concatenate([hs, cs[:, S:S + 1]], axis=1)

    def backward(gout):
        dWcat = np.zeros_like(Wcat)
        dh_carry = np.zeros((B, H))
        dc_carry = gout[:, S].copy()
        dA = np.empty((B, S, 4 * H))
        Wh = Wcat[:, F:]
        for t in range(S - 1, -1, -1):
            a = gates[:, t]
            i, f, g, o = a[:, :H], a[:, H : 2 * H], a[:, 2 * H : 3 * H], a[:, 3 * H :]
            c_t = cs[:, t + 1]
            tc = np.tanh(c_t)
            dh = gout[:, t] + dh_carry
            dc = dc_carry + dh * o * (1.0 - tc * tc)
            da = dA[:, t]
            da[:, :H] = dc * g * i * (1.0 - i)
            da[:, H : 2 * H] = dc * cs[:, t] * f * (1.0 - f)
            da[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
            da[:, 3 * H :] = dh * tc * o * (1.0 - o)
            dc_carry = dc * f
            dh_carry = da @ Wh
        dA2 = dA.reshape(B * S, 4 * H)
        dWcat[:, :F] = dA2.T @ x.data.reshape(B * S, F)
        h_prev = np.concatenate([h0.data[:, None, :], hs[:, :-1]], axis=1).reshape(B * S, H)
        dWcat[:, F:] = dA2.T @ h_prev
        dx = dA @ Wcat[:, :F]
        db = dA2.sum(axis=0)
        dWs = np.split(dWcat, 4, axis=0)
        dbs = np.split(db, 4)
        return (dx, *dWs, *dbs, dh_carry, dc_carry)

    parents = (x, p.W_i, p.W_f, p.W_g, p.W_o, p.b_i, p.b_f, p.b_g, p.b_o, h0, c0)
    return Tensor.from_op(packed, parents, backward, "lstm")


def lstm_forward(x: Tensor, params: LstmParams, h0: Tensor | None = None, c0: Tensor | None = None):
    """Gated recurrence over the sequence axis of ``x [B, S, F]``.

    Returns ``(outputs [B, S, H], h_S [B, H], c_S [B, H])``.
    """
    if x.ndim != 3:
        raise ShapeError("lstm", f"expected input [B, S, F], got {x.shape}")
    B, S, F = x.shape
    H = params.hidden_size
    if F != params.input_size:
        raise ShapeError("lstm", f"input has {F} features, cell expects {params.input_size}")
    if S < 1:
        raise ShapeError("lstm", "empty sequence")
    h0 = Tensor(np.zeros((B, H))) if h0 is None else h0
    c0 = Tensor(np.zeros((B, H))) if c0 is None else c0
    if h0.shape != (B, H) or c0.shape != (B, H):
        raise ShapeError("lstm", f"initial state must be {(B, H)}")
    packed = _lstm_packed(x, params, h0, c0)
    return packed[:, :S], packed[:, S - 1], packed[:, S]


# -- multi-head attention ---------------------------------------------------
@dataclass
class MhaParams:
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    W_o: Tensor
    num_heads: int

    def __post_init__(self):
        D = self.W_q.shape[0]
        for w in (self.W_q, self.W_k, self.W_v, self.W_o):
            if w.shape != (D, D):
                raise ShapeError("mha", f"projection shape {w.shape} != {(D, D)}")
        if self.num_heads < 1 or D % self.num_heads:
            raise ShapeError("mha", f"model_dim {D} is not divisible by num_heads {self.num_heads}")

    @property
    def model_dim(self) -> int:
        return self.W_q.shape[0]

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.num_heads

    @classmethod
    def from_flat(cls, params: dict[str, Tensor], prefix: str, num_heads: int) -> "MhaParams":
        return cls(params[f"{prefix}W_q"], params[f"{prefix}W_k"], params[f"{prefix}W_v"],
                   params[f"{prefix}W_o"], num_heads)


def mha_init(rng: np.random.Generator, model_dim: int, num_heads: int) -> dict[str, np.ndarray]:
    if num_heads < 1 or model_dim % num_heads:
        raise ValueError(f"model_dim {model_dim} is not divisible by num_heads {num_heads}")
    return {f"W_{n}": _uniform(rng, (model_dim, model_dim), model_dim) for n in "qkvo"}


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, S, D = x.shape
    return transpose(reshape(x, (B, S, heads, D // heads)), (0, 2, 1, 3))


def mha_forward(q: Tensor, k: Tensor, v: Tensor, params: MhaParams, return_weights: bool = False):
    """Scaled dot-product attention per head, concatenated and output-projected."""
    for t in (q, k, v):
        if t.ndim != 3 or t.shape[-1] != params.model_dim:
            raise ShapeError("mha", f"expected [B, S, {params.model_dim}], got {t.shape}")
    if k.shape != v.shape or q.shape[0] != k.shape[0]:
        raise ShapeError("mha", f"incompatible q/k/v shapes {q.shape}, {k.shape}, {v.shape}")
    B, S, D = q.shape
    h = params.num_heads
    Q = _split_heads(matmul(q, params.W_q), h)
    K = _split_heads(matmul(k, params.W_k), h)
    V = _split_heads(matmul(v, params.W_v), h)
    scores = mul(matmul(Q, transpose(K, (0, 1, 3, 2))), 1.0 / np.sqrt(params.head_dim))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, V)  # [B, h, S, d]
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (B, S, D))
    out = matmul(merged, params.W_o)
    return (out, weights.data) if return_weights else out


# -- batch normalization ----------------------------------------------------
@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def fresh(cls, n_features: int, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        return cls(np.zeros(n_features), np.ones(n_features), momentum, eps)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool = True) -> Tensor:
    """Normalize each feature (last axis) over all leading axes.

    Training mode uses batch statistics (population variance) and updates the
    running averages in ``state``; inference mode uses the running statistics.
    """
    F = x.shape[-1]
    if gamma.shape != (F,) or beta.shape != (F,):
        raise ShapeError("batch_norm", f"affine parameters must have shape {(F,)}")
    axes = tuple(range(x.ndim - 1))
    if training:
        n = x.size // F
        if n < 2:
            raise ShapeError("batch_norm", "training mode needs at least two samples per feature")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * n / (n - 1)
    else:
        n = None
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mu) * inv
    y = gamma.data * xhat + beta.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * gamma.data
        if training:
            dx = inv * (gx - gx.mean(axis=axes) - xhat * (gx * xhat).mean(axis=axes))
        else:
            dx = gx * inv
        return dx, dgamma, dbeta

    return Tensor.from_op(y, (x, gamma, beta), backward, "batch_norm")
