"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, record_kinks


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_tensor: int
    worst_index: int
    n_probed: int
    n_skipped: int


def _patterns_equal(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check_report(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-6,
    max_probes: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of scalar ``f(*xs)`` with central differences.

    Components whose ±eps probe changes the region pattern of any kinked op
    (abs, relu, soft-threshold) are skipped.  ``max_probes`` caps the number
    of components probed per tensor, sampled with ``seed``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None

    with record_kinks() as base_pattern:
        out = f(*xs)
    if out.size != 1:
        raise ValueError("grad_check: f must return a scalar")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    rng = np.random.default_rng(seed)
    worst = (0.0, 0, -1)
    probed = skipped = 0
    for ti, t in enumerate(xs):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_probes is not None and flat.size > max_probes:
            idx = np.sort(rng.choice(flat.size, size=max_probes, replace=False))
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            with record_kinks() as p_plus:
                f_plus = f(*xs).item()
            flat[j] = orig - eps
            with record_kinks() as p_minus:
                f_minus = f(*xs).item()
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise FloatingPointError(f"grad_check: non-finite value probing tensor {ti} component {j}")
            if not (_patterns_equal(p_plus, base_pattern) and _patterns_equal(p_minus, base_pattern)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[ti].reshape(-1)[j]
            if not np.isfinite(a):
                raise FloatingPointError(f"grad_check: non-finite analytic gradient at tensor {ti} component {j}")
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            probed += 1
            if err > worst[0] or worst[2] < 0:
                worst = (err, ti, int(j))
    for t in xs:
        t.grad = None
    return GradCheckResult(worst[0], worst[1], worst[2], probed, skipped)


def grad_check(f, x, eps: float = 1e-6, max_probes: int | None = None, seed: int = 0) -> float:
    """Maximum relative error between analytic and numeric gradients."""
    return float(grad_check_report(f, x, eps, max_probes, seed).max_rel_error)
