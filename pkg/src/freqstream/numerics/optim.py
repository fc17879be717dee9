"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


def adam_step(params: Sequence[Tensor], state: AdamState) -> AdamState:
    """Apply one Adam update in place to ``params``.

    Gradients are read but left untouched; the caller clears them.
    """
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p.data) for p in params]
        state.second_moment = [np.zeros_like(p.data) for p in params]
    elif len(state.first_moment) != len(params):
        raise ValueError("adam_step: parameter list does not match optimizer state")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, m, v in zip(params, state.first_moment, state.second_moment):
        g = p.grad
        if m.shape != g.shape:
            raise ValueError("adam_step: moment shape does not match parameter")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state
