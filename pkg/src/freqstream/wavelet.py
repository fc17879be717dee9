"""Decimated Mallat wavelet analysis/synthesis with periodic boundaries.

Analysis stage (correlate with the filter, keep even lags)::

    a_next[n] = sum_k a[k] * h[k - 2n]        d_next[n] = sum_k a[k] * g[k - 2n]

Synthesis stage (upsample and filter)::

    a[n] = sum_k h_plus[n - 2k] * a_next[k] + g_plus[n - 2k] * d_next[k]

All indices are taken modulo the current stage length, so each stage halves
the length exactly.  Signals whose length is not a multiple of ``2**levels``
are extended by symmetric reflection before analysis and cropped back after
synthesis.

Operations act along the last axis, so a ``(..., N)`` array is transformed
row by row.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class FilterBank:
    name: str
    h: np.ndarray
    g: np.ndarray
    h_plus: np.ndarray
    g_plus: np.ndarray

    def __post_init__(self):
        lengths = {len(self.h), len(self.g), len(self.h_plus), len(self.g_plus)}
        if len(lengths) != 1 or len(self.h) % 2:
            raise ValueError(f"filter bank {self.name!r}: filters must share one even length")

    @property
    def length(self) -> int:
        return len(self.h)

    @classmethod
    def orthogonal(cls, name: str, h) -> "FilterBank":
        """Build a bank from an orthonormal low-pass filter (QMF high-pass)."""
        h = np.asarray(h, dtype=np.float64)
        L = len(h)
        g = np.array([(-1) ** k * h[L - 1 - k] for k in range(L)])
        return cls(name, h, g, h.copy(), g.copy())


def _haar() -> FilterBank:
    r = 1.0 / np.sqrt(2.0)
    return FilterBank.orthogonal("haar", [r, r])


def _daub4() -> FilterBank:
    s3 = np.sqrt(3.0)
    h = np.array([1 + s3, 3 + s3, 3 - s3, 1 - s3]) / (4.0 * np.sqrt(2.0))
    return FilterBank.orthogonal("daub4", h)


BANKS: dict[str, FilterBank] = {"haar": _haar(), "daub4": _daub4()}
DEFAULT_BANK = "daub4"


def get_bank(bank: str | FilterBank) -> FilterBank:
    if isinstance(bank, FilterBank):
        return bank
    try:
        return BANKS[bank.lower()]
    except KeyError:
        raise ValueError(f"unknown wavelet bank {bank!r}; choose from {sorted(BANKS)}") from None


@dataclass
class WaveletCoeffs:
    """``approx`` holds the deepest approximation; ``details[0]`` is level 1."""

    levels: int
    approx: np.ndarray
    details: list[np.ndarray] = field(default_factory=list)
    original_length: int = 0

    @property
    def padded_length(self) -> int:
        return self.approx.shape[-1] * 2**self.levels


def max_level(n: int) -> int:
    """Deepest admissible decomposition for a length-``n`` signal."""
    if n < 2:
        return 0
    return int(np.floor(np.log2(n)))


def _check_depth(n: int, levels: int) -> None:
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if n < 2**levels:
        raise ValueError(
            f"signal of length {n} is too short for {levels} levels; max admissible level is {max_level(n)}")


def _pad_length(n: int, levels: int) -> int:
    block = 2**levels
    return -(-n // block) * block


def _symmetric_extend(x: np.ndarray, target: int) -> np.ndarray:
    n = x.shape[-1]
    if target == n:
        return x
    # reflect repeatedly when the pad exceeds the signal
    idx = np.arange(n, target)
    period = 2 * n
    m = idx % period
    src = np.where(m < n, m, period - 1 - m)
    return np.concatenate([x, x[..., src]], axis=-1)


def _analysis_stage(a: np.ndarray, filt: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(filt))[None, :]) % n
    return a[..., idx] @ filt


def _synthesis_stage(approx: np.ndarray, detail: np.ndarray, bank: FilterBank) -> np.ndarray:
    half = approx.shape[-1]
    n = 2 * half
    out = np.zeros(approx.shape[:-1] + (n,))
    k2 = 2 * np.arange(half)
    for m in range(bank.length):
        # (2k + m) mod n is injective in k for fixed m
        pos = (k2 + m) % n
        out[..., pos] += bank.h_plus[m] * approx + bank.g_plus[m] * detail
    return out


def dwt_analyze(x, bank: str | FilterBank = DEFAULT_BANK, levels: int = 2) -> WaveletCoeffs:
    bank = get_bank(bank)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    _check_depth(n, levels)
    a = _symmetric_extend(x, _pad_length(n, levels))
    details = []
    for _ in range(levels):
        d = _analysis_stage(a, bank.g)
        a = _analysis_stage(a, bank.h)
        details.append(d)
    return WaveletCoeffs(levels=levels, approx=a, details=details, original_length=n)


def dwt_synthesize(c: WaveletCoeffs, bank: str | FilterBank = DEFAULT_BANK) -> np.ndarray:
    bank = get_bank(bank)
    if len(c.details) != c.levels:
        raise ValueError(f"expected {c.levels} detail arrays, got {len(c.details)}")
    a = np.asarray(c.approx, dtype=np.float64)
    for level in range(c.levels, 0, -1):
        d = np.asarray(c.details[level - 1], dtype=np.float64)
        if d.shape != a.shape:
            raise ValueError(f"level {level}: detail shape {d.shape} does not match approximation {a.shape}")
        a = _synthesis_stage(a, d, bank)
    if a.shape[-1] < c.original_length:
        raise ValueError("coefficients too short for the recorded original length")
    return a[..., : c.original_length]


def band_split(x, bank: str | FilterBank = DEFAULT_BANK, levels: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Split ``x`` into complementary low/high series with ``low + high == x``."""
    x = np.asarray(x, dtype=np.float64)
    c = dwt_analyze(x, bank, levels)
    c.details = [np.zeros_like(d) for d in c.details]
    low = dwt_synthesize(c, bank)
    return low, x - low


@lru_cache(maxsize=64)
def _low_pass_operator(n: int, bank_name: str, levels: int) -> np.ndarray:
    low, _ = band_split(np.eye(n), BANKS[bank_name], levels)
    # row i of `low` is the low band of basis vector e_i, i.e. column i of P
    op = np.ascontiguousarray(low.T)
    op.setflags(write=False)
    return op


def low_pass_operator(n: int, bank: str | FilterBank = DEFAULT_BANK, levels: int = 2) -> np.ndarray:
    """Matrix ``P`` with ``band_split(x)[0] == P @ x`` for length-``n`` signals."""
    bank = get_bank(bank)
    _check_depth(n, levels)
    if BANKS.get(bank.name) is not bank:
        low, _ = band_split(np.eye(n), bank, levels)
        return low.T
    return _low_pass_operator(n, bank.name, levels)
