"""Two-sample hypothesis tests over score multisets.

Kolmogorov-Smirnov with exact (full permutation enumeration) and
asymptotic p-values, plus Mann-Whitney U as the rank-based alternative.
Exact mode compares integer-scaled statistics, so enumeration p-values
are exact rationals k / C(n+m, n) with no floating-point slack, ties
included.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

MODE_AUTO = "auto"
MODE_EXACT = "exact"
MODE_ASYMPTOTIC = "asymptotic"
MODES = (MODE_AUTO, MODE_EXACT, MODE_ASYMPTOTIC)

TWO_SIDED = "two-sided"
LESS = "less"
GREATER = "greater"
ALTERNATIVES = (TWO_SIDED, LESS, GREATER)

#: pooled size at or below which auto mode enumerates (C(16, 8) = 12870 relabelings)
EXACT_LIMIT = 16

_SERIES_EPS = 1e-12


@dataclass(frozen=True)
class KsResult:
    """Two-sample KS outcome; n is the validation size, m the suspicious size."""

    d_statistic: float
    p_value: float
    n: int
    m: int
    mode: str

    def __post_init__(self):
        if not 0.0 <= self.d_statistic <= 1.0:
            raise ValueError(f"d_statistic out of range: {self.d_statistic}")
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p_value out of range: {self.p_value}")


@dataclass(frozen=True)
class MwuResult:
    """Mann-Whitney U outcome for the suspicious sample."""

    u_statistic: float
    p_value: float
    tie_corrected: bool
    n: int
    m: int
    mode: str


def _coerce(sample) -> np.ndarray:
    values = getattr(sample, "scores", sample)
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("empty sample")
    return arr


def ecdf(sample) -> list[tuple[float, float]]:
    """Right-continuous empirical CDF as (x, F(x)) steps; F(max) = 1."""
    arr = _coerce(sample)
    xs, counts = np.unique(arr, return_counts=True)
    fs = np.cumsum(counts) / arr.size
    return list(zip(xs.tolist(), fs.tolist()))


@lru_cache(maxsize=32)
def _combo_matrix(total: int, k: int) -> np.ndarray:
    """All C(total, k) position subsets as a 0/1 matrix, one subset per row."""
    combos = list(itertools.combinations(range(total), k))
    mat = np.zeros((len(combos), total), dtype=np.int64)
    for row, cols in enumerate(combos):
        mat[row, list(cols)] = 1
    mat.flags.writeable = False
    return mat


def _sorted_pool(x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pool both samples sorted ascending.

    Returns (sorted values, sample-1 membership of each sorted position,
    mask of run-end positions where the ECDFs are actually evaluated).
    """
    pool = np.concatenate([x1, x2])
    labels = np.concatenate([np.ones(x1.size, dtype=np.int64), np.zeros(x2.size, dtype=np.int64)])
    order = np.argsort(pool, kind="stable")
    values = pool[order]
    run_end = np.append(values[1:] != values[:-1], True)
    return values, labels[order], run_end


def _directed(diff: np.ndarray, alternative: str) -> np.ndarray:
    if alternative == TWO_SIDED:
        return np.abs(diff)
    if alternative == LESS:  # sample 1 stochastically smaller: its ECDF sits above
        return diff
    return -diff


def _ks_observed_int(labels_sorted: np.ndarray, run_end: np.ndarray, n1: int, n2: int,
                     alternative: str) -> int:
    cnt1 = np.cumsum(labels_sorted)
    positions = np.arange(1, labels_sorted.size + 1)
    diff = cnt1 * n2 - (positions - cnt1) * n1
    return int(_directed(diff, alternative)[run_end].max())


def _ks_exact_pvalue(values: np.ndarray, run_end: np.ndarray, n1: int,
                     observed: int, alternative: str) -> float:
    total = values.size
    mat = _combo_matrix(total, n1)
    cnt1 = np.cumsum(mat, axis=1)
    positions = np.arange(1, total + 1)
    diff = cnt1 * (total - n1) - (positions - cnt1) * n1
    stats = _directed(diff, alternative)[:, run_end].max(axis=1)
    return float(np.count_nonzero(stats >= observed)) / mat.shape[0]


def _kolmogorov_sf(lam: float) -> float:
    """Two-sided Kolmogorov limit Q(lam) = 2 sum (-1)^(k-1) exp(-2 k^2 lam^2)."""
    if lam <= 0.0:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while True:
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < _SERIES_EPS:
            break
        total += sign * term
        sign = -sign
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def _resolve_mode(mode: str, pooled: int) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == MODE_AUTO:
        return MODE_EXACT if pooled <= EXACT_LIMIT else MODE_ASYMPTOTIC
    return mode


def ks_two_sample(s, v, mode: str = MODE_AUTO, alternative: str = TWO_SIDED) -> KsResult:
    """Two-sample KS test of suspicious scores against the validation baseline.

    D is the supremum ECDF distance over the union of sample points.
    Exact mode enumerates all C(n+m, n) relabelings of the pooled values;
    asymptotic mode uses the Kolmogorov limit with the series truncated
    below 1e-12. ``alternative="less"`` tests the membership direction
    (suspicious scores stochastically smaller).
    """
    if alternative not in ALTERNATIVES:
        raise ValueError(f"unknown alternative {alternative!r}")
    x_s, x_v = _coerce(s), _coerce(v)
    m, n = x_s.size, x_v.size
    resolved = _resolve_mode(mode, n + m)

    values, labels_sorted, run_end = _sorted_pool(x_s, x_v)
    observed = _ks_observed_int(labels_sorted, run_end, m, n, alternative)
    d = observed / (m * n)

    if resolved == MODE_EXACT:
        p = _ks_exact_pvalue(values, run_end, m, observed, alternative)
    else:
        lam = math.sqrt(m * n / (m + n)) * d
        if lam <= 0.0:
            p = 1.0
        elif alternative == TWO_SIDED:
            p = _kolmogorov_sf(lam)
        else:
            p = min(1.0, math.exp(-2.0 * lam * lam))
    return KsResult(d_statistic=d, p_value=p, n=n, m=m, mode=resolved)


def _doubled_ranks(values: np.ndarray) -> np.ndarray:
    """Average ranks, doubled so they are exact integers under ties."""
    xs, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts
    doubled = starts + ends + 1  # 2 * average 1-based rank of each tie group
    return doubled[inverse]


def mwu_two_sample(s, v, mode: str = MODE_AUTO) -> MwuResult:
    """Two-sided Mann-Whitney U for suspicious vs validation scores.

    Exact enumeration over relabelings when n + m <= 16, otherwise the
    normal approximation with the tie-correction factor.
    """
    x_s, x_v = _coerce(s), _coerce(v)
    m, n = x_s.size, x_v.size
    resolved = _resolve_mode(mode, n + m)

    pool = np.concatenate([x_s, x_v])
    doubled = _doubled_ranks(pool)
    two_r1 = int(doubled[:m].sum())
    two_u1 = two_r1 - m * (m + 1)  # 2 * U for the suspicious sample
    u1 = two_u1 / 2.0
    _, counts = np.unique(pool, return_counts=True)
    ties_present = bool((counts > 1).any())

    if resolved == MODE_EXACT:
        values, labels_sorted, _ = _sorted_pool(x_s, x_v)
        doubled_sorted = _doubled_ranks(values)
        mat = _combo_matrix(values.size, m)
        two_u_all = mat @ doubled_sorted - m * (m + 1)
        observed = abs(two_u1 - m * n)
        stats = np.abs(two_u_all - m * n)
        p = float(np.count_nonzero(stats >= observed)) / mat.shape[0]
    else:
        total = n + m
        tie_factor = 1.0 - float(((counts**3 - counts).sum())) / (total**3 - total)
        sigma = math.sqrt(tie_factor * m * n * (total + 1) / 12.0)
        if sigma == 0.0:
            p = 1.0
        else:
            z = (u1 - m * n / 2.0) / sigma
            p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    return MwuResult(
        u_statistic=u1, p_value=p, tie_corrected=ties_present, n=n, m=m, mode=resolved
    )
