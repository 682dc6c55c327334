"""Uplift evaluation: cumulative uplift curve, AUUC, Qini, Lift@k, KRCC, latency.

Uplift curve
------------
Rows are sorted by score, highest first (stable, so ties keep input order).
For a prefix holding the top ``k`` rows, with ``n_T``/``n_C`` treated and
control rows and outcome sums ``Y_T``/``Y_C``, the cumulative incremental
value is::

    lift(k) = (Y_T / n_T - Y_C / n_C) * k

and ``lift(k) = 0`` while either arm is still empty in the prefix. The
random-targeting reference is the straight line ``f * lift(n)``. AUUC is the
trapezoid area under ``lift`` over the targeted fraction ``f = k / n`` and
Qini is AUUC minus the area under the reference. Areas are raw (they scale
with ``n``); ``normalize=True`` divides them by ``n``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class UpliftCurve:
    fractions: np.ndarray
    incremental_value: np.ndarray
    random_baseline: np.ndarray
    n: int

    def __post_init__(self):
        f = self.fractions
        if not (len(f) == len(self.incremental_value) == len(self.random_baseline)):
            raise DomainError("curve arrays must share length")
        if f[0] != 0.0 or f[-1] != 1.0 or np.any(np.diff(f) <= 0.0):
            raise DomainError("fractions must increase strictly from 0 to 1")


def _trapezoid(y, x):
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x)))


def uplift_curve(scores, y, t, n_points=101) -> UpliftCurve:
    """Cumulative uplift curve evaluated on ``n_points`` evenly spaced fractions.

    ``n_points=None`` evaluates every prefix ``k = 0..n``.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    n = len(scores)
    if not (len(y) == len(t) == n):
        raise DomainError("scores, y and t must have equal length")
    if not np.all((t == 0) | (t == 1)):
        raise DomainError("t must be 0/1")
    if t.sum() == 0 or t.sum() == n:
        raise DomainError("both treatment arms must be present")
    order = np.argsort(-scores, kind="stable")
    ts = t[order].astype(float)
    ys = y[order]
    zero = np.zeros(1)
    n_t = np.concatenate([zero, np.cumsum(ts)])
    n_c = np.concatenate([zero, np.cumsum(1.0 - ts)])
    s_t = np.concatenate([zero, np.cumsum(ys * ts)])
    s_c = np.concatenate([zero, np.cumsum(ys * (1.0 - ts))])

    if n_points is None:
        fractions = np.arange(n + 1) / n
        k = np.arange(n + 1)
    else:
        fractions = np.linspace(0.0, 1.0, n_points)
        k = np.rint(fractions * n).astype(np.int64)
    both = (n_t[k] > 0) & (n_c[k] > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = s_t[k] / n_t[k] - s_c[k] / n_c[k]
    lift = np.where(both, diff * k, 0.0)
    baseline = fractions * lift[-1]
    return UpliftCurve(fractions, lift, baseline, n)


def auuc(curve: UpliftCurve, normalize=False) -> float:
    area = _trapezoid(curve.incremental_value, curve.fractions)
    return area / curve.n if normalize else area


def qini(curve: UpliftCurve, normalize=False) -> float:
    area = _trapezoid(curve.incremental_value - curve.random_baseline, curve.fractions)
    return area / curve.n if normalize else area


def lift_at(curve: UpliftCurve, fraction=0.30) -> float:
    """Incremental value at the targeted ``fraction`` (linear interpolation)."""
    if not 0.0 < fraction <= 1.0:
        raise DomainError(f"fraction must lie in (0, 1], got {fraction}")
    return float(np.interp(fraction, curve.fractions, curve.incremental_value))


# ---------------------------------------------------------------------------
# Kendall tau-b


def _merge_count(a):
    """Sort ``a`` in place (as a list) and return the number of inversions."""
    n = len(a)
    buf = [0] * n
    swaps = 0
    width = 1
    src, dst = a, buf
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if src[j] < src[i]:
                    dst[k] = src[j]
                    swaps += mid - i
                    j += 1
                else:
                    dst[k] = src[i]
                    i += 1
                k += 1
            while i < mid:
                dst[k] = src[i]
                i += 1
                k += 1
            while j < hi:
                dst[k] = src[j]
                j += 1
                k += 1
        src, dst = dst, src
        width *= 2
    if src is not a:
        a[:] = src
    return swaps


def _tied_pairs(sorted_vals):
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def krcc(predicted, truth) -> float:
    """Kendall tau-b between two rankings, O(n log n) via merge-sort inversions."""
    x = np.asarray(predicted, dtype=float)
    y = np.asarray(truth, dtype=float)
    n = len(x)
    if len(y) != n or n < 2:
        raise DomainError("krcc needs two vectors of equal length >= 2")
    n0 = n * (n - 1) // 2
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    n1 = _tied_pairs(xs)
    # joint ties: runs equal in both x and y
    _, joint = np.unique(np.stack([xs, ys]), axis=1, return_counts=True)
    n3 = int(np.sum(joint * (joint - 1) // 2))
    # ranks of y are enough for inversion counting
    yr = np.unique(ys, return_inverse=True)[1].tolist()
    swaps = _merge_count(yr)
    n2 = _tied_pairs(ys)
    denom = (n0 - n1) * (n0 - n2)
    if denom == 0:
        raise DomainError("Kendall tau is undefined for a constant vector")
    return float((n0 - n1 - n2 + n3 - 2 * swaps) / np.sqrt(float(denom)))


# ---------------------------------------------------------------------------
# latency


@dataclass(frozen=True)
class LatencyStats:
    median_ms: float
    p95_ms: float
    rows: int
    repeats: int


def latency_probe(score_fn, X, repeats=5, warmup=1) -> LatencyStats:
    """Per-row scoring time of ``score_fn(X)`` in milliseconds over ``repeats`` runs."""
    X = np.asarray(X)
    rows = len(X)
    if rows == 0:
        raise DomainError("latency_probe needs at least one row")
    repeats = max(int(repeats), 1)
    for _ in range(warmup):
        score_fn(X)
    per_row = []
    for _ in range(repeats):
        start = time.perf_counter()
        score_fn(X)
        per_row.append((time.perf_counter() - start) * 1e3 / rows)
    per_row = np.array(per_row)
    return LatencyStats(float(np.median(per_row)), float(np.percentile(per_row, 95)),
                        rows, repeats)


def evaluate_scores(scores, y, t, true_uplift=None, n_points=101, fraction=0.30):
    """AUUC, Qini, Lift@fraction and (if ground truth is available) KRCC."""
    curve = uplift_curve(scores, y, t, n_points)
    out = {
        "auuc": auuc(curve),
        "qini": qini(curve),
        "qini_normalized": qini(curve, normalize=True),
        "lift_at_30": lift_at(curve, fraction),
    }
    if true_uplift is not None:
        try:
            out["krcc"] = krcc(scores, true_uplift)
        except DomainError:
            out["krcc"] = float("nan")
    return out
