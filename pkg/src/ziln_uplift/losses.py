"""Focal-ZILN objective and value-weighted pairwise ranking loss.

Every loss here has a companion ``*_grad`` function returning the analytic
derivative; the test-suite checks each against central differences.

The hybrid objective operates on the raw head outputs of a two-branch model
(``pi``, ``mu``, ``sigma`` for control and treatment) and combines

* the focal propensity loss on the factual branch,
* the ZILN regression loss on the factual branch for positive outcomes,
* ``lambda_rank`` times the mean value-weighted ranking loss over sampled
  pairs, using ``tau_hat = E[y_1] - E[y_0]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .distributions import LOG_SQRT_2PI, ziln_mean
from .errors import ConfigurationError, DomainError

PROB_EPS = 1e-7
MAX_PAIRS = 4096


@dataclass(frozen=True)
class FocalConfig:
    gamma: float = 2.0
    alpha: float = 0.25

    def __post_init__(self):
        if not self.gamma >= 0.0:
            raise ConfigurationError(f"gamma must be >= 0, got {self.gamma}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class HybridWeights:
    lambda_rank: float = 1.0

    def __post_init__(self):
        if not self.lambda_rank >= 0.0:
            raise ConfigurationError(f"lambda_rank must be >= 0, got {self.lambda_rank}")


class RankPair(NamedTuple):
    """One pair, or a struct of equally-shaped arrays describing many pairs."""

    z_i: float
    z_j: float
    tau_hat_i: float
    tau_hat_j: float

    @classmethod
    def stack(cls, pairs: Sequence["RankPair"]) -> "RankPair":
        arr = np.array([tuple(p) for p in pairs], dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])


# ---------------------------------------------------------------------------
# propensity


def clamp_probability(p, eps=PROB_EPS):
    return np.clip(p, eps, 1.0 - eps)


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise DomainError("probabilities must lie strictly inside (0, 1); clamp first")
    return p


def focal_propensity_loss(p, converted, cfg: FocalConfig):
    """Focal loss of the hurdle probability ``p`` against the conversion flag."""
    p = _check_prob(p)
    converted = np.asarray(converted, dtype=bool)
    g, a = cfg.gamma, cfg.alpha
    pos = -a * (1.0 - p) ** g * np.log(p)
    neg = -(1.0 - a) * p**g * np.log1p(-p)
    out = np.where(converted, pos, neg)
    return out if out.ndim else float(out)


def focal_propensity_grad(p, converted, cfg: FocalConfig):
    """d(focal_propensity_loss)/dp."""
    p = _check_prob(p)
    converted = np.asarray(converted, dtype=bool)
    g, a = cfg.gamma, cfg.alpha
    q = 1.0 - p
    if g == 0.0:
        pos = -a / p
        neg = (1.0 - a) / q
    else:
        pos = a * (g * q ** (g - 1.0) * np.log(p) - q**g / p)
        neg = -(1.0 - a) * (g * p ** (g - 1.0) * np.log1p(-p) - p**g / q)
    out = np.where(converted, pos, neg)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# regression


def ziln_regression_loss(mu, sigma, y):
    """Gaussian NLL of ``log y`` (no ``log y`` Jacobian term), positives only."""
    y = np.asarray(y, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(~(y > 0.0)):
        raise DomainError("ziln_regression_loss is defined for y > 0 only")
    if np.any(~(sigma > 0.0)):
        raise DomainError("sigma must be positive")
    r = (np.log(y) - mu) / sigma
    out = 0.5 * r * r + np.log(sigma) + LOG_SQRT_2PI
    return out if np.ndim(out) else float(out)


def ziln_regression_grad(mu, sigma, y):
    """Returns ``(dL/dmu, dL/dsigma)``."""
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0.0)):
        raise DomainError("ziln_regression_grad is defined for y > 0 only")
    resid = np.log(y) - mu
    s2 = np.asarray(sigma, dtype=float) ** 2
    return -resid / s2, (s2 - resid * resid) / (s2 * sigma)


# ---------------------------------------------------------------------------
# ranking


def pair_weight(z_i, z_j):
    """``log(1 + |z_i - z_j|)``."""
    out = np.log1p(np.abs(np.subtract(z_i, z_j, dtype=float)))
    return out if np.ndim(out) else float(out)


def softplus(x):
    return np.logaddexp(0.0, x)


def _as_pairs(pairs):
    if isinstance(pairs, RankPair):
        return RankPair(*(np.atleast_1d(np.asarray(v, dtype=float)) for v in pairs))
    return RankPair.stack(list(pairs))


def value_ranking_terms(pairs) -> np.ndarray:
    """Per-pair terms ``w_ij * softplus(-sign(z_i - z_j) * (tau_i - tau_j))``."""
    z_i, z_j, t_i, t_j = _as_pairs(pairs)
    if z_i.size == 0:
        raise DomainError("value_ranking_loss needs at least one pair")
    s = np.sign(z_i - z_j)
    return pair_weight(z_i, z_j) * softplus(-s * (t_i - t_j))


def value_ranking_loss(pairs) -> float:
    """Sum of value-weighted pairwise logistic losses.

    ``pairs`` is a sequence of :class:`RankPair` or a single ``RankPair`` of
    arrays. Tied outcomes get weight zero and contribute nothing.
    """
    return float(np.sum(value_ranking_terms(pairs)))


def value_ranking_grad(pairs):
    """Returns ``(dL/dtau_i, dL/dtau_j)`` per pair."""
    z_i, z_j, t_i, t_j = _as_pairs(pairs)
    if z_i.size == 0:
        raise DomainError("value_ranking_loss needs at least one pair")
    s = np.sign(z_i - z_j)
    d = -pair_weight(z_i, z_j) * s * expit(s * (t_j - t_i))
    return d, -d


def transformed_outcome(y, t=None, kind="signed", propensity=0.5):
    """Outcome transform used to order pairs in the ranking loss.

    ``kind="log1p"`` gives ``log(1 + y)``. ``kind="signed"`` (default)
    compresses the inverse-propensity transformed outcome
    ``y * (t - e) / (e * (1 - e))``, whose conditional mean is the uplift,
    with a sign-preserving ``log1p``.
    """
    y = np.asarray(y, dtype=float)
    if kind == "log1p":
        return np.log1p(y)
    if kind == "signed":
        if t is None:
            raise ConfigurationError("signed transform needs the treatment vector")
        e = propensity
        ystar = y * (np.asarray(t, dtype=float) - e) / (e * (1.0 - e))
        return np.sign(ystar) * np.log1p(np.abs(ystar))
    raise ConfigurationError(f"unknown transform {kind!r}")


def sample_pairs(n: int, rng: np.random.Generator, max_pairs: int = MAX_PAIRS):
    """Up to ``max_pairs`` distinct unordered index pairs ``i < j``, uniformly."""
    total = n * (n - 1) // 2
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    if total <= max_pairs:
        flat = np.arange(total, dtype=np.int64)
    else:
        flat = np.sort(rng.choice(total, size=max_pairs, replace=False))
    # row-major upper triangle: row i owns n-1-i entries
    starts = np.arange(n, dtype=np.int64) * (2 * n - np.arange(n, dtype=np.int64) - 1) // 2
    i = np.searchsorted(starts, flat, side="right") - 1
    j = flat - starts[i] + i + 1
    return i, j


# ---------------------------------------------------------------------------
# hybrid


@dataclass
class HeadBatch:
    """Head outputs of a two-branch model for one mini-batch.

    ``pi``, ``mu`` and ``sigma`` have shape ``(n, 2)``; column 0 is the control
    branch and column 1 the treatment branch. ``pair_i``/``pair_j`` index
    the pairs entering the ranking term.
    """

    pi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    y: np.ndarray
    t: np.ndarray
    z: np.ndarray
    pair_i: np.ndarray
    pair_j: np.ndarray


def hybrid_loss(batch: HeadBatch, cfg: FocalConfig, weights: HybridWeights,
                distribution="focal_ziln"):
    """Mean distribution loss plus ``lambda_rank`` times the mean ranking loss.

    ``distribution`` selects ``"focal_ziln"`` or ``"mse"`` (squared error of
    the factual expected value, used as an ablation baseline).

    Returns
    -------
    loss : float
    grads : dict
        ``{"pi", "mu", "sigma"}`` arrays of shape ``(n, 2)``.
    """
    n = batch.y.shape[0]
    rows = np.arange(n)
    t = np.asarray(batch.t, dtype=np.int64)
    y = np.asarray(batch.y, dtype=float)
    g_pi = np.zeros_like(batch.pi, dtype=float)
    g_mu = np.zeros_like(batch.mu, dtype=float)
    g_sigma = np.zeros_like(batch.sigma, dtype=float)

    p = batch.pi[rows, t]
    mu = batch.mu[rows, t]
    sigma = batch.sigma[rows, t]
    if distribution == "focal_ziln":
        pc = clamp_probability(p)
        pos = y > 0.0
        dist = focal_propensity_loss(pc, pos, cfg)
        d_p = focal_propensity_grad(pc, pos, cfg)
        d_p = np.where((p > PROB_EPS) & (p < 1.0 - PROB_EPS), d_p, 0.0)
        d_mu = np.zeros(n)
        d_sigma = np.zeros(n)
        if np.any(pos):
            dist[pos] += ziln_regression_loss(mu[pos], sigma[pos], y[pos])
            d_mu[pos], d_sigma[pos] = ziln_regression_grad(mu[pos], sigma[pos], y[pos])
    elif distribution == "mse":
        ev = ziln_mean(p, mu, sigma)
        resid = ev - y
        dist = resid * resid
        d_e = 2.0 * resid
        expo = np.exp(mu + 0.5 * sigma * sigma)
        d_p = d_e * expo
        d_mu = d_e * ev
        d_sigma = d_e * ev * sigma
    else:
        raise ConfigurationError(f"unknown distribution loss {distribution!r}")
    loss = float(np.mean(dist))
    g_pi[rows, t] = d_p / n
    g_mu[rows, t] = d_mu / n
    g_sigma[rows, t] = d_sigma / n

    lam = weights.lambda_rank
    if lam > 0.0 and batch.pair_i.size:
        expo = np.exp(batch.mu + 0.5 * batch.sigma**2)
        ev = batch.pi * expo
        tau = ev[:, 1] - ev[:, 0]
        pairs = RankPair(batch.z[batch.pair_i], batch.z[batch.pair_j],
                         tau[batch.pair_i], tau[batch.pair_j])
        m = batch.pair_i.size
        loss += lam * float(np.mean(value_ranking_terms(pairs)))
        d_i, d_j = value_ranking_grad(pairs)
        d_tau = np.zeros(n)
        np.add.at(d_tau, batch.pair_i, d_i * (lam / m))
        np.add.at(d_tau, batch.pair_j, d_j * (lam / m))
        sign = np.array([-1.0, 1.0])
        d_ev = d_tau[:, None] * sign[None, :]
        g_pi += d_ev * expo
        g_mu += d_ev * ev
        g_sigma += d_ev * ev * batch.sigma
    return loss, {"pi": g_pi, "mu": g_mu, "sigma": g_sigma}
