"""Zero-inflated lognormal (ZILN) mixture.

A ZILN variable is exactly zero with probability ``1 - pi`` and otherwise
``exp(N(mu, sigma**2))``. The zero branch is a probability mass, not a
density spike, so :func:`log_density` mixes a log-mass (``y == 0``) with a
log-density (``y > 0``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ZilnOverflowError

# Largest exponent for which exp() stays finite in float64 (exp(709.78) ~ 1.8e308).
EXP_LIMIT = 700.0
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ZilnParams:
    """Conversion probability ``pi`` and log-scale location/spread of the positive part.

    Fields may be scalars or broadcastable arrays.
    """

    pi: float
    mu: float
    sigma: float

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        mu = np.asarray(self.mu, dtype=float)
        if np.any(~np.isfinite(pi)) or np.any((pi < 0.0) | (pi > 1.0)):
            raise DomainError(f"pi must lie in [0, 1], got {self.pi!r}")
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0.0):
            raise DomainError(f"sigma must be positive and finite, got {self.sigma!r}")
        if np.any(~np.isfinite(mu)):
            raise DomainError(f"mu must be finite, got {self.mu!r}")

    def as_tuple(self):
        return self.pi, self.mu, self.sigma


def ziln_mean(pi, mu, sigma):
    """Array form of :func:`expected_value` without validation of ``pi``."""
    pi = np.asarray(pi, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    # extended precision for the exponent; cheap relative to exp itself
    expo = mu.astype(np.longdouble) + np.longdouble(0.5) * sigma.astype(np.longdouble) ** 2
    if np.any(expo > EXP_LIMIT):
        bad = np.argmax(np.ravel(expo > EXP_LIMIT))
        m = np.broadcast_to(mu, expo.shape).ravel()[bad]
        s = np.broadcast_to(sigma, expo.shape).ravel()[bad]
        raise ZilnOverflowError(
            f"exp(mu + sigma^2/2) overflows for mu={float(m)!r}, sigma={float(s)!r}"
        )
    out = pi * np.exp(expo).astype(float)
    return out if out.ndim else float(out)


def expected_value(params: ZilnParams):
    """Mean of the mixture: ``pi * exp(mu + sigma**2 / 2)``.

    Raises
    ------
    ZilnOverflowError
        If the exponent exceeds ``EXP_LIMIT``.
    """
    return ziln_mean(params.pi, params.mu, params.sigma)


def log_density(params: ZilnParams, y):
    """Log-mass at ``y == 0`` and log-density for ``y > 0``.

    Returns ``-inf`` where the branch has zero probability (``pi == 1`` at
    ``y == 0`` or ``pi == 0`` at ``y > 0``).
    """
    y = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(y)) or np.any(y < 0.0):
        raise DomainError("log_density requires finite y >= 0")
    pi, mu, sigma = (np.asarray(v, dtype=float) for v in params.as_tuple())
    with np.errstate(divide="ignore", invalid="ignore"):
        logy = np.log(np.where(y > 0.0, y, 1.0))
        pos = (
            np.log(pi)
            - logy
            - np.log(sigma)
            - LOG_SQRT_2PI
            - 0.5 * ((logy - mu) / sigma) ** 2
        )
        zero = np.log1p(-pi) * np.ones_like(pos)
    out = np.where(y > 0.0, pos, zero)
    return out if out.ndim else float(out)


def sample(params: ZilnParams, rng: np.random.Generator, n: int):
    """Draw ``n`` independent values; deterministic for a given generator state."""
    if n < 0:
        raise DomainError(f"n must be non-negative, got {n}")
    converted = rng.random(n) < params.pi
    magnitude = np.exp(rng.normal(params.mu, params.sigma, size=n))
    return np.where(converted, magnitude, 0.0)
