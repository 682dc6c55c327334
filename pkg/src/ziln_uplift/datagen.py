"""Synthetic zero-inflated uplift benchmark with known individual uplift.

Rows are B2B-style accounts with binary and continuous telemetry features.
Treatment is assigned completely at random. The response is a hurdle
model::

    logit    = base + prognostic(X) + T * persuasion(X)
    converts ~ Bernoulli(sigmoid(logit))
    revenue  = converts * exp(N(mu(X) + T * delta(X), sigma))

``prognostic``, ``mu``, ``persuasion`` and ``delta`` are sparse linear forms
over four disjoint feature subsets (the remaining features are pure noise).
Their coefficients come from ``structure_seed`` so that every ``seed``
draws a fresh sample from the same population. ``base`` is found by
root-finding so the expected share of zero outcomes matches
``zero_fraction_target``. ``heterogeneity_strength`` scales the whole
treatment effect; at 0 the treatment does nothing and the true uplift is 0
for every row.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .errors import ConfigurationError, ParseError

FULL_SCALE_ACCOUNTS = 236_421

# (number of features, std of the linear part, intercept) per response term
_TERMS = {
    "prognostic": (12, 2.0, 0.0),
    "mu": (8, 0.3, 2.0),
    "persuasion": (8, 1.0, 0.2),
    "delta": (6, 0.2, 0.0),
}


@dataclass(frozen=True)
class GenConfig:
    n_accounts: int = 20_000
    n_binary: int = 34
    n_continuous: int = 66
    zero_fraction_target: float = 0.83
    treatment_fraction: float = 0.5
    heterogeneity_strength: float = 1.0
    prognostic_strength: float = 1.0
    sigma: float = 0.8
    seed: int = 0
    structure_seed: int = 20_240_601

    def __post_init__(self):
        if self.n_accounts < 1:
            raise ConfigurationError("n_accounts must be positive")
        if self.n_binary < 0 or self.n_continuous < 0 or self.n_binary + self.n_continuous < 1:
            raise ConfigurationError("need at least one feature")
        if not 0.0 < self.zero_fraction_target < 1.0:
            raise ConfigurationError("zero_fraction_target must lie in (0, 1)")
        if not 0.0 <= self.treatment_fraction <= 1.0:
            raise ConfigurationError("treatment_fraction must lie in [0, 1]")
        if not self.sigma > 0.0:
            raise ConfigurationError("sigma must be positive")

    @property
    def n_features(self):
        return self.n_binary + self.n_continuous


@dataclass
class Dataset:
    features: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    true_uplift: np.ndarray | None = None
    feature_names: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=float)
        self.treatment = np.asarray(self.treatment, dtype=np.int64)
        self.outcome = np.asarray(self.outcome, dtype=float)
        n, d = self.features.shape
        if not self.feature_names:
            self.feature_names = [f"c_f{j}" for j in range(d)]
        if len(self.feature_names) != d:
            raise ConfigurationError("feature_names does not match the feature matrix")
        for name, col in [("treatment", self.treatment), ("outcome", self.outcome),
                          ("true_uplift", self.true_uplift), *self.extra.items()]:
            if col is not None and len(col) != n:
                raise ConfigurationError(f"column {name!r} has {len(col)} rows, expected {n}")
        if np.any(np.isnan(self.features)):
            raise ConfigurationError("missing feature values are not supported")
        if not np.all((self.treatment == 0) | (self.treatment == 1)):
            raise ConfigurationError("treatment must be 0/1")

    def __len__(self):
        return self.features.shape[0]

    @property
    def feature_kinds(self):
        return [name.split("_", 1)[0] for name in self.feature_names]

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            self.features[idx],
            self.treatment[idx],
            self.outcome[idx],
            None if self.true_uplift is None else self.true_uplift[idx],
            list(self.feature_names),
            {k: v[idx] for k, v in self.extra.items()},
            dict(self.meta),
        )

    def split(self, test_fraction, seed):
        """Random train/test split; returns ``(train, test)``."""
        rng = np.random.default_rng(seed)
        perm = rng.permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))


@dataclass
class ResponseModel:
    """Coefficients of the four response terms plus feature marginals."""

    binary_p: np.ndarray
    n_binary: int
    index: dict
    coef: dict
    intercept: dict
    sigma: float
    heterogeneity_strength: float
    prognostic_strength: float

    def _std(self, X):
        Z = np.array(X, dtype=float)
        p = self.binary_p
        Z[:, : self.n_binary] = (Z[:, : self.n_binary] - p) / np.sqrt(p * (1.0 - p))
        return Z

    def terms(self, X):
        Z = self._std(X)
        out = {name: self.intercept[name] + Z[:, self.index[name]] @ self.coef[name]
               for name in _TERMS}
        out["prognostic"] = self.prognostic_strength * out["prognostic"]
        h = self.heterogeneity_strength
        out["persuasion"] = h * out["persuasion"]
        out["delta"] = h * out["delta"]
        return out

    def expected_outcome(self, X, t, base):
        """Per-row ``E[Y | X, T=t]`` for a calibrated ``base`` logit."""
        tr = self.terms(X)
        t = np.broadcast_to(np.asarray(t, dtype=float), (len(X),))
        prob = expit(base + tr["prognostic"] + t * tr["persuasion"])
        return prob * np.exp(tr["mu"] + t * tr["delta"] + 0.5 * self.sigma**2)

    def uplift(self, X, base):
        return self.expected_outcome(X, 1, base) - self.expected_outcome(X, 0, base)


def response_model(cfg: GenConfig) -> ResponseModel:
    rng = np.random.default_rng(cfg.structure_seed)
    d = cfg.n_features
    binary_p = rng.uniform(0.1, 0.5, size=cfg.n_binary)
    need = sum(k for k, _, _ in _TERMS.values())
    order = rng.permutation(d)
    if d < need:
        # small feature spaces reuse features across terms
        order = np.resize(order, need)
    index, coef, intercept = {}, {}, {}
    start = 0
    for name, (k, scale, b0) in _TERMS.items():
        idx = np.sort(order[start:start + k])
        start += k
        w = rng.normal(size=k)
        index[name] = idx
        coef[name] = scale * w / np.linalg.norm(w)
        intercept[name] = b0
    return ResponseModel(binary_p, cfg.n_binary, index, coef, intercept, cfg.sigma,
                         cfg.heterogeneity_strength, cfg.prognostic_strength)


def _calibrate_base(offset, target_zero, tol=1e-3):
    """Root of ``mean(1 - sigmoid(base + offset)) == target`` for ``base``."""

    def excess(b):
        return 1.0 - float(np.mean(expit(b + offset))) - target_zero

    lo, hi = -30.0, 30.0
    if excess(lo) * excess(hi) > 0.0:
        base = lo if abs(excess(lo)) < abs(excess(hi)) else hi
    else:
        base = brentq(excess, lo, hi, xtol=1e-12)
    achieved = excess(base) + target_zero
    if abs(achieved - target_zero) > tol:
        raise ConfigurationError(
            f"zero fraction {target_zero} unreachable; closest achieved {achieved:.4f}"
        )
    return base


def feature_names(n_binary, n_continuous):
    return ([f"b_f{j}" for j in range(n_binary)]
            + [f"c_f{j}" for j in range(n_binary, n_binary + n_continuous)])


def generate(cfg: GenConfig = GenConfig()) -> Dataset:
    """Draw a dataset; fully determined by ``cfg`` (including ``cfg.seed``)."""
    model = response_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_accounts
    Xb = (rng.random((n, cfg.n_binary)) < model.binary_p).astype(float)
    Xc = rng.standard_normal((n, cfg.n_continuous))
    X = np.hstack([Xb, Xc])
    t = (rng.random(n) < cfg.treatment_fraction).astype(np.int64)

    tr = model.terms(X)
    offset = tr["prognostic"] + t * tr["persuasion"]
    base = _calibrate_base(offset, cfg.zero_fraction_target)

    converts = rng.random(n) < expit(base + offset)
    log_rev = rng.normal(tr["mu"] + t * tr["delta"], cfg.sigma)
    y = np.where(converts, np.exp(log_rev), 0.0)
    tau = model.uplift(X, base)
    return Dataset(X, t, y, tau, feature_names(cfg.n_binary, cfg.n_continuous),
                   meta={"base_logit": base, "config": asdict(cfg)})


# ---------------------------------------------------------------------------
# CSV


_KNOWN = ("treatment", "outcome", "true_uplift")


def write_csv(data: Dataset, path):
    """Write ``data`` as CSV; floats use ``repr`` so reading back is exact."""
    path = Path(path)
    header = list(data.feature_names) + ["treatment", "outcome"]
    cols = [data.features[:, j] for j in range(data.features.shape[1])]
    if data.true_uplift is not None:
        header.append("true_uplift")
    extra = list(data.extra)
    header += extra
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(data)):
            row = [repr(float(c[i])) for c in cols]
            row.append(str(int(data.treatment[i])))
            row.append(repr(float(data.outcome[i])))
            if data.true_uplift is not None:
                row.append(repr(float(data.true_uplift[i])))
            row += [repr(float(data.extra[k][i])) for k in extra]
            w.writerow(row)


def _parse_float(s, line, col):
    s = s.strip()
    if s == "" or s.lower() in ("nan", "na", "null", "none"):
        raise ParseError(f"missing value in column {col!r}", line)
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"non-numeric value {s!r} in column {col!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value in column {col!r}", line)
    return v


def read_csv(path) -> Dataset:
    """Parse a CSV written by :func:`write_csv` (extra numeric columns kept in ``extra``)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        header = [h.strip() for h in header]
        for col in ("treatment", "outcome"):
            if col not in header:
                raise ParseError(f"missing required column {col!r}", 1)
        if len(set(header)) != len(header):
            raise ParseError("duplicate column names", 1)
        feats = [h for h in header if h.startswith(("b_", "c_"))]
        others = [h for h in header if h not in feats and h not in _KNOWN]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
            vals = [_parse_float(s, lineno, c) for s, c in zip(row, header)]
            rec = dict(zip(header, vals))
            if rec["treatment"] not in (0.0, 1.0):
                raise ParseError(f"treatment must be 0 or 1, got {row[header.index('treatment')]!r}",
                                 lineno)
            if rec["outcome"] < 0.0:
                raise ParseError("outcome must be non-negative", lineno)
            rows.append(vals)
    if not rows:
        raise ParseError("no data rows", 2)
    arr = np.array(rows, dtype=float)
    col = {h: arr[:, k] for k, h in enumerate(header)}
    X = np.column_stack([col[h] for h in feats]) if feats else np.empty((len(arr), 0))
    return Dataset(
        X,
        col["treatment"].astype(np.int64),
        col["outcome"],
        col.get("true_uplift"),
        feats,
        {h: col[h] for h in others},
    )


def write_config_echo(path, payload: dict):
    """Write ``payload`` as pretty JSON (used for provenance sidecars)."""
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
