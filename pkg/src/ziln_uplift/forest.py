"""Robust ZILN uplift forest.

Each tree splits to maximise the *uplift heterogeneity gain*::

    gain = N_L * N_R / (N_L + N_R)**2 * (tau_L - tau_R)**2

where a child's uplift ``tau`` is the difference of ZILN expected values of
its treated and control samples. The ZILN parameters of every arm are
shrunk toward priors estimated on the tree's root sample:

* propensity: ``p = (n_pos + alpha_p * p_bar) / (n + alpha_p)``
* magnitude:  with ``w = n_pos / (n_pos + alpha_reg)``, ``mu`` and ``sigma``
  are ``w * sample + (1 - w) * prior`` when ``n_pos > 1``, else the priors
* ``sigma`` is clipped to ``[0.1, 4.0]``.

A split is rejected (gain 0) when either child has fewer than two treated or
two control samples. Trees are bagged; the forest predicts the mean leaf
uplift over trees.

``criterion="mse"`` grows the same trees with the classical squared-error
reduction of the outcome and raw difference-in-means leaves; it is kept as
the homogeneity-splitting baseline.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .distributions import ZilnParams, expected_value, ziln_mean
from .errors import ConfigurationError, DomainError

SIGMA_MIN = 0.1
SIGMA_MAX = 4.0
FORMAT_NAME = "ziln_uplift.forest"
FORMAT_VERSION = 1
CRITERIA = ("ziln", "mse")


class UnsplittableNode(Exception):
    """A node lacks the minimum number of treated or control samples."""


@dataclass(frozen=True)
class SmoothingConfig:
    alpha_p: float = 10.0
    alpha_reg: float = 10.0

    def __post_init__(self):
        if not (self.alpha_p > 0.0 and self.alpha_reg > 0.0):
            raise ConfigurationError("smoothing pseudo-counts must be positive")


@dataclass(frozen=True)
class Priors:
    p_bar: float
    mu_bar: float
    sigma_bar: float

    @classmethod
    def from_outcomes(cls, y):
        """Pooled conversion rate and log-moments of the positive outcomes."""
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            raise DomainError("cannot compute priors from an empty sample")
        pos = y[y > 0.0]
        if pos.size == 0:
            return cls(0.0, 0.0, 1.0)
        logs = np.log(pos)
        sigma = float(np.clip(np.std(logs), SIGMA_MIN, SIGMA_MAX))
        return cls(pos.size / y.size, float(np.mean(logs)), sigma)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 20
    max_depth: int = 6
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    bootstrap: bool = True
    # fraction of features tried per split; None means ceil(sqrt(d)) features
    feature_fraction: float | None = None
    min_leaf_treated: int = 2
    min_leaf_control: int = 2
    max_candidates: int = 32
    criterion: str = "ziln"
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigurationError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be >= 1")
        if self.min_leaf_treated < 2 or self.min_leaf_control < 2:
            raise ConfigurationError("leaves need at least 2 treated and 2 control samples")
        if self.feature_fraction is not None and not 0.0 < self.feature_fraction <= 1.0:
            raise ConfigurationError("feature_fraction must lie in (0, 1]")
        if self.criterion not in CRITERIA:
            raise ConfigurationError(f"criterion must be one of {CRITERIA}")
        if self.max_candidates < 1:
            raise ConfigurationError("max_candidates must be >= 1")

    def n_split_features(self, d):
        if self.feature_fraction is None:
            return min(d, math.ceil(math.sqrt(d)))
        return max(1, min(d, math.ceil(self.feature_fraction * d)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["smoothing"] = SmoothingConfig(**d["smoothing"])
        return cls(**d)


# ---------------------------------------------------------------------------
# scalar reference path (one node / one split at a time)


def calc_robust_params(y, priors: Priors, cfg: SmoothingConfig) -> ZilnParams:
    """Smoothed ZILN parameters of one arm of one node."""
    y = np.asarray(y, dtype=float)
    n = y.size
    if n == 0:
        raise DomainError("calc_robust_params needs at least one sample")
    if np.any(y < 0.0):
        raise DomainError("outcomes must be non-negative")
    pos = y[y > 0.0]
    n_pos = pos.size
    p_hat = (n_pos + cfg.alpha_p * priors.p_bar) / (n + cfg.alpha_p)
    if n_pos > 1:
        logs = np.log(pos)
        mu_s, sigma_s = float(np.mean(logs)), float(np.std(logs))
        w = n_pos / (n_pos + cfg.alpha_reg)
        mu_hat = w * mu_s + (1.0 - w) * priors.mu_bar
        sigma_hat = w * sigma_s + (1.0 - w) * priors.sigma_bar
    else:
        mu_hat, sigma_hat = priors.mu_bar, priors.sigma_bar
    sigma_hat = min(max(sigma_hat, SIGMA_MIN), SIGMA_MAX)
    return ZilnParams(p_hat, mu_hat, sigma_hat)


def node_uplift(y, t, priors: Priors, cfg: SmoothingConfig, min_treated=2, min_control=2):
    """ZILN uplift of a node: E[Y | T=1] - E[Y | T=0] from smoothed parameters.

    Raises
    ------
    UnsplittableNode
        If an arm has fewer samples than required.
    """
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    n_t = int(np.sum(t == 1))
    n_c = int(np.sum(t == 0))
    if n_t < min_treated or n_c < min_control:
        raise UnsplittableNode(f"node has {n_t} treated and {n_c} control samples")
    e_t = expected_value(calc_robust_params(y[t == 1], priors, cfg))
    e_c = expected_value(calc_robust_params(y[t == 0], priors, cfg))
    return e_t - e_c


def split_gain(y, t, left, priors: Priors, cfg: SmoothingConfig, min_treated=2, min_control=2):
    """Uplift heterogeneity gain of partitioning a node by the boolean mask ``left``."""
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    left = np.asarray(left, dtype=bool)
    try:
        tau_l = node_uplift(y[left], t[left], priors, cfg, min_treated, min_control)
        tau_r = node_uplift(y[~left], t[~left], priors, cfg, min_treated, min_control)
    except UnsplittableNode:
        return 0.0
    n_l, n_r = int(left.sum()), int((~left).sum())
    return n_l * n_r / (n_l + n_r) ** 2 * (tau_l - tau_r) ** 2


# ---------------------------------------------------------------------------
# vectorised path used while growing trees


def _robust_arrays(n, n_pos, s1, s2, priors: Priors, cfg: SmoothingConfig):
    """``calc_robust_params`` from sufficient statistics, elementwise over arrays.

    ``s1``/``s2`` are sums of log y and (log y)^2 over the positive outcomes.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        p_hat = (n_pos + cfg.alpha_p * priors.p_bar) / (n + cfg.alpha_p)
        mu_s = s1 / n_pos
        var_s = np.maximum(s2 / n_pos - mu_s * mu_s, 0.0)
        w = n_pos / (n_pos + cfg.alpha_reg)
        enough = n_pos > 1
        mu_hat = np.where(enough, w * mu_s + (1.0 - w) * priors.mu_bar, priors.mu_bar)
        sigma_hat = np.where(enough, w * np.sqrt(var_s) + (1.0 - w) * priors.sigma_bar,
                             priors.sigma_bar)
    return p_hat, mu_hat, np.clip(sigma_hat, SIGMA_MIN, SIGMA_MAX)


def _arm_stats(y, t):
    """Per-row statistics whose prefix sums drive the split search."""
    pos = y > 0.0
    logy = np.log(np.where(pos, y, 1.0))
    tr = t == 1
    ct = ~tr
    return np.stack([
        tr, ct,
        pos & tr, pos & ct,
        logy * tr, logy * ct,
        logy * logy * tr, logy * logy * ct,
        y, y * y,
        y * tr, y * ct,
    ]).astype(float)


def _uplift_from_stats(S, priors, cfg, criterion):
    """Uplift for each column of summed statistics ``S`` (shape ``(12, m)``)."""
    n_t, n_c = S[0], S[1]
    if criterion == "mse":
        with np.errstate(invalid="ignore", divide="ignore"):
            return S[10] / n_t - S[11] / n_c
    p_t, mu_t, sg_t = _robust_arrays(n_t, S[2], S[4], S[6], priors, cfg)
    p_c, mu_c, sg_c = _robust_arrays(n_c, S[3], S[5], S[7], priors, cfg)
    return ziln_mean(p_t, mu_t, sg_t) - ziln_mean(p_c, mu_c, sg_c)


def _candidate_positions(xs, max_candidates):
    """Indices ``b`` such that the split puts sorted rows ``0..b`` on the left."""
    m = xs.size
    bounds = np.flatnonzero(xs[1:] != xs[:-1])
    if bounds.size <= max_candidates:
        return bounds
    # quantile-based subset of the distinct-value boundaries
    q = np.arange(1, max_candidates + 1) / (max_candidates + 1)
    pick = np.searchsorted(bounds + 1, q * m, side="left")
    pick = np.minimum(pick, bounds.size - 1)
    return bounds[np.unique(pick)]


def _best_split_on_feature(xv, stats, total, priors, cfg, criterion, min_t, min_c, max_cand):
    order = np.argsort(xv, kind="stable")
    xs = xv[order]
    pos = _candidate_positions(xs, max_cand)
    if pos.size == 0:
        return 0.0, None
    csum = np.cumsum(stats[:, order], axis=1)[:, pos]
    left = csum
    right = total[:, None] - csum
    ok = ((left[0] >= min_t) & (left[1] >= min_c) & (right[0] >= min_t) & (right[1] >= min_c))
    n_l = left[0] + left[1]
    n_r = right[0] + right[1]
    if criterion == "mse":
        sse = lambda S, n: S[9] - S[8] ** 2 / n  # noqa: E731
        with np.errstate(invalid="ignore", divide="ignore"):
            gain = sse(total[:, None], n_l + n_r) - sse(left, n_l) - sse(right, n_r)
    else:
        tau_l = _uplift_from_stats(left, priors, cfg, criterion)
        tau_r = _uplift_from_stats(right, priors, cfg, criterion)
        gain = n_l * n_r / (n_l + n_r) ** 2 * (tau_l - tau_r) ** 2
    gain = np.where(ok, gain, 0.0)
    k = int(np.argmax(gain))
    if not gain[k] > 0.0:
        return 0.0, None
    lo, hi = xs[pos[k]], xs[pos[k] + 1]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return float(gain[k]), float(thr)


# ---------------------------------------------------------------------------
# tree


@dataclass
class UpliftTree:
    """Flat node arrays; ``feature == -1`` marks a leaf.

    Rows with ``x[feature] <= threshold`` go to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    tau_hat: np.ndarray
    treated: np.ndarray   # (n_nodes, 3): pi, mu, sigma
    control: np.ndarray   # (n_nodes, 3)
    n_treated: np.ndarray
    n_control: np.ndarray
    depth: np.ndarray
    priors: Priors

    @property
    def n_nodes(self):
        return self.feature.size

    @property
    def max_depth(self):
        return int(self.depth.max())

    def leaves(self):
        return np.flatnonzero(self.feature < 0)

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        rows = np.arange(X.shape[0])
        node = np.zeros(X.shape[0], dtype=np.int64)
        for _ in range(self.max_depth):
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.maximum(f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict(self, X):
        return self.tau_hat[self.apply(X)]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "tau_hat": self.tau_hat.tolist(),
            "treated": self.treated.tolist(),
            "control": self.control.tolist(),
            "n_treated": self.n_treated.tolist(),
            "n_control": self.n_control.tolist(),
            "depth": self.depth.tolist(),
            "priors": asdict(self.priors),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.array(d["feature"], dtype=np.int64),
            np.array(d["threshold"], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["tau_hat"], dtype=float),
            np.array(d["treated"], dtype=float).reshape(-1, 3),
            np.array(d["control"], dtype=float).reshape(-1, 3),
            np.array(d["n_treated"], dtype=np.int64),
            np.array(d["n_control"], dtype=np.int64),
            np.array(d["depth"], dtype=np.int64),
            Priors(**d["priors"]),
        )


def _leaf_summary(y, t, priors, cfg: ForestConfig):
    sm = cfg.smoothing
    tr, ct = y[t == 1], y[t == 0]
    p_t = calc_robust_params(tr, priors, sm)
    p_c = calc_robust_params(ct, priors, sm)
    if cfg.criterion == "mse":
        # baseline leaves use raw arm means; smoothed params are kept for inspection
        tau = float(np.mean(tr) - np.mean(ct))
    else:
        tau = expected_value(p_t) - expected_value(p_c)
    return tau, p_t.as_tuple(), p_c.as_tuple()


def grow_tree(X, y, t, cfg: ForestConfig, priors: Priors | None = None, rng=None) -> UpliftTree:
    """Greedy best-gain tree on ``(X, y, t)``.

    Nodes at depth ``max_depth`` (the root has depth 1) become leaves, as do
    nodes whose best gain is zero. Priors default to the pooled sample.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=np.int64)
    n, d = X.shape
    min_t, min_c = cfg.min_leaf_treated, cfg.min_leaf_control
    if np.sum(t == 1) < min_t or np.sum(t == 0) < min_c:
        raise ConfigurationError(
            f"need at least {min_t} treated and {min_c} control rows to grow a tree"
        )
    if np.any(np.isnan(X)):
        raise ConfigurationError("missing feature values are not supported")
    if priors is None:
        priors = Priors.from_outcomes(y)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    Xf = np.asfortranarray(X)
    stats = _arm_stats(y, t)
    k_feat = cfg.n_split_features(d)

    nodes = []

    def new_node(idx, depth):
        tau, pt, pc = _leaf_summary(y[idx], t[idx], priors, cfg)
        nodes.append({
            "feature": -1, "threshold": 0.0, "left": -1, "right": -1,
            "tau": tau, "treated": pt, "control": pc,
            "n_t": int(np.sum(t[idx] == 1)), "n_c": int(np.sum(t[idx] == 0)),
            "depth": depth,
        })
        return len(nodes) - 1

    root = new_node(np.arange(n), 1)
    stack = [(root, np.arange(n))]
    while stack:
        node_id, idx = stack.pop()
        node = nodes[node_id]
        if node["depth"] >= cfg.max_depth:
            continue
        if k_feat < d:
            feats = np.sort(rng.choice(d, size=k_feat, replace=False))
        else:
            feats = np.arange(d)
        sub = stats[:, idx]
        total = sub.sum(axis=1)
        best_gain, best = 0.0, None
        for f in feats:
            g, thr = _best_split_on_feature(Xf[idx, f], sub, total, priors, cfg.smoothing,
                                            cfg.criterion, min_t, min_c, cfg.max_candidates)
            if thr is not None and g > best_gain:
                best_gain, best = g, (int(f), thr)
        if best is None:
            continue
        f, thr = best
        go_left = Xf[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        node["feature"], node["threshold"] = f, thr
        node["left"] = new_node(li, node["depth"] + 1)
        node["right"] = new_node(ri, node["depth"] + 1)
        # right pushed first so the left subtree is numbered first
        stack.append((node["right"], ri))
        stack.append((node["left"], li))

    return UpliftTree(
        np.array([nd["feature"] for nd in nodes], dtype=np.int64),
        np.array([nd["threshold"] for nd in nodes], dtype=float),
        np.array([nd["left"] for nd in nodes], dtype=np.int64),
        np.array([nd["right"] for nd in nodes], dtype=np.int64),
        np.array([nd["tau"] for nd in nodes], dtype=float),
        np.array([nd["treated"] for nd in nodes], dtype=float),
        np.array([nd["control"] for nd in nodes], dtype=float),
        np.array([nd["n_t"] for nd in nodes], dtype=np.int64),
        np.array([nd["n_c"] for nd in nodes], dtype=np.int64),
        np.array([nd["depth"] for nd in nodes], dtype=np.int64),
        priors,
    )


# ---------------------------------------------------------------------------
# forest


@dataclass
class UpliftForest:
    trees: list
    config: ForestConfig
    n_features: int

    def predict(self, X):
        """Mean leaf uplift over trees; independent of the order of ``trees``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DomainError(f"expected {self.n_features} features, got {X.shape[1]}")
        per_tree = np.sort(np.stack([tree.predict(X) for tree in self.trees]), axis=0)
        return per_tree.sum(axis=0) / len(self.trees)

    def to_dict(self):
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "n_features": self.n_features,
            "config": self.config.to_dict(),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME:
            raise ConfigurationError(f"not a forest artifact (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported forest artifact version {d.get('version')!r}")
        return cls([UpliftTree.from_dict(td) for td in d["trees"]],
                   ForestConfig.from_dict(d["config"]), int(d["n_features"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _fit_one(X, y, t, cfg, k):
    rng = np.random.default_rng([cfg.seed, k])
    n = X.shape[0]
    if cfg.bootstrap:
        idx = np.sort(rng.integers(0, n, size=n))
        Xb, yb, tb = X[idx], y[idx], t[idx]
    else:
        Xb, yb, tb = X, y, t
    priors = Priors.from_outcomes(yb)
    return grow_tree(Xb, yb, tb, cfg, priors, rng)


def fit_forest(data, cfg: ForestConfig = ForestConfig()) -> UpliftForest:
    """Bagged uplift trees; each tree gets its own seeded generator."""
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.outcome, dtype=float)
    t = np.asarray(data.treatment, dtype=np.int64)
    if np.sum(t == 1) < cfg.min_leaf_treated or np.sum(t == 0) < cfg.min_leaf_control:
        raise ConfigurationError("training data needs both treated and control rows")
    jobs = max(1, int(cfg.n_jobs))
    if jobs == 1:
        trees = [_fit_one(X, y, t, cfg, k) for k in range(cfg.n_trees)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            trees = list(ex.map(lambda k: _fit_one(X, y, t, cfg, k), range(cfg.n_trees)))
    return UpliftForest(trees, cfg, X.shape[1])


def predict(forest: UpliftForest, X):
    return forest.predict(X)
