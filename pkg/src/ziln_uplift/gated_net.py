"""Treatment-gated two-branch ZILN network, NumPy only.

Forward pass for branch ``k`` (0 = control, 1 = treatment)::

    u   = W_x x + b_x                          (x standardised with stored moments)
    g_k = sigmoid(W_t e_k + b_t)               e_k = treat_embed[k]
    h_k = u * g_k                              element-wise gate
    for head j in (pi, mu, sigma):
        a  = elu(W1[k, j] h_k + b1[k, j])
        o  = w2[k, j] . a + b2[k, j]
    pi = sigmoid(o_pi), mu = o_mu, sigma = softplus(o_sigma) + 1e-3

Both branches are evaluated for every row, so the predicted uplift
``E[y_1] - E[y_0]`` is available for any input. Gradients are derived by
hand and trained with Adam.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.special import expit

from .distributions import ziln_mean
from .errors import ConfigurationError, ShapeError
from .losses import (FocalConfig, HeadBatch, HybridWeights, MAX_PAIRS, hybrid_loss,
                     sample_pairs, softplus, transformed_outcome)

SIGMA_FLOOR = 1e-3
FORMAT_NAME = "ziln_uplift.gated_net"
FORMAT_VERSION = 1
HEADS = ("pi", "mu", "sigma")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 512
    epochs: int = 30
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    d_hidden: int = 64
    d_treat_embed: int = 8
    d_head: int = 32
    max_pairs: int = MAX_PAIRS
    distribution_loss: str = "focal_ziln"
    outcome_transform: str = "signed"

    def __post_init__(self):
        if not self.learning_rate > 0.0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be >= 2 to form pairs")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if min(self.d_hidden, self.d_treat_embed, self.d_head) < 1:
            raise ConfigurationError("layer widths must be >= 1")
        if self.distribution_loss not in ("focal_ziln", "mse"):
            raise ConfigurationError(f"unknown distribution loss {self.distribution_loss!r}")


@dataclass
class GatedNetParams:
    W_x: np.ndarray          # (H, D)
    b_x: np.ndarray          # (H,)
    W_t: np.ndarray          # (H, E)
    b_t: np.ndarray          # (H,)
    treat_embed: np.ndarray  # (2, E)
    head_W1: np.ndarray      # (2, 3, Dh, H)
    head_b1: np.ndarray      # (2, 3, Dh)
    head_w2: np.ndarray      # (2, 3, Dh)
    head_b2: np.ndarray      # (2, 3)
    x_mean: np.ndarray       # (D,) input standardisation, not trained
    x_scale: np.ndarray      # (D,)

    TRAINABLE = ("W_x", "b_x", "W_t", "b_t", "treat_embed",
                 "head_W1", "head_b1", "head_w2", "head_b2")

    @property
    def d_features(self):
        return self.W_x.shape[1]

    def copy(self):
        return GatedNetParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def trainable(self):
        return {name: getattr(self, name) for name in self.TRAINABLE}

    def to_dict(self, config=None):
        arrays = {}
        for f in fields(self):
            a = np.asarray(getattr(self, f.name), dtype=float)
            arrays[f.name] = {"shape": list(a.shape), "data": a.ravel(order="C").tolist()}
        return {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                "config": config or {}, "arrays": arrays}

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != FORMAT_NAME:
            raise ConfigurationError(f"not a gated-net artifact (format={d.get('format')!r})")
        if d.get("version") != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported gated-net artifact version {d.get('version')!r}")
        kw = {name: np.array(arr["data"], dtype=float).reshape(arr["shape"])
              for name, arr in d["arrays"].items()}
        return cls(**kw)

    def save(self, path, config=None):
        Path(path).write_text(json.dumps(self.to_dict(config)))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(d_features, d_hidden=64, d_treat_embed=8, d_head=32, seed=0) -> GatedNetParams:
    rng = np.random.default_rng(seed)
    H, D, E, Dh = d_hidden, d_features, d_treat_embed, d_head
    return GatedNetParams(
        W_x=_glorot(rng, (H, D), D, H),
        b_x=np.zeros(H),
        W_t=_glorot(rng, (H, E), E, H),
        b_t=np.zeros(H),
        treat_embed=_glorot(rng, (2, E), 2, E),
        head_W1=_glorot(rng, (2, 3, Dh, H), H, Dh),
        head_b1=np.zeros((2, 3, Dh)),
        head_w2=_glorot(rng, (2, 3, Dh), Dh, 1),
        head_b2=np.zeros((2, 3)),
        x_mean=np.zeros(D),
        x_scale=np.ones(D),
    )


def _elu(a):
    return np.where(a > 0.0, a, np.expm1(np.minimum(a, 0.0)))


def _elu_grad(a):
    return np.where(a > 0.0, 1.0, np.exp(np.minimum(a, 0.0)))


def _as_batch(x, params):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.d_features:
        raise ShapeError(
            f"input has {X.shape[-1]} features but the network expects {params.d_features}"
        )
    return X, single


def _gate(params, k):
    return expit(params.W_t @ params.treat_embed[k] + params.b_t)


def gated_interaction(x, t, params: GatedNetParams):
    """``(W_x x + b_x) * sigmoid(W_t e_t + b_t)`` on standardised ``x``.

    ``t`` is a scalar branch or a per-row 0/1 vector.
    """
    X, single = _as_batch(x, params)
    Xs = (X - params.x_mean) / params.x_scale
    u = Xs @ params.W_x.T + params.b_x
    gates = np.stack([_gate(params, 0), _gate(params, 1)])
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (X.shape[0],))
    out = u * gates[t]
    return out[0] if single else out


def _branch_forward(params, Xs, k):
    u = Xs @ params.W_x.T + params.b_x
    g = _gate(params, k)
    h = u * g
    A = np.einsum("nh,jdh->njd", h, params.head_W1[k]) + params.head_b1[k]
    act = _elu(A)
    o = np.einsum("njd,jd->nj", act, params.head_w2[k]) + params.head_b2[k]
    pi = expit(o[:, 0])
    mu = o[:, 1]
    sigma = softplus(o[:, 2]) + SIGMA_FLOOR
    cache = (u, g, h, A, act, o)
    return (pi, mu, sigma), cache


def forward_both(X, params: GatedNetParams):
    """Head outputs for both branches: three arrays of shape ``(n, 2)``."""
    X, _ = _as_batch(X, params)
    Xs = (X - params.x_mean) / params.x_scale
    outs = [_branch_forward(params, Xs, k)[0] for k in (0, 1)]
    return tuple(np.stack([outs[0][j], outs[1][j]], axis=1) for j in range(3))


def forward(x, t, params: GatedNetParams):
    """``(pi, mu, sigma)`` of branch ``t`` (0 or 1) for one row or a batch."""
    if t not in (0, 1):
        raise ConfigurationError("branch must be 0 or 1")
    X, single = _as_batch(x, params)
    Xs = (X - params.x_mean) / params.x_scale
    (pi, mu, sigma), _ = _branch_forward(params, Xs, t)
    if single:
        return float(pi[0]), float(mu[0]), float(sigma[0])
    return pi, mu, sigma


def predict_uplift(x, params: GatedNetParams):
    """Expected-value difference between treatment and control branches."""
    pi, mu, sigma = forward_both(x, params)
    ev = ziln_mean(pi, mu, sigma)
    tau = ev[:, 1] - ev[:, 0]
    return float(tau[0]) if np.ndim(x) == 1 else tau


def _branch_backward(params, Xs, k, cache, d_pi, d_mu, d_sigma, grads):
    u, g, h, A, act, o = cache
    do = np.stack([
        d_pi * expit(o[:, 0]) * (1.0 - expit(o[:, 0])),
        d_mu,
        d_sigma * expit(o[:, 2]),
    ], axis=1)                                             # (n, 3)
    grads["head_b2"][k] += do.sum(axis=0)
    grads["head_w2"][k] += np.einsum("nj,njd->jd", do, act)
    dA = do[:, :, None] * params.head_w2[k][None] * _elu_grad(A)   # (n, 3, Dh)
    grads["head_b1"][k] += dA.sum(axis=0)
    grads["head_W1"][k] += np.einsum("njd,nh->jdh", dA, h)
    dh = np.einsum("njd,jdh->nh", dA, params.head_W1[k])
    du = dh * g
    dg = np.sum(dh * u, axis=0)
    grads["W_x"] += du.T @ Xs
    grads["b_x"] += du.sum(axis=0)
    dpre = dg * g * (1.0 - g)
    grads["W_t"] += np.outer(dpre, params.treat_embed[k])
    grads["b_t"] += dpre
    grads["treat_embed"][k] += params.W_t.T @ dpre


def loss_and_grads(params: GatedNetParams, X, y, t, z, pair_i, pair_j,
                   focal: FocalConfig, weights: HybridWeights, distribution="focal_ziln"):
    """Hybrid loss of a batch and its gradient with respect to every trainable array."""
    X, _ = _as_batch(X, params)
    Xs = (X - params.x_mean) / params.x_scale
    outs, caches = zip(*(_branch_forward(params, Xs, k) for k in (0, 1)))
    pi, mu, sigma = (np.stack([outs[0][j], outs[1][j]], axis=1) for j in range(3))
    batch = HeadBatch(pi, mu, sigma, np.asarray(y, dtype=float), np.asarray(t), np.asarray(z),
                      np.asarray(pair_i, dtype=np.int64), np.asarray(pair_j, dtype=np.int64))
    loss, g = hybrid_loss(batch, focal, weights, distribution)
    grads = {name: np.zeros_like(a) for name, a in params.trainable().items()}
    for k in (0, 1):
        _branch_backward(params, Xs, k, caches[k], g["pi"][:, k], g["mu"][:, k],
                         g["sigma"][:, k], grads)
    return loss, grads


def _init_output_biases(params, y, t):
    """Start each branch's heads at the arm's conversion rate and log-moments."""
    for k in (0, 1):
        yk = y[t == k]
        pos = yk[yk > 0.0]
        rate = np.clip((pos.size + 0.5) / (yk.size + 1.0), 1e-3, 1.0 - 1e-3)
        params.head_b2[k, 0] = np.log(rate / (1.0 - rate))
        if pos.size > 1:
            logs = np.log(pos)
            s = max(float(np.std(logs)) - SIGMA_FLOOR, 1e-2)
            params.head_b2[k, 1] = float(np.mean(logs))
            params.head_b2[k, 2] = float(np.log(np.expm1(s)))


class Adam:
    def __init__(self, params: GatedNetParams, cfg: TrainConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.trainable().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.trainable().items()}
        self.step_count = 0

    def step(self, params, grads):
        c = self.cfg
        self.step_count += 1
        b1, b2 = c.adam_beta1, c.adam_beta2
        corr1 = 1.0 - b1**self.step_count
        corr2 = 1.0 - b2**self.step_count
        for name, g in grads.items():
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p = getattr(params, name)
            p -= c.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + c.adam_eps)


def train(data, cfg: TrainConfig = TrainConfig(), focal: FocalConfig = FocalConfig(),
          weights: HybridWeights = HybridWeights()):
    """Fit a network on ``data`` (a :class:`~ziln_uplift.datagen.Dataset`).

    Returns ``(params, history)`` where ``history`` holds the mean training
    loss of every epoch.
    """
    X = np.asarray(data.features, dtype=float)
    y = np.asarray(data.outcome, dtype=float)
    t = np.asarray(data.treatment, dtype=np.int64)
    n, d = X.shape
    if np.all(t == 1) or np.all(t == 0):
        raise ConfigurationError("training data needs both treated and control rows")
    params = init_params(d, cfg.d_hidden, cfg.d_treat_embed, cfg.d_head, cfg.seed)
    params.x_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    params.x_scale = np.where(scale > 0.0, scale, 1.0)
    _init_output_biases(params, y, t)
    z_all = transformed_outcome(y, t, cfg.outcome_transform)

    rng = np.random.default_rng([cfg.seed, 1])
    opt = Adam(params, cfg)
    history = []
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            pi_, pj_ = sample_pairs(idx.size, rng, cfg.max_pairs)
            loss, grads = loss_and_grads(params, X[idx], y[idx], t[idx], z_all[idx], pi_, pj_,
                                         focal, weights, cfg.distribution_loss)
            opt.step(params, grads)
            total += loss * idx.size
            seen += idx.size
        history.append(total / seen)
    return params, history


def train_config_dict(cfg: TrainConfig, focal: FocalConfig, weights: HybridWeights):
    return {"train": asdict(cfg), "focal": asdict(focal), "weights": asdict(weights)}
