"""Training objectives: cross-entropy on measured pairs, and the pooled objective.

The pooled objective adds the marginal likelihood of every cell whose label is
known from sorting but whose sequence was never read. With binary labels all
such cells in one pool contribute the same term, log m or log(1 - m), where

    m(theta) = E_{x ~ p(x)} p_theta(y=1 | x)

is estimated by averaging over fresh library samples. Per step the loss is

    loss_xy(batch) + pool_weight * loss_y

with both terms normalised per cell. ``pool_weight = (N - n) / n`` makes this
exactly the full-data negative log-likelihood divided by ``n``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.special import expit

from .errors import EmptySamples, NonFiniteLoss
from .predictor import (
    PROB_CLAMP,
    Batch,
    Predictor,
    _backprop,
    _terms,
    init_predictor,
    tail_probabilities,
)
from .screen import ScreenDataset
from .seqmodel import SequenceDistribution, _sample_with_rng

OBJECTIVES = {"cross-entropy": "xy", "xy": "xy", "leavs": "leavs"}


@dataclass
class TrainConfig:
    objective: str = "leavs"
    M: int = 1024
    batch_size: Optional[int] = 128
    epochs: int = 1000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    pool_weight: Union[float, str] = "auto"
    sort_gate: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(OBJECTIVES)}")
        self.objective = OBJECTIVES[self.objective]
        if self.objective == "leavs" and self.M < 1:
            raise ValueError("M must be >= 1 for the pooled objective")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.pool_weight != "auto" and float(self.pool_weight) < 0:
            raise ValueError("pool_weight must be 'auto' or nonnegative")
        self.betas = tuple(self.betas)

    def to_dict(self) -> dict:
        return asdict(self)


def loss_xy(p: Predictor, batch: Batch) -> float:
    """Mean negative log-likelihood of the measured pairs (0 for an empty batch)."""
    if len(batch) == 0:
        return 0.0
    return float(-_terms(p, batch, False)[0].sum() / len(batch))


def _loss_xy_grad(p: Predictor, batch: Batch):
    if len(batch) == 0:
        return 0.0, np.zeros(p.dim)
    ll, df, d_rho, cache = _terms(p, batch, True)
    n = len(batch)
    grad = _backprop(p, cache, -df / n, None if d_rho is None else -d_rho / n)
    return float(-ll.sum() / n), grad


def _positive_scores(p: Predictor, xs: np.ndarray, sort_gate: int, with_grad: bool):
    """p_theta(y=1|x) per sample, optionally with what is needed to backprop its mean."""
    if p.head == "bernoulli":
        f, cache = p._net.forward(p._net_theta(), p._check(xs))
        s = expit(f)
        return (s, (cache, s * (1.0 - s), None)) if with_grad else s
    return tail_probabilities(p, xs, sort_gate, with_grad=with_grad)


def marginal_positive_rate(p: Predictor, library_samples: np.ndarray, sort_gate: int = 0) -> float:
    """Monte Carlo estimate of E_{p(x)} p_theta(y=1|x).

    For the negbin head the positive event is the sort gate, Y > ``sort_gate``.
    """
    xs = np.asarray(library_samples)
    if xs.ndim != 2 or len(xs) == 0:
        raise EmptySamples("need at least one library sample")
    return float(np.mean(_positive_scores(p, xs, sort_gate, False)))


def _pool_weights(pool_counts, measured_counts):
    (N_pos, N_neg), (n_pos, n_neg) = pool_counts, measured_counts
    if n_pos > N_pos or n_neg > N_neg:
        raise ValueError("measured counts exceed pool counts")
    return N_pos - n_pos, N_neg - n_neg


def loss_y(p: Predictor, pool_counts, measured_counts, library_samples, sort_gate: int = 0) -> float:
    """Mean negative log marginal likelihood of the unsequenced cells."""
    u_pos, u_neg = _pool_weights(pool_counts, measured_counts)
    if u_pos + u_neg == 0:
        return 0.0
    m = np.clip(marginal_positive_rate(p, library_samples, sort_gate), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(-(u_pos * np.log(m) + u_neg * np.log1p(-m)) / (u_pos + u_neg))


def _loss_y_grad(p: Predictor, pool_counts, measured_counts, xs, sort_gate: int):
    u_pos, u_neg = _pool_weights(pool_counts, measured_counts)
    if u_pos + u_neg == 0:
        return 0.0, np.zeros(p.dim), float("nan")
    if len(xs) == 0:
        raise EmptySamples("need at least one library sample")
    s, (cache, ds_df, ds_drho) = _positive_scores(p, xs, sort_gate, True)
    m_raw = float(s.mean())
    m = min(max(m_raw, PROB_CLAMP), 1.0 - PROB_CLAMP)
    u = u_pos + u_neg
    loss = -(u_pos * np.log(m) + u_neg * np.log1p(-m)) / u
    if m != m_raw:
        return float(loss), np.zeros(p.dim), m_raw
    dL_dm = -(u_pos / m - u_neg / (1.0 - m)) / u
    scale = dL_dm / len(xs)
    grad = _backprop(p, cache, scale * ds_df, None if ds_drho is None else scale * ds_drho)
    return float(loss), grad, m_raw


def resolve_pool_weight(cfg: TrainConfig, ds: ScreenDataset) -> float:
    if cfg.pool_weight != "auto":
        return float(cfg.pool_weight)
    n = len(ds)
    return (ds.N - n) / n if n else 1.0


def total_loss(p: Predictor, ds: ScreenDataset, library_samples, pool_weight: float = 1.0, sort_gate: int = 0) -> float:
    """Full-data pooled loss; equals ``loss_xy`` when every cell was sequenced."""
    batch = dataset_batch(p, ds)
    return loss_xy(p, batch) + pool_weight * loss_y(
        p, ds.pool_counts, ds.measured_counts, library_samples, sort_gate
    )


def dataset_batch(p: Predictor, ds: ScreenDataset) -> Batch:
    if p.head == "negbin":
        if ds.counts is None:
            raise ValueError("negbin head needs a dataset with counts")
        return Batch(ds.sequences, ds.counts)
    return Batch(ds.sequences, ds.y)


class _Adam:
    def __init__(self, dim, lr, betas, eps):
        self.lr, (self.b1, self.b2), self.eps = lr, betas, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _SGD:
    def __init__(self, dim, lr, *_):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * grad


@dataclass
class History:
    epoch: list = field(default_factory=list)
    loss_xy: list = field(default_factory=list)
    loss_y: list = field(default_factory=list)
    m_hat: list = field(default_factory=list)

    def append(self, epoch, lxy, ly, m):
        self.epoch.append(epoch)
        self.loss_xy.append(lxy)
        self.loss_y.append(ly)
        self.m_hat.append(m)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss_xy", "loss_y", "m_hat"])
            for row in zip(self.epoch, self.loss_xy, self.loss_y, self.m_hat):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])

    @classmethod
    def from_csv(cls, path) -> "History":
        h = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                h.append(int(r["epoch"]), float(r["loss_xy"]), float(r["loss_y"]), float(r["m_hat"]))
        return h


def train(
    ds: ScreenDataset,
    architecture: dict,
    head: str,
    cfg: TrainConfig,
    dist: SequenceDistribution,
    init: Optional[Predictor] = None,
) -> tuple[Predictor, History]:
    """Minibatch first-order training; deterministic given ``cfg.seed``."""
    n = len(ds)
    if n == 0 and ds.N == 0:
        raise ValueError("dataset has neither measured cells nor pool counts")
    ss_init, ss_shuffle, ss_library = np.random.SeedSequence(cfg.seed).spawn(3)
    p = init if init is not None else init_predictor(architecture, head, dist.length, dist.alphabet, ss_init)
    history = History()
    if cfg.epochs <= 0:
        return p, history

    use_pool = cfg.objective == "leavs" and ds.N > n
    weight = resolve_pool_weight(cfg, ds) if use_pool else 0.0
    full = dataset_batch(p, ds) if n else Batch(np.zeros((0, dist.length), dtype=np.int64), np.zeros(0))
    bs = n if not cfg.batch_size or cfg.batch_size >= n else cfg.batch_size
    opt_cls = _Adam if cfg.optimizer == "adam" else _SGD
    opt = opt_cls(p.dim, cfg.learning_rate, cfg.betas, cfg.eps)
    shuffle_rng = np.random.default_rng(ss_shuffle)
    library_rng = np.random.default_rng(ss_library)
    theta = p.theta.copy()

    for epoch in range(1, cfg.epochs + 1):
        order = shuffle_rng.permutation(n)
        starts = range(0, n, bs) if n else [0]
        sums = np.zeros(3)
        for start in starts:
            p = p.with_theta(theta)
            idx = order[start : start + bs]
            lxy, g = _loss_xy_grad(p, Batch(full.sequences[idx], full.targets[idx]))
            ly, m = 0.0, float("nan")
            if use_pool:
                xs = _sample_with_rng(dist, cfg.M, library_rng)
                ly, g_y, m = _loss_y_grad(p, ds.pool_counts, ds.measured_counts, xs, cfg.sort_gate)
                g = g + weight * g_y
            if not (np.isfinite(lxy) and np.isfinite(ly) and np.all(np.isfinite(g))):
                raise NonFiniteLoss(f"non-finite loss or gradient at epoch {epoch} (loss_xy={lxy}, loss_y={ly})")
            theta = opt.step(theta, g)
            sums += (lxy, ly, m)
        history.append(epoch, *(sums / len(starts)))
    return p.with_theta(theta), history


def save_train_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=1)


def load_train_config(path) -> TrainConfig:
    with open(path) as fh:
        return TrainConfig(**json.load(fh))
