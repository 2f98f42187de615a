"""Parametric activity models p_theta(y | x) with analytic gradients.

Every model maps a batch of index-encoded sequences to one real output per
sequence, ``f(x)``. The head turns that output into a distribution:

* ``bernoulli``: p(y=1 | x) = sigmoid(f(x));
* ``negbin``: counts with mean exp(f(x)) and one global dispersion
  exp(rho), where rho is the last entry of the parameter vector.

Parameters live in one flat vector ``theta`` so optimisers and finite
difference checks can treat all architectures alike.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import expit

from . import negbin
from .errors import HeadTargetMismatch, LengthMismatch, WrongHead
from .seqmodel import encode

PROB_CLAMP = 1e-12
HEADS = ("bernoulli", "negbin")


def _one_hot(xs: np.ndarray, n_tokens: int) -> np.ndarray:
    n, length = xs.shape
    out = np.zeros((n, length * n_tokens))
    out[np.arange(n)[:, None], np.arange(length) * n_tokens + xs] = 1.0
    return out


class _Linear:
    def __init__(self, length, n_tokens, **_):
        self.length, self.n_tokens = length, n_tokens
        self.n_params = length * n_tokens + 1

    def init(self, rng):
        theta = rng.uniform(-0.05, 0.05, self.n_params)
        theta[-1] = 0.0
        return theta

    def forward(self, theta, xs):
        w, b = theta[:-1], theta[-1]
        # Gather instead of a one-hot product: f = b + sum_l W[l, x_l].
        flat = np.arange(self.length) * self.n_tokens + xs
        return w[flat].sum(axis=1) + b, flat

    def backward(self, theta, cache, df):
        flat = cache
        grad = np.empty(self.n_params)
        grad[:-1] = np.bincount(
            flat.ravel(), weights=np.repeat(df, self.length), minlength=self.n_params - 1
        )
        grad[-1] = df.sum()
        return grad


class _MLP:
    def __init__(self, length, n_tokens, hidden=(32,), **_):
        self.length, self.n_tokens = length, n_tokens
        self.sizes = [length * n_tokens, *[int(h) for h in hidden], 1]
        self.n_params = sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def _unpack(self, theta):
        layers, i = [], 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[i : i + a * b].reshape(a, b)
            i += a * b
            layers.append((W, theta[i : i + b]))
            i += b
        return layers

    def init(self, rng):
        theta = np.zeros(self.n_params)
        i = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            theta[i : i + a * b] = rng.uniform(-0.05, 0.05, a * b)
            i += a * b + b
        return theta

    def forward(self, theta, xs):
        layers = self._unpack(theta)
        h = _one_hot(xs, self.n_tokens)
        acts = [h]
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = layers[-1]
        return (h @ W + b)[:, 0], acts

    def backward(self, theta, cache, df):
        layers = self._unpack(theta)
        acts = cache
        grads = []
        delta = df[:, None]
        for k in range(len(layers) - 1, -1, -1):
            W, _ = layers[k]
            grads.append((acts[k].T @ delta, delta.sum(axis=0)))
            if k:
                delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in reversed(grads)])


class _Conv:
    """Token embedding, one valid 1-D convolution with tanh, mean pool, linear readout."""

    def __init__(self, length, n_tokens, channels=32, embed=16, kernel=5, **_):
        if kernel > length:
            raise ValueError("kernel wider than the sequence")
        self.length, self.n_tokens = length, n_tokens
        self.C, self.D, self.K = int(channels), int(embed), int(kernel)
        self.P = length - self.K + 1
        self.shapes = [
            (n_tokens, self.D),
            (self.K * self.D, self.C),
            (self.C,),
            (self.C,),
            (1,),
        ]
        self.n_params = sum(int(np.prod(s)) for s in self.shapes)

    def _unpack(self, theta):
        out, i = [], 0
        for s in self.shapes:
            size = int(np.prod(s))
            out.append(theta[i : i + size].reshape(s))
            i += size
        return out

    def init(self, rng):
        E, Wc, bc, wo, bo = (np.zeros(s) for s in self.shapes)
        E[:] = rng.uniform(-0.05, 0.05, E.shape)
        Wc[:] = rng.uniform(-0.05, 0.05, Wc.shape)
        wo[:] = rng.uniform(-0.05, 0.05, wo.shape)
        return np.concatenate([a.ravel() for a in (E, Wc, bc, wo, bo)])

    def _windows(self, e):
        idx = np.arange(self.P)[:, None] + np.arange(self.K)[None, :]
        return e[:, idx, :].reshape(e.shape[0], self.P, self.K * self.D)

    def forward(self, theta, xs):
        E, Wc, bc, wo, bo = self._unpack(theta)
        win = self._windows(E[xs])
        a = np.tanh(win @ Wc + bc)
        pooled = a.mean(axis=1)
        return pooled @ wo + bo[0], (xs, win, a, pooled)

    def backward(self, theta, cache, df):
        E, Wc, bc, wo, bo = self._unpack(theta)
        xs, win, a, pooled = cache
        n = len(xs)
        g_wo = pooled.T @ df
        g_bo = np.array([df.sum()])
        dz = (df[:, None, None] * wo[None, None, :] / self.P) * (1.0 - a**2)
        g_Wc = win.reshape(-1, self.K * self.D).T @ dz.reshape(-1, self.C)
        g_bc = dz.sum(axis=(0, 1))
        dwin = (dz @ Wc.T).reshape(n, self.P, self.K, self.D)
        de = np.zeros((n, self.length, self.D))
        for j in range(self.P):
            de[:, j : j + self.K] += dwin[:, j]
        g_E = np.zeros_like(E)
        np.add.at(g_E, xs.ravel(), de.reshape(-1, self.D))
        return np.concatenate([g.ravel() for g in (g_E, g_Wc, g_bc, g_wo, g_bo)])


_ARCHS = {"linear": _Linear, "mlp": _MLP, "conv": _Conv}


def _build(arch: dict, length: int, n_tokens: int):
    kind = arch.get("kind")
    if kind not in _ARCHS:
        raise ValueError(f"unknown architecture {kind!r}; expected one of {sorted(_ARCHS)}")
    opts = {k: v for k, v in arch.items() if k != "kind"}
    return _ARCHS[kind](length, n_tokens, **opts)


@dataclass
class Predictor:
    architecture: dict
    head: str
    theta: np.ndarray
    length: int
    alphabet: str
    _net: object = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}")
        self.theta = np.asarray(self.theta, dtype=float)
        self._net = _build(self.architecture, self.length, len(self.alphabet))
        if self.theta.shape != (self.dim,):
            raise ValueError(f"theta has shape {self.theta.shape}, expected ({self.dim},)")

    @property
    def dim(self) -> int:
        return self._net.n_params + (self.head == "negbin")

    @property
    def log_dispersion(self) -> float:
        if self.head != "negbin":
            raise WrongHead("only the negbin head has a dispersion")
        return float(self.theta[-1])

    def with_theta(self, theta) -> "Predictor":
        return Predictor(dict(self.architecture), self.head, np.array(theta, dtype=float), self.length, self.alphabet)

    def _net_theta(self):
        return self.theta[:-1] if self.head == "negbin" else self.theta

    def _check(self, xs):
        xs = np.asarray(xs, dtype=np.int64)
        if xs.ndim == 1:
            xs = xs[None, :]
        if xs.shape[1] != self.length:
            raise LengthMismatch(f"sequence length {xs.shape[1]} != model length {self.length}")
        return xs

    def raw(self, xs) -> np.ndarray:
        """Network output f(x): a logit for bernoulli, a log-mean for negbin."""
        return self._net.forward(self._net_theta(), self._check(xs))[0]

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "head": self.head,
            "length": self.length,
            "alphabet": self.alphabet,
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Predictor":
        return cls(d["architecture"], d["head"], np.asarray(d["theta"], dtype=float), int(d["length"]), d["alphabet"])


def init_predictor(architecture: dict, head: str, length: int, alphabet: str, seed) -> Predictor:
    """Weights uniform on (-0.05, 0.05), biases zero; the negbin log-dispersion starts at 0."""
    net = _build(architecture, length, len(alphabet))
    theta = net.init(np.random.default_rng(seed))
    if head == "negbin":
        theta = np.append(theta, 0.0)
    return Predictor(dict(architecture), head, theta, length, alphabet)


def save_predictor(p: Predictor, path) -> None:
    Path(path).write_text(json.dumps(p.to_dict()))


def load_predictor(path) -> Predictor:
    return Predictor.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Batch:
    sequences: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.sequences = np.asarray(self.sequences, dtype=np.int64)
        self.targets = np.asarray(self.targets)
        if self.sequences.ndim == 1 and len(self.targets) == 0:
            self.sequences = self.sequences.reshape(0, 0)
        if len(self.sequences) != len(self.targets):
            raise ValueError("sequences and targets differ in length")

    def __len__(self):
        return len(self.targets)


def _as_batch_x(p: Predictor, x):
    if isinstance(x, str):
        x = encode(x, p.alphabet)
    return np.asarray(x, dtype=np.int64)


def predict(p: Predictor, x):
    """P(y=1|x) for bernoulli, E[y|x] for negbin. Vectorised over a 2-D batch."""
    xs = _as_batch_x(p, x)
    f = p.raw(xs)
    out = expit(f) if p.head == "bernoulli" else np.exp(f)
    return float(out[0]) if xs.ndim == 1 else out


def _check_targets(p: Predictor, y):
    y = np.asarray(y)
    if p.head == "bernoulli":
        if y.size and not np.all((y == 0) | (y == 1)):
            raise HeadTargetMismatch("bernoulli head needs 0/1 targets")
    else:
        if y.size and (np.any(y < 0) or np.any(y != np.round(y))):
            raise HeadTargetMismatch("negbin head needs nonnegative integer counts")
    return y.astype(float)


def _terms(p: Predictor, batch: Batch, want_grad: bool):
    """Per-example log-likelihoods, plus d/d f and d/d rho when asked."""
    y = _check_targets(p, batch.targets)
    xs = p._check(batch.sequences)
    f, cache = p._net.forward(p._net_theta(), xs)
    if p.head == "bernoulli":
        s = expit(f)
        s_c = np.clip(s, PROB_CLAMP, 1.0 - PROB_CLAMP)
        ll = y * np.log(s_c) + (1.0 - y) * np.log1p(-s_c)
        # Derivative of the clamped objective: flat wherever the clamp binds.
        df = np.where((s > PROB_CLAMP) & (s < 1.0 - PROB_CLAMP), y - s, 0.0) if want_grad else None
        return ll, df, None, cache
    mu, phi = np.exp(f), np.exp(p.theta[-1])
    ll = negbin.logpmf(y, mu, phi)
    if not want_grad:
        return ll, None, None, cache
    d_mu, d_rho = negbin.score(y, mu, phi)
    return ll, d_mu, d_rho, cache


def log_likelihood(p: Predictor, batch: Batch) -> float:
    if len(batch) == 0:
        return 0.0
    return float(_terms(p, batch, False)[0].sum())


def gradient(p: Predictor, batch: Batch, weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact gradient of ``log_likelihood`` (optionally per-example weighted) w.r.t. theta."""
    if len(batch) == 0:
        return np.zeros(p.dim)
    _, df, d_rho, cache = _terms(p, batch, True)
    if weights is not None:
        df = df * weights
        d_rho = None if d_rho is None else d_rho * weights
    return _backprop(p, cache, df, d_rho)


def _backprop(p: Predictor, cache, df, d_rho=None) -> np.ndarray:
    g = p._net.backward(p._net_theta(), cache, np.asarray(df, dtype=float))
    if p.head == "negbin":
        g = np.append(g, 0.0 if d_rho is None else float(np.sum(d_rho)))
    return g


def tail_probability(p: Predictor, x, tau: int):
    """Pr_theta(Y > tau | x) for the negbin head, by summing the pmf over 0..tau."""
    if p.head != "negbin":
        raise WrongHead("tail_probability needs the negbin head; use predict for bernoulli")
    xs = _as_batch_x(p, x)
    out = tail_probabilities(p, xs if xs.ndim == 2 else xs[None, :], tau)
    return float(out[0]) if xs.ndim == 1 else out


def tail_probabilities(p: Predictor, xs, tau: int, with_grad: bool = False):
    if p.head != "negbin":
        raise WrongHead("tail probabilities need the negbin head")
    if tau < 0:
        raise ValueError("tau must be a nonnegative integer")
    xs = p._check(xs)
    f, cache = p._net.forward(p._net_theta(), xs)
    mu, phi = np.exp(f), np.exp(p.theta[-1])
    ks = np.arange(tau + 1)
    pmf = np.exp(negbin.logpmf(ks[None, :], mu[:, None], phi))
    tail = np.clip(1.0 - pmf.sum(axis=1), 0.0, 1.0)
    if not with_grad:
        return tail
    d_mu, d_rho = negbin.score(ks[None, :], mu[:, None], phi)
    dtail_df = -(pmf * d_mu).sum(axis=1)
    dtail_drho = -(pmf * d_rho).sum(axis=1)
    return tail, (cache, dtail_df, dtail_drho)
