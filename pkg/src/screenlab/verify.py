"""Numerical checks of the asymptotic theory on a toy sparse family.

The toy space is every length-3 string over five tokens (125 sequences),
so likelihoods, conditionals and predictive distances are computed exactly
by enumeration. Activity lives on the region S = {x : x[0] == 'A'}:

    p(y=1 | x) = 1[x in S] * sigmoid(c + theta . phi(x))

with features phi built from the last two positions. In the constrained
parameterisation the level c is not free; it is solved per theta so that the
marginal hit rate equals the true one, which is what an infinitely large
sorted pool pins down.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit

from .design import InformationEstimate, SparseFamily, asymptotic_precision, fd_hessians
from .errors import GridTooCoarse, OptimizationFailure, SingularPrecision
from .seqmodel import SequenceDistribution, enumerate_space

TOY_ALPHABET = "ABCDE"
FEATURE_WEIGHTS = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
LEVEL_BOUND = 30.0
THETA_BOUND = 10.0


def _solve_level(z, w, target, iters=80):
    """Vectorised root of sum_j w_j sigmoid(c + z_ij) = target for each row i."""
    lo = np.full(len(z), -60.0)
    hi = np.full(len(z), 60.0)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        over = (expit(mid[:, None] + z) @ w) > target
        hi = np.where(over, mid, hi)
        lo = np.where(over, lo, mid)
    c = 0.5 * (lo + hi)
    for _ in range(2):
        s = expit(c[:, None] + z)
        c = c - (s @ w - target) / np.maximum((s * (1 - s)) @ w, 1e-300)
    return c


@dataclass
class SmoothSparseFamily1D:
    """Logistic activity on a fixed region of the 5^3 toy space.

    ``d`` is 1 (phi = w[x1] + w[x2]) or 2 (phi = (w[x1], w[x2])).
    """

    eta: float = 0.5
    level0: float = -1.5
    theta0: np.ndarray = field(default_factory=lambda: np.array([1.0]))

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if self.d not in (1, 2):
            raise ValueError("the toy family has one or two parameters")
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        first = np.full(5, (1.0 - self.eta) / 4)
        first[0] = self.eta
        self.dist = SequenceDistribution(TOY_ALPHABET, np.vstack([first, np.full((2, 5), 0.2)]))
        self.xs, self.px = enumerate_space(self.dist)
        self.in_s = self.xs[:, 0] == 0
        self.phi = self.features(self.xs)
        self.p_true = self.prob_free(self.level0, self.theta0, self.xs)
        self.p1 = float(self.px @ self.p_true)
        self._w_s = self.px[self.in_s] / self.px[self.in_s].sum()

    @property
    def d(self) -> int:
        return len(self.theta0)

    def features(self, xs) -> np.ndarray:
        xs = np.asarray(xs)
        a, b = FEATURE_WEIGHTS[xs[:, 1]], FEATURE_WEIGHTS[xs[:, 2]]
        return (a + b)[:, None] if self.d == 1 else np.stack([a, b], axis=1)

    def in_region(self, theta, xs) -> np.ndarray:
        return np.asarray(xs)[:, 0] == 0

    def prob_free(self, level, theta, xs) -> np.ndarray:
        xs = np.asarray(xs)
        return np.where(xs[:, 0] == 0, expit(level + self.features(xs) @ np.atleast_1d(theta)), 0.0)

    def level(self, thetas) -> np.ndarray:
        """Constrained level c(theta) for each row of ``thetas`` (shape (G, d))."""
        thetas = np.atleast_2d(thetas)
        z = thetas @ self.phi[self.in_s].T
        return _solve_level(z, self._w_s, self.p1 / self.eta)

    def prob(self, theta, xs) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return self.prob_free(self.level(theta[None, :])[0], theta, xs)

    def sparse_family(self) -> SparseFamily:
        return SparseFamily(self.prob, self.in_region, self.theta0)

    def predictive_tv(self, p_hat) -> float:
        """E_{p(x)} |p_hat(y=1|x) - p(y=1|x)| over the enumerated space."""
        return float(self.px @ np.abs(np.asarray(p_hat) - self.p_true))

    def sample_counts(self, n, q, rng):
        """Counts (n1, n0) per enumerated sequence: round(nq) positives and the rest negatives."""
        n_pos = int(round(n * q))
        post1 = self.px * self.p_true
        post0 = self.px * (1.0 - self.p_true)
        n1 = rng.multinomial(n_pos, post1 / post1.sum())
        n0 = rng.multinomial(n - n_pos, post0 / post0.sum()) if n > n_pos else np.zeros(len(self.px), dtype=np.int64)
        return n1, n0


def exact_information(fam: SmoothSparseFamily1D) -> InformationEstimate:
    """I_0, I_1, eta and p(S|y=0) of the constrained family, by enumeration."""
    sf = fam.sparse_family()
    s = fam.in_s
    xs, w, p = fam.xs[s], fam.px[s], fam.p_true[s]
    H1 = fd_hessians(sf, xs, np.ones(len(xs), dtype=np.int64))
    H0 = fd_hessians(sf, xs, np.zeros(len(xs), dtype=np.int64))
    I1 = -np.einsum("n,nij->ij", w * p, H1) / (w * p).sum()
    I0 = -np.einsum("n,nij->ij", w * (1 - p), H0) / (w * (1 - p)).sum()
    ps0 = (w * (1 - p)).sum() / (fam.px * (1 - fam.p_true)).sum()
    return InformationEstimate(I0=I0, I1=I1, eta=fam.eta, p_S0_given_y0=float(ps0))


# --- likelihoods on count tables -----------------------------------------------------


def _xy_loglik(fam, level, theta, n1, n0):
    s = fam.in_s
    z = level + fam.phi[s] @ theta
    return float(n1[s] @ log_expit(z) + n0[s] @ log_expit(-z))


def _objective(fam, objective, n1, n0, pool_weight):
    n = max(int(n1.sum() + n0.sum()), 1)
    if objective == "leavs":

        def f(v):
            theta = v
            return -_xy_loglik(fam, fam.level(theta[None, :])[0], theta, n1, n0) / n

        return f, fam.d
    if objective == "leavs-soft":
        p1 = fam.p1

        def f(v):
            level, theta = v[0], v[1:]
            m = float(fam.px @ fam.prob_free(level, theta, fam.xs))
            m = min(max(m, 1e-300), 1 - 1e-16)
            pool = p1 * np.log(m) + (1 - p1) * np.log1p(-m)
            return -_xy_loglik(fam, level, theta, n1, n0) / n - pool_weight * pool

        return f, fam.d + 1
    if objective == "xy-only":
        return (lambda v: -_xy_loglik(fam, v[0], v[1:], n1, n0) / n), fam.d + 1
    raise ValueError("objective must be 'leavs', 'leavs-soft' or 'xy-only'")


@dataclass
class Fit:
    theta: np.ndarray
    level: float
    p_hat: np.ndarray
    value: float


def fit(fam: SmoothSparseFamily1D, n1, n0, objective: str = "leavs", pool_weight: float = 1e4, tol: float = 1e-3) -> Fit:
    """Multi-start bounded maximum likelihood.

    Raises OptimizationFailure when near-optimal starts disagree on the
    predictive distribution by more than ``tol`` in TV.
    """
    f, k = _objective(fam, objective, np.asarray(n1), np.asarray(n0), pool_weight)
    free_level = k > fam.d
    t_starts = [np.full(fam.d, v) for v in (-2.0, 0.5, 3.0)]
    starts = [np.concatenate([[c], t]) for c in (-3.0, 0.0, 3.0) for t in t_starts] if free_level else t_starts
    bounds = ([(-LEVEL_BOUND, LEVEL_BOUND)] if free_level else []) + [(-THETA_BOUND, THETA_BOUND)] * fam.d
    fits = []
    for x0 in starts:
        res = minimize(f, x0, method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 2000})
        v = res.x
        level = v[0] if free_level else fam.level(v[None, :])[0]
        theta = v[1:] if free_level else v
        fits.append(Fit(theta, float(level), fam.prob_free(level, theta, fam.xs), float(res.fun)))
    best = min(fits, key=lambda r: r.value)
    for r in fits:
        if r.value - best.value <= 1e-7 * max(1.0, abs(best.value)):
            if float(fam.px @ np.abs(r.p_hat - best.p_hat)) > tol:
                raise OptimizationFailure("near-optimal starts disagree on the fitted predictive")
    return best


def mle_path(
    fam: SmoothSparseFamily1D,
    q: float,
    n_grid,
    objective: str = "leavs",
    seeds=(0,),
    pool_weight: float = 1e4,
) -> list[dict]:
    """Parameter error and predictive TV of the fitted model for each (seed, n)."""
    rows = []
    for seed in seeds:
        children = np.random.SeedSequence(seed).spawn(len(n_grid))
        for n, ss in zip(n_grid, children):
            n1, n0 = fam.sample_counts(int(n), q, np.random.default_rng(ss))
            r = fit(fam, n1, n0, objective, pool_weight)
            rows.append(
                {
                    "objective": objective,
                    "q": float(q),
                    "seed": int(seed),
                    "n": int(n),
                    "param_error": float(np.linalg.norm(r.theta - fam.theta0)),
                    "tv": fam.predictive_tv(r.p_hat),
                    "level_hat": r.level,
                    "theta_hat": [float(t) for t in r.theta],
                }
            )
    return rows


@dataclass
class PosteriorGrid:
    axes: list
    posterior: np.ndarray
    gaussian: np.ndarray
    map_theta: np.ndarray
    tv: float


def posterior_grid(fam: SmoothSparseFamily1D, n1, n0, box, grid_size: int = 401, precision=None) -> PosteriorGrid:
    """Flat-prior grid posterior of the constrained family against a Gaussian.

    The Gaussian is centred at the grid MAP with the given precision matrix
    (typically n * H_q). Both are normalised over the grid points.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    if box.shape != (fam.d, 2):
        raise ValueError(f"box must have shape ({fam.d}, 2)")
    axes = [np.linspace(lo, hi, grid_size) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    thetas = np.stack([m.ravel() for m in mesh], axis=1)
    s = fam.in_s
    z = thetas @ fam.phi[s].T + fam.level(thetas)[:, None]
    n1, n0 = np.asarray(n1)[s], np.asarray(n0)[s]
    logpost = log_expit(z) @ n1 + log_expit(-z) @ n0
    i_map = int(np.argmax(logpost))
    idx = np.unravel_index(i_map, mesh[0].shape)
    if any(i in (0, grid_size - 1) for i in idx):
        raise GridTooCoarse("posterior mode lies on the boundary of the prior box")
    post = np.exp(logpost - logpost[i_map])
    post /= post.sum()
    theta_map = thetas[i_map]
    out = PosteriorGrid(axes, post.reshape(mesh[0].shape), None, theta_map, float("nan"))
    if precision is not None:
        P = np.atleast_2d(precision)
        dev = thetas - theta_map
        g = np.exp(-0.5 * np.einsum("gi,ij,gj->g", dev, P, dev))
        g /= g.sum()
        out.gaussian = g.reshape(mesh[0].shape)
        out.tv = float(0.5 * np.abs(post - g).sum())
    return out


def entropy_gain(info, q_a: float, q_b: float) -> float:
    """Entropy of the asymptotic posterior at q_b minus that at q_a, in nats.

    ``info`` carries I0, I1 and p_S0_given_y0 (an InformationEstimate).
    """
    da = np.linalg.det(asymptotic_precision(q_a, info.I0, info.I1, info.p_S0_given_y0))
    db = np.linalg.det(asymptotic_precision(q_b, info.I0, info.I1, info.p_S0_given_y0))
    if da <= 0 or db <= 0:
        raise SingularPrecision(f"det H_q is not positive (q_a: {da}, q_b: {db})")
    return float(0.5 * np.log(da) - 0.5 * np.log(db))


def save_rows_csv(rows: list[dict], path, columns: Optional[list] = None) -> None:
    """Long-form CSV; list-valued fields are joined with ';'."""
    columns = columns or list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            out = []
            for c in columns:
                v = r[c]
                if isinstance(v, (list, tuple, np.ndarray)):
                    out.append(";".join(repr(float(t)) for t in v))
                elif isinstance(v, float):
                    out.append(repr(v))
                else:
                    out.append(v)
            w.writerow(out)


def load_rows_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
