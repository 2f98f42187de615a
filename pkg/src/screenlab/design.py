"""Choosing the allocation q by D-optimality.

For a sparse family, activity is identically zero outside a region S of
sequence space. Asymptotically the posterior over theta at allocation q is
Gaussian with precision

    H_q = q * I_1 + (1 - q) * p(S | y=0) * I_0,

where I_y is the expected negative Hessian of log p_theta(y | x) over
p(x | S, y) at the true parameter. Negatives outside S carry no information
because the model says p(y=0 | x) = 1 there for every theta. Maximising
det H_q minimises the entropy of that Gaussian.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, DomainError, TooFewActiveSamples
from .seqmodel import SequenceDistribution, sample_sequences

HIT_RATE_CUTOFF = 0.25


class SingularHessian(UserWarning):
    pass


@dataclass
class SparseFamily:
    """A model family whose predicted activity vanishes outside its active region.

    Attributes:
        prob: ``prob(theta, xs)`` gives p_theta(y=1 | x) for each row of ``xs``.
        in_region: ``in_region(theta, xs)`` is the membership test for S_theta.
        theta0: the true parameter.
        hessian: optional analytic ``hessian(theta, xs, y) -> (n, d, d)`` of
            log p_theta(y | x); central differences are used otherwise.
    """

    prob: Callable[[np.ndarray, np.ndarray], np.ndarray]
    in_region: Callable[[np.ndarray, np.ndarray], np.ndarray]
    theta0: np.ndarray
    hessian: Optional[Callable] = None

    def __post_init__(self):
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.theta0)


def _log_lik(fam: SparseFamily, theta, xs, y):
    p1 = np.clip(fam.prob(theta, xs), 0.0, 1.0)
    with np.errstate(divide="ignore"):
        return np.where(y == 1, np.log(p1), np.log1p(-p1))


def fd_hessians(fam: SparseFamily, xs, y, step: float = 1e-4) -> np.ndarray:
    """Per-sample Hessians of log p_theta(y|x) at theta0 by central differences, symmetrised."""
    d, t0 = fam.dim, fam.theta0
    H = np.zeros((len(xs), d, d))
    f0 = _log_lik(fam, t0, xs, y)
    E = np.eye(d) * step
    for i in range(d):
        fp, fm = _log_lik(fam, t0 + E[i], xs, y), _log_lik(fam, t0 - E[i], xs, y)
        H[:, i, i] = (fp - 2 * f0 + fm) / step**2
        for j in range(i + 1, d):
            fpp = _log_lik(fam, t0 + E[i] + E[j], xs, y)
            fpm = _log_lik(fam, t0 + E[i] - E[j], xs, y)
            fmp = _log_lik(fam, t0 - E[i] + E[j], xs, y)
            fmm = _log_lik(fam, t0 - E[i] - E[j], xs, y)
            H[:, i, j] = H[:, j, i] = (fpp - fpm - fmp + fmm) / (4 * step**2)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


@dataclass
class InformationEstimate:
    """Monte Carlo estimates with batch-means standard errors."""

    I0: np.ndarray
    I1: np.ndarray
    eta: float
    p_S0_given_y0: float
    I0_se: Optional[np.ndarray] = None
    I1_se: Optional[np.ndarray] = None
    eta_se: float = 0.0
    p_S0_given_y0_se: float = 0.0
    batches: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.I0 = np.atleast_2d(np.asarray(self.I0, dtype=float))
        self.I1 = np.atleast_2d(np.asarray(self.I1, dtype=float))
        if self.I0_se is None:
            self.I0_se = np.zeros_like(self.I0)
        if self.I1_se is None:
            self.I1_se = np.zeros_like(self.I1)

    @property
    def dim(self) -> int:
        return self.I0.shape[0]


def _weighted_information(H, w):
    total = w.sum()
    if total <= 0:
        return None
    return -np.einsum("n,nij->ij", w, H) / total


def information_matrices(
    fam: SparseFamily,
    dist,
    M: int,
    seed,
    min_active: int = 100,
    step: float = 1e-4,
    n_batches: int = 20,
) -> InformationEstimate:
    """Estimate I_0, I_1, eta and p(S|y=0) from M library samples.

    Conditional expectations over p(x | S, y) use self-normalised weights
    p_theta0(y | x) * 1[x in S] on library draws. ``dist`` is a
    SequenceDistribution or a sampler ``dist(M, rng) -> xs``.
    """
    if isinstance(dist, SequenceDistribution):
        xs = sample_sequences(dist, M, seed)
    else:
        xs = np.asarray(dist(M, np.random.default_rng(seed)))
    in_s = np.asarray(fam.in_region(fam.theta0, xs), dtype=bool)
    if in_s.sum() < min_active:
        raise TooFewActiveSamples(f"only {in_s.sum()} of {M} samples fall in the active region")
    p1 = np.asarray(fam.prob(fam.theta0, xs), dtype=float)
    xs_s, p1_s = xs[in_s], p1[in_s]
    hess = fam.hessian or (lambda th, x, y: fd_hessians(fam, x, y, step))

    w1, w0 = p1_s, 1.0 - p1_s
    if w1.sum() <= 0:
        raise TooFewActiveSamples("no positive weight inside the active region (I_1 undefined)")
    if w0.sum() <= 0:
        raise TooFewActiveSamples("no negative weight inside the active region (I_0 undefined)")
    H1 = hess(fam.theta0, xs_s, np.ones(len(xs_s), dtype=np.int64))
    keep0 = w0 > 0
    H0 = np.zeros_like(H1)
    H0[keep0] = hess(fam.theta0, xs_s[keep0], np.zeros(keep0.sum(), dtype=np.int64))

    def stats(sel_all, sel_s):
        return (
            _weighted_information(H0[sel_s], w0[sel_s]),
            _weighted_information(H1[sel_s], w1[sel_s]),
            in_s[sel_all].mean(),
            (1.0 - p1[sel_all])[in_s[sel_all]].sum() / (1.0 - p1[sel_all]).sum(),
        )

    I0, I1, eta, ps0 = stats(np.ones(M, dtype=bool), np.ones(len(xs_s), dtype=bool))
    # Batch means over contiguous blocks of the sample for standard errors.
    block = np.arange(M) * n_batches // M
    block_s = block[in_s]
    reps = [stats(block == b, block_s == b) for b in range(n_batches)]
    reps = [r for r in reps if r[0] is not None and r[1] is not None]
    k = len(reps)

    def se(vals):
        vals = np.asarray(vals, dtype=float)
        return vals.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.full(vals.shape[1:], np.nan)

    for name, mat, err in (("I0", I0, se([r[0] for r in reps])), ("I1", I1, se([r[1] for r in reps]))):
        if np.linalg.det(mat) <= 3.0 * float(np.linalg.norm(err)) * max(1.0, float(np.linalg.norm(mat))) ** (len(mat) - 1):
            warnings.warn(f"{name} may be singular within Monte Carlo error", SingularHessian, stacklevel=2)

    return InformationEstimate(
        I0=I0,
        I1=I1,
        eta=float(eta),
        p_S0_given_y0=float(ps0),
        I0_se=se([r[0] for r in reps]),
        I1_se=se([r[1] for r in reps]),
        eta_se=float(se([r[2] for r in reps])),
        p_S0_given_y0_se=float(se([r[3] for r in reps])),
        batches={"I0": [r[0] for r in reps], "I1": [r[1] for r in reps], "p_S0_given_y0": [r[3] for r in reps]},
    )


def asymptotic_precision(q: float, I0, I1, p_S0_given_y0: float) -> np.ndarray:
    I0, I1 = np.atleast_2d(np.asarray(I0, dtype=float)), np.atleast_2d(np.asarray(I1, dtype=float))
    if I0.shape != I1.shape or I0.shape[0] != I0.shape[1]:
        raise DimensionMismatch(f"information matrices have shapes {I0.shape} and {I1.shape}")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return q * I1 + (1.0 - q) * p_S0_given_y0 * I0


def default_q_grid(hit_rate: Optional[float] = None) -> np.ndarray:
    grid = np.round(np.linspace(0.0, 1.0, 21), 10)
    if hit_rate is not None:
        grid = np.union1d(grid, [hit_rate])
    return grid


def det_curve(I0, I1, p_S0_given_y0, grid) -> np.ndarray:
    return np.array([np.linalg.det(asymptotic_precision(q, I0, I1, p_S0_given_y0)) for q in grid])


def optimal_q(I0, I1, p_S0_given_y0, grid=None) -> tuple[float, np.ndarray]:
    """Grid argmax of det H_q; ties go to the larger q."""
    grid = default_q_grid() if grid is None else np.sort(np.asarray(grid, dtype=float))
    dets = det_curve(I0, I1, p_S0_given_y0, grid)
    best = np.flatnonzero(dets == dets.max())[-1]
    return float(grid[best]), dets


def condition_value(I0, I1, eta: float) -> float:
    """det(I_1 - eta/(1-eta) I_0); positive means q = 1 is D-optimal."""
    I0, I1 = np.atleast_2d(I0), np.atleast_2d(I1)
    return float(np.linalg.det(I1 - eta / (1.0 - eta) * I0))


def definiteness(matrix, se=None, z: float = 3.0) -> str:
    """'definite', 'indefinite' or 'inconclusive' given elementwise standard errors.

    The smallest eigenvalue is compared against ``z`` times a bound on its
    perturbation (spectral norm of the error matrix, bounded by Frobenius).
    """
    matrix = np.atleast_2d(matrix)
    lam = np.linalg.eigvalsh(0.5 * (matrix + matrix.T)).min()
    err = 0.0 if se is None else float(np.linalg.norm(np.atleast_2d(se)))
    if lam > z * err:
        return "definite"
    if lam < -z * err:
        return "indefinite"
    return "inconclusive"


@dataclass
class Recommendation:
    q: float
    fallback: bool
    reason: str


def recommend_allocation(observed_hit_rate: float) -> Recommendation:
    """Sequence only positives when the observed hit rate is below 25%.

    Above the cutoff no allocation is clearly better, so fall back to a
    representative sample (q equal to the hit rate), under which plain
    cross-entropy training is also consistent.
    """
    if not 0.0 <= observed_hit_rate <= 1.0:
        raise ValueError("hit rate must lie in [0, 1]")
    if observed_hit_rate < HIT_RATE_CUTOFF:
        return Recommendation(1.0, False, "hit rate below 0.25: sequence positives only")
    return Recommendation(float(observed_hit_rate), True, "hit rate at or above 0.25: representative sampling")


def info_gain_bound(p1: float, d: int) -> tuple[float, float]:
    """Back-of-envelope nats gained by q=1 over q=p1, and the equivalent sample-size factor."""
    if d < 1:
        raise ValueError("d must be a positive integer")
    if not 0.0 < p1 or 3.0 * p1 >= 1.0:
        raise DomainError("the bound needs 0 < p1 < 1/3")
    return -0.5 * d * np.log(3.0 * p1), 1.0 / (3.0 * p1)


@dataclass
class DesignReport:
    I0: np.ndarray
    I1: np.ndarray
    eta: float
    p_S0_given_y0: float
    q_grid: np.ndarray
    det_Hq: np.ndarray
    det_Hq_se: np.ndarray
    condition_value: float
    condition_verdict: str
    recommended_q: float
    fallback: bool
    info_gain_bound_nats: Optional[float]
    sample_size_multiplier: Optional[float]
    hit_rate: Optional[float] = None

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "DesignReport":
        with open(path) as fh:
            d = json.load(fh)
        for k in ("I0", "I1", "q_grid", "det_Hq", "det_Hq_se"):
            d[k] = np.asarray(d[k], dtype=float)
        return cls(**d)

    def save_det_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["q", "det_Hq", "det_Hq_se"])
            for row in zip(self.q_grid, self.det_Hq, self.det_Hq_se):
                w.writerow([repr(float(v)) for v in row])


def det_standard_errors(info: InformationEstimate, grid) -> np.ndarray:
    """Batch-means standard error of det H_q at each grid point."""
    b = info.batches
    if not b:
        return np.full(len(grid), np.nan)
    reps = np.array([det_curve(I0, I1, ps, grid) for I0, I1, ps in zip(b["I0"], b["I1"], b["p_S0_given_y0"])])
    return reps.std(axis=0, ddof=1) / np.sqrt(len(reps))


def design_report(info: InformationEstimate, hit_rate: Optional[float] = None, grid=None) -> DesignReport:
    grid = default_q_grid(hit_rate) if grid is None else np.asarray(grid, dtype=float)
    q_star, dets = optimal_q(info.I0, info.I1, info.p_S0_given_y0, grid)
    cond_matrix = np.atleast_2d(info.I1 - info.eta / (1 - info.eta) * info.I0)
    cond_se = np.sqrt(info.I1_se**2 + (info.eta / (1 - info.eta) * info.I0_se) ** 2)
    if hit_rate is not None:
        rec = recommend_allocation(hit_rate)
        rec_q, fallback = rec.q, rec.fallback
    else:
        rec_q, fallback = q_star, False
    bound = mult = None
    if hit_rate is not None and 0 < hit_rate < 1 / 3:
        bound, mult = info_gain_bound(hit_rate, info.dim)
    return DesignReport(
        I0=info.I0,
        I1=info.I1,
        eta=info.eta,
        p_S0_given_y0=info.p_S0_given_y0,
        q_grid=grid,
        det_Hq=dets,
        det_Hq_se=det_standard_errors(info, grid),
        condition_value=condition_value(info.I0, info.I1, info.eta),
        condition_verdict=definiteness(cond_matrix, cond_se),
        recommended_q=rec_q,
        fallback=fallback,
        info_gain_bound_nats=bound,
        sample_size_multiplier=mult,
        hit_rate=hit_rate,
    )
