"""Classifier evaluation from heldout positives, pool counts and library samples.

With only positive examples in hand, every population quantity a metric
needs factors into three estimable pieces:

* the hit rate p(y=1), from the sorted pool totals;
* expectations under p(x | y=1), from heldout positive sequences;
* expectations under p(x), from library samples.

For a decision rule t(x) = 1[score(x) > threshold],
``E[Y t(X)] = p(y=1) E[t(X) | Y=1]`` supplies true positives, and
``E[t(X)]`` comes from the library. Accuracy, precision, recall and the
histogram ECE are all ratios or sums of these terms. The ``true_*``
functions compute the same metrics from a fully labeled sample, as ground
truth for synthetic screens.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyPositives, EmptySamples
from .predictor import Predictor, predict, tail_probabilities

DEFAULT_GRID = np.linspace(0.0, 1.0, 101)
SCORE_CHUNK = 1 << 15


@dataclass
class EvalInputs:
    heldout_positives: np.ndarray
    pool_rate: float
    library_samples: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: DEFAULT_GRID.copy())
    K: int = 10

    def __post_init__(self):
        self.heldout_positives = np.asarray(self.heldout_positives)
        self.library_samples = np.asarray(self.library_samples)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if not 0.0 <= self.pool_rate <= 1.0:
            raise ValueError("pool_rate must lie in [0, 1]")
        if self.K < 2:
            raise ValueError("K must be at least 2")
        if np.any(np.diff(self.thresholds) < 0):
            raise ValueError("thresholds must be sorted")
        if len(self.library_samples) == 0:
            raise EmptySamples("need library samples")
        if len(self.heldout_positives) == 0 and self.pool_rate > 0:
            raise EmptyPositives("no heldout positives but a nonzero hit rate")

    @property
    def n_positives(self) -> int:
        return len(self.heldout_positives)

    @classmethod
    def from_pool(cls, heldout_positives, pool_counts, library_samples, **kw) -> "EvalInputs":
        N_pos, N_neg = pool_counts
        return cls(heldout_positives, N_pos / (N_pos + N_neg), library_samples, **kw)


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    clipped: np.ndarray

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            for row in zip(self.thresholds, self.precision, self.recall):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "PRCurve":
        with open(path, newline="") as fh:
            rows = [[float(v) for v in r.values()] for r in csv.DictReader(fh)]
        arr = np.array(rows).reshape(-1, 3)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], np.zeros(len(arr), dtype=bool))


@dataclass
class EvalReport:
    accuracy_est: float
    auprc_est: float
    ece_est: float
    curve_est: PRCurve
    clipped: bool = False
    accuracy_true: Optional[float] = None
    auprc_true: Optional[float] = None
    ece_true: Optional[float] = None
    curve_true: Optional[PRCurve] = None

    def to_dict(self) -> dict:
        d = {
            "accuracy_est": self.accuracy_est,
            "auprc_est": self.auprc_est,
            "ece_est": self.ece_est,
            "clipped": bool(self.clipped),
            "precision_est": self.curve_est.precision.tolist(),
            "recall_est": self.curve_est.recall.tolist(),
            "thresholds": self.curve_est.thresholds.tolist(),
        }
        for key in ("accuracy_true", "auprc_true", "ece_true"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EvalReport":
        with open(path) as fh:
            d = json.load(fh)
        t = np.asarray(d.pop("thresholds"), dtype=float)
        curve = PRCurve(t, np.asarray(d.pop("precision_est"), dtype=float), np.asarray(d.pop("recall_est"), dtype=float), np.zeros(len(t), dtype=bool))
        return cls(curve_est=curve, **d)


def scores(p: Predictor, xs: np.ndarray, tau: Optional[int] = None) -> np.ndarray:
    """p_theta(y=1|x); for the negbin head, Pr_theta(Y > tau | x)."""
    xs = np.asarray(xs)
    if len(xs) == 0:
        return np.zeros(0)
    out = np.empty(len(xs))
    for lo in range(0, len(xs), SCORE_CHUNK):
        chunk = xs[lo : lo + SCORE_CHUNK].astype(np.int64)
        if p.head == "negbin":
            out[lo : lo + len(chunk)] = tail_probabilities(p, chunk, 0 if tau is None else tau)
        else:
            out[lo : lo + len(chunk)] = predict(p, chunk)
    return out


def _frac(mask) -> float:
    return float(np.mean(mask)) if len(mask) else 0.0


# --- estimators on precomputed scores ----------------------------------------------


def accuracy_from_scores(s_pos, s_lib, pool_rate, threshold=0.5) -> tuple[float, bool]:
    t_pos = np.asarray(s_pos) > threshold
    t_lib = np.asarray(s_lib) > threshold
    acc = pool_rate * _frac(t_pos) + (1.0 - _frac(t_lib)) - pool_rate * (1.0 - _frac(t_pos))
    clipped = not 0.0 <= acc <= 1.0
    return float(np.clip(acc, 0.0, 1.0)), clipped


def pr_from_scores(s_pos, s_lib, pool_rate, thresholds) -> PRCurve:
    """Precision and recall at each threshold; thresholds with no predicted library positives are dropped."""
    s_pos, s_lib = np.asarray(s_pos), np.asarray(s_lib)
    thresholds = np.asarray(thresholds, dtype=float)
    recall = (s_pos[None, :] > thresholds[:, None]).mean(axis=1) if len(s_pos) else np.zeros(len(thresholds))
    denom = (s_lib[None, :] > thresholds[:, None]).mean(axis=1)
    keep = denom > 0
    raw = pool_rate * recall[keep] / denom[keep]
    return PRCurve(thresholds[keep], np.clip(raw, 0.0, 1.0), recall[keep], (raw < 0) | (raw > 1))


def _sweep(s_pos, s_lib, pool_rate):
    """PR points at every distinct score, via sorting (threshold-free)."""
    s_pos, s_lib = np.sort(np.asarray(s_pos)), np.sort(np.asarray(s_lib))
    cuts = np.unique(np.concatenate([s_pos, s_lib, [-np.inf]]))
    # Fractions strictly above each cut.
    recall = 1.0 - np.searchsorted(s_pos, cuts, side="right") / max(len(s_pos), 1)
    denom = 1.0 - np.searchsorted(s_lib, cuts, side="right") / len(s_lib)
    keep = denom > 0
    precision = np.clip(pool_rate * recall[keep] / denom[keep], 0.0, 1.0)
    return recall[keep], precision


def auprc_from_scores(s_pos, s_lib, pool_rate) -> float:
    """Trapezoidal area under the PR curve over all distinct score cuts.

    The curve is extended flat from its highest-threshold point to recall 0.
    Using every distinct score keeps the area invariant to monotone rescaling
    of the scores.
    """
    recall, precision = _sweep(s_pos, s_lib, pool_rate)
    if len(recall) == 0:
        return 0.0
    order = np.lexsort((-precision, recall))
    r, pr = recall[order], precision[order]
    r = np.concatenate([[0.0], r])
    pr = np.concatenate([[pr[0]], pr])
    return float(np.trapezoid(pr, r))


def _bins(s, K):
    return np.minimum((np.asarray(s) * K).astype(np.int64), K - 1)


def ece_from_scores(s_pos, s_lib, pool_rate, K=10) -> tuple[float, bool]:
    b_pos, b_lib = _bins(s_pos, K), _bins(s_lib, K)
    M = len(s_lib)
    w = np.bincount(b_lib, minlength=K) / M
    conf_sum = np.bincount(b_lib, weights=s_lib, minlength=K) / M
    pos_frac = np.bincount(b_pos, minlength=K) / max(len(s_pos), 1)
    occupied = w > 0
    outcome = np.zeros(K)
    outcome[occupied] = pool_rate * pos_frac[occupied] / w[occupied]
    clipped = bool(np.any(outcome > 1.0))
    outcome = np.clip(outcome, 0.0, 1.0)
    conf = np.zeros(K)
    conf[occupied] = conf_sum[occupied] / w[occupied]
    return float(np.sum(w * np.abs(outcome - conf))), clipped


# --- public estimators on predictors ------------------------------------------------


def _scored(p, inputs, tau=None):
    return scores(p, inputs.heldout_positives, tau), scores(p, inputs.library_samples, tau)


def estimate_accuracy(p: Predictor, inputs: EvalInputs, threshold: float = 0.5) -> float:
    s_pos, s_lib = _scored(p, inputs)
    return accuracy_from_scores(s_pos, s_lib, inputs.pool_rate, threshold)[0]


def estimate_precision_recall(p: Predictor, inputs: EvalInputs) -> tuple[PRCurve, float]:
    s_pos, s_lib = _scored(p, inputs)
    curve = pr_from_scores(s_pos, s_lib, inputs.pool_rate, inputs.thresholds)
    return curve, auprc_from_scores(s_pos, s_lib, inputs.pool_rate)


def estimate_ece(p: Predictor, inputs: EvalInputs) -> float:
    s_pos, s_lib = _scored(p, inputs)
    return ece_from_scores(s_pos, s_lib, inputs.pool_rate, inputs.K)[0]


def evaluate(p: Predictor, inputs: EvalInputs, labeled: Optional[tuple] = None, threshold: float = 0.5) -> EvalReport:
    """All estimates in one pass; ground truth is added when ``labeled=(xs, y)`` is given."""
    s_pos, s_lib = _scored(p, inputs)
    acc, c1 = accuracy_from_scores(s_pos, s_lib, inputs.pool_rate, threshold)
    ece, c2 = ece_from_scores(s_pos, s_lib, inputs.pool_rate, inputs.K)
    curve = pr_from_scores(s_pos, s_lib, inputs.pool_rate, inputs.thresholds)
    report = EvalReport(
        accuracy_est=acc,
        auprc_est=auprc_from_scores(s_pos, s_lib, inputs.pool_rate),
        ece_est=ece,
        curve_est=curve,
        clipped=c1 or c2 or bool(curve.clipped.any()),
    )
    if labeled is not None:
        truth = true_metrics(p, labeled[0], labeled[1], inputs.thresholds, inputs.K, threshold)
        report.accuracy_true = truth["accuracy"]
        report.auprc_true = truth["auprc"]
        report.ece_true = truth["ece"]
        report.curve_true = truth["curve"]
    return report


def true_metrics_from_scores(s, y, thresholds=DEFAULT_GRID, K=10, threshold=0.5) -> dict:
    s, y = np.asarray(s, dtype=float), np.asarray(y)
    if len(s) == 0:
        raise ValueError("labeled test set is empty")
    pos = y == 1
    t = s > threshold
    accuracy = float(np.mean(t == pos))
    thresholds = np.asarray(thresholds, dtype=float)
    pred = s[None, :] > thresholds[:, None]
    tp = (pred & pos[None, :]).sum(axis=1)
    npred = pred.sum(axis=1)
    keep = npred > 0
    recall = tp[keep] / max(pos.sum(), 1)
    curve = PRCurve(thresholds[keep], tp[keep] / npred[keep], recall, np.zeros(keep.sum(), dtype=bool))
    # Same sweep as the estimator, with the empirical hit rate, so the two are comparable.
    auprc = auprc_from_scores(s[pos], s, float(pos.mean()))
    b = _bins(s, K)
    n_k = np.bincount(b, minlength=K)
    occ = n_k > 0
    y_k = np.bincount(b, weights=pos.astype(float), minlength=K)[occ] / n_k[occ]
    c_k = np.bincount(b, weights=s, minlength=K)[occ] / n_k[occ]
    ece = float(np.sum(n_k[occ] / len(s) * np.abs(y_k - c_k)))
    return {"accuracy": accuracy, "curve": curve, "auprc": auprc, "ece": ece}


def true_metrics(p: Predictor, labeled_xs, labeled_y, thresholds=DEFAULT_GRID, K=10, threshold=0.5) -> dict:
    """Accuracy, PR curve, AUPRC and histogram ECE on a fully labeled sample."""
    return true_metrics_from_scores(scores(p, labeled_xs), labeled_y, thresholds, K, threshold)


def estimate_count_precision_recall(
    p: Predictor,
    heldout_positives: np.ndarray,
    heldout_counts: np.ndarray,
    pool_rate: float,
    library_samples: np.ndarray,
    taus,
) -> PRCurve:
    """Sliding-threshold PR for a count head.

    At each integer ``tau`` the label is Y > tau and a sequence is called
    positive when Pr_theta(Y > tau | x) > 1/2. Heldout positives passed the
    sort gate (Y > 0), so p(Y > tau) = pool_rate * P(count > tau | Y > 0).
    """
    if p.head != "negbin":
        raise ValueError("sliding-threshold evaluation needs the negbin head")
    heldout_counts = np.asarray(heldout_counts)
    out_t, out_p, out_r, out_c = [], [], [], []
    for tau in taus:
        above = heldout_counts > tau
        if not above.any():
            continue
        rate = pool_rate * above.mean()
        t_pos = tail_probabilities(p, heldout_positives[above], int(tau)) > 0.5
        denom = _frac(tail_probabilities(p, library_samples, int(tau)) > 0.5)
        if denom == 0:
            continue
        recall = t_pos.mean()
        raw = rate * recall / denom
        out_t.append(tau)
        out_p.append(min(max(raw, 0.0), 1.0))
        out_r.append(recall)
        out_c.append(not 0.0 <= raw <= 1.0)
    return PRCurve(np.array(out_t, dtype=float), np.array(out_p), np.array(out_r), np.array(out_c, dtype=bool))
