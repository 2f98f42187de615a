"""Synthetic ground-truth activity: motif rules, NB counts and binary labels.

Each matched motif rule multiplies a sequence's strength; the observed count
is negative binomial with that strength as its mean, and a cell is active
when its count exceeds a threshold.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from . import negbin
from .errors import RuleOutOfRange
from .seqmodel import AMINO_ACIDS, SequenceDistribution, _sample_with_rng, encode


@dataclass(frozen=True)
class MotifRule:
    position: int
    patterns: tuple[str, ...]
    multiplier: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "patterns", tuple(self.patterns))
        if not self.patterns:
            raise ValueError("a rule needs at least one pattern")
        widths = {len(p) for p in self.patterns}
        if len(widths) != 1 or 0 in widths:
            raise ValueError("all patterns of a rule must share one nonzero length")
        if self.position < 0:
            raise ValueError("position must be nonnegative")
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")

    @property
    def width(self) -> int:
        return len(self.patterns[0])

    def matches(self, xs: np.ndarray, alphabet: str) -> np.ndarray:
        """Boolean mask over the rows of ``xs`` that contain any pattern at ``position``."""
        if self.position + self.width > xs.shape[1]:
            raise RuleOutOfRange(
                f"rule at {self.position} with width {self.width} exceeds length {xs.shape[1]}"
            )
        window = xs[:, self.position : self.position + self.width]
        hit = np.zeros(len(xs), dtype=bool)
        for pattern in self.patterns:
            hit |= np.all(window == encode(pattern, alphabet), axis=1)
        return hit


DEFAULT_RULES = (
    MotifRule(3, ("P", "C"), 10.0),
    MotifRule(5, ("N", "C"), 10.0),
    MotifRule(6, ("PC", "SS"), 10.0),
)


@dataclass(frozen=True)
class ActivityOracle:
    base_strength: float = 1.0
    rules: tuple[MotifRule, ...] = DEFAULT_RULES
    dispersion: float = 2.28
    threshold: int = 30
    alphabet: str = AMINO_ACIDS

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if self.base_strength <= 0:
            raise ValueError("base_strength must be positive")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if self.threshold < 0 or int(self.threshold) != self.threshold:
            raise ValueError("threshold must be a nonnegative integer")

    def to_dict(self) -> dict:
        return {
            "base_strength": self.base_strength,
            "rules": [
                {"position": r.position, "patterns": list(r.patterns), "multiplier": r.multiplier}
                for r in self.rules
            ],
            "dispersion": self.dispersion,
            "threshold": self.threshold,
            "alphabet": self.alphabet,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivityOracle":
        rules = tuple(MotifRule(r["position"], tuple(r["patterns"]), r["multiplier"]) for r in d["rules"])
        return cls(
            base_strength=float(d.get("base_strength", 1.0)),
            rules=rules,
            dispersion=float(d.get("dispersion", 2.28)),
            threshold=int(d.get("threshold", 30)),
            alphabet=d.get("alphabet", AMINO_ACIDS),
        )


def save_oracle(oracle: ActivityOracle, path) -> None:
    Path(path).write_text(json.dumps(oracle.to_dict(), indent=1))


def load_oracle(path) -> ActivityOracle:
    return ActivityOracle.from_dict(json.loads(Path(path).read_text()))


def strengths(oracle: ActivityOracle, xs: np.ndarray) -> np.ndarray:
    xs = np.atleast_2d(xs)
    s = np.full(len(xs), float(oracle.base_strength))
    for rule in oracle.rules:
        s[rule.matches(xs, oracle.alphabet)] *= rule.multiplier
    return s


def strength(oracle: ActivityOracle, x) -> float:
    return float(strengths(oracle, encode(x, oracle.alphabet)[None, :])[0])


def sample_counts(oracle: ActivityOracle, xs: np.ndarray, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return negbin.sample(strengths(oracle, xs), oracle.dispersion, rng)


def sample_count(oracle: ActivityOracle, x, seed) -> int:
    return int(sample_counts(oracle, encode(x, oracle.alphabet)[None, :], seed)[0])


def label(count, threshold: int):
    """1 where ``count > threshold`` (strict)."""
    out = (np.asarray(count) > threshold).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def activity_probabilities(oracle: ActivityOracle, xs: np.ndarray) -> np.ndarray:
    """True p(y=1 | x) for each row, via exact NB tails of the distinct strengths."""
    s = strengths(oracle, xs)
    levels, inverse = np.unique(s, return_inverse=True)
    tails = negbin.tail(oracle.threshold, levels, oracle.dispersion)
    return np.asarray(tails)[inverse]


def hit_rate(oracle: ActivityOracle, dist: SequenceDistribution, M: int, seed) -> float:
    """Monte Carlo estimate of p(y=1) using exact tails for each sampled x."""
    if M < 1:
        raise ValueError("M must be >= 1")
    xs = _sample_with_rng(dist, M, np.random.default_rng(seed))
    return float(activity_probabilities(oracle, xs).mean())


def exact_hit_rate(oracle: ActivityOracle, dist: SequenceDistribution) -> float:
    """p(y=1) by enumerating only the positions the rules look at."""
    positions = sorted({p for r in oracle.rules for p in range(r.position, r.position + r.width)})
    if positions and positions[-1] >= dist.length:
        raise RuleOutOfRange("rules exceed the library length")
    sub = dist.probs[positions]
    combos = np.array(list(itertools.product(range(dist.n_tokens), repeat=len(positions))), dtype=np.int64)
    weights = np.prod(sub[np.arange(len(positions)), combos], axis=1)
    # Embed the enumerated positions into full-length rows; other positions are irrelevant.
    full = np.zeros((len(combos), dist.length), dtype=np.int64)
    full[:, positions] = combos
    return float(weights @ activity_probabilities(oracle, full))


# Background residue weights for a CDRH3-flavoured library. These are an
# artifact fixture, not measured frequencies: tyrosine/glycine/aspartate rich,
# with an "AR" start and "DY" end as in germline-anchored CDRH3 loops.
_CDRH3_BACKGROUND = {
    "A": 7, "C": 1.5, "D": 8, "E": 3, "F": 4, "G": 11, "H": 2, "I": 3, "K": 2, "L": 5,
    "M": 4, "N": 3, "P": 4, "Q": 2, "R": 6, "S": 8, "T": 5, "V": 5, "W": 4, "Y": 14,
}
_ANCHORS = {0: "A", 1: "R", 10: "D", 11: "Y"}


def cdrh3_like_background(length: int = 12, motif_scale: float = 1.0, tuned: str = "PCNS") -> SequenceDistribution:
    """Background library with the motif residues ``tuned`` scaled by ``motif_scale``.

    Anchor positions put 80% of their mass on the anchor residue.
    """
    weights = np.array([_CDRH3_BACKGROUND[a] for a in AMINO_ACIDS], dtype=float)
    for a in tuned:
        weights[AMINO_ACIDS.index(a)] *= motif_scale
    row = weights / weights.sum()
    probs = np.tile(row, (length, 1))
    for pos, residue in _ANCHORS.items():
        if pos < length:
            probs[pos] = 0.2 * row
            probs[pos, AMINO_ACIDS.index(residue)] += 0.8
    return SequenceDistribution(AMINO_ACIDS, probs)


def calibrate_library(oracle: ActivityOracle, target: float = 0.015, length: int = 12) -> tuple[SequenceDistribution, float]:
    """Solve for the motif-residue scale that gives ``exact_hit_rate == target``."""

    def gap(log_scale):
        return exact_hit_rate(oracle, cdrh3_like_background(length, np.exp(log_scale))) - target

    log_scale = brentq(gap, np.log(1e-2), np.log(1e2), xtol=1e-12)
    return cdrh3_like_background(length, np.exp(log_scale)), float(np.exp(log_scale))


_DATA = Path(__file__).parent / "data"


def default_oracle() -> ActivityOracle:
    return load_oracle(_DATA / "default_oracle.json")


def default_library() -> SequenceDistribution:
    """The calibrated CDRH3-like PWM shipped with the package (p(y=1) = 0.015)."""
    from .seqmodel import load_distribution

    return load_distribution(_DATA / "cdrh3_like_pwm.json")
