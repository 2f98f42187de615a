"""Fixed-length position weight matrix library models p(x).

Sequences are handled as integer arrays of alphabet indices. A single
sequence is a 1-D array of length L and a batch is a ``(count, L)`` array.
Strings are accepted wherever a single sequence is expected and are encoded
against the distribution's alphabet.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import EmptyInput, LengthMismatch, RaggedLengths

AMINO_ACIDS = "ACDEFGHIKLMNPQRSTVWY"

SequenceLike = Union[str, Sequence[int], np.ndarray]


class _Impossible:
    """Log-probability of a sequence that the library can never produce."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "IMPOSSIBLE"

    def __float__(self):
        return float("-inf")


IMPOSSIBLE = _Impossible()


@dataclass(frozen=True, eq=False)
class SequenceDistribution:
    """Independent categorical distribution over tokens at each position.

    Attributes:
        alphabet: ordered tokens, one character each.
        probs: ``(L, len(alphabet))`` matrix whose rows sum to one.
    """

    alphabet: str
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        if probs.ndim != 2 or probs.shape[0] < 1:
            raise ValueError("probs must be a non-empty (L, |alphabet|) matrix")
        if probs.shape[1] != len(self.alphabet):
            raise ValueError(
                f"probs has {probs.shape[1]} columns but alphabet has {len(self.alphabet)} tokens"
            )
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet tokens must be unique")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise ValueError("probs must be finite and nonnegative")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("every row of probs must sum to 1 within 1e-9")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def length(self) -> int:
        return self.probs.shape[0]

    @property
    def n_tokens(self) -> int:
        return len(self.alphabet)

    @classmethod
    def uniform(cls, length: int = 12, alphabet: str = AMINO_ACIDS) -> "SequenceDistribution":
        return cls(alphabet, np.full((length, len(alphabet)), 1.0 / len(alphabet)))

    @classmethod
    def point_mass(cls, sequence: str, alphabet: str = AMINO_ACIDS) -> "SequenceDistribution":
        probs = np.zeros((len(sequence), len(alphabet)))
        probs[np.arange(len(sequence)), encode(sequence, alphabet)] = 1.0
        return cls(alphabet, probs)

    def encode(self, x: SequenceLike) -> np.ndarray:
        return encode(x, self.alphabet)

    def decode(self, x: np.ndarray) -> str | list[str]:
        return decode(x, self.alphabet)

    def to_dict(self) -> dict:
        return {"alphabet": self.alphabet, "length": self.length, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SequenceDistribution":
        dist = cls(d["alphabet"], np.asarray(d["probs"], dtype=float))
        if "length" in d and int(d["length"]) != dist.length:
            raise LengthMismatch(f"declared length {d['length']} but probs has {dist.length} rows")
        return dist


def encode(x: SequenceLike, alphabet: str) -> np.ndarray:
    """Map a string (or pass through an index array) to alphabet indices."""
    if isinstance(x, str):
        lookup = {a: i for i, a in enumerate(alphabet)}
        try:
            return np.array([lookup[c] for c in x], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"token {exc.args[0]!r} not in alphabet {alphabet!r}") from None
    arr = np.asarray(x, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= len(alphabet)):
        raise ValueError("token index out of range for alphabet")
    return arr


def encode_many(xs: Iterable[SequenceLike] | np.ndarray, alphabet: str) -> np.ndarray:
    """Encode a collection of sequences into a ``(n, L)`` index array."""
    if isinstance(xs, np.ndarray) and xs.ndim == 2:
        return encode(xs, alphabet)
    rows = [encode(x, alphabet) for x in xs]
    if not rows:
        raise EmptyInput("no sequences given")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise RaggedLengths(f"sequences have differing lengths {sorted(lengths)}")
    return np.stack(rows)


def decode(x: np.ndarray, alphabet: str) -> str | list[str]:
    x = np.asarray(x)
    letters = np.array(list(alphabet))
    if x.ndim == 1:
        return "".join(letters[x])
    return ["".join(row) for row in letters[x]]


def sample_sequences(dist: SequenceDistribution, count: int, seed) -> np.ndarray:
    """Draw ``count`` i.i.d. sequences; the result is a pure function of the inputs."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return _sample_with_rng(dist, count, rng)


def _sample_with_rng(dist: SequenceDistribution, count: int, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(dist.probs, axis=1)
    cum[:, -1] = 1.0
    u = rng.random((count, dist.length))
    out = np.empty((count, dist.length), dtype=np.int64)
    for pos in range(dist.length):
        out[:, pos] = np.searchsorted(cum[pos], u[:, pos], side="right")
    np.minimum(out, dist.n_tokens - 1, out=out)
    return out


def log_probs(dist: SequenceDistribution, xs: np.ndarray) -> np.ndarray:
    """Vectorised log p(x) in nats; zero-probability rows give ``-inf``."""
    xs = np.atleast_2d(xs)
    if xs.shape[1] != dist.length:
        raise LengthMismatch(f"sequence length {xs.shape[1]} != library length {dist.length}")
    with np.errstate(divide="ignore"):
        logp = np.log(dist.probs)
    return logp[np.arange(dist.length), xs].sum(axis=1)


def log_prob(dist: SequenceDistribution, x: SequenceLike):
    """log p(x) in nats, or :data:`IMPOSSIBLE` if any position has zero mass."""
    x = dist.encode(x)
    if x.ndim != 1 or len(x) != dist.length:
        raise LengthMismatch(f"sequence length {len(x)} != library length {dist.length}")
    p = dist.probs[np.arange(dist.length), x]
    if np.any(p == 0):
        return IMPOSSIBLE
    return float(np.log(p).sum())


def fit_pwm(
    samples: Iterable[SequenceLike] | np.ndarray,
    pseudocount: float = 0.0,
    alphabet: str = AMINO_ACIDS,
) -> SequenceDistribution:
    """Maximum a posteriori PWM with an additive pseudocount per cell."""
    if pseudocount < 0:
        raise ValueError("pseudocount must be nonnegative")
    if isinstance(samples, np.ndarray) and samples.ndim == 2 and samples.shape[0] == 0:
        raise EmptyInput("no samples given")
    xs = encode_many(samples, alphabet)
    n, length = xs.shape
    counts = np.zeros((length, len(alphabet)))
    for pos in range(length):
        counts[pos] = np.bincount(xs[:, pos], minlength=len(alphabet))
    probs = (counts + pseudocount) / (n + pseudocount * len(alphabet))
    return SequenceDistribution(alphabet, probs)


def enumerate_space(dist: SequenceDistribution) -> tuple[np.ndarray, np.ndarray]:
    """All sequences of the library with their probabilities.

    Only sensible for toy libraries; the space has ``|alphabet| ** L`` members.
    """
    n_total = dist.n_tokens ** dist.length
    if n_total > 2_000_000:
        raise ValueError(f"sequence space of size {n_total} is too large to enumerate")
    xs = np.array(list(itertools.product(range(dist.n_tokens), repeat=dist.length)), dtype=np.int64)
    p = np.prod(dist.probs[np.arange(dist.length), xs], axis=1)
    return xs, p


def save_distribution(dist: SequenceDistribution, path) -> None:
    Path(path).write_text(json.dumps(dist.to_dict(), indent=1))


def load_distribution(path) -> SequenceDistribution:
    return SequenceDistribution.from_dict(json.loads(Path(path).read_text()))
