"""Sort-then-sequence screen simulation and dataset handling.

A screen delivers N library draws into cells, sorts them into an active and
an inactive pool, and then sequences ``n`` cells: ``round(n*q)`` from the
active pool and the rest from the inactive pool. The pool totals are always
known, sequenced or not.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import negbin
from .errors import DegenerateSplit, InsufficientNegatives, InsufficientPositives
from .oracle import ActivityOracle, label, strengths
from .seqmodel import SequenceDistribution, _sample_with_rng, decode, encode_many

SHARD_SIZE = 1 << 16


@dataclass(frozen=True)
class ScreenConfig:
    N: int
    n: int
    q: float
    seed: int = 0

    def __post_init__(self):
        if self.N < 1 or self.n < 0:
            raise ValueError("N must be positive and n nonnegative")
        if self.n > self.N:
            raise ValueError("sequencing budget n cannot exceed N")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("q must lie in [0, 1]")


@dataclass
class LabeledCells:
    """A fully observed population: every cell's sequence, label and (optionally) count."""

    sequences: np.ndarray
    y: np.ndarray
    counts: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.y)

    @property
    def n_positive(self) -> int:
        return int(self.y.sum())


@dataclass
class ScreenDataset:
    sequences: np.ndarray
    y: np.ndarray
    pool_counts: tuple[int, int]
    counts: Optional[np.ndarray] = None
    alphabet: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_pos, n_neg = self.measured_counts
        N_pos, N_neg = self.pool_counts
        if n_pos > N_pos or n_neg > N_neg:
            raise ValueError("measured cells exceed their pool totals")

    def __len__(self):
        return len(self.y)

    @property
    def N(self) -> int:
        return int(sum(self.pool_counts))

    @property
    def measured_counts(self) -> tuple[int, int]:
        n_pos = int(np.sum(self.y))
        return n_pos, len(self.y) - n_pos

    @property
    def pool_rate(self) -> float:
        return self.pool_counts[0] / self.N

    def positives(self) -> np.ndarray:
        return self.sequences[self.y == 1]


def allocation(n: int, q: float) -> tuple[int, int]:
    """Positive/negative split of a budget; ``round`` is half-to-even."""
    n_pos = int(round(n * q))
    return n_pos, n - n_pos


def simulate_cells(dist: SequenceDistribution, oracle: ActivityOracle, N: int, seed) -> LabeledCells:
    """Simulate N cells in fixed-size shards, each with its own derived stream.

    The output depends only on ``(dist, oracle, N, seed)``, never on how the
    shards are scheduled.
    """
    sim_seq = np.random.SeedSequence(seed).spawn(2)[0]
    n_shards = -(-N // SHARD_SIZE)
    shard_seeds = sim_seq.spawn(n_shards)
    xs = np.empty((N, dist.length), dtype=np.uint8 if dist.n_tokens < 256 else np.int64)
    counts = np.empty(N, dtype=np.int64)
    for i, ss in enumerate(shard_seeds):
        lo, hi = i * SHARD_SIZE, min(N, (i + 1) * SHARD_SIZE)
        rng = np.random.default_rng(ss)
        shard = _sample_with_rng(dist, hi - lo, rng)
        xs[lo:hi] = shard
        counts[lo:hi] = negbin.sample(strengths(oracle, shard), oracle.dispersion, rng)
    return LabeledCells(xs, label(counts, oracle.threshold), counts)


def _select_stream(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(2)[1])


def allocate(cells: LabeledCells, n: int, q: float, seed, alphabet: str = "", meta: Optional[dict] = None) -> ScreenDataset:
    """Sequence ``round(n*q)`` positives and the rest negatives, without replacement."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    y = np.asarray(cells.y)
    pos_idx = np.flatnonzero(y == 1)
    neg_idx = np.flatnonzero(y == 0)
    n_pos, n_neg = allocation(n, q)
    if n_pos > len(pos_idx):
        raise InsufficientPositives(f"need {n_pos} positive cells but the pool has {len(pos_idx)}")
    if n_neg > len(neg_idx):
        raise InsufficientNegatives(f"need {n_neg} negative cells but the pool has {len(neg_idx)}")
    rng = _select_stream(seed)
    chosen = np.concatenate(
        [rng.choice(pos_idx, size=n_pos, replace=False), rng.choice(neg_idx, size=n_neg, replace=False)]
    )
    chosen.sort()
    counts = None if cells.counts is None else np.asarray(cells.counts)[chosen].astype(np.int64)
    return ScreenDataset(
        sequences=np.asarray(cells.sequences)[chosen].astype(np.int64),
        y=y[chosen].astype(np.int64),
        pool_counts=(len(pos_idx), len(neg_idx)),
        counts=counts,
        alphabet=alphabet,
        meta=dict(meta or {}, n=n, q=q, seed=seed),
    )


def run_screen(dist: SequenceDistribution, oracle: ActivityOracle, cfg: ScreenConfig) -> ScreenDataset:
    cells = simulate_cells(dist, oracle, cfg.N, cfg.seed)
    return allocate(cells, cfg.n, cfg.q, cfg.seed, dist.alphabet, meta={"N": cfg.N, "source": "simulated"})


def subsample_screen(full: LabeledCells, q: float, n: int, seed, alphabet: str = "") -> ScreenDataset:
    """Allocate a budget against an externally measured, fully labeled population."""
    return allocate(full, n, q, seed, alphabet, meta={"N": len(full), "source": "subsampled"})


def split_holdout(ds: ScreenDataset, fraction: float, seed) -> tuple[ScreenDataset, ScreenDataset]:
    """Randomly partition measured cells; pool totals are split in the same proportion."""
    if not 0.0 < fraction < 1.0:
        raise DegenerateSplit("fraction must lie strictly between 0 and 1")
    n = len(ds)
    n_held = int(round(fraction * n))
    if n_held == 0 or n_held == n:
        raise DegenerateSplit(f"splitting {n} cells at {fraction} leaves one side empty")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    held_idx, train_idx = np.sort(perm[:n_held]), np.sort(perm[n_held:])

    def take(idx, pool):
        return replace(
            ds,
            sequences=ds.sequences[idx],
            y=ds.y[idx],
            counts=None if ds.counts is None else ds.counts[idx],
            pool_counts=pool,
            meta=dict(ds.meta),
        )

    N_pos, N_neg = ds.pool_counts
    held_pos = int(ds.y[held_idx].sum())
    held_neg = n_held - held_pos
    pool_held = (
        max(int(round(fraction * N_pos)), held_pos),
        max(int(round(fraction * N_neg)), held_neg),
    )
    pool_train = (N_pos - pool_held[0], N_neg - pool_held[1])
    train_pos = int(ds.y[train_idx].sum())
    if pool_train[0] < train_pos or pool_train[1] < len(train_idx) - train_pos:
        raise DegenerateSplit("pool totals cannot cover the measured cells on both sides")
    return take(train_idx, pool_train), take(held_idx, pool_held)


# --- file formats -------------------------------------------------------------------


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def save_dataset(ds: ScreenDataset, path) -> None:
    """JSON-lines: a header record followed by one record per measured cell."""
    header = {
        "header": True,
        "pool_counts": [int(c) for c in ds.pool_counts],
        "alphabet": ds.alphabet,
        "config": {k: _jsonable(v) for k, v in ds.meta.items()},
    }
    seqs = decode(ds.sequences, ds.alphabet) if len(ds) else []
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, s in enumerate(seqs):
            rec = {"seq": s, "y": int(ds.y[i])}
            if ds.counts is not None:
                rec["count"] = int(ds.counts[i])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_dataset(path) -> ScreenDataset:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or not lines[0].get("header"):
        raise ValueError(f"{path} has no header record")
    header, records = lines[0], lines[1:]
    alphabet = header["alphabet"]
    has_counts = bool(records) and all("count" in r for r in records)
    if records:
        seqs = encode_many([r["seq"] for r in records], alphabet)
    else:
        seqs = np.zeros((0, int(header["config"].get("length", 0))), dtype=np.int64)
    return ScreenDataset(
        sequences=seqs,
        y=np.array([r["y"] for r in records], dtype=np.int64),
        pool_counts=tuple(header["pool_counts"]),
        counts=np.array([r["count"] for r in records], dtype=np.int64) if has_counts else None,
        alphabet=alphabet,
        meta=header.get("config", {}),
    )


def read_labeled_csv(path, alphabet: str) -> LabeledCells:
    """Ingest an external fully labeled screen with columns ``seq,y[,count]``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path} contains no rows")
    seqs = encode_many([r["seq"] for r in rows], alphabet)
    y = np.array([int(r["y"]) for r in rows], dtype=np.int64)
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("y must be 0 or 1")
    counts = None
    if "count" in rows[0] and all(r.get("count") not in (None, "") for r in rows):
        counts = np.array([int(r["count"]) for r in rows], dtype=np.int64)
    return LabeledCells(seqs, y, counts)
