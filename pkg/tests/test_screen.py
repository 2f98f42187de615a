import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from screenlab.errors import DegenerateSplit, InsufficientNegatives, InsufficientPositives
from screenlab.oracle import ActivityOracle, activity_probabilities, default_library, default_oracle
from screenlab.screen import (
    LabeledCells,
    ScreenConfig,
    allocate,
    allocation,
    load_dataset,
    read_labeled_csv,
    run_screen,
    save_dataset,
    simulate_cells,
    split_holdout,
    subsample_screen,
)
from screenlab.seqmodel import SequenceDistribution, sample_sequences


def fake_population(n_pos, n_neg, length=4, seed=0):
    rng = np.random.default_rng(seed)
    xs = rng.integers(0, 20, size=(n_pos + n_neg, length))
    y = np.r_[np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)]
    return LabeledCells(xs, y, rng.integers(0, 100, n_pos + n_neg))


def test_allocation_round_half_even():
    assert allocation(10, 0.5) == (5, 5)
    assert allocation(5, 0.5) == (2, 3)
    assert allocation(7, 0.5) == (4, 3)


def test_config_invariants():
    with pytest.raises(ValueError):
        ScreenConfig(N=10, n=11, q=0.5)
    with pytest.raises(ValueError):
        ScreenConfig(N=10, n=5, q=1.5)


def test_q1_budget_from_pool():
    cells = fake_population(340, 5000)
    ds = allocate(cells, 100, 1.0, 0)
    assert ds.measured_counts == (100, 0)
    assert ds.pool_counts == (340, 5000)
    with pytest.raises(InsufficientPositives):
        allocate(cells, 400, 1.0, 0)
    with pytest.raises(InsufficientNegatives):
        allocate(fake_population(50, 3), 10, 0.0, 0)


def test_half_allocation():
    ds = allocate(fake_population(340, 5000), 10, 0.5, 0)
    assert ds.measured_counts == (5, 5)


def test_subsample_examples():
    full = fake_population(400, 11_000)
    assert subsample_screen(full, 1.0, 170, 0).measured_counts == (170, 0)
    assert subsample_screen(full, 0.0, 5, 0).measured_counts == (0, 5)
    empty = subsample_screen(full, 0.7, 0, 0)
    assert len(empty) == 0 and empty.pool_counts == (400, 11_000)


def test_sampling_without_replacement():
    cells = fake_population(200, 200)
    cells.sequences[:] = np.arange(400)[:, None]
    ds = allocate(cells, 300, 0.5, 1)
    assert len(np.unique(ds.sequences[:, 0])) == 300


def test_run_screen_deterministic_and_consistent():
    cfg = ScreenConfig(N=50_000, n=500, q=1.0, seed=3)
    a = run_screen(default_library(), default_oracle(), cfg)
    b = run_screen(default_library(), default_oracle(), cfg)
    assert np.array_equal(a.sequences, b.sequences) and a.pool_counts == b.pool_counts
    assert a.N == 50_000 and a.measured_counts == (500, 0)
    assert np.all(a.counts > 30)


def test_shards_do_not_depend_on_total():
    # The first shard is identical whatever N is.
    a = simulate_cells(default_library(), default_oracle(), 70_000, 9)
    b = simulate_cells(default_library(), default_oracle(), 65_536, 9)
    assert np.array_equal(a.sequences[:65_536], b.sequences)
    assert np.array_equal(a.counts[:65_536], b.counts)


def test_representative_allocation_matches_population():
    d, o = default_library(), default_oracle()
    cells = simulate_cells(d, o, 400_000, 11)
    p1 = cells.n_positive / len(cells)
    ds = allocate(cells, 20_000, p1, 12)
    freq = ds.y.mean()
    assert abs(freq - p1) < 3 * np.sqrt(p1 * (1 - p1) / 20_000) + 1 / 20_000
    ref = sample_sequences(d, 200_000, 13)
    for pos in range(d.length):
        a = np.bincount(ds.sequences[:, pos], minlength=20) / len(ds)
        b = np.bincount(ref[:, pos], minlength=20) / len(ref)
        se = np.sqrt(b * (1 - b) * (1 / len(ds) + 1 / len(ref)))
        assert np.all(np.abs(a - b) <= 3 * se + 1e-3)


def test_positives_follow_posterior():
    d, o = default_library(), default_oracle()
    cells = simulate_cells(d, o, 1_000_000, 21)
    ds = allocate(cells, 10_000, 1.0, 22)
    # Reference sample from p(x | y=1) by rejection with the exact activity probabilities.
    ref = sample_sequences(d, 2_000_000, 23)
    rng = np.random.default_rng(24)
    ref = ref[rng.random(len(ref)) < activity_probabilities(o, ref)]
    for pos in range(d.length):
        a = np.bincount(ds.sequences[:, pos], minlength=20) / len(ds)
        b = np.bincount(ref[:, pos], minlength=20) / len(ref)
        assert np.max(np.abs(a - b)) < 0.02


def test_split_holdout():
    ds = allocate(fake_population(300, 5000), 100, 0.5, 0)
    tr, ho = split_holdout(ds, 0.5, 1)
    assert len(tr) == len(ho) == 50
    assert tr.N + ho.N == ds.N
    for part in (tr, ho):
        assert part.measured_counts[0] <= part.pool_counts[0]
    big = allocate(fake_population(9000, 9000), 9000, 0.5, 0)
    assert len(split_holdout(big, 0.1, 0)[1]) == 900
    with pytest.raises(DegenerateSplit):
        split_holdout(allocate(fake_population(5, 5), 3, 0.5, 0), 0.1, 0)
    with pytest.raises(DegenerateSplit):
        split_holdout(ds, 1.0, 0)


def test_dataset_round_trip(tmp_path):
    d = default_library()
    ds = run_screen(d, default_oracle(), ScreenConfig(N=20_000, n=50, q=0.5, seed=1))
    save_dataset(ds, tmp_path / "ds.jsonl")
    back = load_dataset(tmp_path / "ds.jsonl")
    assert np.array_equal(back.sequences, ds.sequences)
    assert np.array_equal(back.y, ds.y) and np.array_equal(back.counts, ds.counts)
    assert back.pool_counts == ds.pool_counts and back.alphabet == ds.alphabet


def test_read_labeled_csv(tmp_path):
    path = tmp_path / "cells.csv"
    path.write_text("seq,y,count\nACD,1,40\nAAA,0,2\n")
    cells = read_labeled_csv(path, "ACD")
    assert cells.y.tolist() == [1, 0] and cells.counts.tolist() == [40, 2]
    path.write_text("seq,y\nACD,2\n")
    with pytest.raises(ValueError):
        read_labeled_csv(path, "ACD")


@given(st.integers(0, 60), st.integers(0, 60), st.integers(0, 40), st.floats(0, 1), st.integers(0, 1000))
def test_allocation_invariants(n_pos, n_neg, n, q, seed):
    cells = fake_population(n_pos, n_neg, seed=seed)
    want_pos, want_neg = allocation(n, q)
    if want_pos > n_pos or want_neg > n_neg:
        with pytest.raises((InsufficientPositives, InsufficientNegatives)):
            allocate(cells, n, q, seed)
        return
    ds = allocate(cells, n, q, seed)
    assert ds.measured_counts == (want_pos, want_neg)
    assert ds.pool_counts == (n_pos, n_neg) and ds.N == n_pos + n_neg
