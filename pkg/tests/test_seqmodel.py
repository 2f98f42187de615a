import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from screenlab.errors import EmptyInput, LengthMismatch, RaggedLengths
from screenlab.seqmodel import (
    AMINO_ACIDS,
    IMPOSSIBLE,
    SequenceDistribution,
    decode,
    encode,
    enumerate_space,
    fit_pwm,
    load_distribution,
    log_prob,
    log_probs,
    sample_sequences,
    save_distribution,
)


def pwm_strategy(max_len=6, alphabet="ABCD"):
    return st.integers(1, max_len).flatmap(
        lambda L: st.lists(
            st.lists(st.floats(0.01, 10.0), min_size=len(alphabet), max_size=len(alphabet)),
            min_size=L,
            max_size=L,
        )
    ).map(lambda rows: SequenceDistribution(alphabet, np.array(rows) / np.array(rows).sum(axis=1, keepdims=True)))


def test_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        SequenceDistribution("AB", np.array([[0.5, 0.6]]))
    with pytest.raises(ValueError):
        SequenceDistribution("AB", np.array([[1.2, -0.2]]))
    SequenceDistribution("AB", np.array([[0.5, 0.5 + 5e-10]]))


def test_point_mass_samples():
    d = SequenceDistribution.point_mass("A" * 12)
    xs = sample_sequences(d, 3, 0)
    assert decode(xs, AMINO_ACIDS) == ["AAAAAAAAAAAA"] * 3


def test_uniform_frequencies():
    d = SequenceDistribution.uniform()
    xs = sample_sequences(d, 100_000, 1)
    for pos in range(d.length):
        freq = np.bincount(xs[:, pos], minlength=20) / len(xs)
        # 4 sigma of a binomial proportion at p = 1/20
        assert np.max(np.abs(freq - 0.05)) <= 4 * math.sqrt(0.05 * 0.95 / 100_000) < 0.01


def test_sampling_is_deterministic(toy_library):
    a = sample_sequences(toy_library, 50, 7)
    b = sample_sequences(toy_library, 50, 7)
    c = sample_sequences(toy_library, 50, 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_log_prob_examples():
    u = SequenceDistribution.uniform()
    assert log_prob(u, "ACDEFGHIKLMN") == pytest.approx(12 * math.log(1 / 20))
    # The quoted figure -35.947 is truncated; the exact value is -35.94879.
    assert round(log_prob(u, "ACDEFGHIKLMN"), 2) == -35.95
    pm = SequenceDistribution.point_mass("ACDEFGHIKLMN")
    assert log_prob(pm, "ACDEFGHIKLMN") == 0.0
    assert log_prob(pm, "ACDEFGHIKLMA") is IMPOSSIBLE
    assert float(IMPOSSIBLE) == -math.inf
    with pytest.raises(LengthMismatch):
        log_prob(u, "ACD")


def test_log_probs_vectorised_matches_scalar(toy_library):
    xs, _ = enumerate_space(toy_library)
    vec = log_probs(toy_library, xs)
    for x, v in zip(xs, vec):
        assert v == pytest.approx(log_prob(toy_library, x))


def test_fit_pwm_examples():
    d = fit_pwm(["AA", "AA"], 0, "AB")
    assert np.array_equal(d.probs, [[1, 0], [1, 0]])
    d = fit_pwm(["AB", "BA"], 0, "AB")
    assert np.allclose(d.probs, 0.5)
    d = fit_pwm(["AB"], 1, "AB")
    assert np.allclose(d.probs, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]])
    with pytest.raises(EmptyInput):
        fit_pwm([], 0, "AB")
    with pytest.raises(RaggedLengths):
        fit_pwm(["AB", "A"], 0, "AB")


def test_fit_pwm_round_trip():
    from screenlab.oracle import default_library

    d = default_library()
    fitted = fit_pwm(sample_sequences(d, 100_000, 3), 1)
    assert np.max(np.abs(fitted.probs - d.probs)) < 0.01


def test_enumerate_space_sums_to_one(toy_library):
    xs, p = enumerate_space(toy_library)
    assert xs.shape == (9, 2)
    assert p.sum() == pytest.approx(1.0)
    assert p[0] == pytest.approx(0.5 * 0.1)


def test_json_round_trip(tmp_path, toy_library):
    path = tmp_path / "d.json"
    save_distribution(toy_library, path)
    back = load_distribution(path)
    assert back.alphabet == toy_library.alphabet
    assert np.max(np.abs(back.probs - toy_library.probs)) <= 1e-12
    assert set(json.loads(path.read_text())) == {"alphabet", "length", "probs"}


def test_encode_rejects_unknown_token():
    with pytest.raises(ValueError):
        encode("AZ", "AB")


@given(pwm_strategy(), st.integers(0, 2**32 - 1))
def test_sampled_sequences_have_finite_log_prob(dist, seed):
    xs = sample_sequences(dist, 20, seed)
    assert np.all(np.isfinite(log_probs(dist, xs)))
    assert xs.min() >= 0 and xs.max() < dist.n_tokens


@given(pwm_strategy(max_len=4))
def test_enumerated_probabilities_match_log_prob(dist):
    xs, p = enumerate_space(dist)
    assert p.sum() == pytest.approx(1.0)
    assert np.allclose(np.log(p), log_probs(dist, xs))
