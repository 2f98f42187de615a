import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from screenlab.errors import HeadTargetMismatch, LengthMismatch, WrongHead
from screenlab.predictor import (
    Batch,
    Predictor,
    gradient,
    init_predictor,
    load_predictor,
    log_likelihood,
    predict,
    save_predictor,
    tail_probabilities,
    tail_probability,
)

ALPHABET = "ACDEFGHIKLMNPQRSTVWY"
ARCHS = [{"kind": "linear"}, {"kind": "mlp", "hidden": [8]}, {"kind": "mlp", "hidden": [6, 5]}, {"kind": "conv", "channels": 4, "embed": 3, "kernel": 5}]


def random_batch(head, rng, n=7, length=8):
    xs = rng.integers(0, 20, size=(n, length))
    y = rng.integers(0, 2, n) if head == "bernoulli" else rng.negative_binomial(2, 0.2, n)
    return Batch(xs, y)


def fd_gradient(p, batch, h=1e-5):
    g = np.zeros(p.dim)
    for i in range(p.dim):
        e = np.zeros(p.dim)
        e[i] = h
        g[i] = (log_likelihood(p.with_theta(p.theta + e), batch) - log_likelihood(p.with_theta(p.theta - e), batch)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def test_zero_linear_predicts_half():
    p = Predictor({"kind": "linear"}, "bernoulli", np.zeros(8 * 20 + 1), 8, ALPHABET)
    assert np.allclose(predict(p, np.random.default_rng(0).integers(0, 20, (5, 8))), 0.5)
    theta = np.zeros(8 * 20 + 1)
    theta[-1] = 1.3
    assert predict(p.with_theta(theta), "ACDEFGHI") == pytest.approx(1 / (1 + np.exp(-1.3)))
    nb = Predictor({"kind": "linear"}, "negbin", np.zeros(8 * 20 + 2), 8, ALPHABET)
    assert predict(nb, "ACDEFGHI") == 1.0


def test_length_mismatch():
    p = init_predictor({"kind": "linear"}, "bernoulli", 8, ALPHABET, 0)
    with pytest.raises(LengthMismatch):
        predict(p, "ACD")


def test_log_likelihood_examples():
    p = Predictor({"kind": "linear"}, "bernoulli", np.zeros(8 * 20 + 1), 8, ALPHABET)
    assert log_likelihood(p, Batch(np.zeros((1, 8)), [1])) == pytest.approx(np.log(0.5))
    assert log_likelihood(p, Batch(np.zeros((0, 8)), np.zeros(0))) == 0.0
    theta = np.zeros(8 * 20 + 2)
    theta[-1] = np.log(2.28)
    nb = Predictor({"kind": "linear"}, "negbin", theta, 8, ALPHABET)
    want = stats.nbinom(n=2.28, p=2.28 / 3.28).logpmf(0)
    assert log_likelihood(nb, Batch(np.zeros((1, 8)), [0])) == pytest.approx(want, rel=1e-12)
    with pytest.raises(HeadTargetMismatch):
        log_likelihood(p, Batch(np.zeros((1, 8)), [2]))
    with pytest.raises(HeadTargetMismatch):
        log_likelihood(nb, Batch(np.zeros((1, 8)), [-1]))


def test_gradient_bias_at_zero():
    for y in (0, 1):
        p = Predictor({"kind": "linear"}, "bernoulli", np.zeros(8 * 20 + 1), 8, ALPHABET)
        g = gradient(p, Batch(np.zeros((1, 8)), [y]))
        assert g[-1] == pytest.approx(y - 0.5)
    assert np.array_equal(gradient(p, Batch(np.zeros((0, 8)), np.zeros(0))), np.zeros(p.dim))


@pytest.mark.parametrize("arch", ARCHS, ids=lambda a: a["kind"] + str(a.get("hidden", "")))
@pytest.mark.parametrize("head", ["bernoulli", "negbin"])
def test_gradient_finite_differences(arch, head):
    rng = np.random.default_rng(hash((arch["kind"], head)) % 2**32)
    for draw in range(5):
        p = init_predictor(arch, head, 8, ALPHABET, draw)
        p = p.with_theta(p.theta + rng.normal(0, 0.3, p.dim))
        batch = random_batch(head, rng)
        assert np.max(rel_err(gradient(p, batch), fd_gradient(p, batch))) <= 1e-4


def test_linear_shift_invariance():
    p = init_predictor({"kind": "linear"}, "bernoulli", 8, ALPHABET, 3)
    xs = np.random.default_rng(0).integers(0, 20, (20, 8))
    theta = p.theta.copy()
    theta[2 * 20 : 3 * 20] += 0.7
    assert np.allclose(p.with_theta(theta).raw(xs), p.raw(xs) + 0.7, atol=1e-12)


@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31))
def test_log_likelihood_additive(n1, n2, seed):
    rng = np.random.default_rng(seed)
    p = init_predictor({"kind": "mlp", "hidden": [5]}, "negbin", 8, ALPHABET, seed)
    a, b = random_batch("negbin", rng, n1), random_batch("negbin", rng, n2)
    joint = Batch(np.vstack([a.sequences, b.sequences]), np.r_[a.targets, b.targets])
    assert log_likelihood(p, joint) == pytest.approx(log_likelihood(p, a) + log_likelihood(p, b), rel=1e-12)


def test_tail_probability():
    theta = np.zeros(8 * 20 + 2)
    theta[-1] = np.log(2.28)
    nb = Predictor({"kind": "linear"}, "negbin", theta, 8, ALPHABET)
    want = stats.nbinom(n=2.28, p=2.28 / 3.28).sf(30)
    assert abs(tail_probability(nb, "ACDEFGHI", 30) - want) < 1e-10
    low = theta.copy()
    low[-2] = -30
    assert tail_probability(nb.with_theta(low), "ACDEFGHI", 0) < 1e-10
    high = theta.copy()
    high[-2] = np.log(1e6)
    assert tail_probability(nb.with_theta(high), "ACDEFGHI", 30) >= 1 - 1e-6
    bern = init_predictor({"kind": "linear"}, "bernoulli", 8, ALPHABET, 0)
    with pytest.raises(WrongHead):
        tail_probability(bern, "ACDEFGHI", 0)


def test_checkpoint_round_trip(tmp_path):
    for arch in ARCHS:
        p = init_predictor(arch, "negbin", 8, ALPHABET, 1)
        save_predictor(p, tmp_path / "p.json")
        back = load_predictor(tmp_path / "p.json")
        assert np.max(np.abs(back.theta - p.theta)) <= 1e-15
        assert back.architecture == p.architecture and back.head == p.head


def test_init_range():
    p = init_predictor({"kind": "mlp", "hidden": [32]}, "bernoulli", 12, ALPHABET, 0)
    assert np.all(np.abs(p.theta) <= 0.05)
