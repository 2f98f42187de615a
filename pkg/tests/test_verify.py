import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import spearmanr

from screenlab.design import asymptotic_precision, info_gain_bound
from screenlab.errors import GridTooCoarse, OptimizationFailure, SingularPrecision
from screenlab.design import InformationEstimate
from screenlab.verify import (
    SmoothSparseFamily1D,
    entropy_gain,
    exact_information,
    fit,
    load_rows_csv,
    mle_path,
    posterior_grid,
    save_rows_csv,
)

FAM = SmoothSparseFamily1D()


def test_family_basics():
    assert len(FAM.xs) == 125 and FAM.px.sum() == pytest.approx(1.0)
    assert FAM.px[FAM.in_s].sum() == pytest.approx(FAM.eta)
    assert np.all(FAM.p_true[~FAM.in_s] == 0)
    assert FAM.level(FAM.theta0[None, :])[0] == pytest.approx(FAM.level0, abs=1e-12)


@given(st.floats(-5, 5))
def test_constraint_holds_for_every_theta(theta):
    p = FAM.prob([theta], FAM.xs)
    assert FAM.px @ p == pytest.approx(FAM.p1, abs=1e-12)
    assert np.all(p[~FAM.in_s] == 0)


def test_expected_log_likelihood_peaks_at_truth():
    grid = np.linspace(0, 2, 201)
    ell = []
    for t in grid:
        p = FAM.prob([t], FAM.xs)[FAM.in_s]
        w, pt = FAM.px[FAM.in_s], FAM.p_true[FAM.in_s]
        ell.append(w @ (pt * np.log(p) + (1 - pt) * np.log1p(-p)))
    assert grid[int(np.argmax(ell))] == pytest.approx(1.0)


def test_conditional_sampler():
    n1, n0 = FAM.sample_counts(200_000, 0.5, np.random.default_rng(0))
    assert n1.sum() == n0.sum() == 100_000
    assert np.all(n1[~FAM.in_s] == 0)
    want = FAM.px * FAM.p_true / FAM.p1
    assert np.max(np.abs(n1 / 100_000 - want)) < 0.005


def test_mle_path_consistency_and_pathology():
    for q in (FAM.p1, 0.5, 1.0):
        rows = mle_path(FAM, q, [5000], "leavs", seeds=[0])
        assert rows[0]["tv"] < 0.05
    for row in mle_path(FAM, 1.0, [50, 500, 5000], "xy-only", seeds=[0]):
        assert row["tv"] > 0.3
        assert row["tv"] == pytest.approx(FAM.eta - FAM.p1, abs=1e-3)
    assert mle_path(FAM, FAM.p1, [5000], "xy-only", seeds=[0])[0]["tv"] < 0.05


def test_soft_and_hard_constraints_agree():
    for q in (FAM.p1, 0.5, 1.0):
        n1, n0 = FAM.sample_counts(2000, q, np.random.default_rng(3))
        hard = fit(FAM, n1, n0, "leavs")
        soft = fit(FAM, n1, n0, "leavs-soft", pool_weight=1e4)
        assert np.max(np.abs(hard.theta - soft.theta)) < 0.01


def test_leavs_errors_shrink_with_n():
    n_grid = [50, 500, 5000]
    for q in (FAM.p1, 0.5, 1.0):
        rows = mle_path(FAM, q, n_grid, "leavs", seeds=range(10))
        mean_err = [np.mean([r["param_error"] for r in rows if r["n"] == n]) for n in n_grid]
        assert spearmanr(n_grid, mean_err)[0] <= -0.8


def test_two_parameter_family():
    fam = SmoothSparseFamily1D(theta0=[1.0, 0.5])
    rows = mle_path(fam, 1.0, [5000], "leavs", seeds=[1])
    assert rows[0]["tv"] < 0.05 and len(rows[0]["theta_hat"]) == 2
    info = exact_information(fam)
    assert info.I1.shape == (2, 2) and np.allclose(info.I1, info.I1.T)


def test_multistart_disagreement_is_reported():
    n1, n0 = FAM.sample_counts(100, 0.5, np.random.default_rng(0))
    with pytest.raises(OptimizationFailure):
        fit(FAM, n1, n0, "leavs", tol=-1.0)


def test_posterior_grid_bvm():
    info = exact_information(FAM)
    H1 = asymptotic_precision(1.0, info.I0, info.I1, info.p_S0_given_y0)
    n = 5000
    n1, n0 = FAM.sample_counts(n, 1.0, np.random.default_rng(np.random.SeedSequence([0, n])))
    sd = 1 / np.sqrt(n * H1[0, 0])
    pg = posterior_grid(FAM, n1, n0, [[1 - 12 * sd, 1 + 12 * sd]], 1201, n * H1)
    assert pg.tv <= 0.05
    assert pg.posterior.sum() == pytest.approx(1.0) and pg.gaussian.sum() == pytest.approx(1.0)


def test_posterior_grid_boundary():
    n1, n0 = FAM.sample_counts(5000, 1.0, np.random.default_rng(0))
    with pytest.raises(GridTooCoarse):
        posterior_grid(FAM, n1, n0, [[2.0, 3.0]], 101)


def test_entropy_gain():
    info = exact_information(FAM)
    assert entropy_gain(info, 0.3, 0.3) == 0.0
    assert entropy_gain(info, 1.0, 0.2) == pytest.approx(-entropy_gain(info, 0.2, 1.0))
    p1, eta = 0.015, 0.03
    b4 = InformationEstimate(I0=1.0, I1=1.0, eta=eta, p_S0_given_y0=eta / (1 - eta))
    assert entropy_gain(b4, 1.0, p1) >= info_gain_bound(p1, 1)[0] - 0.05
    with pytest.raises(SingularPrecision):
        entropy_gain(InformationEstimate(I0=0.0, I1=0.0, eta=eta, p_S0_given_y0=0.1), 1.0, 0.5)


def test_rows_csv_round_trip(tmp_path):
    rows = mle_path(FAM, 0.5, [100], "leavs", seeds=[0])
    save_rows_csv(rows, tmp_path / "r.csv")
    back = load_rows_csv(tmp_path / "r.csv")
    assert float(back[0]["tv"]) == rows[0]["tv"]
    assert float(back[0]["theta_hat"]) == rows[0]["theta_hat"][0]
