import numpy as np
import pytest
from scipy.stats import norm

from qgfbsde import ConfigError, MarketModel, PayoffSpec, SeedSpec, TimeGrid, build_grid, simulate_index
from qgfbsde.studies import (
    SmoothPutCase,
    fit_slope,
    l2_statistic,
    regularity_study,
    sde_scaling_study,
    sup_increment_moments,
    truncation_study,
    zbar,
)


def test_fit_slope_exact_power_law():
    h = np.array([0.04, 0.02, 0.01, 0.005])
    slope, se = fit_slope(h, 3.0 * h**1.5)
    assert slope == pytest.approx(1.5, abs=1e-12)
    assert se < 1e-10
    with pytest.raises(ConfigError):
        fit_slope([1.0], [1.0])


def test_constant_z_has_zero_statistic():
    fine, coarse = build_grid(1, 64), build_grid(1, 8)
    z = np.full((5, 65), 2.5)
    zb = zbar(z, fine, coarse)
    np.testing.assert_array_equal(zb, 2.5)
    np.testing.assert_array_equal(l2_statistic(z, zb, fine, coarse), 0.0)


def test_linear_z_midpoint_and_closed_form():
    fine, coarse = build_grid(1, 4096), build_grid(1, 16)
    slope = 3.0
    z = slope * fine.nodes[None, :]
    zb = zbar(z, fine, coarse)
    mid = coarse.nodes[:-1] + coarse.h / 2
    np.testing.assert_allclose(zb[0], slope * mid, rtol=1e-12)
    stat = l2_statistic(z, zb, fine, coarse)[0]
    exact = coarse.steps * slope**2 * coarse.h**3 / 12
    assert stat == pytest.approx(exact, rel=1e-4)


def test_zbar_regression_mode_on_deterministic_average():
    fine, coarse = build_grid(1, 40), build_grid(1, 10)
    R = simulate_index(MarketModel(), fine, 2000, SeedSpec(3)).states
    z = np.tile(fine.nodes, (2000, 1))
    zb = zbar(z, fine, coarse, states=R[:, ::4][:, :10])
    np.testing.assert_allclose(zb, zbar(z, fine, coarse), atol=1e-10)


def test_zbar_rejects_non_refining_grid():
    with pytest.raises(ConfigError):
        zbar(np.zeros((1, 31)), build_grid(1, 30), build_grid(1, 7))


CASE = SmoothPutCase()


def test_smooth_case_z_is_sigma_r_dy_dr():
    t, r, d = 0.3, np.array([120.0, 170.0, 230.0]), 1e-4
    dy = (CASE.y(t, r * (1 + d)) - CASE.y(t, r * (1 - d))) / (2 * d)
    np.testing.assert_allclose(CASE.z(t, r), CASE.sigma * dy, rtol=1e-6)


def test_smooth_case_terminal_limit():
    r = np.array([150.0, 180.0, 210.0])
    np.testing.assert_allclose(CASE.y(1.0, r), CASE.terminal(r), rtol=1e-14)


def test_smooth_case_y_is_expectation():
    R = simulate_index(CASE.model(), build_grid(1, 1), 200000, SeedSpec(4)).states[:, -1]
    v = CASE.terminal(R)
    assert abs(v.mean() - CASE.y(0.0, 170.0)) < 3 * v.std() / np.sqrt(v.size)


def test_z_conditional_is_martingale_mean():
    assert CASE.z_conditional(0.2, 170.0, 0.2) == pytest.approx(CASE.z(0.2, 170.0), rel=1e-14)
    model = CASE.model()
    g = build_grid(0.6, 1)
    R = simulate_index(MarketModel(r0=170.0, horizon=0.6), g, 200000, SeedSpec(5)).states[:, -1]
    zs = CASE.z(0.6, R)
    assert abs(zs.mean() - CASE.z_conditional(0.0, 170.0, 0.6)) < 3 * zs.std() / np.sqrt(zs.size)
    del model


@pytest.fixture(scope="module")
def regularity():
    return regularity_study(CASE, M=4096, seed=SeedSpec(8))


def test_regularity_rates(regularity):
    assert 0.8 <= regularity.z_slope <= 1.2
    assert 0.8 <= regularity.y_slope <= 1.2
    assert len(regularity.rows) == 4


def test_regularity_halving_ratio(regularity):
    rows = {r["N"]: r for r in regularity.rows}
    ratio = rows[50]["z_regularity"] / rows[100]["z_regularity"]
    assert 1.7 <= ratio <= 2.3


def test_zbar_optimality(regularity):
    assert regularity.optimality_holds
    for r in regularity.rows:
        assert r["z_regularity"] <= r["z_left_endpoint"] * (1 + 1e-12)


def test_regularity_consistent_in_M(regularity):
    big = regularity_study(CASE, refinements=(25, 50), M=8192, seed=SeedSpec(8))
    for a in big.rows:
        b = next(r for r in regularity.rows if r["N"] == a["N"])
        assert abs(a["z_regularity"] - b["z_regularity"]) < 3 * np.hypot(a["z_regularity_se"], b["z_regularity_se"])


def test_regularity_bitwise_reproducible():
    a = regularity_study(CASE, refinements=(25, 50), M=1000, seed=SeedSpec(9))
    b = regularity_study(CASE, refinements=(25, 50), M=1000, seed=SeedSpec(9))
    assert a.rows == b.rows


def test_regularity_solver_mode_runs():
    # Z in solver mode sits on an O(1/M) noise floor; only the Y rate is asserted
    rep = regularity_study(CASE, M=4096, seed=SeedSpec(10), mode="solver")
    assert rep.mode == "solver"
    assert 0.8 <= rep.y_slope <= 1.2
    assert rep.optimality_holds


def test_regularity_rejects_bad_input():
    with pytest.raises(ConfigError):
        regularity_study(CASE, refinements=(30, 200), M=10)
    with pytest.raises(ConfigError):
        regularity_study(CASE, M=10, mode="magic")


@pytest.fixture(scope="module")
def truncation():
    return truncation_study(M=4096, grid=TimeGrid(1, 50), seed=SeedSpec(11))


def test_truncation_errors_nonincreasing(truncation):
    assert all(truncation.flags.values()), truncation.flags
    assert [r["n"] for r in truncation.rows] == [1, 2, 4, 8]


def test_truncation_monotone_improvement(truncation):
    y = {r["n"]: r["y0"] for r in truncation.rows}
    se = {r["n"]: r["y0_error_se"] for r in truncation.rows}
    assert abs(y[1] - y[8]) >= abs(y[4] - y[8]) - 2 * np.hypot(se[1], se[4])


def test_truncation_reference_is_recorded(truncation):
    assert truncation.reference == "analytic"
    assert np.isfinite(truncation.pipeline_y0) and truncation.pipeline_y0_se > 0


def test_pipeline_agrees_with_analytic_reference():
    rep = truncation_study(levels=(1,), M=20000, grid=TimeGrid(1, 50), seed=SeedSpec(11))
    assert abs(rep.pipeline_y0 - rep.reference_y0) <= 3 * rep.pipeline_y0_se + 0.02


def test_truncation_pipeline_reference():
    rep = truncation_study(levels=(1, 2), M=2048, grid=TimeGrid(1, 25), seed=SeedSpec(12), reference="pipeline")
    assert rep.reference == "pipeline" and rep.reference_y0 == rep.pipeline_y0
    with pytest.raises(ConfigError):
        truncation_study(M=100, reference="large-n")


def test_scaling_slopes():
    rep = sde_scaling_study(M=2000, seed=SeedSpec(13))
    assert 0.8 <= rep.slopes[2][0] <= 1.2
    assert 1.6 <= rep.slopes[4][0] <= 2.4


def test_scaling_deterministic_index():
    model = MarketModel(sigma_bar=0.0)
    fine = build_grid(1, 40)
    X = simulate_index(model, fine, 3, SeedSpec(1)).states
    out = sup_increment_moments(X, fine, 4, (1, 2), (2,))
    x = 170.0 * np.exp(0.12 * fine.nodes)
    for k in (1, 2):
        starts = np.arange(0, 40 - 4 * k + 1, 4)
        exact = np.mean((x[starts + 4 * k] - x[starts]) ** 2)
        np.testing.assert_allclose(out[(2, k)], exact, rtol=1e-12)
    rep = sde_scaling_study(model, M=10, seed=SeedSpec(1))
    assert all(r["moment_se"] < 1e-9 * r["moment"] for r in rep.rows)
