import numpy as np
import pytest

from qgfbsde import ConfigError, MarketModel, PayoffSpec, SeedSpec, SimulationError, TimeGrid, build_grid
from qgfbsde import simulate_asset, simulate_index, theta
from qgfbsde.core import PathBatch
from qgfbsde.market import correlated_increments


def _zero_noise_batch(model, grid, M=1):
    N = grid.steps
    z = np.zeros((M, N))
    return PathBatch(grid, np.full((M, N + 1), model.r0), z, z)


def test_exact_step_without_noise():
    m = MarketModel()
    g = build_grid(1.0, 1)
    # single path with dW1 = 0: reuse the exact-step formula through a zero-variance model
    R = m.r0 * np.exp(m.mu_bar - m.sigma_bar**2 / 2)
    assert R == pytest.approx(176.22, abs=5e-3)
    paths = simulate_index(MarketModel(sigma_bar=0.0, mu_bar=m.mu_bar - m.sigma_bar**2 / 2), g, 3, SeedSpec(1))
    np.testing.assert_allclose(paths.states[:, 1], R, rtol=1e-14)


def test_degenerate_index_is_constant():
    m = MarketModel(mu_bar=0.0, sigma_bar=0.0)
    for scheme in ("exact", "euler"):
        p = simulate_index(m, build_grid(1, 50), 10, SeedSpec(2), scheme=scheme)
        np.testing.assert_array_equal(p.states, 170.0)


def test_lognormal_mean():
    m = MarketModel()
    M = 70000
    R = simulate_index(m, build_grid(1, 100), M, SeedSpec(21)).states[:, -1]
    se = R.std(ddof=1) / np.sqrt(M)
    assert abs(R.mean() - m.r0 * np.exp(m.mu_bar)) < 3 * se


def test_euler_matches_exact_in_mean():
    m = MarketModel()
    g = build_grid(1, 200)
    e = simulate_index(m, g, 20000, SeedSpec(4), scheme="euler").states[:, -1]
    x = simulate_index(m, g, 20000, SeedSpec(4), scheme="exact").states[:, -1]
    # same noise; strong error of Euler on GBM is O(h^0.5)
    assert np.mean(np.abs(e - x)) < 0.02 * m.r0


def test_general_coefficients_use_euler():
    m = MarketModel(drift=lambda t, r: 0.05 * (200.0 - r), vol=lambda t, r: 0.2 * np.sqrt(np.abs(r)) + 1.0)
    p = simulate_index(m, build_grid(1, 50), 100, SeedSpec(2))
    assert np.all(np.isfinite(p.states))


def test_divergent_sde_raises():
    m = MarketModel(drift=lambda t, r: r**3)
    with pytest.raises(SimulationError, match="step"):
        simulate_index(m, build_grid(1, 50), 10, SeedSpec(2))


def test_unknown_scheme():
    with pytest.raises(ConfigError):
        simulate_index(MarketModel(), build_grid(1, 5), 10, SeedSpec(1), scheme="milstein")


def test_rho_one_copies_w1():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 50, 10))
    np.testing.assert_array_equal(correlated_increments(1.0, a, b), a)
    np.testing.assert_array_equal(correlated_increments(-1.0, a, b), -a)


@pytest.mark.parametrize("rho", [0.0, 0.5, 0.9])
def test_w3_correlation_and_variance(rho):
    g = build_grid(1, 20)
    M = 20000
    p = simulate_index(MarketModel(rho=rho), g, M, SeedSpec(8))
    dW3 = correlated_increments(rho, p.dW1, p.dW2)
    assert abs(np.corrcoef(p.dW1.ravel(), dW3.ravel())[0, 1] - rho) < 5 / np.sqrt(M * g.steps)
    var_se = g.h * np.sqrt(2 / M)
    assert np.all(np.abs(dW3.var(axis=0, ddof=1) - g.h) < 5 * var_se)


def test_rho_one_asset_and_index_share_increments():
    m = MarketModel(rho=1.0)
    g = build_grid(1, 30)
    idx = simulate_index(m, g, 50, SeedSpec(1))
    S = simulate_asset(m, idx).states
    dlogR = np.diff(np.log(idx.states), axis=1)
    dlogS = np.diff(np.log(S), axis=1)
    # both are affine in the same dW1, so increments are perfectly rank-correlated
    for k in range(5):
        assert np.corrcoef(dlogR[k], dlogS[k])[0, 1] > 1 - 1e-12


def test_asset_setup_example():
    m = MarketModel(rho=0.5)
    S = simulate_asset(m, simulate_index(m, build_grid(1, 100), 4000, SeedSpec(2))).states
    assert np.all(S[:, 0] == 173.0)
    assert S[:, -1].mean() == pytest.approx(173.0 * np.exp(0.1), rel=0.02)


def test_asset_state_dependent_coefficients():
    m = MarketModel(alpha_fn=lambda t, r: 0.1 + 0 * r, beta_fn=lambda t, r: 0.35 + 0 * r)
    c = MarketModel()
    g = build_grid(1, 40)
    idx = simulate_index(c, g, 100, SeedSpec(3))
    np.testing.assert_allclose(simulate_asset(m, idx).states, simulate_asset(c, idx).states, rtol=1e-12)


def test_theta_values():
    assert theta(MarketModel(), 0.0, 170.0) == pytest.approx(0.285714, abs=1e-6)
    assert theta(MarketModel(alpha_bar=0.0), 0.0, 170.0) == 0.0
    assert theta(MarketModel(alpha_bar=0.07), 0.0, 170.0) == pytest.approx(0.2, abs=1e-15)


def test_validate_rejects_degenerate_beta():
    with pytest.raises(ConfigError):
        MarketModel(beta_bar=0.0).validate()
    with pytest.raises(ConfigError):
        MarketModel(beta_fn=lambda t, r: 1e-6 * r).validate()
    assert MarketModel().validate() == pytest.approx(0.1 / 0.35)


@pytest.mark.parametrize("kw", [dict(rho=1.5), dict(r0=-1.0), dict(eta=0.0), dict(horizon=0.0)])
def test_model_rejects(kw):
    with pytest.raises(ConfigError):
        MarketModel(**kw)


def test_payoffs():
    put = PayoffSpec("put", 180.0)
    assert put.cap == 180.0
    np.testing.assert_array_equal(put(np.array([100.0, 180.0, 200.0])), [80.0, 0.0, 0.0])
    call = PayoffSpec("call", 180.0, cap=30.0)
    np.testing.assert_array_equal(call(np.array([100.0, 200.0, 300.0])), [0.0, 20.0, 30.0])
    tab = PayoffSpec("table", points=[(100, 1.0), (200, 3.0)])
    np.testing.assert_allclose(tab(np.array([50, 150, 250.0])), [1.0, 2.0, 3.0])
    assert PayoffSpec("zero")(np.ones(3)).sum() == 0.0
    assert PayoffSpec("put", 180.0, scale=0.05).cap == pytest.approx(9.0)


@pytest.mark.parametrize("kw", [dict(kind="call", strike=180.0), dict(kind="put"), dict(kind="digital", strike=1.0),
                                dict(kind="table", points=[(1, 0)]), dict(kind="table", points=[(2, 0), (1, 0)])])
def test_payoff_rejects(kw):
    with pytest.raises(ConfigError):
        PayoffSpec(**kw)


def test_payoff_cap_enforced():
    with pytest.raises(ConfigError, match="cap"):
        PayoffSpec("put", 180.0, cap=10.0).validate(40, 680)
