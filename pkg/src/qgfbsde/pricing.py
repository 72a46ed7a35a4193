"""Exponential-utility indifference pricing and hedging on a non-tradable index."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import norm

from .core import ConfigError, DomainError, NumericalError, PathBatch, SeedSpec, TimeGrid
from .drivers import (
    cole_hopf_inverse,
    feasible_bounds,
    transformed_driver,
    utility_driver,
)
from .market import MarketModel, PayoffSpec, simulate_index
from .solver import BsdeSolution, SolverConfig, solve_lipschitz

# stream ids; the oracle must never share draws with the pipeline
PIPELINE_STREAM = 0
ORACLE_STREAM = 7


# Transformed values below this level carry large relative regression error,
# so the pathwise Y and Z recovered from them are flagged as unreliable.
RELIABILITY_FLOOR = 0.1


@dataclass
class PriceReport:
    """Indifference price and hedge along every path.

    ``reliable`` marks the ``(path, node)`` entries where both transformed
    solutions stay above :data:`RELIABILITY_FLOOR`. The time-zero price is a
    plain Monte-Carlo mean and does not depend on it.
    """

    grid: TimeGrid
    price_paths: np.ndarray
    strategy_paths: np.ndarray
    p0: float
    p0_stderr: float
    meta: dict = field(default_factory=dict)
    reliable: np.ndarray | None = None

    @property
    def price_mean(self) -> np.ndarray:
        return self.price_paths.mean(axis=0)

    @property
    def price_stderr(self) -> np.ndarray:
        return self.price_paths.std(axis=0, ddof=1) / np.sqrt(self.price_paths.shape[0])

    @property
    def strategy_mean(self) -> np.ndarray:
        return self.strategy_paths.mean(axis=0)

    @property
    def strategy_median(self) -> np.ndarray:
        return np.median(self.strategy_paths, axis=0)


def median_stderr(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Distribution-free standard error of the sample median.

    A quarter of the distance between the order statistics ``M/2 -+ sqrt(M)``,
    the two-sigma binomial interval for the median.
    """
    x = np.sort(np.asarray(x, dtype=float), axis=axis)
    M = x.shape[axis]
    half = np.sqrt(M)
    lo = int(np.clip(np.round(M / 2 - half), 0, M - 1))
    hi = int(np.clip(np.round(M / 2 + half), 0, M - 1))
    return 0.25 * (np.take(x, hi, axis=axis) - np.take(x, lo, axis=axis))


@dataclass
class UtilitySolution:
    """Solution of the pricing qgBSDE for one terminal payoff.

    ``Y``, ``Z`` are in the original (untransformed) variables.
    ``transformed`` is the solved ``(P, Q)`` equation, absent when
    ``gamma = 0``.
    """

    Y: np.ndarray
    Z: np.ndarray
    y0: float
    iterations: int
    converged: bool
    gamma: float
    samples: np.ndarray
    transformed: BsdeSolution | None = None

    @property
    def reliable(self) -> np.ndarray:
        """Entries where the transformed value is at least :data:`RELIABILITY_FLOOR`."""
        if self.transformed is None:
            return np.ones(self.Y.shape, dtype=bool)
        return self.transformed.Y >= RELIABILITY_FLOOR


def lognormal_put(r0: float, strike: float, drift: float, vol: float, T: float) -> float:
    """``E[(K - R_T)^+]`` for ``R_T = r0 exp((drift - vol^2/2) T + vol W_T)``."""
    if vol * np.sqrt(T) == 0:
        return max(strike - r0 * np.exp(drift * T), 0.0)
    sd = vol * np.sqrt(T)
    d1 = (np.log(r0 / strike) + (drift + 0.5 * vol**2) * T) / sd
    d2 = d1 - sd
    return float(strike * norm.cdf(-d2) - r0 * np.exp(drift * T) * norm.cdf(-d1))


def solve_utility_bsde(
    model: MarketModel,
    payoff,
    paths: PathBatch,
    cfg: SolverConfig = SolverConfig(),
) -> UtilitySolution:
    """Solve the utility qgBSDE with terminal ``payoff(R_T)`` via the exponential transform.

    For ``|rho| = 1`` the quadratic term vanishes and the (then Lipschitz)
    driver is solved directly.
    """
    spec = utility_driver(model)
    cap = float(getattr(payoff, "cap", np.max(np.abs(payoff(paths.states[:, -1])))))
    g = spec.gamma
    if g == 0:
        sol = solve_lipschitz(spec, payoff, paths, cfg)
        return UtilitySolution(sol.Y, sol.Z, sol.y0, sol.iterations, sol.converged, 0.0, sol.y0_samples)
    lo, hi = feasible_bounds(spec, cap, model.horizon)
    driver = transformed_driver(spec, delta=0.5 * lo, p_max=2.0 * hi)

    def terminal(x):
        return np.exp(g * payoff(x))

    sol = solve_lipschitz(driver, terminal, paths, cfg, clamp=(lo, hi))
    P, Q = sol.Y, sol.Z
    try:
        Y, _ = cole_hopf_inverse(g, P, 0.0)
        _, Z = cole_hopf_inverse(g, P[:, :-1], Q)
    except DomainError as exc:
        raise NumericalError(f"transformed solution left the feasible region: {exc}") from exc
    return UtilitySolution(Y, Z, float(np.log(P[:, 0].mean()) / g), sol.iterations, sol.converged, g,
                           sol.y0_samples, sol)


def _diff_stderr(a: UtilitySolution, b: UtilitySolution) -> float:
    """Delta-method standard error of ``y0(a) - y0(b)`` from the joint pathwise samples."""
    sa, sb = a.samples, b.samples
    M = sa.shape[0]
    if a.gamma == 0:
        return float(np.std(sa - sb, ddof=1) / np.sqrt(M))
    ga = 1.0 / (a.gamma * sa.mean())
    gb = 1.0 / (b.gamma * sb.mean())
    d = ga * (sa - sa.mean()) - gb * (sb - sb.mean())
    return float(np.sqrt(np.sum(d * d) / (M - 1) / M))


def optimal_strategy(Z: np.ndarray, model: MarketModel, grid: TimeGrid, states: np.ndarray) -> np.ndarray:
    """Monetary amount held in the tradable asset,
    ``-rho/beta * Z + theta/(eta*beta)`` at each left node."""
    t = grid.nodes[:-1]
    R = states[:, :-1]
    beta = model.beta(t[None, :], R)
    if np.any(beta == 0):
        raise ConfigError("beta vanishes; strategy undefined")
    th = model.theta(t[None, :], R)
    return -model.rho / beta * Z + th / (model.eta * beta)


def price_indifference(
    model: MarketModel,
    payoff: PayoffSpec,
    grid: TimeGrid,
    M: int,
    seed: SeedSpec,
    cfg: SolverConfig = SolverConfig(),
    paths: PathBatch | None = None,
    zero_solution: UtilitySolution | None = None,
    forward_scheme: str = "exact",
    workers: int = 1,
) -> PriceReport:
    """Indifference price ``p_t = Y^F_t - Y^0_t`` and optimal hedge on one path set.

    ``paths`` and ``zero_solution`` may be passed in to share work across a
    sweep of strikes (the zero-claim solve does not depend on the payoff).
    """
    payoff.validate(model.r0 / 4, 4 * model.r0)
    if paths is None:
        paths = simulate_index(model, grid, M, seed.child(PIPELINE_STREAM), scheme=forward_scheme, workers=workers)
    zero = PayoffSpec("zero")
    sol_f = solve_utility_bsde(model, payoff, paths, cfg)
    sol_0 = zero_solution if zero_solution is not None else solve_utility_bsde(model, zero, paths, cfg)
    price = sol_f.Y - sol_0.Y
    p0 = sol_f.y0 - sol_0.y0
    stderr = _diff_stderr(sol_f, sol_0)
    strategy = optimal_strategy(sol_f.Z, model, paths.grid, paths.states)
    meta = {
        "rho": model.rho,
        "eta": model.eta,
        "strike": payoff.strike,
        "r0": model.r0,
        "N": paths.grid.steps,
        "M": paths.paths,
        "seed": seed.master,
        "iterations_F": sol_f.iterations,
        "iterations_0": sol_0.iterations,
        "converged": bool(sol_f.converged and sol_0.converged),
        "gamma": sol_f.gamma,
    }
    reliable = sol_f.reliable & sol_0.reliable
    meta["reliable_fraction"] = float(reliable[:, :-1].mean())
    return PriceReport(paths.grid, price, strategy, float(p0), stderr, meta, reliable)


def shifted_drift(model: MarketModel) -> float:
    """Drift of the index once the ``-rho*theta*q`` term is removed by a change of measure."""
    return model.mu_bar - model.rho * (model.alpha_bar / model.beta_bar) * model.sigma_bar


def distortion_oracle(model: MarketModel, payoff, M: int, seed: SeedSpec) -> tuple[float, float]:
    """Closed-form reduction of the pricing qgBSDE, evaluated by one-shot sampling.

    ``p_0 = log E[exp(gamma F(R~_T))] / gamma`` with ``gamma = -eta(1-rho^2)``,
    where ``R~`` is the geometric index with drift ``mu - rho*theta*sigma``.
    Returns ``(p_0, stderr)``; the error uses the delta method on the log.
    """
    if not (model.is_geometric and model.constant_asset):
        raise ConfigError("distortion oracle needs a geometric index and constant theta")
    if int(M) < 2:
        raise ConfigError("distortion oracle needs at least two samples")
    T = model.horizon
    rng = seed.child(ORACLE_STREAM).block_generator(0)
    w = rng.standard_normal(int(M))
    m = shifted_drift(model)
    s = model.sigma_bar
    RT = model.r0 * np.exp((m - 0.5 * s * s) * T + s * np.sqrt(T) * w)
    F = np.asarray(payoff(RT), dtype=float)
    g = model.gamma
    if g == 0:
        return float(F.mean()), float(F.std(ddof=1) / np.sqrt(M))
    E = np.exp(g * F)
    mean = E.mean()
    p0 = np.log(mean) / g
    se = E.std(ddof=1) / np.sqrt(M) / (abs(g) * mean)
    return float(p0), float(se)


class AnalyticUtilitySolution:
    """Exact solution of the pricing qgBSDE for a geometric index and constant theta.

    The exponential transform makes the equation linear; after removing the
    ``-rho*theta*q`` term by a change of drift,
    ``exp(gamma Y(t,r)) = exp(gamma c (T-t)) E[exp(gamma F(R~_T)) | R~_t = r]``
    with ``c = theta^2/(2 eta)``. The expectation is integrated on a uniform
    normal-quantile grid in log space and tabulated on a log-spot grid, so
    values stay accurate where ``exp(gamma Y)`` underflows. ``Z`` is
    ``sigma_bar * dY/dlog r`` from the cubic spline.
    """

    def __init__(self, model: MarketModel, payoff, grid: TimeGrid, r_points: int = 801,
                 r_span: float = 12.0, xi_points: int = 4001, xi_max: float = 10.0):
        from scipy.interpolate import CubicSpline
        from scipy.special import logsumexp

        if not (model.is_geometric and model.constant_asset):
            raise ConfigError("analytic solution needs a geometric index and constant theta")
        self.model, self.payoff, self.grid = model, payoff, grid
        th = model.alpha_bar / model.beta_bar
        c = th * th / (2 * model.eta)
        g = model.gamma
        m = shifted_drift(model)
        s = model.sigma_bar
        self.log_r = np.linspace(np.log(model.r0 / r_span), np.log(model.r0 * r_span), r_points)
        xi = np.linspace(-xi_max, xi_max, xi_points)
        logw = norm.logpdf(xi) + np.log(xi[1] - xi[0])
        logw[[0, -1]] += np.log(0.5)
        self.splines = []
        for i, tau in enumerate(grid.horizon - grid.nodes[:-1]):
            logRT = self.log_r[:, None] + (m - 0.5 * s * s) * tau + s * np.sqrt(tau) * xi[None, :]
            F = np.asarray(payoff(np.exp(logRT)), dtype=float)
            if g == 0:
                y = c * tau + (F * np.exp(logw)).sum(axis=1)
            else:
                y = (g * c * tau + logsumexp(g * F + logw, axis=1)) / g
            self.splines.append(CubicSpline(self.log_r, y))

    def y(self, i: int, r) -> np.ndarray:
        if i == self.grid.steps:
            return np.asarray(self.payoff(r), dtype=float)
        return self.splines[i](np.log(r))

    def z(self, i: int, r) -> np.ndarray:
        return self.model.sigma_bar * self.splines[i](np.log(r), 1)

    def on_paths(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pathwise ``(Y, Z)`` arrays shaped like a :class:`BsdeSolution`."""
        N = self.grid.steps
        Y = np.column_stack([self.y(i, states[:, i]) for i in range(N + 1)])
        Z = np.column_stack([self.z(i, states[:, i]) for i in range(N)])
        return Y, Z
