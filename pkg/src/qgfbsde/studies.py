"""Empirical rate studies: Z path regularity, truncation error, SDE increment moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .core import BLOCK_SIZE, ConfigError, SeedSpec, TimeGrid, build_grid
from .market import MarketModel, PayoffSpec, simulate_index
from .pricing import AnalyticUtilitySolution, solve_utility_bsde
from .drivers import utility_driver
from .solver import Projector, RegressionBasis, SolverConfig, solve_lipschitz, solve_truncated


def fit_slope(h: Sequence[float], stat: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope of ``log(stat)`` against ``log(h)`` and its standard error."""
    x = np.log(np.asarray(h, dtype=float))
    y = np.log(np.asarray(stat, dtype=float))
    if x.size < 2:
        raise ConfigError("need at least two points for a rate fit")
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    if x.size > 2:
        resid = y - A @ coef
        s2 = resid @ resid / (x.size - 2)
        se = float(np.sqrt(s2 / np.sum((x - x.mean()) ** 2)))
    else:
        se = 0.0
    return float(coef[0]), se


def _interval_slices(fine: TimeGrid, coarse: TimeGrid):
    if not fine.refines(coarse):
        raise ConfigError(f"fine grid ({fine.steps} steps) does not refine coarse grid ({coarse.steps} steps)")
    r = fine.steps // coarse.steps
    return r, [slice(i * r, (i + 1) * r + 1) for i in range(coarse.steps)]


def _trapezoid_mean(v: np.ndarray) -> np.ndarray:
    """Mean over the last axis by the trapezoid rule on equally spaced nodes."""
    return (v[..., 1:].sum(axis=-1) + v[..., :-1].sum(axis=-1)) / (2 * (v.shape[-1] - 1))


def zbar(
    z_fine: np.ndarray,
    fine: TimeGrid,
    coarse: TimeGrid,
    conditional: Optional[Callable[[int, np.ndarray], np.ndarray]] = None,
    states: Optional[np.ndarray] = None,
    basis: Optional[RegressionBasis] = None,
) -> np.ndarray:
    """Best ``F_{t_i}``-measurable constant approximation of ``Z`` on each coarse interval.

    ``z_fine`` holds ``Z`` at every fine node (``M x (Nf+1)``). The interval
    average ``(1/h) int Z ds`` is taken by the trapezoid rule and then
    conditioned on ``F_{t_i}``: by ``conditional(i, x_i)`` when given
    (analytic mode), by regression on ``basis(states[:, i])`` when coarse
    ``states`` are given, and left as is otherwise (deterministic ``Z``).
    Returns ``M x N`` values, one per coarse interval.
    """
    z_fine = np.atleast_2d(np.asarray(z_fine, dtype=float))
    r, slices = _interval_slices(fine, coarse)
    if z_fine.shape[1] != fine.steps + 1:
        raise ConfigError(f"z_fine needs {fine.steps + 1} columns, got {z_fine.shape[1]}")
    out = np.empty((z_fine.shape[0], coarse.steps))
    for i, sl in enumerate(slices):
        if conditional is not None:
            out[:, i] = conditional(i, None if states is None else states[:, i])
            continue
        avg = _trapezoid_mean(z_fine[:, sl])
        if states is not None:
            proj = Projector(states[:, i], basis or RegressionBasis(include_terminal=False), where=f" at step {i}")
            avg = proj.fit(avg)[1]
        out[:, i] = avg
    return out


def l2_statistic(z_fine: np.ndarray, approx: np.ndarray, fine: TimeGrid, coarse: TimeGrid) -> np.ndarray:
    """Per-path ``sum_i int_{t_i}^{t_{i+1}} |Z_s - approx_i|^2 ds`` (trapezoid rule)."""
    z_fine = np.atleast_2d(z_fine)
    approx = np.atleast_2d(approx)
    _, slices = _interval_slices(fine, coarse)
    total = np.zeros(z_fine.shape[0])
    for i, sl in enumerate(slices):
        d = z_fine[:, sl] - approx[:, i : i + 1]
        total += _trapezoid_mean(d * d) * coarse.h
    return total


@dataclass(frozen=True)
class SmoothPutCase:
    """Zero-driver BSDE on a geometric index with terminal ``K * Phi(log(K/x)/width)``.

    The terminal is a smoothed digital put, bounded by ``K``. Its value
    function and control have closed forms:
    ``Y = K Phi(d)``, ``Z = -sigma K phi(d)/v`` with
    ``d = (log(K/r) - m(T-t))/v``, ``v = sqrt(width^2 + sigma^2 (T-t))`` and
    ``m = mu - sigma^2/2``.
    """

    mu: float = 0.12
    sigma: float = 0.41
    r0: float = 170.0
    strike: float = 180.0
    width: float = 0.1
    horizon: float = 1.0

    @property
    def m(self) -> float:
        return self.mu - 0.5 * self.sigma**2

    def v(self, t):
        return np.sqrt(self.width**2 + self.sigma**2 * (self.horizon - np.asarray(t, dtype=float)))

    def d(self, t, r):
        return (np.log(self.strike / r) - self.m * (self.horizon - t)) / self.v(t)

    def terminal(self, x):
        return self.strike * norm.cdf(np.log(self.strike / np.asarray(x, dtype=float)) / self.width)

    def y(self, t, r):
        return self.strike * norm.cdf(self.d(t, r))

    def z(self, t, r):
        return -self.sigma * self.strike * norm.pdf(self.d(t, r)) / self.v(t)

    def z_conditional(self, t, r, s):
        """``E[Z_s | R_t = r]`` for ``s >= t`` by Gaussian integration of ``phi``."""
        v_s = self.v(s)
        a = (np.log(self.strike / r) - self.m * (self.horizon - t)) / v_s
        b2 = self.sigma**2 * (s - t) / v_s**2
        k = np.sqrt(1.0 + b2)
        return -self.sigma * self.strike * norm.pdf(a / k) / (k * v_s)

    def model(self) -> MarketModel:
        return MarketModel(r0=self.r0, mu_bar=self.mu, sigma_bar=self.sigma, horizon=self.horizon)


@dataclass
class RegularityReport:
    rows: list = field(default_factory=list)
    z_slope: float = float("nan")
    z_slope_se: float = float("nan")
    y_slope: float = float("nan")
    y_slope_se: float = float("nan")
    mode: str = "analytic"

    def columns(self):
        return ["N", "h", "y_increment", "y_increment_se", "z_regularity", "z_regularity_se", "z_left_endpoint"]

    @property
    def optimality_holds(self) -> bool:
        return all(r["z_regularity"] <= r["z_left_endpoint"] * (1 + 1e-12) for r in self.rows)


def regularity_study(
    case: SmoothPutCase = SmoothPutCase(),
    refinements: Sequence[int] = (25, 50, 100, 200),
    M: int = 20000,
    seed: SeedSpec = SeedSpec(2024),
    substeps: int = 8,
    mode: str = "analytic",
    cfg: Optional[SolverConfig] = None,
) -> RegularityReport:
    """Measure the Y-increment and Z-regularity statistics over grid refinements.

    All refinements share one fine path set (``max(refinements)*substeps``
    steps), so the Monte-Carlo noise is common to every row. ``mode='solver'``
    replaces the closed-form control by LSMC estimates on the finest grid
    and conditions by regression; its statistic carries an ``O(1/M)`` noise
    floor that can dominate ``O(h)``.
    """
    refinements = sorted(int(n) for n in refinements)
    finest = refinements[-1]
    if any(finest % n for n in refinements):
        raise ConfigError("refinements must all divide the finest grid")
    if mode not in ("analytic", "solver"):
        raise ConfigError(f"unknown regularity mode {mode!r}")
    model = case.model()
    if mode == "solver":
        return _regularity_solver(case, model, refinements, M, seed, substeps, cfg or SolverConfig(max_iterations=2))
    fine = build_grid(case.horizon, finest * substeps)
    tf = fine.nodes
    z_stat = {n: [] for n in refinements}
    z_left = {n: [] for n in refinements}
    y_sum = {n: np.zeros((n, fine.steps // n)) for n in refinements}
    y_sq = {n: np.zeros((n, fine.steps // n)) for n in refinements}
    count = 0
    for c, lo in enumerate(range(0, M, BLOCK_SIZE)):
        m = min(BLOCK_SIZE, M - lo)
        R = simulate_index(model, fine, m, seed.child(1000 + c)).states
        Zf = case.z(tf[None, :], R)
        Yf = case.y(tf[None, :], R)
        Yf[:, -1] = case.terminal(R[:, -1])
        count += m
        for n in refinements:
            coarse = build_grid(case.horizon, n)
            r = fine.steps // n
            zb = zbar(Zf, fine, coarse, conditional=lambda i, _x, r=r: _analytic_zbar(case, fine, i, r, R))
            z_stat[n].append(l2_statistic(Zf, zb, fine, coarse))
            z_left[n].append(l2_statistic(Zf, Zf[:, ::r][:, :n], fine, coarse))
            # |Y_t - Y_{t_i}|^2 at every fine offset inside every coarse interval
            sq = (Yf[:, :-1].reshape(m, n, r) - Yf[:, :-1:r][:, :, None]) ** 2
            y_sum[n] += sq.sum(axis=0)
            y_sq[n] += (sq * sq).sum(axis=0)
    report = RegularityReport(mode="analytic")
    for n in refinements:
        z = np.concatenate(z_stat[n])
        zl = np.concatenate(z_left[n])
        ymean = y_sum[n] / count
        k = np.unravel_index(np.argmax(ymean), ymean.shape)
        yvar = y_sq[n][k] / count - ymean[k] ** 2
        report.rows.append({
            "N": n,
            "h": case.horizon / n,
            "y_increment": float(ymean[k]),
            "y_increment_se": float(np.sqrt(max(yvar, 0.0) / count)),
            "z_regularity": float(z.mean()),
            "z_regularity_se": float(z.std(ddof=1) / np.sqrt(z.size)),
            "z_left_endpoint": float(zl.mean()),
        })
    _fill_slopes(report)
    return report


def _analytic_zbar(case: SmoothPutCase, fine: TimeGrid, i: int, r: int, R: np.ndarray) -> np.ndarray:
    """``E[(1/h) int_{t_i}^{t_{i+1}} Z_s ds | R_{t_i}]`` by the trapezoid rule in ``s``."""
    t = fine.nodes
    k0 = i * r
    vals = np.stack([case.z_conditional(t[k0], R[:, k0], t[k0 + k]) for k in range(r + 1)], axis=-1)
    return _trapezoid_mean(vals)


def _fill_slopes(report: RegularityReport) -> None:
    h = [r["h"] for r in report.rows]
    report.z_slope, report.z_slope_se = fit_slope(h, [r["z_regularity"] for r in report.rows])
    report.y_slope, report.y_slope_se = fit_slope(h, [r["y_increment"] for r in report.rows])


def _regularity_solver(case, model, refinements, M, seed, substeps, cfg) -> RegularityReport:
    finest = refinements[-1] * substeps
    fine = build_grid(case.horizon, finest)
    paths = simulate_index(model, fine, M, seed)
    sol = solve_lipschitz(lambda t, x, y, z: 0.0 * x, case.terminal, paths, cfg)
    # Z at the final node is not produced by the scheme; hold the last value
    Zf = np.column_stack([sol.Z, sol.Z[:, -1]])
    report = RegularityReport(mode="solver")
    for n in refinements:
        coarse = build_grid(case.horizon, n)
        r = finest // n
        zb = zbar(Zf, fine, coarse, states=paths.states[:, ::r][:, :n])
        z = l2_statistic(Zf, zb, fine, coarse)
        zl = l2_statistic(Zf, Zf[:, ::r][:, :n], fine, coarse)
        Yf = sol.Y
        blocks = Yf[:, :-1].reshape(M, n, r) - Yf[:, :-1:r][:, :, None]
        report.rows.append({
            "N": n,
            "h": case.horizon / n,
            "y_increment": float((blocks**2).mean(axis=0).max()),
            "y_increment_se": float("nan"),
            "z_regularity": float(z.mean()),
            "z_regularity_se": float(z.std(ddof=1) / np.sqrt(M)),
            "z_left_endpoint": float(zl.mean()),
        })
    _fill_slopes(report)
    return report


@dataclass
class TruncationReport:
    """Errors of truncated-driver solutions against an exponential-transform reference.

    ``rows`` hold, per level ``n``: the time-zero value and its error,
    ``E[max_i |Y^n - Y|^2]`` and ``E[sum_i h |Z^n - Z|^2]`` with standard
    errors. The ``n^-12`` rate itself is not checked: errors reach the
    Monte-Carlo floor long before the rate becomes visible.
    """

    rows: list = field(default_factory=list)
    reference: str = "analytic"
    reference_y0: float = float("nan")
    pipeline_y0: float = float("nan")
    pipeline_y0_se: float = float("nan")
    flags: dict = field(default_factory=dict)

    def columns(self):
        return ["n", "y0", "y0_error", "y0_error_se", "sup_y_error", "sup_y_error_se",
                "z_error", "z_error_se", "iterations", "converged"]


def _nonincreasing(values, ses, k: float = 2.0) -> bool:
    return all(b <= a + k * np.hypot(sa, sb) for a, b, sa, sb in zip(values, values[1:], ses, ses[1:]))


def truncation_study(
    model: MarketModel = MarketModel(rho=0.5),
    payoff=PayoffSpec("put", 180.0),
    levels: Sequence[int] = (1, 2, 4, 8),
    grid: TimeGrid = TimeGrid(1.0, 100),
    M: int = 20000,
    seed: SeedSpec = SeedSpec(2024),
    cfg: Optional[SolverConfig] = None,
    reference: str = "analytic",
) -> TruncationReport:
    """Solve the truncated pricing BSDE for each level on one shared path set.

    The reference is the exponential-transform solution: the closed form
    evaluated by quadrature (``reference='analytic'``, geometric index and
    constant theta only) or the LSMC transformed solve
    (``reference='pipeline'``). The LSMC transformed solve is always run and
    its time-zero value recorded.
    """
    if reference not in ("analytic", "pipeline"):
        raise ConfigError(f"unknown truncation reference {reference!r}")
    levels = sorted(int(n) for n in levels)
    if cfg is None:
        cfg = SolverConfig(basis=RegressionBasis(extras=(payoff,), include_terminal=False), max_iterations=60)
    paths = simulate_index(model, grid, M, seed)
    pipe = solve_utility_bsde(model, payoff, paths, cfg)
    if reference == "analytic":
        an = AnalyticUtilitySolution(model, payoff, grid)
        Yr, Zr = an.on_paths(paths.states)
        y0_ref, y0_ref_se = float(an.y(0, model.r0)), 0.0
    else:
        Yr, Zr = pipe.Y, pipe.Z
        y0_ref = pipe.y0
        y0_ref_se = float(pipe.samples.std(ddof=1) / np.sqrt(M) / abs(pipe.gamma * pipe.samples.mean())) if pipe.gamma else 0.0
    spec = utility_driver(model)
    report = TruncationReport(reference=reference, reference_y0=y0_ref, pipeline_y0=pipe.y0)
    report.pipeline_y0_se = (float(pipe.samples.std(ddof=1) / np.sqrt(M) / abs(pipe.gamma * pipe.samples.mean()))
                             if pipe.gamma else float(pipe.samples.std(ddof=1) / np.sqrt(M)))
    for n in levels:
        sol = solve_truncated(spec, n, payoff, paths, cfg)
        sup_y = np.max(np.abs(sol.Y - Yr), axis=1) ** 2
        z_err = np.sum((sol.Z - Zr) ** 2, axis=1) * grid.h
        report.rows.append({
            "n": n,
            "y0": sol.y0,
            "y0_error": abs(sol.y0 - y0_ref),
            "y0_error_se": float(np.hypot(sol.y0_stderr, y0_ref_se)),
            "sup_y_error": float(sup_y.mean()),
            "sup_y_error_se": float(sup_y.std(ddof=1) / np.sqrt(M)),
            "z_error": float(z_err.mean()),
            "z_error_se": float(z_err.std(ddof=1) / np.sqrt(M)),
            "iterations": sol.iterations,
            "converged": sol.converged,
        })
    for key in ("y0_error", "sup_y_error", "z_error"):
        report.flags[f"{key}_nonincreasing"] = _nonincreasing(
            [r[key] for r in report.rows], [r[key + "_se"] for r in report.rows])
    return report


@dataclass
class ScalingReport:
    rows: list = field(default_factory=list)
    slopes: dict = field(default_factory=dict)

    def columns(self):
        return ["p", "span_steps", "span", "moment", "moment_se"]


def sup_increment_moments(X: np.ndarray, fine: TimeGrid, base_steps: int, spans: Sequence[int],
                          powers: Sequence[int]) -> dict:
    """``E[sup_{s<=u<=s+k*h} |X_u - X_s|^p]`` averaged over window starts ``s`` on the coarse grid.

    ``X`` lives on ``fine``; ``base_steps`` fine steps make one coarse step ``h``.
    Returns ``{(p, k): per-path values}``.
    """
    out = {}
    nf = fine.steps
    for k in spans:
        w = k * base_steps
        starts = np.arange(0, nf - w + 1, base_steps)
        sup = np.zeros((X.shape[0], starts.size))
        base = X[:, starts]
        for off in range(1, w + 1):
            np.maximum(sup, np.abs(X[:, starts + off] - base), out=sup)
        for p in powers:
            out[(p, k)] = (sup**p).mean(axis=1)
    return out


def sde_scaling_study(
    model: MarketModel = MarketModel(),
    spans: Sequence[int] = (1, 2, 4, 8),
    powers: Sequence[int] = (2, 4),
    M: int = 4000,
    seed: SeedSpec = SeedSpec(2024),
    N: int = 100,
    substeps: int = 16,
) -> ScalingReport:
    """Fit the growth rate of sup-increment moments of the index against the span.

    Windows start at every node of the ``N``-step grid; the supremum is taken
    over a ``substeps``-times finer grid.
    """
    fine = build_grid(model.horizon, N * substeps)
    acc = {}
    for c, lo in enumerate(range(0, M, BLOCK_SIZE)):
        m = min(BLOCK_SIZE, M - lo)
        X = simulate_index(model, fine, m, seed.child(2000 + c)).states
        for key, v in sup_increment_moments(X, fine, substeps, spans, powers).items():
            acc.setdefault(key, []).append(v)
    report = ScalingReport()
    h = model.horizon / N
    for p in powers:
        stats = []
        for k in spans:
            v = np.concatenate(acc[(p, k)])
            stats.append(v.mean())
            report.rows.append({"p": p, "span_steps": k, "span": k * h, "moment": float(v.mean()),
                                "moment_se": float(v.std(ddof=1) / np.sqrt(v.size))})
        if all(s > 0 for s in stats):
            report.slopes[p] = fit_slope([k * h for k in spans], stats)
        else:
            report.slopes[p] = (float("nan"), float("nan"))
    return report
