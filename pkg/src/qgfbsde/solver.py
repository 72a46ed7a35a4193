"""Least-squares Monte-Carlo solver for BSDEs with Lipschitz drivers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import ConfigError, NumericalError, PathBatch, TimeGrid
from .drivers import QuadraticDriverSpec, truncated_driver

log = logging.getLogger(__name__)

RIDGE = 1e-10
COND_LIMIT = 1e12


@dataclass(frozen=True)
class RegressionBasis:
    """Monomials of the standardized state plus optional extra functions of the raw state.

    With ``include_terminal`` the solver appends the terminal function of the
    equation being solved, which gives the default five monomials plus payoff.
    """

    degrees: tuple[int, ...] = (0, 1, 2, 3, 4)
    extras: tuple[Callable, ...] = ()
    include_terminal: bool = True

    def __post_init__(self):
        object.__setattr__(self, "degrees", tuple(int(d) for d in self.degrees))
        object.__setattr__(self, "extras", tuple(self.extras))
        if len(self.degrees) + len(self.extras) < 1:
            raise ConfigError("regression basis needs at least one function")
        if any(d < 0 for d in self.degrees) or len(set(self.degrees)) != len(self.degrees):
            raise ConfigError(f"invalid monomial degrees {self.degrees}")

    @property
    def size(self) -> int:
        return len(self.degrees) + len(self.extras)

    def with_extras(self, *fns: Callable) -> "RegressionBasis":
        return replace(self, extras=self.extras + tuple(fns))

    @property
    def has_intercept(self) -> bool:
        return 0 in self.degrees


class Projector:
    """Least-squares projection onto the span of a basis evaluated at fixed states.

    Columns are standardized (centred when an intercept is present, scaled to
    unit variance); columns that are numerically constant are dropped. The
    Cholesky factor of the scaled normal matrix is kept, the design matrix is
    rebuilt on every call to bound memory.
    """

    def __init__(self, states: np.ndarray, basis: RegressionBasis, where: str = ""):
        x = np.asarray(states, dtype=float)
        if x.ndim != 1:
            raise ConfigError("regression states must be one-dimensional")
        if x.shape[0] < basis.size:
            raise ConfigError(f"need at least {basis.size} paths for the regression basis, got {x.shape[0]}")
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite regression states{where}")
        self.x = x
        self.basis = basis
        self.where = where
        self.xm = float(x.mean())
        xs = float(x.std())
        self.xs = xs if xs > 1e-12 * max(1.0, abs(self.xm)) else 0.0
        raw = self._raw_columns()
        self.intercept = basis.has_intercept
        self.cm = raw.mean(axis=1) if self.intercept else np.zeros(raw.shape[0])
        cs = np.sqrt(((raw - self.cm[:, None]) ** 2).mean(axis=1))
        scale = np.maximum(np.abs(raw).max(axis=1, initial=0.0), 1.0)
        self.keep = cs > 1e-12 * scale
        self.cm = self.cm[self.keep]
        self.cs = cs[self.keep]
        At = self.design_t()
        G = At @ At.T / x.shape[0]
        self.ridged = False
        if G.shape[0] and np.linalg.cond(G) > COND_LIMIT:
            G = G + RIDGE * np.eye(G.shape[0])
            self.ridged = True
        try:
            self.chol = cho_factor(G) if G.shape[0] else None
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular normal equations{where}") from exc

    def _raw_columns(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Unscaled basis columns, stored one column per row (``k x M``)."""
        x = self.x if x is None else x
        mono = [d for d in self.basis.degrees if d > 0]
        out = np.empty((len(mono) + len(self.basis.extras), x.shape[0]))
        if mono:
            xt = (x - self.xm) / self.xs if self.xs > 0 else np.zeros_like(x)
            power = np.ones_like(x)
            done = 0
            for k, d in sorted(enumerate(mono), key=lambda kd: kd[1]):
                for _ in range(d - done):
                    power *= xt
                done = d
                out[k] = power
        for k, fn in enumerate(self.basis.extras, start=len(mono)):
            out[k] = fn(x)
        if not np.all(np.isfinite(out)):
            raise NumericalError(f"non-finite basis values{self.where}")
        return out

    def design_t(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        """Standardized design matrix, transposed (``k x M``)."""
        raw = self._raw_columns(x)
        if not self.keep.all():
            raw = raw[self.keep]
        raw -= self.cm[:, None]
        raw /= self.cs[:, None]
        if not self.intercept:
            return raw
        return np.concatenate([np.ones((1, raw.shape[1])), raw])

    def design(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        return self.design_t(x).T

    def fit(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients (in the standardized design) and fitted values."""
        V = np.asarray(values, dtype=float)
        squeeze = V.ndim == 1
        V = V.reshape(V.shape[0], -1)
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"non-finite regression targets{self.where}")
        At = self.design_t()
        if At.shape[0] == 0:
            coef = np.zeros((0, V.shape[1]))
            fitted = np.zeros_like(V)
        else:
            coef = cho_solve(self.chol, At @ V / V.shape[0])
            fitted = At.T @ coef
        if squeeze:
            return coef[:, 0], fitted[:, 0]
        return coef, fitted

    def predict(self, coef: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.design(np.asarray(x, dtype=float)) @ coef

    def raw_coefficients(self, coef: np.ndarray) -> np.ndarray:
        """Coefficients on the basis functions of the raw state.

        Only defined when the monomial degrees are contiguous from 0.
        """
        degs = self.basis.degrees
        if tuple(sorted(degs)) != tuple(range(len(degs))):
            raise ConfigError("raw coefficients need monomial degrees 0..d")
        coef = np.asarray(coef, dtype=float)
        n_mono = len(degs)
        full = np.zeros(n_mono + len(self.basis.extras))
        beta = np.zeros(len(self.keep))
        beta[self.keep] = coef[1:] / self.cs
        full[0] = coef[0] - float(np.dot(coef[1:], self.cm / self.cs))
        if self.xs > 0:
            lin = np.polynomial.Polynomial([-self.xm / self.xs, 1.0 / self.xs])
        else:
            lin = np.polynomial.Polynomial([0.0])
        mono = [d for d in degs if d > 0]
        for k, d in enumerate(mono):
            p = (lin**d).coef
            full[: len(p)] += beta[k] * p
        full[n_mono:] = beta[len(mono):]
        order = list(degs)
        out = np.empty_like(full)
        out[: n_mono] = full[order]
        out[n_mono:] = full[n_mono:]
        return out


@dataclass
class RegressionResult:
    coef: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    projector: Projector

    @property
    def raw_coef(self) -> np.ndarray:
        return self.projector.raw_coefficients(self.coef)


def regress(values, states, basis: RegressionBasis) -> RegressionResult:
    """Least-squares conditional-expectation estimate of ``values`` given ``states``."""
    proj = Projector(states, basis)
    coef, fitted = proj.fit(values)
    return RegressionResult(coef, fitted, np.asarray(values, dtype=float) - fitted, proj)


@dataclass(frozen=True)
class SolverConfig:
    tolerance: float = 1e-5
    max_iterations: int = 30
    scheme: str = "picard-lsmc"
    basis: RegressionBasis = field(default_factory=RegressionBasis)

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigError(f"Picard tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.scheme not in ("picard-lsmc", "one-pass-backward"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")


@dataclass
class BsdeSolution:
    """Pathwise solution on the grid.

    ``Y`` is ``M x (N+1)`` with ``Y[:, N]`` the terminal values, ``Z`` is
    ``M x N``. ``coefficients[i]`` holds the (Y, Z) regression coefficients
    at ``t_i`` in the standardized design of that step. ``y0_samples`` are
    the pathwise quantities whose mean is ``Y_0``.
    """

    grid: TimeGrid
    Y: np.ndarray
    Z: np.ndarray
    coefficients: list
    iterations: int
    converged: bool
    history: list
    y0_samples: np.ndarray
    scheme: str = "picard-lsmc"

    @property
    def y0(self) -> float:
        return float(self.Y[:, 0].mean())

    @property
    def y0_stderr(self) -> float:
        s = self.y0_samples
        return float(s.std(ddof=1) / np.sqrt(s.shape[0])) if s.shape[0] > 1 else 0.0


Terminal = Union[Callable, np.ndarray]


def _terminal_values(terminal: Terminal, x_T: np.ndarray) -> np.ndarray:
    xi = np.asarray(terminal(x_T) if callable(terminal) else terminal, dtype=float)
    xi = np.broadcast_to(xi, x_T.shape).astype(float)
    if not np.all(np.isfinite(xi)):
        raise NumericalError("non-finite terminal values")
    return xi


def _clamp(v: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return v
    return np.clip(v, bounds[0], bounds[1])


def _projectors(Xt: np.ndarray, basis: RegressionBasis) -> list[Projector]:
    return [Projector(Xt[i], basis, where=f" at step {i}") for i in range(Xt.shape[0] - 1)]


def solve_lipschitz(
    driver: Callable,
    terminal: Terminal,
    paths: PathBatch,
    cfg: SolverConfig = SolverConfig(),
    clamp: Optional[tuple[float, float]] = None,
    noise: Optional[np.ndarray] = None,
) -> BsdeSolution:
    """Solve ``Y_t = g(X_T) + int f(s,X,Y,Z) ds - int Z dW`` on the path set.

    ``driver(t, x, y, z)`` is evaluated at the left node of each interval.
    ``noise`` is the Brownian increment matrix entering the backward
    equation (``paths.dW1`` by default). ``clamp`` restricts the regression
    estimates of ``Y``.

    Picard mode iterates the forward scheme of Bender and Denk: given the
    previous iterate, ``Y_{t_i} = E_i[xi + h sum_{j>=i} f_j]`` and
    ``Z_{t_i} = E_i[(xi + h sum_{j>=i} f_j - Y_{t_i}) dW_i] / h``, starting from the
    zero-driver iterate, until ``|Y_0^{k} - Y_0^{k-1}| < tolerance``.
    """
    grid = paths.grid
    # time-major copies: every regression reads one contiguous row
    Xt = np.ascontiguousarray(paths.states.T)
    dWt = np.ascontiguousarray((paths.dW1 if noise is None else np.asarray(noise, dtype=float)).T)
    N, h = grid.steps, grid.h
    M = Xt.shape[1]
    t = grid.nodes
    xi = _terminal_values(terminal, Xt[N])
    basis = cfg.basis
    if basis.include_terminal and callable(terminal):
        basis = replace(basis.with_extras(terminal), include_terminal=False)
    projs = _projectors(Xt, basis)

    Y = np.empty((N + 1, M))
    Z = np.empty((N, M))
    Y[N] = xi
    coefs: list = [None] * N

    if cfg.scheme == "one-pass-backward":
        for i in range(N - 1, -1, -1):
            _, level = projs[i].fit(Y[i + 1])
            cz, Z[i] = projs[i].fit((Y[i + 1] - level) * dWt[i] / h)
            target = Y[i + 1] + h * _eval(driver, t[i], Xt[i], Y[i + 1], Z[i], i)
            cy, fy = projs[i].fit(target)
            Y[i] = _clamp(fy, clamp)
            coefs[i] = (cy, cz)
        return BsdeSolution(grid, Y.T.copy(), Z.T.copy(), coefs, 1, True, [float(Y[0].mean())], target, cfg.scheme)

    history: list[float] = []
    converged = False
    S = np.empty((N + 1, M))
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        # S[i] = xi + h * sum_{j >= i} f(t_j, X_j, Y_j, Z_j) with the previous iterate
        S[N] = xi
        for j in range(N - 1, -1, -1):
            if it == 1:
                S[j] = S[j + 1]
            else:
                S[j] = S[j + 1] + h * _eval(driver, t[j], Xt[j], Y[j], Z[j], j)
        for i in range(N):
            cy, fy = projs[i].fit(S[i])
            Y[i] = _clamp(fy, clamp)
            # S_i - S_{i+1} and the fit are F_i-measurable, so centring S_i
            # by its fit leaves E_i[S_{i+1} dW_i] unchanged and removes noise
            cz, Z[i] = projs[i].fit((S[i] - fy) * dWt[i] / h)
            coefs[i] = (cy, cz)
        history.append(float(Y[0].mean()))
        log.debug("Picard sweep %d: Y0=%.10g", it, history[-1])
        if it > 1 and abs(history[-1] - history[-2]) < cfg.tolerance:
            converged = True
            break
    if not converged:
        log.warning("Picard iteration did not converge in %d sweeps", cfg.max_iterations)
    return BsdeSolution(grid, Y.T.copy(), Z.T.copy(), coefs, it, converged, history, S[0].copy(), cfg.scheme)


def _eval(driver, t, x, y, z, step):
    v = np.asarray(driver(t, x, y, z), dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericalError(f"non-finite driver values at step {step}")
    return np.broadcast_to(v, x.shape)


def solve_truncated(
    spec: QuadraticDriverSpec,
    n: int,
    terminal: Terminal,
    paths: PathBatch,
    cfg: SolverConfig = SolverConfig(),
) -> BsdeSolution:
    """Solve the BSDE whose driver has ``z`` replaced by its truncation ``h_n(z)``."""
    return solve_lipschitz(truncated_driver(spec, n), terminal, paths, cfg)
