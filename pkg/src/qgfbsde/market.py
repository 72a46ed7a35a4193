"""Non-tradable index R, correlated tradable asset S and the claim payoff."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ConfigError, PathBatch, SeedSpec, SimulationError, TimeGrid, draw_increments

Coefficient = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MarketModel:
    """Two-asset market driven by (W1, W2).

    By default every coefficient is the geometric instance
    ``mu(t,r) = mu_bar*r``, ``sigma(t,r) = sigma_bar*r`` and constant
    ``alpha_bar``, ``beta_bar``. Passing any of ``drift``, ``vol``,
    ``alpha_fn``, ``beta_fn`` overrides the corresponding coefficient.
    """

    rho: float = 0.5
    r0: float = 170.0
    s0: float = 173.0
    eta: float = 0.3
    horizon: float = 1.0
    mu_bar: float = 0.12
    sigma_bar: float = 0.41
    alpha_bar: float = 0.1
    beta_bar: float = 0.35
    drift: Optional[Coefficient] = field(default=None, compare=False)
    vol: Optional[Coefficient] = field(default=None, compare=False)
    alpha_fn: Optional[Coefficient] = field(default=None, compare=False)
    beta_fn: Optional[Coefficient] = field(default=None, compare=False)

    def __post_init__(self):
        if not -1.0 <= self.rho <= 1.0:
            raise ConfigError(f"correlation must lie in [-1, 1], got {self.rho}")
        if not (self.r0 > 0 and self.s0 > 0):
            raise ConfigError(f"spots must be positive, got r0={self.r0}, s0={self.s0}")
        if self.eta == 0 or not np.isfinite(self.eta):
            raise ConfigError("risk aversion eta must be finite and nonzero")
        if not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")

    @property
    def is_geometric(self) -> bool:
        return self.drift is None and self.vol is None

    @property
    def constant_asset(self) -> bool:
        return self.alpha_fn is None and self.beta_fn is None

    @property
    def gamma(self) -> float:
        """Quadratic coefficient of the pricing driver, ``-eta*(1-rho^2)``."""
        return -self.eta * (1.0 - self.rho**2)

    def mu(self, t, r):
        return self.drift(t, r) if self.drift is not None else self.mu_bar * np.asarray(r, dtype=float)

    def sigma(self, t, r):
        return self.vol(t, r) if self.vol is not None else self.sigma_bar * np.asarray(r, dtype=float)

    def alpha(self, t, r):
        if self.alpha_fn is not None:
            return self.alpha_fn(t, r)
        return np.full(np.shape(r), self.alpha_bar, dtype=float)

    def beta(self, t, r):
        if self.beta_fn is not None:
            return self.beta_fn(t, r)
        return np.full(np.shape(r), self.beta_bar, dtype=float)

    def theta(self, t, r):
        return theta(self, t, r)

    def lattice(self, nt: int = 21, nr: int = 21) -> tuple[np.ndarray, np.ndarray]:
        t = np.linspace(0.0, self.horizon, nt)
        r = np.linspace(self.r0 / 4, 4 * self.r0, nr)
        return np.meshgrid(t, r, indexing="ij")

    def validate(self, nt: int = 21, nr: int = 21, eps: float = 1e-8, theta_max: float = 1e6) -> float:
        """Check ellipticity of beta and boundedness of theta on a lattice.

        Returns the observed ``sup |theta|``.
        """
        tt, rr = self.lattice(nt, nr)
        b = np.broadcast_to(self.beta(tt, rr), tt.shape)
        if not np.all(np.isfinite(b)) or np.min(b**2) < eps:
            raise ConfigError(f"beta^2 must be bounded below by {eps} (min on lattice {np.min(b**2):.3g})")
        th = np.abs(self.alpha(tt, rr) / b)
        if not np.all(np.isfinite(th)) or th.max() > theta_max:
            raise ConfigError("market price of risk alpha/beta is unbounded on the validation lattice")
        return float(th.max())

    def theta_is_constant(self) -> bool:
        return self.constant_asset


def theta(model: MarketModel, t, r):
    """Market price of risk ``alpha(t,r)/beta(t,r)``."""
    b = model.beta(t, r)
    if np.any(b == 0):
        raise ConfigError("beta vanishes; theta undefined")
    return model.alpha(t, r) / b


@dataclass(frozen=True)
class PayoffSpec:
    """Bounded European payoff ``F(R_T)``.

    ``put`` is ``(K-x)^+`` with cap ``K``. ``call`` is only accepted with an
    explicit cap and is evaluated as ``min((x-K)^+, cap)``. ``table`` is a
    piecewise-linear profile through ``points`` with flat extrapolation.
    ``scale`` multiplies the profile (the cap scales with it).
    """

    kind: str = "put"
    strike: Optional[float] = None
    cap: Optional[float] = None
    points: Optional[Sequence[tuple[float, float]]] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("put", "call", "table", "zero"):
            raise ConfigError(f"unknown payoff kind {self.kind!r}")
        if self.kind in ("put", "call") and not (self.strike is not None and self.strike > 0):
            raise ConfigError(f"{self.kind} payoff needs a positive strike")
        if self.kind == "put":
            if self.cap is None:
                object.__setattr__(self, "cap", float(self.strike) * abs(self.scale))
        elif self.kind == "call":
            if self.cap is None:
                raise ConfigError("call payoff is unbounded; declare a cap")
        elif self.kind == "table":
            if not self.points or len(self.points) < 2:
                raise ConfigError("table payoff needs at least two points")
            xs = np.array([p[0] for p in self.points], dtype=float)
            if np.any(np.diff(xs) <= 0):
                raise ConfigError("table payoff abscissae must be strictly increasing")
            if self.cap is None:
                ys = np.array([p[1] for p in self.points], dtype=float)
                object.__setattr__(self, "cap", float(np.abs(ys).max() * abs(self.scale)))
        else:
            object.__setattr__(self, "cap", 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "put":
            v = np.maximum(self.strike - x, 0.0)
        elif self.kind == "call":
            v = np.minimum(np.maximum(x - self.strike, 0.0), self.cap / abs(self.scale))
        elif self.kind == "table":
            xs, ys = np.array(self.points, dtype=float).T
            v = np.interp(x, xs, ys)
        else:
            v = np.zeros_like(x)
        return self.scale * v

    def validate(self, lo: float, hi: float, n: int = 1001) -> None:
        x = np.linspace(lo, hi, n)
        v = self(x)
        if not np.all(np.isfinite(v)) or np.abs(v).max() > self.cap * (1 + 1e-12):
            raise ConfigError(f"payoff exceeds its declared cap {self.cap} on [{lo}, {hi}]")


def _check_finite(states: np.ndarray, start: int = 0) -> None:
    bad = ~np.isfinite(states)
    if bad.any():
        step = int(np.argmax(bad.any(axis=0)))
        raise SimulationError(f"non-finite forward values first at step {step + start}")


def simulate_index(
    model: MarketModel,
    grid: TimeGrid,
    M: int,
    seed: SeedSpec,
    scheme: str = "exact",
    workers: int = 1,
) -> PathBatch:
    """Paths of the non-tradable index; only ``dW1`` enters the dynamics.

    ``scheme='exact'`` uses the lognormal step for the geometric instance and
    silently falls back to Euler-Maruyama for general coefficients.
    """
    if scheme not in ("exact", "euler"):
        raise ConfigError(f"unknown forward scheme {scheme!r}")
    dW1, dW2 = draw_increments(grid, M, seed, workers=workers)
    h = grid.h
    t = grid.nodes
    R = np.empty((dW1.shape[0], grid.steps + 1))
    R[:, 0] = model.r0
    if scheme == "exact" and model.is_geometric:
        mb, sb = model.mu_bar, model.sigma_bar
        R[:, 1:] = model.r0 * np.exp(np.cumsum((mb - 0.5 * sb**2) * h + sb * dW1, axis=1))
        _check_finite(R)
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            for i in range(grid.steps):
                r = R[:, i]
                R[:, i + 1] = r + model.mu(t[i], r) * h + model.sigma(t[i], r) * dW1[:, i]
                if not np.all(np.isfinite(R[:, i + 1])):
                    raise SimulationError(f"non-finite forward values at step {i + 1}")
    return PathBatch(grid, R, dW1, dW2, {"asset": "R", "scheme": scheme, "seed": seed})


def correlated_increments(rho: float, dW1: np.ndarray, dW2: np.ndarray) -> np.ndarray:
    if not -1.0 <= rho <= 1.0:
        raise ConfigError(f"correlation must lie in [-1, 1], got {rho}")
    if rho == 1.0:
        return np.array(dW1)
    if rho == -1.0:
        return -np.asarray(dW1)
    return rho * dW1 + np.sqrt(1.0 - rho**2) * dW2


def simulate_asset(model: MarketModel, index: PathBatch) -> PathBatch:
    """Tradable asset ``dS/S = alpha dt + beta dW3`` along the index paths.

    Log-Euler stepping with coefficients frozen at the left node; this is the
    exact lognormal step when alpha and beta are constant.
    """
    grid = index.grid
    h = grid.h
    t = grid.nodes
    dW3 = correlated_increments(model.rho, index.dW1, index.dW2)
    R = index.states
    if model.constant_asset:
        a, b = model.alpha_bar, model.beta_bar
        cum = np.cumsum((a - 0.5 * b**2) * h + b * dW3, axis=1)
    else:
        inc = np.empty_like(dW3)
        for i in range(grid.steps):
            a = model.alpha(t[i], R[:, i])
            b = model.beta(t[i], R[:, i])
            inc[:, i] = (a - 0.5 * b**2) * h + b * dW3[:, i]
        cum = np.cumsum(inc, axis=1)
    S = np.empty_like(R)
    S[:, 0] = model.s0
    S[:, 1:] = model.s0 * np.exp(cum)
    _check_finite(S)
    return PathBatch(grid, S, index.dW1, index.dW2, {**index.meta, "asset": "S", "rho": model.rho})
