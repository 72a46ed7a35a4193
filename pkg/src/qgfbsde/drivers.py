"""Quadratic drivers, their truncations and the exponential (Cole-Hopf) transform."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ConfigError, DomainError, NumericalError
from .market import MarketModel


@dataclass(frozen=True)
class QuadraticDriverSpec:
    """Driver ``f(t,x,y,z) = l(t,x,y) + a(t,x,z) + (gamma/2) z^2``.

    ``a`` must be homogeneous of degree one in ``z``; this is checked on
    random samples at construction. ``l_bound`` is an upper bound on ``|l|``
    used for a priori bounds on the solution.
    """

    l: Callable
    a: Callable
    gamma: float
    l_bound: float = 0.0
    name: str = "quadratic"
    check_homogeneity: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not np.isfinite(self.gamma):
            raise ConfigError("quadratic coefficient must be finite")
        if self.check_homogeneity:
            _assert_homogeneous(self.a)

    def __call__(self, t, x, y, z):
        return eval_quadratic(self, t, x, y, z)


def _assert_homogeneous(a: Callable, samples: int = 20, seed: int = 20240601) -> None:
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, 1.0, samples)
    x = rng.uniform(1.0, 400.0, samples)
    z = rng.normal(0.0, 3.0, samples)
    c = rng.normal(0.0, 3.0, samples)
    lhs = np.asarray(a(t, x, c * z), dtype=float)
    rhs = c * np.asarray(a(t, x, z), dtype=float)
    if not np.allclose(lhs, rhs, rtol=1e-10, atol=1e-12):
        raise ConfigError("the z-part a(t,x,z) of the driver is not homogeneous in z")


def eval_quadratic(spec: QuadraticDriverSpec, t, x, y, z):
    z = np.asarray(z, dtype=float)
    out = spec.l(t, x, y) + spec.a(t, x, z) + 0.5 * spec.gamma * z * z
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite value of driver {spec.name}")
    return out


def utility_driver(model: MarketModel) -> QuadraticDriverSpec:
    """Exponential-utility driver ``theta^2/(2 eta) - rho theta z - (eta/2)(1-rho^2) z^2``."""
    eta, rho = model.eta, model.rho
    th_max = model.validate()

    def l(t, x, y):
        th = model.theta(t, x)
        return th * th / (2.0 * eta) + 0.0 * np.asarray(y, dtype=float)

    def a(t, x, z):
        return -rho * model.theta(t, x) * z

    return QuadraticDriverSpec(l, a, model.gamma, l_bound=th_max**2 / (2 * abs(eta)), name="utility")


def truncate_scalar(n: int, x):
    """C^1 saturation of the identity at level ``n+1``.

    Identity on ``[-n, n]``, quadratic splice on ``n <= |x| <= n+2`` and
    constant ``±(n+1)`` beyond. Odd in ``x``.
    """
    if int(n) != n or n < 1:
        raise ConfigError(f"truncation level must be a positive integer, got {n!r}")
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    splice = (-n * n + 2 * n * ax - ax * (ax - 4)) / 4.0
    out = np.where(ax <= n, ax, np.where(ax <= n + 2, splice, n + 1.0))
    out = np.copysign(out, x)
    return out if out.ndim else float(out)


def truncate_slope(n: int, x):
    """Derivative of :func:`truncate_scalar`."""
    ax = np.abs(np.asarray(x, dtype=float))
    return np.where(ax <= n, 1.0, np.where(ax <= n + 2, (n + 2 - ax) / 2.0, 0.0))


def truncated_driver(spec: QuadraticDriverSpec, n: int) -> Callable:
    """``f_n(t,x,y,z) = f(t,x,y,h_n(z))``, globally Lipschitz in ``z``."""
    truncate_scalar(n, 0.0)

    def f_n(t, x, y, z):
        return eval_quadratic(spec, t, x, y, truncate_scalar(n, z))

    f_n.level = n
    f_n.spec = spec
    return f_n


def cole_hopf_forward(gamma: float, y, z):
    """``p = exp(gamma*y)``, ``q = gamma*p*z``."""
    if gamma == 0:
        raise DomainError("exponential transform needs a nonzero quadratic coefficient")
    p = np.exp(gamma * np.asarray(y, dtype=float))
    return p, gamma * p * z


def cole_hopf_inverse(gamma: float, p, q):
    """``y = log(p)/gamma``, ``z = q/(gamma*p)``; requires ``p > 0``."""
    if gamma == 0:
        raise DomainError("exponential transform needs a nonzero quadratic coefficient")
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0)):
        raise DomainError(f"transformed value left (0, inf): min p = {np.min(p):.3g}")
    return np.log(p) / gamma, q / (gamma * p)


@dataclass(frozen=True)
class LipschitzDriver:
    """Transformed driver ``F(t,x,p,q)`` defined for ``p`` in ``[delta, p_max]``."""

    F: Callable
    delta: float = 0.0
    p_max: float = np.inf
    gamma: float = 0.0
    certificate: Optional[dict] = None

    def __call__(self, t, x, p, q):
        p = np.asarray(p, dtype=float)
        if np.any(~(p > self.delta)):
            raise DomainError(f"transformed driver evaluated at p <= delta={self.delta:.3g}")
        return self.F(t, x, p, q)

    def with_certificate(self, **kw) -> "LipschitzDriver":
        return LipschitzDriver(self.F, self.delta, self.p_max, self.gamma, lipschitz_certificate(self, **kw))


def feasible_bounds(spec: QuadraticDriverSpec, cap: float, horizon: float) -> tuple[float, float]:
    """Range of ``exp(gamma*Y)`` implied by ``|Y| <= cap + T*sup|l|``."""
    B = abs(cap) + horizon * spec.l_bound
    g = abs(spec.gamma)
    return float(np.exp(-g * B)), float(np.exp(g * B))


def transformed_driver(spec: QuadraticDriverSpec, delta: float = 0.0, p_max: float = np.inf) -> LipschitzDriver:
    """Driver of the exponentially transformed BSDE.

    ``F(s,x,p,q) = gamma p l(s,x,log(p)/gamma) + a(s,x,q)``; the quadratic
    term cancels against the Ito correction.
    """
    g = spec.gamma
    if g == 0:
        raise DomainError("exponential transform needs a nonzero quadratic coefficient")

    def F(t, x, p, q):
        return g * p * spec.l(t, x, np.log(p) / g) + spec.a(t, x, q)

    return LipschitzDriver(F, delta=float(delta), p_max=float(p_max), gamma=g)


def lipschitz_certificate(
    driver: LipschitzDriver,
    x_range: tuple[float, float] = (42.5, 680.0),
    p_range: Optional[tuple[float, float]] = None,
    q_range: tuple[float, float] = (-5.0, 5.0),
    times: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0),
    n: int = 41,
) -> dict:
    """Sampled Lipschitz constants and linear-growth constant of ``F``.

    Difference quotients are taken between neighbouring lattice points along
    each axis; the growth constant is ``max |F| / (1+|x|+|p|+|q|)``.
    """
    if p_range is None:
        lo = max(driver.delta, 1e-3) * 1.001
        hi = min(driver.p_max, 1e3)
        p_range = (lo, hi)
    xs = np.linspace(*x_range, n)
    ps = np.linspace(*p_range, n)
    qs = np.linspace(*q_range, n)
    X, P, Q = np.meshgrid(xs, ps, qs, indexing="ij")
    slopes = {"x": 0.0, "p": 0.0, "q": 0.0}
    growth = 0.0
    for t in times:
        v = np.asarray(driver(t, X, P, Q), dtype=float)
        if not np.all(np.isfinite(v)):
            raise NumericalError("transformed driver is non-finite on the certificate lattice")
        for axis, (name, grid) in enumerate(zip("xpq", (xs, ps, qs))):
            d = np.abs(np.diff(v, axis=axis)) / np.expand_dims(np.diff(grid), [k for k in range(3) if k != axis])
            slopes[name] = max(slopes[name], float(d.max()))
        growth = max(growth, float(np.max(np.abs(v) / (1 + np.abs(X) + np.abs(P) + np.abs(Q)))))
    return {**slopes, "growth": growth, "p_range": p_range}
