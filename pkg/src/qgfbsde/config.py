"""Run configuration: an INI file with fixed sections, validated before any simulation."""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .core import ConfigError, SeedSpec, TimeGrid
from .market import MarketModel, PayoffSpec
from .solver import RegressionBasis, SolverConfig


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.replace(";", ",").split(",") if v.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class MarketBlock:
    mu: float = 0.12
    sigma: float = 0.41
    alpha: float = 0.1
    beta: float = 0.35
    rho: tuple[float, ...] = (0.2, 0.5, 0.7, 0.9)
    r0: float = 170.0
    s0: float = 173.0
    eta: float = 0.3
    horizon: float = 1.0


@dataclass(frozen=True)
class PayoffBlock:
    kind: str = "put"
    # price and strategy paths
    strike: float = 180.0
    # strike sweep at the configured r0
    strikes: tuple[float, ...] = (160.0, 170.0, 180.0, 190.0, 200.0, 210.0, 220.0)
    # spot sweep at a fixed strike
    spots: tuple[float, ...] = (150.0, 160.0, 170.0, 180.0, 190.0, 200.0, 210.0)
    spot_strike: float = 200.0
    cap: Optional[float] = None


@dataclass(frozen=True)
class NumericsBlock:
    steps: int = 100
    paths: int = 70000
    tolerance: float = 1e-5
    max_iterations: int = 30
    degrees: tuple[int, ...] = (0, 1, 2, 3, 4)
    scheme: str = "picard-lsmc"
    forward: str = "exact"


@dataclass(frozen=True)
class StudyBlock:
    refinements: tuple[int, ...] = (25, 50, 100, 200)
    regularity_paths: int = 20000
    substeps: int = 8
    regularity_mode: str = "analytic"
    levels: tuple[int, ...] = (1, 2, 4, 8)
    truncation_paths: int = 20000
    truncation_rho: float = 0.5
    reference: str = "analytic"
    scaling_paths: int = 4000
    spans: tuple[int, ...] = (1, 2, 4, 8)
    powers: tuple[int, ...] = (2, 4)


@dataclass(frozen=True)
class SeedBlock:
    master: int = 20240601


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    sample_paths: int = 5
    plots: bool = False
    workers: int = 1


_SECTIONS = {
    "market": MarketBlock,
    "payoff": PayoffBlock,
    "numerics": NumericsBlock,
    "study": StudyBlock,
    "seed": SeedBlock,
    "output": OutputBlock,
}

# keys that change scheduling or file locations but never results
_NOT_HASHED = {("output", "dir"), ("output", "workers"), ("output", "plots")}


@dataclass(frozen=True)
class RunConfig:
    market: MarketBlock = field(default_factory=MarketBlock)
    payoff: PayoffBlock = field(default_factory=PayoffBlock)
    numerics: NumericsBlock = field(default_factory=NumericsBlock)
    study: StudyBlock = field(default_factory=StudyBlock)
    seed: SeedBlock = field(default_factory=SeedBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def model(self, rho: Optional[float] = None, r0: Optional[float] = None) -> MarketModel:
        m = self.market
        return MarketModel(
            rho=m.rho[0] if rho is None else rho,
            r0=m.r0 if r0 is None else r0,
            s0=m.s0, eta=m.eta, horizon=m.horizon,
            mu_bar=m.mu, sigma_bar=m.sigma, alpha_bar=m.alpha, beta_bar=m.beta,
        )

    def payoff_spec(self, strike: Optional[float] = None) -> PayoffSpec:
        p = self.payoff
        return PayoffSpec(p.kind, strike=p.strike if strike is None else strike, cap=p.cap)

    def grid(self) -> TimeGrid:
        return TimeGrid(self.market.horizon, self.numerics.steps)

    def seed_spec(self) -> SeedSpec:
        return SeedSpec(self.seed.master)

    def solver_config(self, payoff: Optional[PayoffSpec] = None) -> SolverConfig:
        n = self.numerics
        extras = (payoff,) if payoff is not None else ()
        basis = RegressionBasis(n.degrees, extras=extras, include_terminal=payoff is None)
        return SolverConfig(n.tolerance, n.max_iterations, n.scheme, basis)

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        d = self.as_dict()
        for sec, key in _NOT_HASHED:
            d[sec].pop(key, None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def validate(self) -> "RunConfig":
        """Build every model object once so that bad values fail before any simulation."""
        for rho in self.market.rho:
            model = self.model(rho=rho)
            model.validate()
            for r0 in self.payoff.spots:
                self.model(rho=rho, r0=r0)
        for k in (self.payoff.strike, self.payoff.spot_strike, *self.payoff.strikes):
            self.payoff_spec(k).validate(self.market.r0 / 4, 4 * self.market.r0)
        self.grid()
        self.seed_spec()
        self.solver_config()
        n, s, o = self.numerics, self.study, self.output
        if n.paths < 2 or n.forward not in ("exact", "euler"):
            raise ConfigError("numerics.paths must be >= 2 and numerics.forward one of exact/euler")
        if s.regularity_mode not in ("analytic", "solver") or s.reference not in ("analytic", "pipeline"):
            raise ConfigError("invalid study.regularity_mode or study.reference")
        if any(v < 1 for v in s.levels) or any(v < 1 for v in s.refinements) or any(v < 1 for v in s.spans):
            raise ConfigError("study levels, refinements and spans must be positive")
        if o.sample_paths < 1 or o.workers < 1:
            raise ConfigError("output.sample_paths and output.workers must be positive")
        return self


def _convert(cls, section: str, key: str, raw: str):
    ftypes = {f.name: f.type for f in fields(cls)}
    if key not in ftypes:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    typ = str(ftypes[key])
    try:
        if "tuple[float" in typ:
            return _floats(raw)
        if "tuple[int" in typ:
            return _ints(raw)
        if "Optional[float]" in typ:
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if typ == "float":
            return float(raw)
        if typ == "int":
            return int(raw)
        if typ == "bool":
            return _bool(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc


def load_config(path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Read an INI config (or the defaults) and apply ``{(section, key): raw}`` overrides."""
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                values[section][key] = _convert(_SECTIONS[section], section, key, raw)
    for (section, key), raw in (overrides or {}).items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        values[section][key] = _convert(_SECTIONS[section], section, key, str(raw))
    try:
        blocks = {s: cls(**values[s]) for s, cls in _SECTIONS.items()}
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(**blocks).validate()


def default_config_text() -> str:
    """The defaults rendered as an INI file."""
    cfg = RunConfig()
    lines = []
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for key, val in getattr(cfg, section).__dict__.items():
            if isinstance(val, tuple):
                val = ", ".join(repr(v) for v in val)
            lines.append(f"{key} = {'none' if val is None else val}")
        lines.append("")
    return "\n".join(lines)
