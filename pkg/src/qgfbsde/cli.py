"""Command-line front end: ``simulate``, ``price`` and ``study`` subcommands writing long-format CSVs."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import RunConfig, default_config_text, load_config
from .core import ConfigError, DomainError, NumericalError, SimulationError
from .market import PayoffSpec, simulate_asset, simulate_index
from .pricing import PIPELINE_STREAM, median_stderr, price_indifference, solve_utility_bsde
from .studies import SmoothPutCase, regularity_study, sde_scaling_study, truncation_study

log = logging.getLogger("qgfbsde")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 1, 2, 3, 4

SIMULATE_COLUMNS = ["time", "path_id", "R", "S", "rho"]
STRIKE_COLUMNS = ["rho", "strike", "r0", "price", "stderr", "iterations_F", "iterations_0", "converged",
                 "reliable_fraction"]
SPOT_COLUMNS = ["rho", "r0", "strike", "price", "stderr", "iterations_F", "iterations_0", "converged",
                 "reliable_fraction"]
PATH_COLUMNS = ["rho", "time", "series", "value", "stderr", "reliable"]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, cfg: RunConfig, columns: Sequence[str], rows: Iterable[Sequence], **meta) -> Path:
    """Write ``rows`` under a ``#`` provenance line carrying the config hash and seed."""
    head = {"config_sha256": cfg.digest(), "seed": cfg.seed.master, **meta}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in head.items()) + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %s", path)
    return path


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.output.dir)


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    """Sample index and asset paths for every configured correlation."""
    grid = cfg.grid()
    K = cfg.output.sample_paths
    base = cfg.model()
    index = simulate_index(base, grid, K, cfg.seed_spec().child(PIPELINE_STREAM),
                           scheme=cfg.numerics.forward, workers=cfg.output.workers)
    t = grid.nodes
    rows = []
    for rho in cfg.market.rho:
        S = simulate_asset(cfg.model(rho=rho), index).states
        for k in range(K):
            for i in range(grid.steps + 1):
                rows.append((t[i], k, index.states[k, i], S[k, i], rho))
    out = [write_csv(_out(cfg) / "simulate.csv", cfg, SIMULATE_COLUMNS, rows, command="simulate")]
    if cfg.output.plots:
        from . import plots
        out += plots.plot_simulate(out[0])
    return out


def _sample_rows(rho, t, values, reliable, K, with_mean=True):
    """Long-format summary of pathwise values: mean, median, quartiles and ``K`` sample paths.

    ``reliable`` is the per-node fraction of reliable entries for the
    summaries and the entry flag for sample paths.
    """
    rows = []
    frac = reliable.mean(axis=0)
    if with_mean:
        se = values.std(axis=0, ddof=1) / np.sqrt(values.shape[0])
        rows += [(rho, ti, "mean", m, s, f) for ti, m, s, f in zip(t, values.mean(axis=0), se, frac)]
    q25, med, q75 = np.quantile(values, [0.25, 0.5, 0.75], axis=0)
    rows += [(rho, ti, "median", m, s, f) for ti, m, s, f in zip(t, med, median_stderr(values), frac)]
    rows += [(rho, ti, "q25", m, float("nan"), f) for ti, m, f in zip(t, q25, frac)]
    rows += [(rho, ti, "q75", m, float("nan"), f) for ti, m, f in zip(t, q75, frac)]
    for k in range(min(K, values.shape[0])):
        rows += [(rho, ti, f"path_{k}", v, float("nan"), float(ok)) for ti, v, ok in zip(t, values[k], reliable[k])]
    return rows


def cmd_price(cfg: RunConfig) -> list[Path]:
    """Strike sweep, spot sweep and the price and strategy processes for every correlation."""
    grid = cfg.grid()
    n = cfg.numerics
    seed = cfg.seed_spec()
    pay = cfg.payoff
    zero = PayoffSpec("zero")
    base = cfg.model()

    def paths_for(r0):
        return simulate_index(cfg.model(r0=r0), grid, n.paths, seed.child(PIPELINE_STREAM),
                              scheme=n.forward, workers=cfg.output.workers)

    strike_rows, spot_rows, price_rows, strat_rows = [], [], [], []
    main_paths = paths_for(base.r0)
    strikes = sorted(set(pay.strikes) | {pay.strike})
    K = min(cfg.output.sample_paths, n.paths)
    for rho in cfg.market.rho:
        model = cfg.model(rho=rho)
        zero_sol = solve_utility_bsde(model, zero, main_paths, cfg.solver_config())
        for k in strikes:
            payoff = cfg.payoff_spec(k)
            rep = price_indifference(model, payoff, grid, n.paths, seed, cfg.solver_config(payoff),
                                     paths=main_paths, zero_solution=zero_sol)
            m = rep.meta
            if k in pay.strikes:
                strike_rows.append((rho, k, model.r0, rep.p0, rep.p0_stderr,
                                    m["iterations_F"], m["iterations_0"], m["converged"], m["reliable_fraction"]))
            if k == pay.strike:
                t = grid.nodes
                price_rows += _sample_rows(rho, t, rep.price_paths, rep.reliable, K)
                # the pathwise hedge has heavy tails deep in the money; no mean reported
                strat_rows += _sample_rows(rho, t[:-1], rep.strategy_paths, rep.reliable[:, :-1], K,
                                           with_mean=False)
        for r0 in pay.spots:
            m_r = cfg.model(rho=rho, r0=r0)
            payoff = cfg.payoff_spec(pay.spot_strike)
            spot_paths = paths_for(r0)
            zero_r = solve_utility_bsde(m_r, zero, spot_paths, cfg.solver_config())
            rep = price_indifference(m_r, payoff, grid, n.paths, seed, cfg.solver_config(payoff),
                                     paths=spot_paths, zero_solution=zero_r)
            m = rep.meta
            spot_rows.append((rho, r0, pay.spot_strike, rep.p0, rep.p0_stderr,
                              m["iterations_F"], m["iterations_0"], m["converged"], m["reliable_fraction"]))
        log.info("rho=%g done", rho)
    d = _out(cfg)
    out = [
        write_csv(d / "strike_sweep.csv", cfg, STRIKE_COLUMNS, strike_rows, command="price"),
        write_csv(d / "spot_sweep.csv", cfg, SPOT_COLUMNS, spot_rows, command="price"),
        write_csv(d / "price_path.csv", cfg, PATH_COLUMNS, price_rows, command="price", strike=pay.strike),
        write_csv(d / "strategy_path.csv", cfg, PATH_COLUMNS, strat_rows, command="price", strike=pay.strike),
    ]
    if cfg.output.plots:
        from . import plots
        out += plots.plot_price(d)
    return out


def _slope_ok(slope: float, lo: float, hi: float) -> bool:
    return bool(np.isfinite(slope) and lo <= slope <= hi)


def cmd_study(cfg: RunConfig, which: str) -> tuple[list[Path], bool]:
    """Run one study and write its CSV; returns the paths and whether every check passed."""
    s, m = cfg.study, cfg.market
    d = _out(cfg)
    seed = cfg.seed_spec()
    if which == "regularity":
        case = SmoothPutCase(mu=m.mu, sigma=m.sigma, r0=m.r0, strike=cfg.payoff.strike, horizon=m.horizon)
        rep = regularity_study(case, s.refinements, s.regularity_paths, seed.child(11), s.substeps,
                               mode=s.regularity_mode)
        ok = (_slope_ok(rep.z_slope, 0.8, 1.2) and _slope_ok(rep.y_slope, 0.8, 1.2) and rep.optimality_holds)
        cols = rep.columns()
        path = write_csv(d / "regularity.csv", cfg, cols, ([r[c] for c in cols] for r in rep.rows),
                         command="study-regularity", mode=rep.mode, z_slope=rep.z_slope,
                         z_slope_se=rep.z_slope_se, y_slope=rep.y_slope, y_slope_se=rep.y_slope_se,
                         optimality=rep.optimality_holds, checks_passed=ok)
    elif which == "truncation":
        model = cfg.model(rho=s.truncation_rho)
        payoff = cfg.payoff_spec()
        rep = truncation_study(model, payoff, s.levels, cfg.grid(), s.truncation_paths, seed.child(12),
                               cfg.solver_config(payoff), reference=s.reference)
        ok = all(rep.flags.values())
        cols = rep.columns()
        path = write_csv(d / "truncation.csv", cfg, ["reference"] + cols,
                         ([rep.reference] + [r[c] for c in cols] for r in rep.rows),
                         command="study-truncation", reference=rep.reference, reference_y0=rep.reference_y0,
                         pipeline_y0=rep.pipeline_y0, pipeline_y0_se=rep.pipeline_y0_se,
                         **rep.flags, rate_checked=False, checks_passed=ok)
    elif which == "sde-scaling":
        rep = sde_scaling_study(cfg.model(), s.spans, s.powers, s.scaling_paths, seed.child(13), cfg.numerics.steps)
        ok = all(_slope_ok(rep.slopes[p][0], 0.4 * p, 0.6 * p) for p in s.powers)
        cols = rep.columns()
        slopes = {f"slope_p{p}": v[0] for p, v in rep.slopes.items()}
        path = write_csv(d / "sde_scaling.csv", cfg, cols, ([r[c] for c in cols] for r in rep.rows),
                         command="study-sde-scaling", **slopes, checks_passed=ok)
    else:
        raise ConfigError(f"unknown study {which!r}")
    out = [path]
    if cfg.output.plots:
        from . import plots
        out += plots.plot_study(path, which)
    return out, ok


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [market] [payoff] [numerics] [study] [seed] [output]")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", metavar="U64", type=int, help="master seed")
    common.add_argument("--rho", metavar="LIST", help="comma-separated correlations")
    common.add_argument("--scheme", metavar="NAME", help="picard-lsmc or one-pass-backward")
    common.add_argument("--levels", metavar="LIST", help="comma-separated truncation levels")
    common.add_argument("--paths", metavar="M", type=int, help="Monte-Carlo paths for pricing")
    common.add_argument("--steps", metavar="N", type=int, help="time steps")
    common.add_argument("--forward", metavar="NAME", help="exact or euler forward stepping")
    common.add_argument("--workers", metavar="W", type=int, help="threads used to draw random blocks")
    common.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSVs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qgfbsde", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="index and asset sample paths")
    sub.add_parser("price", parents=[common], help="indifference prices and hedging strategy")
    st = sub.add_parser("study", parents=[common], help="convergence studies")
    st.add_argument("which", choices=["regularity", "truncation", "sde-scaling"])
    sub.add_parser("show-config", parents=[common], help="print the default configuration")
    return p


def _overrides(args) -> dict:
    o = {}
    pairs = [("out", ("output", "dir")), ("seed", ("seed", "master")), ("rho", ("market", "rho")),
             ("scheme", ("numerics", "scheme")), ("levels", ("study", "levels")), ("paths", ("numerics", "paths")),
             ("steps", ("numerics", "steps")), ("forward", ("numerics", "forward")),
             ("workers", ("output", "workers"))]
    for attr, key in pairs:
        v = getattr(args, attr)
        if v is not None:
            o[key] = v
    if args.plot:
        o[("output", "plots")] = "true"
    return o


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "show-config":
        print(default_config_text())
        return EXIT_OK
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "simulate":
            files = cmd_simulate(cfg)
        elif args.command == "price":
            files = cmd_price(cfg)
        else:
            files, ok = cmd_study(cfg, args.which)
            if not ok:
                for f in files:
                    print(f)
                print(f"study {args.which}: invariant check failed", file=sys.stderr)
                return EXIT_CHECK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SimulationError, DomainError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    for f in files:
        print(f)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
