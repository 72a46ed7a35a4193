import csv
import filecmp
from pathlib import Path

import numpy as np
import pytest

from qgfbsde.cli import PATH_COLUMNS, SIMULATE_COLUMNS, SPOT_COLUMNS, STRIKE_COLUMNS, main
from qgfbsde.config import RunConfig, default_config_text, load_config
from qgfbsde.core import ConfigError

SMALL = """
[market]
rho = 0.2, 0.9
[payoff]
strikes = 160, 200, 220
spots = 150, 210
strike = 180
[numerics]
steps = 20
paths = 5000
[study]
refinements = 25, 50
regularity_paths = 2048
substeps = 4
levels = 1, 2
truncation_paths = 2048
scaling_paths = 500
[output]
sample_paths = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def read(path):
    lines = Path(path).read_text().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


def test_default_config_roundtrip(tmp_path):
    p = tmp_path / "default.ini"
    p.write_text(default_config_text())
    assert load_config(p) == RunConfig()
    assert load_config(p).digest() == RunConfig().digest()


def test_digest_ignores_scheduling_only_keys():
    a = load_config(None, {("output", "workers"): 4, ("output", "dir"): "x"})
    assert a.digest() == RunConfig().digest()
    assert load_config(None, {("seed", "master"): 5}).digest() != RunConfig().digest()


@pytest.mark.parametrize("text", ["[market]\nfoo = 1\n", "[extra]\na = 1\n", "[market]\nrho = x\n",
                                  "[market]\nrho = 1.5\n", "[numerics]\nsteps = 0\n", "[numerics]\nscheme = rk4\n",
                                  "[payoff]\nkind = call\n", "[market]\nbeta = 0\n", "not an ini"])
def test_bad_config_exit_code(tmp_path, text):
    p = tmp_path / "bad.ini"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_missing_config_file(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.ini")]) == 2


def test_simulate_schema_and_shape(tmp_path, small_cfg):
    assert main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path)]) == 0
    meta, rows = read(tmp_path / "simulate.csv")
    assert meta.startswith("# config_sha256=") and "seed=20240601" in meta
    header = (tmp_path / "simulate.csv").read_text().splitlines()[1]
    assert header.split(",") == SIMULATE_COLUMNS
    assert len(rows) == 21 * 2 * 2
    assert {float(r["rho"]) for r in rows} == {0.2, 0.9}


def test_simulate_rho_one_rank_correlated(tmp_path, small_cfg):
    assert main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path), "--rho", "1"]) == 0
    _, rows = read(tmp_path / "simulate.csv")
    path0 = [r for r in rows if r["path_id"] == "0"]
    dR = np.diff(np.log([float(r["R"]) for r in path0]))
    dS = np.diff(np.log([float(r["S"]) for r in path0]))
    assert np.array_equal(np.argsort(dR), np.argsort(dS))


def test_seed_flag_changes_paths(tmp_path, small_cfg):
    main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(small_cfg), "--out", str(tmp_path / "b"), "--seed", "99"])
    assert not filecmp.cmp(tmp_path / "a" / "simulate.csv", tmp_path / "b" / "simulate.csv", shallow=False)


@pytest.fixture(scope="module")
def priced(tmp_path_factory):
    d = tmp_path_factory.mktemp("price")
    cfg = d / "small.ini"
    cfg.write_text(SMALL)
    assert main(["price", "--config", str(cfg), "--out", str(d), "--plot"]) == 0
    return d


def test_price_outputs(priced):
    for name, cols in [("strike_sweep", STRIKE_COLUMNS), ("spot_sweep", SPOT_COLUMNS),
                       ("price_path", PATH_COLUMNS), ("strategy_path", PATH_COLUMNS)]:
        meta, rows = read(priced / f"{name}.csv")
        assert meta.startswith("# config_sha256=")
        assert list(rows[0]) == cols
        assert "rho" in cols and "stderr" in cols
        assert (priced / f"{name}.png").stat().st_size > 0


def _series(rows, key):
    out = {}
    for r in rows:
        out.setdefault(float(r["rho"]), []).append((float(r[key]), float(r["price"]), float(r["stderr"])))
    return {k: sorted(v) for k, v in out.items()}


def test_strike_sweep_monotone(priced):
    _, rows = read(priced / "strike_sweep.csv")
    for pts in _series(rows, "strike").values():
        for (_, a, sa), (_, b, sb) in zip(pts, pts[1:]):
            assert b >= a - 3 * np.hypot(sa, sb)


def test_spot_sweep_monotone(priced):
    _, rows = read(priced / "spot_sweep.csv")
    for pts in _series(rows, "r0").values():
        for (_, a, sa), (_, b, sb) in zip(pts, pts[1:]):
            assert b <= a + 3 * np.hypot(sa, sb)


def test_correlation_ordering(priced):
    _, rows = read(priced / "strike_sweep.csv")
    s = _series(rows, "strike")
    for (k, lo, slo), (_, hi, shi) in zip(s[0.2], s[0.9]):
        assert hi - lo > 3 * np.hypot(slo, shi), k


def test_price_path_series(priced):
    _, rows = read(priced / "price_path.csv")
    series = {r["series"] for r in rows}
    assert {"mean", "median", "q25", "q75", "path_0", "path_1"} <= series
    _, rows = read(priced / "strategy_path.csv")
    assert "mean" not in {r["series"] for r in rows}
    assert len([r for r in rows if r["series"] == "path_0"]) == 2 * 20


def test_study_regularity(tmp_path, small_cfg):
    assert main(["study", "regularity", "--config", str(small_cfg), "--out", str(tmp_path)]) == 0
    meta, rows = read(tmp_path / "regularity.csv")
    assert [int(r["N"]) for r in rows] == [25, 50]
    assert "checks_passed=1" in meta


def test_study_truncation_provenance(tmp_path, small_cfg):
    code = main(["study", "truncation", "--config", str(small_cfg), "--out", str(tmp_path), "--levels", "1,2,4"])
    meta, rows = read(tmp_path / "truncation.csv")
    assert "reference=analytic" in meta and "rate_checked=0" in meta
    assert {r["reference"] for r in rows} == {"analytic"}
    assert [int(r["n"]) for r in rows] == [1, 2, 4]
    assert code == (0 if "checks_passed=1" in meta else 4)


def test_study_scaling(tmp_path, small_cfg):
    assert main(["study", "sde-scaling", "--config", str(small_cfg), "--out", str(tmp_path), "--plot"]) == 0
    _, rows = read(tmp_path / "sde_scaling.csv")
    assert len(rows) == 8
    assert (tmp_path / "sde_scaling.png").exists()


def test_study_failed_check_exit_code(tmp_path, small_cfg):
    # solver-mode Z estimates sit on the Monte-Carlo noise floor, so the rate check fails
    text = SMALL.replace("substeps = 4", "substeps = 4\nregularity_mode = solver")
    p = tmp_path / "solver.ini"
    p.write_text(text)
    assert main(["study", "regularity", "--config", str(p), "--out", str(tmp_path)]) == 4
    meta, _ = read(tmp_path / "regularity.csv")
    assert "checks_passed=0" in meta


def test_numerical_failure_exit_code(tmp_path):
    p = tmp_path / "blowup.ini"
    p.write_text("[market]\nmu = 1e300\n[numerics]\nsteps = 5\nforward = euler\n")
    # the exact lognormal step is also non-finite here
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 3


def test_io_error_names_path(tmp_path, small_cfg, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["simulate", "--config", str(small_cfg), "--out", str(blocker)]) == 1
    assert str(blocker) in capsys.readouterr().err


def test_determinism_runs_and_workers(tmp_path, small_cfg):
    args = ["price", "--config", str(small_cfg), "--rho", "0.5", "--paths", "5000"]
    assert main(args + ["--out", str(tmp_path / "a"), "--workers", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--workers", "1"]) == 0
    assert main(args + ["--out", str(tmp_path / "c"), "--workers", "4"]) == 0
    for name in ("strike_sweep", "spot_sweep", "price_path", "strategy_path"):
        f = f"{name}.csv"
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False)
        assert filecmp.cmp(tmp_path / "a" / f, tmp_path / "c" / f, shallow=False)


def test_show_config(capsys):
    assert main(["show-config"]) == 0
    assert "[numerics]" in capsys.readouterr().out
