"""Optional PNG figures rendered from the CSV artifacts (matplotlib, Agg backend)."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams.update({"figure.figsize": (6.4, 4.0), "font.size": 9, "axes.grid": True, "grid.alpha": 0.3})


def read_csv(path: Path) -> list[dict]:
    """Rows of an artifact CSV as dicts, skipping the ``#`` provenance line."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for r in csv.DictReader(lines):
        out = {}
        for k, v in r.items():
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
        rows.append(out)
    return rows


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _by(rows, key):
    groups = defaultdict(list)
    for r in rows:
        groups[r[key]].append(r)
    return dict(sorted(groups.items()))


def plot_simulate(csv_path: Path) -> list[Path]:
    rows = read_csv(csv_path)
    fig, ax = plt.subplots()
    first = True
    for rho, grp in _by(rows, "rho").items():
        path0 = [r for r in grp if r["path_id"] == 0]
        t = [r["time"] for r in path0]
        if first:
            ax.plot(t, [r["R"] for r in path0], color="k", lw=1.2, label="index R")
            first = False
        ax.plot(t, [r["S"] for r in path0], lw=0.9, label=f"asset S, rho={rho:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("price")
    ax.legend(fontsize=7)
    return [_save(fig, csv_path.with_suffix(".png"))]


def _sweep(csv_path: Path, x: str, xlabel: str) -> Path:
    rows = read_csv(csv_path)
    fig, ax = plt.subplots()
    for rho, grp in _by(rows, "rho").items():
        grp.sort(key=lambda r: r[x])
        xs = np.array([r[x] for r in grp])
        p = np.array([r["price"] for r in grp])
        se = np.array([r["stderr"] for r in grp])
        ax.errorbar(xs, p, yerr=3 * se, marker="o", ms=3, capsize=2, label=f"rho={rho:g}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("indifference price")
    ax.legend(fontsize=7)
    return _save(fig, csv_path.with_suffix(".png"))


def _process(csv_path: Path, ylabel: str, thin: int = 1) -> Path:
    rows = read_csv(csv_path)
    groups = _by(rows, "rho")
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharex=True)
    for rho, grp in groups.items():
        mean = [r for r in grp if r["series"] == "median"]
        path0 = [r for r in grp if r["series"] == "path_0"][::thin]
        axes[0].plot([r["time"] for r in mean], [r["value"] for r in mean], label=f"rho={rho:g}")
        axes[1].plot([r["time"] for r in path0], [r["value"] for r in path0], label=f"rho={rho:g}")
    axes[0].set_title("median over paths")
    axes[1].set_title("one sample path")
    for ax in axes:
        ax.set_xlabel("t")
        ax.set_ylabel(ylabel)
    axes[0].legend(fontsize=7)
    return _save(fig, csv_path.with_suffix(".png"))


def plot_price(out_dir: Path) -> list[Path]:
    d = Path(out_dir)
    return [
        _sweep(d / "strike_sweep.csv", "strike", "strike K"),
        _sweep(d / "spot_sweep.csv", "r0", "index spot r0"),
        _process(d / "price_path.csv", "price p_t"),
        _process(d / "strategy_path.csv", "amount in asset", thin=4),
    ]


def plot_study(csv_path: Path, which: str) -> list[Path]:
    rows = read_csv(csv_path)
    fig, ax = plt.subplots()
    if which == "regularity":
        h = [r["h"] for r in rows]
        ax.errorbar(h, [r["z_regularity"] for r in rows], yerr=[2 * r["z_regularity_se"] for r in rows],
                    marker="o", label="Z regularity")
        ax.plot(h, [r["y_increment"] for r in rows], marker="s", label="sup E|Y_t - Y_ti|^2")
        ax.set_xlabel("h")
    elif which == "truncation":
        n = [r["n"] for r in rows]
        for key in ("y0_error", "sup_y_error", "z_error"):
            ax.errorbar(n, [max(r[key], 1e-16) for r in rows], yerr=[2 * r[key + "_se"] for r in rows],
                        marker="o", label=key)
        ax.set_xlabel("truncation level n")
    else:
        for p, grp in _by(rows, "p").items():
            ax.errorbar([r["span"] for r in grp], [r["moment"] for r in grp],
                        yerr=[2 * r["moment_se"] for r in grp], marker="o", label=f"p={p:g}")
        ax.set_xlabel("window length")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    return [_save(fig, csv_path.with_suffix(".png"))]
