"""Deterministic SVG figures for experiment reports.

Text stays text (``svg.fonttype = none``), element ids use a fixed hash salt and
no creation date is written, so the same report always yields the same bytes.
"""

from __future__ import annotations

import logging
import math
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .rheology import (LoadingProgram, MaterialModel, TimeGrid, stress_decomposition,  # noqa: E402
                       stress_series, strain_at)

logger = logging.getLogger(__name__)

RC = {
    "svg.hashsalt": "maxwellfit",
    "svg.fonttype": "none",
    "figure.figsize": (6.4, 4.2),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
}
METADATA = {"Date": None, "Creator": None}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(RC):
        fig.savefig(path, format="svg", metadata=METADATA)
    plt.close(fig)
    return path


def _figure(**kw):
    with plt.rc_context(RC):
        return plt.subplots(**kw)


def plot_strains(programs: list[LoadingProgram], path, m: int = 1000) -> Path:
    fig, ax = _figure()
    for p in programs:
        t = TimeGrid(m, p.horizon).nodes
        ax.plot(t, strain_at(p, t), label=f"rate {p.rate:g} %/s")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("strain [%]")
    ax.legend()
    return _save(fig, Path(path))


def plot_stresses(model: MaterialModel, programs: list[LoadingProgram], path, m: int = 1000) -> Path:
    fig, ax = _figure()
    for p in programs:
        g = TimeGrid(m, p.horizon)
        ax.plot(g.nodes, stress_series(model, p, g), label=f"rate {p.rate:g} %/s")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("stress [MPa]")
    ax.legend()
    return _save(fig, Path(path))


def plot_decomposition(model: MaterialModel, program: LoadingProgram, path, m: int = 1000) -> Path:
    g = TimeGrid(m, program.horizon)
    parts = stress_decomposition(model, program, g)
    fig, ax = _figure()
    for j, row in enumerate(parts):
        ax.plot(g.nodes, row, label=f"sigma_{j}")
    for j, row in enumerate(parts[1:], start=1):
        peak = float(np.max(row))
        ax.annotate(f"{peak:.2f}", (program.ramp_end, peak), fontsize=8,
                    xytext=(4, 2), textcoords="offset points")
    ax.plot(g.nodes, parts.sum(axis=0), "k--", lw=1, label="total")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("stress [MPa]")
    ax.set_title(f"stress components, rate {program.rate:g} %/s")
    ax.legend()
    return _save(fig, Path(path))


def _finite(values):
    return [v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]


def plot_spread(rows: list[dict], path, x: str = "tau1", y: str = "mu1",
                truth: tuple[float, float] | None = None) -> Path | None:
    pairs = [(r.get(x), r.get(y)) for r in rows]
    pairs = [(a, b) for a, b in pairs if _finite([a]) and _finite([b])]
    if not pairs:
        warnings.warn(f"no data for spread plot {path}", RuntimeWarning, stacklevel=2)
        return None
    xs, ys = np.array(pairs).T
    fig, ax = _figure()
    ax.scatter(xs, ys, s=12)
    if truth is not None:
        ax.scatter([truth[0]], [truth[1]], marker="x", s=60, color="red", label="truth")
        ax.legend()
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(x)
    ax.set_ylabel(y)
    return _save(fig, Path(path))


def plot_boxes(groups: dict[str, list[float]], path, ylabel: str,
               truth: float | None = None) -> Path | None:
    data = {k: _finite(v) for k, v in groups.items()}
    data = {k: v for k, v in data.items() if v}
    if not data:
        warnings.warn(f"no data for box plot {path}", RuntimeWarning, stacklevel=2)
        return None
    fig, ax = _figure()
    ax.boxplot(list(data.values()), tick_labels=list(data.keys()), whis=(0, 100), sym="r+")
    if truth is not None:
        ax.axhline(truth, color="grey", ls=":", lw=1)
    ax.set_ylabel(ylabel)
    return _save(fig, Path(path))


def plot_truncation(rows: list[dict], param: str, path, truth: float | None = None) -> Path | None:
    rows = [r for r in rows if _finite([r.get(param)])]
    if not rows:
        warnings.warn(f"no data for truncation plot {path}", RuntimeWarning, stacklevel=2)
        return None
    fig, ax = _figure()
    for rate in sorted({r["rate"] for r in rows}, reverse=True):
        sel = sorted((r for r in rows if r["rate"] == rate), key=lambda r: r["T"])
        ax.plot([r["T"] for r in sel], [r[param] for r in sel], "o-", label=f"rate {rate:g} %/s")
    if truth is not None:
        ax.axhline(truth, color="grey", ls=":", lw=1)
    ax.set_xlabel("experiment duration T [s]")
    ax.set_ylabel(param)
    ax.legend()
    return _save(fig, Path(path))


def emit_plots(report, out_dir) -> list[Path]:
    """Render every figure the report's tables support; returns the files written."""
    from .experiments import align_to_truth  # local: experiments imports nothing from here

    out = Path(out_dir)
    cfg = report.config
    written: list[Path | None] = []
    study = cfg.get("study")
    if study in ("noise_sweep", "regularizer_comparison"):
        truth = MaterialModel.from_dict(cfg["truth"])
        t = align_to_truth(truth, truth)
        rows = report.tables.get("replicas", [])
        for variant in dict.fromkeys(r["variant"] for r in rows):
            sel = [r for r in rows if r["variant"] == variant]
            written.append(plot_spread(sel, out / f"{report.name}_{variant}_spread.svg",
                                       truth=(t["tau1"], t["mu1"])))
        if not rows:
            warnings.warn("empty sweep: no spread plot", RuntimeWarning, stacklevel=2)
        for param in ("tau1", f"tau{truth.n}"):
            groups = {}
            for r in rows:
                groups.setdefault(r["variant"], []).append(r.get(param))
            written.append(plot_boxes(groups, out / f"{report.name}_{param}_box.svg", param,
                                      truth=t.get(param)))
    elif study == "rate_comparison":
        truth = MaterialModel.from_dict(cfg["truth"])
        programs = [LoadingProgram(r, cfg["max_strain"], cfg["horizon"]) for r in cfg["rates"]]
        written.append(plot_strains(programs, out / f"{report.name}_strain.svg", cfg["m"]))
        written.append(plot_stresses(truth, programs, out / f"{report.name}_stress.svg", cfg["m"]))
        for p in programs:
            written.append(plot_decomposition(truth, p, out / f"{report.name}_decomposition_rate{p.rate:g}.svg",
                                              cfg["m"]))
    elif study == "truncation":
        truth = MaterialModel.from_dict(cfg["truth"])
        t = align_to_truth(truth, truth)
        rows = report.tables.get("estimates", [])
        for param in ("mu", f"mu{truth.n}", "tau1", f"tau{truth.n}"):
            written.append(plot_truncation(rows, param, out / f"{report.name}_{param}.svg",
                                           truth=t.get(param)))
    elif study == "exact_recovery":
        truth = MaterialModel.from_dict(cfg["truth"])
        program = LoadingProgram.from_dict(cfg["program"])
        written.append(plot_stresses(truth, [program], out / f"{report.name}_stress.svg", cfg["m"]))
        written.append(plot_decomposition(truth, program, out / f"{report.name}_decomposition.svg",
                                          cfg["m"]))
    return [p for p in written if p is not None]
