"""Experiment harness: exact recovery, noisy sweeps, rate and regularizer studies, truncation.

Every study returns a :class:`Report` whose tables are plain lists of dicts.
Each row carries the noise seed and a hash of the study configuration, so any
row can be regenerated on its own.  Replicas are independent and can be mapped
over a process pool; results are assembled in replica order regardless.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import spearmanr

from .cluster import ClusterConfig, cluster
from .optimize import FitConfig, Regularizer, multistart_fit
from .rheology import (TABLE1_MODEL, LoadingProgram, MaterialModel, TimeGrid,
                       element_stress_at, spring_stress_at)
from .synth import NoiseSpec, StressDataset, add_noise, simulate_dataset, truncate

logger = logging.getLogger(__name__)

PARAM_NAMES = ("mu", "mu1", "tau1", "mu2", "tau2", "mu3", "tau3")


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(value):
    """JSON-safe copy: NaN/inf become None, numpy scalars become Python numbers."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class Report:
    name: str
    config: dict
    tables: dict[str, list[dict]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    # in-memory objects (fit results etc.) that are not serialized
    extras: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)

    def to_dict(self) -> dict:
        return _clean({
            "name": self.name,
            "config": json.loads(json.dumps(self.config, default=_jsonable)),
            "config_hash": self.config_hash,
            # column lists keep the table layout through key-sorted JSON
            "tables": {k: {"columns": _columns(rows), "rows": [[r.get(c) for c in _columns(rows)] for r in rows]}
                       for k, rows in self.tables.items()},
            "summary": self.summary,
        })

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        tables = {k: [{c: (math.nan if v is None else v) for c, v in zip(t["columns"], row)}
                      for row in t["rows"]]
                  for k, t in d["tables"].items()}
        return cls(d["name"], d["config"], tables, d.get("summary", {}))

    def write(self, out_dir) -> list[Path]:
        """Write one CSV per table plus ``<name>.json``; returns the paths written."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        for tname, rows in self.tables.items():
            if not rows:
                continue
            path = out / f"{self.name}_{tname}.csv"
            write_csv(rows, path)
            written.append(path)
        path = out / f"{self.name}.json"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
        self.files.extend(str(p) for p in written)
        return written


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _columns(rows: Sequence[dict]) -> list[str]:
    columns: list[str] = []
    for row in rows:
        columns += [c for c in row if c not in columns]
    return columns


def write_csv(rows: Sequence[dict], path) -> None:
    columns = _columns(rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        conv = {}
        for k, v in row.items():
            try:
                conv[k] = float(v) if v != "" else math.nan
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out


# ---------------------------------------------------------------------------
# labelling and statistics


def align_to_truth(model: MaterialModel, truth: MaterialModel) -> dict:
    """Map clustered elements onto the truth's elements by nearest log relaxation time.

    With as many clustered as true elements this is plain rank order.  Extra
    clustered elements are left unlabelled; missing ones come out as NaN.
    """
    row = {"mu": model.base_stiffness}
    for j in range(1, truth.n + 1):
        row[f"mu{j}"] = math.nan
        row[f"tau{j}"] = math.nan
    if model.n and truth.n:
        cost = np.abs(np.log(model.relaxation_times)[:, None]
                      - np.log(truth.relaxation_times)[None, :])
        rows, cols = linear_sum_assignment(cost)
        for i, j in zip(rows, cols):
            row[f"mu{j + 1}"] = float(model.stiffnesses[i])
            row[f"tau{j + 1}"] = float(model.relaxation_times[i])
    return row


def describe(values) -> dict:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    if v.size == 0:
        return {"count": 0}
    q25, q50, q75 = np.percentile(v, [25, 50, 75])
    return {"count": int(v.size), "median": float(q50), "q25": float(q25), "q75": float(q75),
            "iqr": float(q75 - q25), "min": float(v.min()), "max": float(v.max())}


def rank_correlation(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    if ok.sum() < 3:
        return math.nan
    return float(spearmanr(x[ok], y[ok]).statistic)


# ---------------------------------------------------------------------------
# pipeline


def fit_and_cluster(d: StressDataset, fit_cfg: FitConfig, cluster_cfg: ClusterConfig):
    fit = multistart_fit(d, fit_cfg)
    return fit, cluster(fit, d, cluster_cfg, fit_cfg)


def _pipeline_row(d: StressDataset, truth: MaterialModel, fit_cfg: FitConfig,
                  cluster_cfg: ClusterConfig) -> dict:
    fit, rep = fit_and_cluster(d, fit_cfg, cluster_cfg)
    row = {
        "seed": d.seed,
        "noise_level": d.noise_level,
        "residual": fit.residual,
        "cost": fit.cost,
        "n": rep.n,
        "residual_clustered": rep.residual_after,
        "provenance": rep.provenance,
    }
    row.update(align_to_truth(rep.model, truth))
    row["fitted"] = json.dumps(fit.model.to_dict()["elements"])
    row["clustered"] = json.dumps(rep.model.to_dict()["elements"])
    return row


def _noisy(clean: StressDataset, level: float, seed: int) -> StressDataset:
    return add_noise(clean, NoiseSpec(level, seed))


def _replica_job(args):
    clean, level, seed, truth, fit_cfg, cluster_cfg = args
    return _pipeline_row(_noisy(clean, level, seed), truth, fit_cfg, cluster_cfg)


def _map(fn, jobs, executor=None):
    return list(map(fn, jobs) if executor is None else executor.map(fn, jobs))


def run_exact_recovery(truth: MaterialModel, program: LoadingProgram, m: int,
                       fit_cfg: FitConfig, cluster_cfg: ClusterConfig = ClusterConfig()) -> Report:
    config = {"study": "exact_recovery", "truth": truth, "program": program, "m": m,
              "fit": fit_cfg, "cluster": cluster_cfg}
    report = Report("exact_recovery", json.loads(json.dumps(config, default=_jsonable)))
    d = simulate_dataset(truth, program, m)
    fit, rep = fit_and_cluster(d, fit_cfg, cluster_cfg)
    h = report.config_hash

    def element_rows(model, stage):
        rows = [{"stage": stage, "j": 0, "mu": model.base_stiffness, "tau": math.nan,
                 "config_hash": h}]
        rows += [{"stage": stage, "j": j + 1, "mu": e.stiffness, "tau": e.relaxation_time,
                  "config_hash": h} for j, e in enumerate(model.elements)]
        return rows

    report.tables["parameters"] = element_rows(fit.model, "fitted") + element_rows(rep.model, "clustered")
    report.tables["bins"] = [{"decade": k, "mu": m_, "tau": t_, "config_hash": h}
                             for k, members in rep.bins.items() for m_, t_ in members]
    aligned = align_to_truth(rep.model, truth)
    report.summary = {
        "n": rep.n,
        "residual_fitted": fit.residual,
        "residual_clustered": rep.residual_after,
        "clustered": rep.model.to_dict(),
        "aligned": aligned,
        "max_abs_error": max(abs(aligned[k] - v) for k, v in align_to_truth(truth, truth).items())
        if rep.n == truth.n else math.nan,
    }
    report.extras.update(fit=fit, cluster=rep, dataset=d)
    return report


@dataclass(frozen=True)
class SweepSpec:
    """Noisy-replica sweep; replica ``k`` uses noise seed ``base_seed + k``."""

    replicas: int = 100
    base_seed: int = 0
    noise_level: float = 0.01
    program: LoadingProgram = LoadingProgram(10.0, 20.0, 100.0)
    truth: MaterialModel = TABLE1_MODEL
    m: int = 1000
    fits: tuple[FitConfig, ...] = (FitConfig(),)
    cluster: ClusterConfig = ClusterConfig()

    def __post_init__(self):
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if not self.fits:
            raise ValueError("at least one fit configuration is required")

    def to_dict(self) -> dict:
        return {"replicas": self.replicas, "base_seed": self.base_seed,
                "noise_level": self.noise_level, "program": self.program.to_dict(),
                "truth": self.truth.to_dict(), "m": self.m,
                "fits": [f.to_dict() for f in self.fits], "cluster": self.cluster.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "SweepSpec":
        d = dict(d)
        if "program" in d:
            d["program"] = LoadingProgram.from_dict(d["program"])
        if "truth" in d:
            d["truth"] = MaterialModel.from_dict(d["truth"])
        if "fits" in d:
            d["fits"] = tuple(FitConfig.from_dict(f) for f in d["fits"])
        if "cluster" in d:
            d["cluster"] = ClusterConfig(**d["cluster"])
        return cls(**d)


def _variant_label(cfg: FitConfig) -> str:
    return cfg.regularizer.variant


def _sweep_rows(spec: SweepSpec, h: str, executor=None) -> list[dict]:
    clean = simulate_dataset(spec.truth, spec.program, spec.m)
    jobs, keys = [], []
    for fit_cfg in spec.fits:
        for k in range(spec.replicas):
            seed = spec.base_seed + k
            jobs.append((clean, spec.noise_level, seed, spec.truth, fit_cfg, spec.cluster))
            keys.append((_variant_label(fit_cfg), fit_cfg.regularizer.lam, k))
    rows = []
    for (variant, lam, k), row in zip(keys, _map(_replica_job, jobs, executor)):
        rows.append({"variant": variant, "lam": lam, "replica": k, "config_hash": h, **row})
    return rows


def summarize_rows(rows: list[dict], names=PARAM_NAMES) -> dict:
    out = {}
    for variant in dict.fromkeys(r["variant"] for r in rows):
        sel = [r for r in rows if r["variant"] == variant]
        stats = {p: describe([r.get(p, math.nan) for r in sel]) for p in names}
        stats["n_counts"] = {str(k): sum(1 for r in sel if int(r["n"]) == k)
                             for k in sorted({int(r["n"]) for r in sel})}
        stats["spearman_mu1_tau1"] = rank_correlation([r.get("mu1", math.nan) for r in sel],
                                                      [r.get("tau1", math.nan) for r in sel])
        out[variant] = stats
    return out


def run_noise_sweep(spec: SweepSpec, executor=None) -> Report:
    report = Report("noise_sweep", {"study": "noise_sweep", **spec.to_dict()})
    rows = _sweep_rows(spec, report.config_hash, executor)
    report.tables["replicas"] = rows
    report.summary = summarize_rows(rows)
    return report


def run_regularizer_comparison(spec: SweepSpec, lam: float = 1.0, executor=None) -> Report:
    """Same replicas fitted with no penalty, full Tikhonov and first-stiffness penalty."""
    base = spec.fits[0]
    fits = tuple(replace(base, regularizer=Regularizer(v, 0.0 if v == "none" else lam))
                 for v in ("none", "tikhonov_full", "first_stiffness"))
    spec = replace(spec, fits=fits)
    report = Report("regularizer_comparison",
                    {"study": "regularizer_comparison", "lam": lam, **spec.to_dict()})
    rows = _sweep_rows(spec, report.config_hash, executor)
    report.tables["replicas"] = rows
    report.summary = summarize_rows(rows)
    return report


def decomposition_maxima(truth: MaterialModel, program: LoadingProgram) -> list[float]:
    """Stress of the spring and of each element at the end of the ramp."""
    t = program.ramp_end
    return [spring_stress_at(truth.base_stiffness, program, t)] + [
        element_stress_at(e, program, t) for e in truth.elements]


def run_rate_comparison(truth: MaterialModel = TABLE1_MODEL, rates: Sequence[float] = (1.0, 10.0),
                        m: int = 1000, noise_level: float = 0.01,
                        fit_cfg: FitConfig = FitConfig(), cluster_cfg: ClusterConfig = ClusterConfig(),
                        replicas: int = 4, base_seed: int = 0, max_strain: float = 20.0,
                        horizon: float = 100.0, executor=None) -> Report:
    config = {"study": "rate_comparison", "truth": truth.to_dict(), "rates": list(rates), "m": m,
              "noise_level": noise_level, "fit": fit_cfg.to_dict(), "cluster": cluster_cfg.to_dict(),
              "replicas": replicas, "base_seed": base_seed, "max_strain": max_strain,
              "horizon": horizon}
    report = Report("rate_comparison", config)
    h = report.config_hash
    maxima, fits = [], []
    for rate in rates:
        program = LoadingProgram(rate, max_strain, horizon)
        for j, value in enumerate(decomposition_maxima(truth, program)):
            maxima.append({"rate": rate, "j": j, "t": program.ramp_end, "stress": value,
                           "config_hash": h})
        if replicas:
            spec = SweepSpec(replicas, base_seed, noise_level, program, truth, m, (fit_cfg,), cluster_cfg)
            for row in _sweep_rows(spec, h, executor):
                fits.append({"rate": rate, **row})
    report.tables["maxima"] = maxima
    report.tables["replicas"] = fits
    report.summary = {
        "maxima": {str(r): [x["stress"] for x in maxima if x["rate"] == r] for r in rates},
        "fits": {str(r): summarize_rows([x for x in fits if x["rate"] == r])
                 for r in rates if fits},
    }
    return report


@dataclass(frozen=True)
class TruncationSpec:
    rates: tuple[float, ...] = (10.0, 1.0)
    cut_times: tuple[float, ...] = tuple(float(t) for t in range(100, 20, -5))
    truth: MaterialModel = TABLE1_MODEL
    max_strain: float = 20.0
    horizon: float = 100.0
    m: int = 1000
    noise_level: float = 0.01
    seed: int = 0
    fit: FitConfig = FitConfig(regularizer=Regularizer("first_stiffness", 1e-2))
    cluster: ClusterConfig = ClusterConfig(post_step="refit")

    def __post_init__(self):
        for rate in self.rates:
            ramp = self.max_strain / rate
            bad = [t for t in self.cut_times if not ramp < t <= self.horizon]
            if bad:
                raise ValueError(f"cut times {bad} do not contain the ramp of rate {rate}")

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "cut_times": list(self.cut_times),
                "truth": self.truth.to_dict(), "max_strain": self.max_strain,
                "horizon": self.horizon, "m": self.m, "noise_level": self.noise_level,
                "seed": self.seed, "fit": self.fit.to_dict(), "cluster": self.cluster.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "TruncationSpec":
        d = dict(d)
        for key in ("rates", "cut_times"):
            if key in d:
                d[key] = tuple(float(x) for x in d[key])
        if "truth" in d:
            d["truth"] = MaterialModel.from_dict(d["truth"])
        if "fit" in d:
            d["fit"] = FitConfig.from_dict(d["fit"])
        if "cluster" in d:
            d["cluster"] = ClusterConfig(**d["cluster"])
        return cls(**d)


# relative tolerances for calling an estimate "identified"
IDENTIFICATION_TOL = {"mu": 0.02, "mu1": 0.02, "mu2": 0.02, "mu3": 0.02,
                      "tau1": 0.10, "tau2": 0.10, "tau3": 0.10}


def identification_time(rows: list[dict], param: str, truth_value: float,
                        tol: float | None = None) -> float | None:
    """Smallest cut time from which on the estimate stays within ``tol`` of the truth."""
    tol = IDENTIFICATION_TOL[param] if tol is None else tol
    ordered = sorted(rows, key=lambda r: r["T"], reverse=True)
    threshold = None
    for r in ordered:
        v = r.get(param, math.nan)
        if v is None or math.isnan(v) or abs(v - truth_value) > tol * abs(truth_value):
            break
        threshold = r["T"]
    return threshold


def _truncation_job(args):
    noisy, t_cut, truth, fit_cfg, cluster_cfg = args
    d = noisy if t_cut == noisy.horizon else truncate(noisy, t_cut)
    return _pipeline_row(d, truth, fit_cfg, cluster_cfg)


def run_truncation_study(spec: TruncationSpec, executor=None) -> Report:
    report = Report("truncation_study", {"study": "truncation", **spec.to_dict()})
    h = report.config_hash
    jobs, keys = [], []
    for rate in spec.rates:
        program = LoadingProgram(rate, spec.max_strain, spec.horizon)
        noisy = _noisy(simulate_dataset(spec.truth, program, spec.m), spec.noise_level, spec.seed)
        for t_cut in spec.cut_times:
            jobs.append((noisy, t_cut, spec.truth, spec.fit, spec.cluster))
            keys.append((rate, t_cut))
    rows = [{"rate": rate, "T": t_cut, "config_hash": h, **row}
            for (rate, t_cut), row in zip(keys, _map(_truncation_job, jobs, executor))]
    report.tables["estimates"] = rows
    truth_row = align_to_truth(spec.truth, spec.truth)
    report.summary = {
        "identification_time": {
            str(rate): {p: identification_time([r for r in rows if r["rate"] == rate], p, truth_row[p])
                        for p in PARAM_NAMES}
            for rate in spec.rates},
    }
    return report
