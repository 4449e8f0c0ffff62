"""Decade clustering of fitted Maxwell elements.

Fitted elements are binned by ``k = floor(log10 tau)`` (half-open decades
``[10**k, 10**(k+1))``) and each bin is merged into one element: stiffnesses add,
relaxation times are averaged with stiffness weights.  The number of non-empty
bins is the recovered element count.

An element stuck on the upper relaxation-time bound is a spring in disguise:
the misfit was still falling as ``tau`` grew, and the limit ``tau -> inf`` is a
pure spring.  With ``fold_bound`` such elements are added to the base stiffness
instead of forming a bin of their own.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from .optimize import FitConfig, FitResult, generate_starts, multistart_fit, regularized_cost, residual
from .rheology import MaterialModel, MaxwellElement
from .synth import StressDataset

logger = logging.getLogger(__name__)

Member = tuple[float, float]


@dataclass(frozen=True)
class ClusterConfig:
    """``k_min`` clamps every decade below it into bin ``k_min``."""

    post_step: Literal["merge", "refit"] = "merge"
    mu_drop: float = 1e-6
    k_min: int | None = None
    jitter: float = 0.2
    fold_bound: bool = True

    def __post_init__(self):
        if self.post_step not in ("merge", "refit"):
            raise ValueError(f"unknown post_step {self.post_step!r}")
        if not self.mu_drop >= 0:
            raise ValueError("mu_drop must be >= 0")

    def to_dict(self) -> dict:
        return {"post_step": self.post_step, "mu_drop": self.mu_drop,
                "k_min": self.k_min, "jitter": self.jitter, "fold_bound": self.fold_bound}


@dataclass(frozen=True)
class ClusterReport:
    bins: dict[int, list[Member]]
    model: MaterialModel
    provenance: str
    residual_before: float
    residual_after: float
    cost_after: float
    dropped_bins: tuple[int, ...] = field(default_factory=tuple)
    folded: tuple[Member, ...] = field(default_factory=tuple)

    @property
    def n(self) -> int:
        return self.model.n

    def to_dict(self) -> dict:
        return {
            "bins": {str(k): [list(m) for m in v] for k, v in sorted(self.bins.items())},
            "model": self.model.to_dict(),
            "n": self.n,
            "provenance": self.provenance,
            "residual_before": self.residual_before,
            "residual_after": self.residual_after,
            "cost_after": self.cost_after,
            "dropped_bins": list(self.dropped_bins),
            "folded": [list(m) for m in self.folded],
        }


def decade(tau: float, k_min: int | None = None) -> int:
    k = math.floor(math.log10(tau))
    # guard floor(log10) rounding for exact powers of ten
    if 10.0 ** (k + 1) <= tau:
        k += 1
    elif 10.0 ** k > tau:
        k -= 1
    if k_min is not None:
        k = max(k, k_min)
    return k


def at_upper_bound(tau: float, tau_hi: float | None) -> bool:
    return tau_hi is not None and tau >= tau_hi * (1 - 1e-9)


def assign_bins(mdl: MaterialModel, cfg: ClusterConfig = ClusterConfig(),
                tau_hi: float | None = None) -> dict[int, list[Member]]:
    """Bins of the elements that survive the stiffness cut and the bound fold."""
    bins: dict[int, list[Member]] = {}
    for e in mdl.elements:
        if e.stiffness <= cfg.mu_drop:
            continue
        if cfg.fold_bound and at_upper_bound(e.relaxation_time, tau_hi):
            continue
        bins.setdefault(decade(e.relaxation_time, cfg.k_min), []).append(
            (e.stiffness, e.relaxation_time))
    return dict(sorted(bins.items()))


def merge_bin(members: Sequence[Member]) -> Member | None:
    """Summed stiffness and stiffness-weighted mean relaxation time.

    Returns ``None`` (with a warning) when every member has zero stiffness.
    """
    if not members:
        raise ValueError("cannot merge an empty bin")
    mus = np.array([m for m, _ in members], dtype=float)
    taus = np.array([t for _, t in members], dtype=float)
    total = float(mus.sum())
    if total <= 0:
        warnings.warn("bin with zero total stiffness dropped", RuntimeWarning, stacklevel=2)
        return None
    if len(members) == 1:
        return float(mus[0]), float(taus[0])
    tau = float(np.dot(mus / total, taus))
    return total, float(np.clip(tau, taus.min(), taus.max()))


def merge_model(mdl: MaterialModel, cfg: ClusterConfig = ClusterConfig(), tau_hi: float | None = None):
    """Returns ``(bins, merged model, dropped bin keys, folded members)``."""
    bins = assign_bins(mdl, cfg, tau_hi)
    folded = tuple((e.stiffness, e.relaxation_time) for e in mdl.elements
                   if cfg.fold_bound and e.stiffness > cfg.mu_drop
                   and at_upper_bound(e.relaxation_time, tau_hi))
    elements, dropped = [], []
    for k, members in bins.items():
        merged = merge_bin(members)
        if merged is None:
            dropped.append(k)
        else:
            elements.append(MaxwellElement(*merged))
    mu = mdl.base_stiffness + sum(m for m, _ in folded)
    return bins, MaterialModel(mu, tuple(elements)), tuple(dropped), folded


def _refit_starts(merged: MaterialModel, d: StressDataset, fit_cfg: FitConfig,
                  jitter: float) -> list[MaterialModel]:
    n = merged.n
    k_local = max(1, fit_cfg.starts // 2)
    rng = np.random.default_rng([fit_cfg.seed, 1])
    starts = [merged]
    p0 = merged.params
    for _ in range(k_local - 1):
        p = p0 * rng.uniform(1 - jitter, 1 + jitter, size=p0.size)
        p[n + 1:] = np.clip(p[n + 1:], fit_cfg.tau_lo, fit_cfg.tau_hi)
        starts.append(MaterialModel.from_vector(p))
    rest = fit_cfg.starts - len(starts)
    if rest > 0:
        starts += generate_starts(d, replace(fit_cfg, n_max=n), count=rest)
    return starts


def cluster(fit: FitResult, d: StressDataset, cfg: ClusterConfig = ClusterConfig(),
            fit_cfg: FitConfig | None = None) -> ClusterReport:
    fit_cfg = fit.config if fit_cfg is None else fit_cfg
    bins, merged, dropped, folded = merge_model(fit.model, cfg, fit_cfg.tau_hi)
    reg = fit_cfg.regularizer
    r = residual(merged, d)
    res_after = float(r @ r)
    cost_after = regularized_cost(merged, d, reg)
    provenance = "merge"
    if cfg.post_step == "refit" and merged.n >= 1:
        merged_in = MaterialModel(merged.base_stiffness, tuple(
            MaxwellElement(e.stiffness, float(np.clip(e.relaxation_time, fit_cfg.tau_lo, fit_cfg.tau_hi)))
            for e in merged.elements))
        refit_cfg = replace(fit_cfg, n_max=merged.n)
        refit = multistart_fit(d, refit_cfg, _refit_starts(merged_in, d, refit_cfg, cfg.jitter))
        # the refit may put two elements in one decade again
        _, remerged, _, extra = merge_model(refit.model, cfg, fit_cfg.tau_hi)
        remerged_cost = regularized_cost(remerged, d, reg)
        if remerged_cost < cost_after:
            r = residual(remerged, d)
            merged, res_after, cost_after, provenance = remerged, float(r @ r), remerged_cost, "refit"
            folded += extra
    return ClusterReport(bins, merged, provenance, fit.residual, res_after, cost_after, dropped, folded)
