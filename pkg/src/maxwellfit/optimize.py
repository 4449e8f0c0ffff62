"""Regularized nonlinear least squares with deterministic multi-start.

The cost minimized for a fixed element budget ``N`` is

    ||sigma_model(t_i) - sigma_data(t_i)||_2^2 + penalty

where the penalty is ``lam * ||(mu, mu_1..mu_N, tau_1..tau_N)||^2``
(``tikhonov_full``), ``lam * mu_first^2`` with ``mu_first`` the stiffness paired
with the currently smallest relaxation time among elements that carry stiffness
(``first_stiffness``), or nothing.

Each start runs a bound-constrained Levenberg-Marquardt iteration in internal
coordinates ``(mu, mu_j, log tau_j)``.  Bounds are enforced by projection with an
active set, so iterates never leave the feasible box.  Penalties always act on
the raw parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
from scipy.stats import qmc

from .rheology import MaterialModel, forward
from .synth import StressDataset

logger = logging.getLogger(__name__)

Variant = Literal["none", "tikhonov_full", "first_stiffness"]
VARIANTS = ("none", "tikhonov_full", "first_stiffness")


class FitError(RuntimeError):
    """Raised when no start produced a usable fit."""

    def __init__(self, message: str, records=()):
        super().__init__(message)
        self.records = list(records)


@dataclass(frozen=True)
class Regularizer:
    variant: Variant = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown regularizer variant {self.variant!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        if self.variant == "none" and self.lam != 0:
            raise ValueError("variant 'none' requires lam == 0")

    def to_dict(self) -> dict:
        return {"variant": self.variant, "lam": self.lam}


@dataclass(frozen=True)
class FitConfig:
    """Solver configuration.

    ``mu_hi`` is the upper end of the stiffness start range.  When ``None`` it
    is derived from the data as ``2 * max(sigma) / max_strain``.  Stiffnesses are
    bounded below by zero and above by ``mu_bound`` (unbounded by default).
    """

    n_max: int = 5
    regularizer: Regularizer = field(default_factory=Regularizer)
    starts: int = 20
    tau_lo: float = 1e-2
    tau_hi: float = 1e3
    mu_hi: float | None = None
    mu_bound: float = math.inf
    gtol: float = 1e-10
    xtol: float = 1e-12
    ftol: float = 1e-14
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")
        if int(self.starts) != self.starts or self.starts < 1:
            raise ValueError(f"starts must be an integer >= 1, got {self.starts}")
        if not 0 < self.tau_lo < self.tau_hi:
            raise ValueError("need 0 < tau_lo < tau_hi")
        if self.mu_hi is not None and not self.mu_hi > 0:
            raise ValueError("mu_hi must be positive")
        if not self.mu_bound > 0:
            raise ValueError("mu_bound must be positive")
        if min(self.gtol, self.xtol, self.ftol) <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")
        if isinstance(self.regularizer, dict):
            object.__setattr__(self, "regularizer", Regularizer(**self.regularizer))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["regularizer"] = self.regularizer.to_dict()
        if d["mu_bound"] == math.inf:
            d["mu_bound"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        if "regularizer" in d and isinstance(d["regularizer"], dict):
            d["regularizer"] = Regularizer(**d["regularizer"])
        if d.get("mu_bound") is None:
            d.pop("mu_bound", None)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown FitConfig fields: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class StartRecord:
    start: MaterialModel
    model: MaterialModel | None
    initial_cost: float
    cost: float
    residual: float
    iterations: int
    reason: str

    @property
    def ok(self) -> bool:
        return self.model is not None

    def to_dict(self) -> dict:
        return {
            "start": self.start.to_dict(),
            "model": None if self.model is None else self.model.to_dict(),
            "initial_cost": _json_float(self.initial_cost),
            "cost": _json_float(self.cost),
            "residual": _json_float(self.residual),
            "iterations": self.iterations,
            "reason": self.reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StartRecord":
        return cls(
            start=MaterialModel.from_dict(d["start"]),
            model=None if d["model"] is None else MaterialModel.from_dict(d["model"]),
            initial_cost=float(d["initial_cost"]),
            cost=float(d["cost"]),
            residual=float(d["residual"]),
            iterations=int(d["iterations"]),
            reason=d["reason"],
        )


@dataclass(frozen=True)
class FitResult:
    model: MaterialModel
    residual: float
    cost: float
    records: tuple[StartRecord, ...]
    best: int
    config: FitConfig

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "residual": self.residual,
            "cost": self.cost,
            "best": self.best,
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            model=MaterialModel.from_dict(d["model"]),
            residual=float(d["residual"]),
            cost=float(d["cost"]),
            records=tuple(StartRecord.from_dict(r) for r in d["records"]),
            best=int(d["best"]),
            config=FitConfig.from_dict(d["config"]),
        )


def _json_float(x: float):
    return x if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# cost evaluation


def residual(mdl: MaterialModel, d: StressDataset) -> np.ndarray:
    """Model minus data on the dataset's sample times."""
    if d.times[-1] > d.program.horizon * (1 + 1e-12):
        raise ValueError("dataset extends past the loading program horizon")
    return forward(mdl.params, d.program, d.times) - d.stresses


def penalty(params: np.ndarray, reg: Regularizer) -> float:
    if reg.variant == "none" or reg.lam == 0:
        return 0.0
    if reg.variant == "tikhonov_full":
        return reg.lam * float(params @ params)
    j = first_element(params)
    return 0.0 if j is None else reg.lam * float(params[1 + j] ** 2)


def first_element(params: np.ndarray) -> int | None:
    """Index of the fastest element that carries stiffness.

    Zero-stiffness elements are absent from the material and are skipped;
    otherwise a spare element parked at the smallest relaxation time would
    absorb the penalty at no cost.
    """
    n = (params.size - 1) // 2
    mus = params[1:n + 1]
    live = np.flatnonzero(mus > 0)
    if live.size == 0:
        return None
    return int(live[np.argmin(params[n + 1:][live])])


def regularized_cost(mdl: MaterialModel, d: StressDataset, reg: Regularizer) -> float:
    r = residual(mdl, d)
    return float(r @ r) + penalty(mdl.params, reg)


def cost_and_gradient(params, d: StressDataset, reg: Regularizer):
    """Regularized cost and its gradient with respect to the raw parameters."""
    params = np.asarray(params, dtype=float)
    sigma, jac = forward(params, d.program, d.times, with_jacobian=True)
    r = sigma - d.stresses
    cost = float(r @ r) + penalty(params, reg)
    grad = 2.0 * jac.T @ r
    if reg.variant == "tikhonov_full":
        grad += 2.0 * reg.lam * params
    elif reg.variant == "first_stiffness":
        j = first_element(params)
        if j is not None:
            grad[1 + j] += 2.0 * reg.lam * params[1 + j]
    return cost, grad


class _Problem:
    """Augmented residual ``[sigma - data; sqrt(lam) * penalty rows]`` in internal coordinates."""

    def __init__(self, d: StressDataset, reg: Regularizer, n: int):
        self.d = d
        self.reg = reg
        self.n = n
        self.sqlam = math.sqrt(reg.lam) if reg.variant != "none" else 0.0

    def to_raw(self, x: np.ndarray) -> np.ndarray:
        p = x.copy()
        p[self.n + 1:] = np.exp(x[self.n + 1:])
        return p

    def evaluate(self, x: np.ndarray, with_jacobian: bool):
        n = self.n
        p = self.to_raw(x)
        out = forward(p, self.d.program, self.d.times, with_jacobian)
        sigma, jac = out if with_jacobian else (out, None)
        r = sigma - self.d.stresses
        rows, jrows = [], []
        if self.sqlam:
            if self.reg.variant == "tikhonov_full":
                rows.append(self.sqlam * p)
                if with_jacobian:
                    chain = np.concatenate([np.ones(n + 1), p[n + 1:]])
                    jrows.append(np.diag(self.sqlam * chain))
            else:
                j = first_element(p)
                rows.append(np.array([0.0 if j is None else self.sqlam * p[1 + j]]))
                if with_jacobian:
                    jr = np.zeros((1, p.size))
                    if j is not None:
                        jr[0, 1 + j] = self.sqlam
                    jrows.append(jr)
        raw_r = r
        if rows:
            r = np.concatenate([r] + rows)
        if not with_jacobian:
            return r, raw_r
        jac[:, n + 1:] *= p[n + 1:]  # d/dlog(tau) = tau * d/dtau
        if jrows:
            jac = np.vstack([jac] + jrows)
        return r, raw_r, jac


def _bounds(cfg: FitConfig, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.concatenate([np.zeros(n + 1), np.full(n, math.log(cfg.tau_lo))])
    hi = np.concatenate([np.full(n + 1, cfg.mu_bound), np.full(n, math.log(cfg.tau_hi))])
    return lo, hi


def solve_single(start: MaterialModel, d: StressDataset, cfg: FitConfig) -> StartRecord:
    """One projected Levenberg-Marquardt run from ``start``.

    The returned cost never exceeds the cost at the start.  A start with a
    non-finite cost is returned as a rejected record (``model is None``).
    """
    n = start.n
    prob = _Problem(d, cfg.regularizer, n)
    lo, hi = _bounds(cfg, n)
    taus = start.relaxation_times
    if np.any(taus < cfg.tau_lo * (1 - 1e-12)) or np.any(taus > cfg.tau_hi * (1 + 1e-12)) \
            or start.base_stiffness > cfg.mu_bound or np.any(start.stiffnesses > cfg.mu_bound):
        raise ValueError("start lies outside the parameter bounds")
    x = np.concatenate([[start.base_stiffness], start.stiffnesses, np.log(taus)])
    x = np.clip(x, lo, hi)

    with np.errstate(over="ignore", invalid="ignore"):
        r, raw_r, jac = prob.evaluate(x, True)
        cost = float(r @ r)
    if not (math.isfinite(cost) and np.all(np.isfinite(jac))):
        return StartRecord(start, None, cost, math.inf, math.inf, 0, "rejected: non-finite cost at start")
    initial_cost = cost

    damping = None
    nu = 2.0
    reason = "max_iter"
    it = 0
    while it < cfg.max_iter:
        g = jac.T @ r
        at_lo = (x <= lo) & (g > 0)
        at_hi = (x >= hi) & (g < 0)
        free = ~(at_lo | at_hi)
        if not np.any(free) or np.max(np.abs(g[free])) <= cfg.gtol:
            reason = "gradient"
            break
        jf = jac[:, free]
        a = jf.T @ jf
        diag = np.diag(a).copy()
        diag = np.maximum(diag, 1e-12 * max(diag.max(), 1e-300))
        if damping is None:
            damping = 1e-3
        it += 1
        step = np.zeros_like(x)
        try:
            step[free] = np.linalg.solve(a + damping * np.diag(diag), -g[free])
        except np.linalg.LinAlgError:
            step[free] = np.linalg.lstsq(a + damping * np.diag(diag), -g[free], rcond=None)[0]
        x_new = np.clip(x + step, lo, hi)
        actual_step = x_new - x
        if np.linalg.norm(actual_step) <= cfg.xtol * (np.linalg.norm(x) + cfg.xtol):
            reason = "step"
            break
        lin = r + jac @ actual_step
        predicted = cost - float(lin @ lin)
        r_new, raw_new = prob.evaluate(x_new, False)
        cost_new = float(r_new @ r_new)
        actual = cost - cost_new if math.isfinite(cost_new) else -math.inf
        if predicted > 0 and actual > 0:
            rho = actual / predicted
            x = x_new
            r, raw_r, jac = prob.evaluate(x, True)
            cost = float(r @ r)
            damping *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if actual <= cfg.ftol * cost_new and predicted <= cfg.ftol * cost_new:
                reason = "cost"
                break
        else:
            if abs(predicted) <= cfg.ftol * cost and abs(actual) <= cfg.ftol * cost:
                reason = "cost"
                break
            damping *= nu
            nu *= 2.0
            if damping > 1e16:
                reason = "damping"
                break

    p = prob.to_raw(x)
    p[n + 1:] = np.clip(p[n + 1:], cfg.tau_lo, cfg.tau_hi)
    model = MaterialModel.from_vector(p)
    return StartRecord(start, model, initial_cost, cost, float(raw_r @ raw_r), it, reason)


# ---------------------------------------------------------------------------
# multi-start


def default_mu_hi(d: StressDataset) -> float:
    return 2.0 * float(np.max(np.abs(d.stresses))) / d.program.max_strain


def generate_starts(d: StressDataset, cfg: FitConfig, count: int | None = None,
                    seed: int | None = None) -> list[MaterialModel]:
    """Scrambled-Halton starts: stiffnesses uniform on ``[0, mu_hi]``, times log-uniform."""
    count = cfg.starts if count is None else count
    seed = cfg.seed if seed is None else seed
    n = cfg.n_max
    mu_hi = cfg.mu_hi if cfg.mu_hi is not None else default_mu_hi(d)
    mu_hi = min(mu_hi, cfg.mu_bound)
    u = qmc.Halton(d=2 * n + 1, scramble=True, seed=seed).random(count)
    mus = u[:, :n + 1] * mu_hi
    log_lo, log_hi = math.log(cfg.tau_lo), math.log(cfg.tau_hi)
    taus = np.exp(log_lo + u[:, n + 1:] * (log_hi - log_lo))
    return [MaterialModel.from_params(m[0], m[1:], tt) for m, tt in zip(mus, taus)]


def _solve_indexed(args):
    start, d, cfg = args
    return solve_single(start, d, cfg)


def multistart_fit(d: StressDataset, cfg: FitConfig,
                   starts: Sequence[MaterialModel] | None = None,
                   executor=None) -> FitResult:
    """Run :func:`solve_single` from every start and keep the lowest cost.

    ``executor`` may be any object with an order-preserving ``map`` (for example
    a ``concurrent.futures`` pool); results do not depend on completion order.
    """
    if len(d.times) == 0:
        raise ValueError("empty dataset")
    if starts is None:
        starts = generate_starts(d, cfg)
    if not starts:
        raise ValueError("no starts given")
    jobs = [(s, d, cfg) for s in starts]
    mapper = map if executor is None else executor.map
    records = tuple(mapper(_solve_indexed, jobs))
    ok = [i for i, r in enumerate(records) if r.ok]
    if not ok:
        raise FitError("every start was rejected", records)
    best = min(ok, key=lambda i: (records[i].cost, i))
    rec = records[best]
    return FitResult(rec.model, rec.residual, rec.cost, records, best, cfg)


def with_budget(cfg: FitConfig, n_max: int) -> FitConfig:
    return replace(cfg, n_max=n_max)
