"""Closed-form forward model of a generalized Maxwell material under ramp-and-hold strain.

Strain is measured in percent and the rate in percent per second, so a
"10 mm/s" test on a unit gauge length maps to ``rate=10``.  Stiffnesses are in
MPa, times in seconds.

All evaluators accept a scalar time or an array of times.  Hold-phase branches
are written relative to the end of the ramp, ``exp(-2 (t - t_r) / tau)``, so
nothing overflows for tiny relaxation times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class LoadingProgram:
    """Ramp at ``rate`` up to ``max_strain``, then hold until ``horizon``."""

    rate: float
    max_strain: float
    horizon: float

    def __post_init__(self):
        if not (self.rate > 0 and np.isfinite(self.rate)):
            raise ValueError(f"rate must be positive and finite, got {self.rate}")
        if not (self.max_strain > 0 and np.isfinite(self.max_strain)):
            raise ValueError(f"max_strain must be positive and finite, got {self.max_strain}")
        if not np.isfinite(self.horizon):
            raise ValueError(f"horizon must be finite, got {self.horizon}")
        if not self.horizon >= self.ramp_end:
            raise ValueError(
                f"horizon {self.horizon} ends before the ramp ({self.ramp_end} s)"
            )

    @property
    def ramp_end(self) -> float:
        return self.max_strain / self.rate

    def with_horizon(self, horizon: float) -> "LoadingProgram":
        return LoadingProgram(self.rate, self.max_strain, horizon)

    def to_dict(self) -> dict:
        return {"rate": self.rate, "max_strain": self.max_strain, "horizon": self.horizon}

    @classmethod
    def from_dict(cls, d: dict) -> "LoadingProgram":
        return cls(float(d["rate"]), float(d["max_strain"]), float(d["horizon"]))


@dataclass(frozen=True)
class MaxwellElement:
    stiffness: float
    relaxation_time: float

    def __post_init__(self):
        if not self.stiffness >= 0:
            raise ValueError(f"stiffness must be >= 0, got {self.stiffness}")
        if not self.relaxation_time > 0:
            raise ValueError(f"relaxation_time must be > 0, got {self.relaxation_time}")


@dataclass(frozen=True)
class MaterialModel:
    """Equilibrium spring in parallel with Maxwell elements.

    Elements are stored sorted ascending by relaxation time (ties broken by
    stiffness), whatever order they were given in.
    """

    base_stiffness: float
    elements: tuple[MaxwellElement, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.base_stiffness >= 0:
            raise ValueError(f"base_stiffness must be >= 0, got {self.base_stiffness}")
        elems = tuple(
            e if isinstance(e, MaxwellElement) else MaxwellElement(*e) for e in self.elements
        )
        elems = tuple(sorted(elems, key=lambda e: (e.relaxation_time, e.stiffness)))
        object.__setattr__(self, "elements", elems)

    @classmethod
    def from_params(cls, mu: float, stiffnesses: Sequence[float], times: Sequence[float]):
        if len(stiffnesses) != len(times):
            raise ValueError("stiffnesses and times must have equal length")
        return cls(float(mu), tuple(MaxwellElement(float(a), float(b))
                                    for a, b in zip(stiffnesses, times)))

    @classmethod
    def from_vector(cls, params: Iterable[float]) -> "MaterialModel":
        """Inverse of :attr:`params`: ``(mu, mu_1..mu_n, tau_1..tau_n)``."""
        p = np.asarray(list(params), dtype=float)
        if p.size % 2 != 1:
            raise ValueError("parameter vector must have odd length 2n+1")
        n = (p.size - 1) // 2
        return cls.from_params(p[0], p[1:n + 1], p[n + 1:])

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def stiffnesses(self) -> np.ndarray:
        return np.array([e.stiffness for e in self.elements], dtype=float)

    @property
    def relaxation_times(self) -> np.ndarray:
        return np.array([e.relaxation_time for e in self.elements], dtype=float)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([[self.base_stiffness], self.stiffnesses, self.relaxation_times])

    def to_dict(self) -> dict:
        return {
            "base_stiffness": self.base_stiffness,
            "elements": [[e.stiffness, e.relaxation_time] for e in self.elements],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaterialModel":
        return cls(float(d["base_stiffness"]),
                   tuple(MaxwellElement(float(a), float(b)) for a, b in d["elements"]))


# Parameters of the three-element reference material used throughout the experiments.
TABLE1_MODEL = MaterialModel(10.0, (MaxwellElement(4.0, 0.2),
                                    MaxwellElement(7.0, 3.7),
                                    MaxwellElement(1.0, 25.0)))


@dataclass(frozen=True)
class TimeGrid:
    """``count + 1`` equispaced nodes ``t_i = i * horizon / count``."""

    count: int
    horizon: float

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise ValueError(f"count must be an integer >= 1, got {self.count}")
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.count + 1) * (self.horizon / self.count)
        t[-1] = self.horizon
        return t


def _times(p: LoadingProgram, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0) or np.any(t > p.horizon):
        raise ValueError(f"time outside [0, {p.horizon}]")
    return t


def _out(t_in, values: np.ndarray):
    return float(values) if np.ndim(t_in) == 0 else values


def _check_tau(tau: float):
    if not tau > 0:
        raise ValueError(f"relaxation time must be > 0, got {tau}")


def strain_at(p: LoadingProgram, t):
    tt = _times(p, t)
    return _out(t, np.where(tt <= p.ramp_end, p.rate * tt, p.max_strain))


def _element_shape(tau: float, p: LoadingProgram, t: np.ndarray) -> np.ndarray:
    """Stress of an element with unit stiffness, i.e. ``eps - eps_inelastic``."""
    half = 0.5 * tau * p.rate
    ramp = t <= p.ramp_end
    # max() keeps the unused branch's exponent finite; np.where evaluates both.
    ramp_val = -half * np.expm1(-2.0 * t / tau)
    s = np.maximum(t - p.ramp_end, 0.0)
    peak = -half * np.expm1(-2.0 * p.ramp_end / tau)
    hold_val = peak * np.exp(-2.0 * s / tau)
    return np.where(ramp, ramp_val, hold_val)


def inelastic_strain_at(e: MaxwellElement, p: LoadingProgram, t):
    _check_tau(e.relaxation_time)
    tt = _times(p, t)
    eps = np.where(tt <= p.ramp_end, p.rate * tt, p.max_strain)
    return _out(t, eps - _element_shape(e.relaxation_time, p, tt))


def element_stress_at(e: MaxwellElement, p: LoadingProgram, t):
    _check_tau(e.relaxation_time)
    tt = _times(p, t)
    return _out(t, e.stiffness * _element_shape(e.relaxation_time, p, tt))


def spring_stress_at(mu: float, p: LoadingProgram, t):
    return _out(t, mu * np.asarray(strain_at(p, t)))


def total_stress_at(mdl: MaterialModel, p: LoadingProgram, t):
    tt = _times(p, t)
    sigma = mdl.base_stiffness * np.where(tt <= p.ramp_end, p.rate * tt, p.max_strain)
    for e in mdl.elements:
        sigma = sigma + e.stiffness * _element_shape(e.relaxation_time, p, tt)
    return _out(t, sigma)


def _check_grid(p: LoadingProgram, g: TimeGrid):
    if not np.isclose(g.horizon, p.horizon, rtol=1e-12, atol=0.0):
        raise ValueError(f"grid horizon {g.horizon} != program horizon {p.horizon}")


def stress_series(mdl: MaterialModel, p: LoadingProgram, g: TimeGrid) -> np.ndarray:
    _check_grid(p, g)
    return total_stress_at(mdl, p, g.nodes)


def stress_decomposition(mdl: MaterialModel, p: LoadingProgram, g: TimeGrid) -> np.ndarray:
    """Rows: spring stress, then one row per Maxwell element (ascending tau)."""
    _check_grid(p, g)
    t = g.nodes
    rows = [spring_stress_at(mdl.base_stiffness, p, t)]
    rows += [element_stress_at(e, p, t) for e in mdl.elements]
    return np.vstack(rows)


def jacobian_at(mdl: MaterialModel, p: LoadingProgram, t) -> np.ndarray:
    """Partial derivatives of the total stress, columns ``(mu, mu_1..mu_n, tau_1..tau_n)``."""
    t = np.atleast_1d(_times(p, t))
    n = mdl.n
    jac = np.empty((t.size, 2 * n + 1))
    ramp = t <= p.ramp_end
    jac[:, 0] = np.where(ramp, p.rate * t, p.max_strain)
    s = np.maximum(t - p.ramp_end, 0.0)
    c = 2.0 * p.ramp_end  # = 2 eps_bar / eta
    for j, e in enumerate(mdl.elements):
        mu_j, tau = e.stiffness, e.relaxation_time
        _check_tau(tau)
        half = 0.5 * tau * p.rate
        # ramp branch
        ex = np.exp(-2.0 * t / tau)
        one_m = -np.expm1(-2.0 * t / tau)
        d_mu_ramp = half * one_m
        d_tau_ramp = mu_j * (0.5 * p.rate * one_m - p.rate * t / tau * ex)
        # hold branch: half * A * B
        ea = np.exp(-c / tau)
        a = -np.expm1(-c / tau)
        da = -(c / tau**2) * ea
        b = np.exp(-2.0 * s / tau)
        db = (2.0 * s / tau**2) * b
        d_mu_hold = half * a * b
        d_tau_hold = mu_j * (0.5 * p.rate * a * b + half * da * b + half * a * db)
        jac[:, 1 + j] = np.where(ramp, d_mu_ramp, d_mu_hold)
        jac[:, 1 + n + j] = np.where(ramp, d_tau_ramp, d_tau_hold)
    return jac


def stress_jacobian(mdl: MaterialModel, p: LoadingProgram, g: TimeGrid) -> np.ndarray:
    _check_grid(p, g)
    return jacobian_at(mdl, p, g.nodes)


def forward(params, p: LoadingProgram, t: np.ndarray, with_jacobian: bool = False):
    """Stress (and optionally its Jacobian) for a raw parameter vector.

    Vectorized over elements; this is the solver's inner-loop evaluator and
    skips the dataclass validation.  ``t`` must already lie in ``[0, horizon]``.
    """
    params = np.asarray(params, dtype=float)
    n = (params.size - 1) // 2
    mu = params[0]
    mus = params[1:n + 1, None]
    taus = params[n + 1:, None]
    t = t[None, :]
    ramp = t <= p.ramp_end
    half = 0.5 * p.rate * taus
    x_ramp = 2.0 * t / taus
    one_m = -np.expm1(-x_ramp)
    s = np.maximum(t - p.ramp_end, 0.0)
    c = 2.0 * p.ramp_end
    a = -np.expm1(-c / taus)
    b = np.exp(-2.0 * s / taus)
    shape = half * np.where(ramp, one_m, a * b)
    eps = np.where(ramp[0], p.rate * t[0], p.max_strain)
    sigma = mu * eps + mus[:, 0] @ shape
    if not with_jacobian:
        return sigma
    ex = np.exp(-x_ramp)
    d_ramp = 0.5 * p.rate * one_m - p.rate * t / taus * ex
    da = -(c / taus**2) * np.exp(-c / taus)
    db = (2.0 * s / taus**2) * b
    d_hold = 0.5 * p.rate * a * b + half * (da * b + a * db)
    jac = np.empty((t.size, 2 * n + 1))
    jac[:, 0] = eps
    jac[:, 1:n + 1] = shape.T
    jac[:, n + 1:] = (mus * np.where(ramp, d_ramp, d_hold)).T
    return sigma, jac
