"""Numerical reference for the inelastic-strain evolution, used to check the closed forms.

Integrates ``d eps_i / dt = (eps - eps_i) / (tau / 2)`` with the trapezoidal
(Crank-Nicolson) rule from ``eps_i(0) = 0``.  The strain forcing is sampled
exactly at substep ends and a substep boundary is placed at the end of the ramp,
so the kink in the strain is never integrated across.  Nothing here calls the
closed-form expressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .rheology import LoadingProgram, MaterialModel, MaxwellElement, TimeGrid


class OracleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OdeConfig:
    step: float
    scheme: str = "trapezoidal"

    def __post_init__(self):
        if not self.step > 0:
            raise OracleConfigError(f"step must be positive, got {self.step}")
        if self.scheme not in ("trapezoidal", "crank-nicolson"):
            raise OracleConfigError(f"unsupported scheme {self.scheme!r}")


def _substep_times(p: LoadingProgram, g: TimeGrid, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Fine time axis and the indices of the output nodes within it."""
    nodes = g.nodes
    spacing = g.horizon / g.count
    per = int(round(spacing / h))
    if per < 1 or abs(per * h - spacing) > 1e-9 * spacing:
        raise OracleConfigError(f"step {h} does not divide the grid spacing {spacing}")
    fine = (np.arange(g.count * per + 1) / per) * spacing
    fine[-1] = g.horizon
    out_idx = np.arange(g.count + 1) * per
    t_r = p.ramp_end
    k = int(np.argmin(np.abs(fine - t_r)))
    if abs(fine[k] - t_r) <= 1e-12 * g.horizon:
        fine[k] = t_r
    else:
        k = int(np.searchsorted(fine, t_r))
        fine = np.insert(fine, k, t_r)
        out_idx[out_idx >= k] += 1
    return fine, out_idx


def _strain(p: LoadingProgram, t: np.ndarray) -> np.ndarray:
    return np.where(t <= p.ramp_end, p.rate * t, p.max_strain)


def _integrate(tau: float, fine: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Trapezoidal recursion, one constant-step run at a time via ``lfilter``."""
    k = 2.0 / tau
    h = np.diff(fine)
    y = np.empty_like(fine)
    y[0] = 0.0
    # group consecutive substeps of equal length; rtol absorbs rounding in the time axis
    breaks = np.flatnonzero(~np.isclose(h[1:], h[:-1], rtol=1e-6, atol=0)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [h.size]])
    for a, b in zip(starts, ends):
        hk = 0.5 * h[a] * k
        alpha = (1.0 - hk) / (1.0 + hk)
        forcing = hk * (eps[a:b] + eps[a + 1:b + 1]) / (1.0 + hk)
        seg, _ = lfilter([1.0], [1.0, -alpha], forcing, zi=[alpha * y[a]])
        y[a + 1:b + 1] = seg
    return y


def evolve_inelastic(e: MaxwellElement, p: LoadingProgram, g: TimeGrid, c: OdeConfig) -> np.ndarray:
    if c.step > e.relaxation_time / 10:
        raise OracleConfigError(
            f"step {c.step} too large for relaxation time {e.relaxation_time} (need h <= tau/10)")
    if not np.isclose(g.horizon, p.horizon, rtol=1e-12, atol=0):
        raise ValueError("grid horizon does not match program horizon")
    fine, idx = _substep_times(p, g, c.step)
    return _integrate(e.relaxation_time, fine, _strain(p, fine))[idx]


def stress_series_numeric(mdl: MaterialModel, p: LoadingProgram, g: TimeGrid, c: OdeConfig) -> np.ndarray:
    eps = _strain(p, g.nodes)
    sigma = mdl.base_stiffness * eps
    for e in mdl.elements:
        if e.stiffness == 0:
            continue
        sigma = sigma + e.stiffness * (eps - evolve_inelastic(e, p, g, c))
    return sigma
