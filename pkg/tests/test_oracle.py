import math

import numpy as np
import pytest

from maxwellfit.oracle import OdeConfig, OracleConfigError, evolve_inelastic, stress_series_numeric
from maxwellfit.rheology import (TABLE1_MODEL, LoadingProgram, MaterialModel, MaxwellElement, TimeGrid,
                                 inelastic_strain_at, stress_series)

SLOW = LoadingProgram(1.0, 20.0, 100.0)
FAST = LoadingProgram(10.0, 20.0, 100.0)
GRID = TimeGrid(1000, 100.0)


def test_element_matches_closed_form():
    e = MaxwellElement(7.0, 3.7)
    num = evolve_inelastic(e, SLOW, GRID, OdeConfig(1e-4))
    exact = inelastic_strain_at(e, SLOW, GRID.nodes)
    assert np.max(np.abs(num - exact)) < 1e-6


@pytest.mark.parametrize("p", [SLOW, FAST], ids=["rate1", "rate10"])
def test_series_matches_closed_form(p):
    num = stress_series_numeric(TABLE1_MODEL, p, GRID, OdeConfig(1e-4))
    assert np.max(np.abs(num - stress_series(TABLE1_MODEL, p, GRID))) < 1e-5


@pytest.mark.parametrize("p", [SLOW, FAST], ids=["rate1", "rate10"])
def test_second_order(p):
    exact = stress_series(TABLE1_MODEL, p, GRID)
    errs = [np.max(np.abs(stress_series_numeric(TABLE1_MODEL, p, GRID, OdeConfig(h)) - exact))
            for h in (2e-3, 1e-3)]
    assert 1.8 <= math.log2(errs[0] / errs[1]) <= 2.2


def test_ramp_end_off_grid():
    # ramp ends at 20/3 s, between output nodes
    p = LoadingProgram(3.0, 20.0, 100.0)
    num = stress_series_numeric(TABLE1_MODEL, p, GRID, OdeConfig(1e-3))
    assert np.max(np.abs(num - stress_series(TABLE1_MODEL, p, GRID))) < 1e-5


def test_quasi_step_loading():
    # ramp shorter than one substep: exponential approach from a jump
    p = LoadingProgram(1e6, 20.0, 100.0)
    tau = 3.7
    num = evolve_inelastic(MaxwellElement(1.0, tau), p, GRID, OdeConfig(1e-3))
    t = GRID.nodes
    approach = 20.0 * (1.0 - np.exp(-2.0 * t / tau))
    assert np.max(np.abs(num - approach)) < 1e-3


def test_frozen_damper():
    num = evolve_inelastic(MaxwellElement(1.0, 1e6), SLOW, GRID, OdeConfig(1e-2))
    assert np.max(np.abs(num)) < 1e-2


def test_zero_stiffness_elements_skipped():
    m = MaterialModel(10.0, [(0.0, 1e-6), (4.0, 0.2)])
    num = stress_series_numeric(m, SLOW, GRID, OdeConfig(1e-2))
    assert np.all(np.isfinite(num))


@pytest.mark.parametrize("step", [0.0, -1e-3, math.nan])
def test_bad_step(step):
    with pytest.raises(OracleConfigError):
        OdeConfig(step)


def test_unknown_scheme():
    with pytest.raises(OracleConfigError):
        OdeConfig(1e-3, scheme="euler")


def test_step_too_large_for_tau():
    with pytest.raises(OracleConfigError):
        evolve_inelastic(MaxwellElement(1.0, 0.2), SLOW, GRID, OdeConfig(0.05))


def test_step_must_divide_spacing():
    with pytest.raises(OracleConfigError):
        evolve_inelastic(MaxwellElement(1.0, 25.0), SLOW, GRID, OdeConfig(0.03))
