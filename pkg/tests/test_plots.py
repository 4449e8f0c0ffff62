import pytest

from maxwellfit.experiments import Report, SweepSpec, run_noise_sweep, run_rate_comparison
from maxwellfit.optimize import FitConfig
from maxwellfit.plots import emit_plots, plot_boxes, plot_decomposition, plot_spread
from maxwellfit.rheology import TABLE1_MODEL, LoadingProgram

FAST = LoadingProgram(10.0, 20.0, 100.0)


def test_decomposition_svg_byte_identical(tmp_path):
    a = plot_decomposition(TABLE1_MODEL, FAST, tmp_path / "a.svg", 200).read_bytes()
    b = plot_decomposition(TABLE1_MODEL, FAST, tmp_path / "b.svg", 200).read_bytes()
    assert a == b
    assert a.startswith(b"<?xml")
    assert b"85.57" in a


def test_rate_comparison_plots(tmp_path):
    rep = run_rate_comparison(replicas=0, m=200)
    files = emit_plots(rep, tmp_path)
    assert sorted(p.name for p in files) == [
        "rate_comparison_decomposition_rate1.svg", "rate_comparison_decomposition_rate10.svg",
        "rate_comparison_strain.svg", "rate_comparison_stress.svg"]


def test_sweep_plots_reproducible(tmp_path):
    spec = SweepSpec(replicas=2, program=FAST, m=100, fits=(FitConfig(n_max=3, starts=2, max_iter=40),))
    first = emit_plots(run_noise_sweep(spec), tmp_path / "a")
    second = emit_plots(run_noise_sweep(spec), tmp_path / "b")
    assert [p.name for p in first] == [p.name for p in second]
    assert len(first) == 3
    for x, y in zip(first, second):
        assert x.read_bytes() == y.read_bytes()


def test_empty_sweep_writes_nothing(tmp_path):
    rep = Report("noise_sweep", {"study": "noise_sweep", "truth": TABLE1_MODEL.to_dict()},
                 {"replicas": []})
    with pytest.warns(RuntimeWarning):
        assert emit_plots(rep, tmp_path) == []
    assert not list(tmp_path.glob("*.svg"))


def test_empty_inputs_warn(tmp_path):
    with pytest.warns(RuntimeWarning):
        assert plot_spread([], tmp_path / "s.svg") is None
    with pytest.warns(RuntimeWarning):
        assert plot_boxes({"none": [float("nan")]}, tmp_path / "b.svg", "tau1") is None
