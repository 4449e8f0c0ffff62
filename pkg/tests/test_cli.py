import json
import subprocess
import sys

import pytest

from maxwellfit.cli import EXIT_CONFIG, EXIT_FIT, EXIT_IO, main
from maxwellfit.synth import read_dataset

FAST_FIT = ["--n-max", "3", "--starts", "2", "--max-iter", "40"]


def test_simulate_and_noise(tmp_path, capsys):
    data = tmp_path / "d.csv"
    assert main(["simulate", "--m", "200", "--out", str(data)]) == 0
    assert read_dataset(data).times.size == 201
    noisy = tmp_path / "n.csv"
    assert main(["--seed", "3", "add-noise", "--data", str(data), "--level", "0.01", "--out", str(noisy)]) == 0
    d = read_dataset(noisy)
    assert d.seed == 3 and d.target_noise_level == 0.01
    assert "achieved relative noise" in capsys.readouterr().out


def test_fit_then_cluster(tmp_path):
    data = tmp_path / "d.csv"
    main(["simulate", "--m", "200", "--out", str(data)])
    fit = tmp_path / "fit.json"
    assert main(["fit", "--data", str(data), *FAST_FIT, "--out", str(fit)]) == 0
    assert json.loads(fit.read_text())["config"]["n_max"] == 3
    out = tmp_path / "cl.json"
    assert main(["cluster", "--fit", str(fit), "--data", str(data), "--out", str(out)]) == 0
    assert json.loads(out.read_text())["n"] >= 1


def test_config_overrides_flags(tmp_path):
    data = tmp_path / "d.csv"
    main(["simulate", "--m", "100", "--out", str(data)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n_max": 2}))
    fit = tmp_path / "fit.json"
    assert main(["--config", str(cfg), "fit", "--data", str(data), *FAST_FIT, "--out", str(fit)]) == 0
    assert json.loads(fit.read_text())["config"]["n_max"] == 2


def test_decompose(tmp_path):
    assert main(["--out-dir", str(tmp_path), "decompose", "--rate", "1", "--m", "100"]) == 0
    header = (tmp_path / "decomposition.csv").read_text().splitlines()[0]
    assert header == "t,sigma0,sigma1,sigma2,sigma3"
    assert (tmp_path / "decomposition.svg").exists()


def test_sweep_and_report(tmp_path):
    out = tmp_path / "out"
    args = ["--out-dir", str(out), "sweep", "--replicas", "2", "--m", "100", *FAST_FIT]
    assert main(args) == 0
    assert (out / "noise_sweep.json").exists()
    assert (out / "noise_sweep_replicas.csv").exists()
    again = tmp_path / "again"
    assert main(["--out-dir", str(again), "report", "--report", str(out / "noise_sweep.json")]) == 0
    assert (again / "noise_sweep_replicas.csv").read_bytes() == (out / "noise_sweep_replicas.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["simulate", "--rate", "-1"],
    ["simulate", "--element", "1", "-2"],
    ["fit", "--data", "{data}", "--starts", "0"],
    ["fit", "--data", "{data}", "--reg", "none", "--lam", "1"],
], ids=["rate", "tau", "starts", "lam"])
def test_configuration_errors(tmp_path, argv):
    data = tmp_path / "d.csv"
    main(["simulate", "--m", "50", "--out", str(data)])
    argv = [a.replace("{data}", str(data)) for a in argv]
    assert main(["--out-dir", str(tmp_path), *argv]) == EXIT_CONFIG


def test_unknown_config_key(tmp_path):
    data = tmp_path / "d.csv"
    main(["simulate", "--m", "50", "--out", str(data)])
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["--config", str(cfg), "fit", "--data", str(data), *FAST_FIT]) == EXIT_CONFIG


def test_io_errors(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "missing.csv")]) == EXIT_IO
    bad = tmp_path / "bad.csv"
    bad.write_text("time,value\n")
    assert main(["fit", "--data", str(bad)]) == EXIT_IO
    cfg = tmp_path / "cfg.json"
    cfg.write_text("{not json")
    assert main(["--config", str(cfg), "simulate", "--out", str(tmp_path / "x.csv")]) == EXIT_IO


def test_fit_failure(tmp_path):
    data = tmp_path / "d.csv"
    main(["simulate", "--m", "50", "--out", str(data)])
    fit = tmp_path / "fit.json"
    main(["fit", "--data", str(data), *FAST_FIT, "--out", str(fit)])
    # a record whose every start is rejected cannot be clustered, but a dataset
    # of absurd magnitude makes every start non-finite
    huge = tmp_path / "huge.csv"
    huge.write_text("t,sigma\n0,0\n" + "".join(f"{k},1e308\n" for k in range(1, 101)))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"mu_hi": 1e308}))
    argv = ["--config", str(cfg), "fit", "--data", str(huge), *FAST_FIT]
    huge.with_name("huge.meta.json").write_text(json.dumps(
        {"program": {"rate": 10.0, "max_strain": 20.0, "horizon": 100.0}}))
    assert main(argv) == EXIT_FIT


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "maxwellfit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    assert "truncate-study" in out.stdout
