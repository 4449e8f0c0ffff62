import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxwellfit.rheology import TABLE1_MODEL, LoadingProgram, MaterialModel, spring_stress_at
from maxwellfit.synth import (DatasetFormatError, NoiseSpec, StressDataset, add_noise, meta_path, read_dataset,
                              simulate_dataset, truncate, write_dataset)

SLOW = LoadingProgram(1.0, 20.0, 100.0)
FAST = LoadingProgram(10.0, 20.0, 100.0)


@pytest.fixture(scope="module")
def exact():
    return simulate_dataset(TABLE1_MODEL, SLOW, 1000)


def test_sampling(exact):
    assert exact.times.size == 1001
    np.testing.assert_allclose(np.diff(exact.times), 0.1, rtol=1e-9)
    assert exact.times[-1] == 100.0
    assert exact.truth == TABLE1_MODEL


def test_spring_only():
    d = simulate_dataset(MaterialModel(10.0, []), FAST, 200)
    np.testing.assert_array_equal(d.stresses, spring_stress_at(10.0, FAST, d.times))


def test_two_samples():
    assert simulate_dataset(TABLE1_MODEL, FAST, 1).times.size == 2


def test_arrays_read_only(exact):
    with pytest.raises(ValueError):
        exact.stresses[0] = 1.0


@pytest.mark.parametrize("times,stresses", [([0.0, 0.0], [1.0, 2.0]), ([1.0, 0.5], [1.0, 2.0]),
                                            ([], []), ([0.0, 1.0], [1.0]), ([0.0, 1.0], [1.0, np.nan])])
def test_dataset_validation(times, stresses):
    with pytest.raises(ValueError):
        StressDataset(np.array(times), np.array(stresses), SLOW)


class TestNoise:
    def test_zero_level_is_identity(self, exact):
        assert add_noise(exact, NoiseSpec(0.0, 3)) is exact

    def test_deterministic(self, exact):
        a = add_noise(exact, NoiseSpec(0.01, 7))
        b = add_noise(exact, NoiseSpec(0.01, 7))
        np.testing.assert_array_equal(a.stresses, b.stresses)
        assert a == b

    def test_seeds_differ(self, exact):
        a = add_noise(exact, NoiseSpec(0.01, 1))
        b = add_noise(exact, NoiseSpec(0.01, 2))
        assert not np.array_equal(a.stresses, b.stresses)

    def test_norm_exact(self, exact):
        d = add_noise(exact, NoiseSpec(0.01, 0))
        noise = d.stresses - exact.stresses
        assert np.linalg.norm(noise) == pytest.approx(0.01 * np.linalg.norm(exact.stresses), rel=1e-12)
        assert 0.0095 < d.noise_level < 0.0105
        assert d.noise_level == pytest.approx(np.linalg.norm(noise) / np.linalg.norm(d.stresses), rel=1e-12)
        assert d.target_noise_level == 0.01
        assert d.seed == 0

    def test_no_double_noise(self, exact):
        d = add_noise(exact, NoiseSpec(0.01, 0))
        with pytest.raises(ValueError):
            add_noise(d, NoiseSpec(0.01, 1))

    def test_zero_norm(self):
        d = simulate_dataset(MaterialModel(0.0, []), SLOW, 10)
        with pytest.raises(ValueError):
            add_noise(d, NoiseSpec(0.01, 0))

    @pytest.mark.parametrize("level", [-0.1, np.nan, np.inf])
    def test_bad_level(self, level):
        with pytest.raises(ValueError):
            NoiseSpec(level)

    @settings(max_examples=30, deadline=None)
    @given(level=st.floats(1e-4, 0.5), seed=st.integers(0, 2**32 - 1))
    def test_norm_property(self, exact, level, seed):
        d = add_noise(exact, NoiseSpec(level, seed))
        got = np.linalg.norm(d.stresses - exact.stresses)
        assert got == pytest.approx(level * np.linalg.norm(exact.stresses), rel=1e-10)


class TestTruncate:
    def test_sample_count(self, exact):
        d = truncate(exact, 25.0)
        assert d.times.size == 251
        assert d.horizon == 25.0
        assert d.times[-1] == pytest.approx(25.0)

    def test_full_horizon_identity(self, exact):
        assert truncate(exact, 100.0) == exact

    @pytest.mark.parametrize("t_cut", [10.0, 20.0, 100.5])
    def test_must_keep_ramp(self, exact, t_cut):
        with pytest.raises(ValueError):
            truncate(exact, t_cut)

    def test_composition(self, exact):
        assert truncate(truncate(exact, 60.0), 30.0) == truncate(exact, 30.0)

    def test_noise_then_truncate_keeps_realization(self, exact):
        noisy = add_noise(exact, NoiseSpec(0.01, 4))
        cut = truncate(noisy, 50.0)
        np.testing.assert_array_equal(cut.stresses, noisy.stresses[:501])
        assert cut.noise_level == noisy.noise_level


class TestIO:
    def test_round_trip(self, exact, tmp_path):
        d = add_noise(exact, NoiseSpec(0.01, 5))
        path = write_dataset(d, tmp_path / "data.csv")
        assert meta_path(path).name == "data.meta.json"
        back = read_dataset(path)
        assert back == d
        np.testing.assert_array_equal(back.stresses, d.stresses)

    def test_byte_stable(self, exact, tmp_path):
        a = write_dataset(exact, tmp_path / "a.csv").read_bytes()
        b = write_dataset(read_dataset(tmp_path / "a.csv"), tmp_path / "b.csv").read_bytes()
        assert a == b
        assert b"\r" not in a
        assert a.startswith(b"t,sigma\n")

    def test_without_sidecar(self, exact, tmp_path):
        path = write_dataset(exact, tmp_path / "x.csv")
        meta_path(path).unlink()
        with pytest.raises(DatasetFormatError):
            read_dataset(path)
        d = read_dataset(path, program=SLOW)
        np.testing.assert_array_equal(d.stresses, exact.stresses)

    @pytest.mark.parametrize("text", ["", "time,stress\n0,0\n", "t,sigma\n", "t,sigma\n0,abc\n",
                                      "t,sigma\n0,1\n2,3\n1,4\n", "t,sigma\n0,1,2\n"],
                             ids=["empty", "header", "no-rows", "non-numeric", "decreasing", "columns"])
    def test_parse_errors(self, tmp_path, text):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(DatasetFormatError):
            read_dataset(path, program=SLOW)

    def test_meta_contents(self, exact, tmp_path):
        path = write_dataset(add_noise(exact, NoiseSpec(0.02, 9)), tmp_path / "m.csv")
        meta = json.loads(meta_path(path).read_text())
        assert meta["seed"] == 9
        assert meta["target_noise_level"] == 0.02
        assert meta["program"] == SLOW.to_dict()
