"""Synthetic relaxation experiments: sampling, noise, truncation and file I/O.

Datasets are stored as a two-column CSV (``t,sigma``) with a JSON sidecar
``<stem>.meta.json`` carrying the loading program, noise settings and, for
synthetic data, the generating model.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rheology import LoadingProgram, MaterialModel, TimeGrid, stress_series


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class StressDataset:
    times: np.ndarray
    stresses: np.ndarray
    program: LoadingProgram
    noise_level: float = 0.0
    target_noise_level: float = 0.0
    seed: int | None = None
    truth: MaterialModel | None = None
    clean_norm: float | None = field(default=None, repr=False)

    def __post_init__(self):
        t = np.array(self.times, dtype=float)
        s = np.array(self.stresses, dtype=float)
        if t.ndim != 1 or t.shape != s.shape:
            raise ValueError("times and stresses must be 1-D arrays of equal length")
        if t.size == 0:
            raise ValueError("dataset is empty")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s))):
            raise ValueError("non-finite values in dataset")
        t.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "stresses", s)

    def __eq__(self, other):
        if not isinstance(other, StressDataset):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.stresses, other.stresses)
                and self.meta() == other.meta())

    @property
    def horizon(self) -> float:
        return self.program.horizon

    def meta(self) -> dict:
        return {
            "program": self.program.to_dict(),
            "noise_level": self.noise_level,
            "target_noise_level": self.target_noise_level,
            "seed": self.seed,
            "truth": None if self.truth is None else self.truth.to_dict(),
            "clean_norm": self.clean_norm,
        }


@dataclass(frozen=True)
class NoiseSpec:
    level: float
    seed: int = 0

    def __post_init__(self):
        if not (self.level >= 0 and math.isfinite(self.level)):
            raise ValueError(f"noise level must be finite and >= 0, got {self.level}")


def simulate_dataset(mdl: MaterialModel, p: LoadingProgram, m: int) -> StressDataset:
    g = TimeGrid(m, p.horizon)
    return StressDataset(g.nodes, stress_series(mdl, p, g), p, truth=mdl)


def add_noise(d: StressDataset, spec: NoiseSpec) -> StressDataset:
    """Add i.i.d. Gaussian noise scaled so ``||noise|| = level * ||sigma||`` exactly.

    The recorded ``noise_level`` is the achieved ``||noise|| / ||sigma_noisy||``.
    """
    if d.noise_level != 0 or d.target_noise_level != 0:
        raise ValueError("dataset is already noisy")
    if spec.level == 0:
        return d
    norm = float(np.linalg.norm(d.stresses))
    if norm == 0:
        raise ValueError("cannot scale relative noise on zero-norm data")
    z = np.random.default_rng(spec.seed).standard_normal(d.stresses.size)
    noise = z * (spec.level * norm / np.linalg.norm(z))
    noisy = d.stresses + noise
    achieved = float(np.linalg.norm(noise) / np.linalg.norm(noisy))
    return replace(d, stresses=noisy, noise_level=achieved,
                   target_noise_level=spec.level, seed=spec.seed, clean_norm=norm)


def truncate(d: StressDataset, t_cut: float) -> StressDataset:
    """Keep samples with ``t <= t_cut``; the ramp must survive intact."""
    if not d.program.ramp_end < t_cut <= d.horizon:
        raise ValueError(
            f"t_cut must lie in ({d.program.ramp_end}, {d.horizon}], got {t_cut}")
    keep = d.times <= t_cut * (1 + 1e-12)
    return replace(d, times=d.times[keep], stresses=d.stresses[keep],
                   program=d.program.with_horizon(t_cut))


# ---------------------------------------------------------------------------
# file I/O


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_dataset(d: StressDataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,sigma\n")
        for t, s in zip(d.times, d.stresses):
            fh.write(f"{float(t)!r},{float(s)!r}\n")
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(d.meta(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_dataset(path, program: LoadingProgram | None = None) -> StressDataset:
    """Load a dataset written by :func:`write_dataset`.

    Without a sidecar the loading program must be passed explicitly.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetFormatError(f"{path}: empty file")
    if [c.strip() for c in rows[0]] != ["t", "sigma"]:
        raise DatasetFormatError(f"{path}: expected header 't,sigma', got {rows[0]}")
    try:
        data = np.array([[float(a), float(b)] for a, b in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: malformed row ({exc})") from exc
    if data.size == 0:
        raise DatasetFormatError(f"{path}: no samples")

    meta = {}
    mp = meta_path(path)
    if mp.exists():
        with open(mp, encoding="utf-8") as fh:
            meta = json.load(fh)
    if "program" in meta:
        program = LoadingProgram.from_dict(meta["program"])
    if program is None:
        raise DatasetFormatError(f"{path}: no metadata sidecar and no loading program given")
    truth = meta.get("truth")
    try:
        return StressDataset(
            data[:, 0], data[:, 1], program,
            noise_level=float(meta.get("noise_level", 0.0)),
            target_noise_level=float(meta.get("target_noise_level", 0.0)),
            seed=meta.get("seed"),
            truth=None if truth is None else MaterialModel.from_dict(truth),
            clean_norm=meta.get("clean_norm"),
        )
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
