"""Batch command line interface.

Usage::

    maxwellfit [--seed N] [--out-dir DIR] [--config FILE] <command> [options]

Commands: simulate, add-noise, fit, cluster, decompose, sweep, compare-reg,
truncate-study, report.  Values in ``--config`` (a JSON object whose keys are
the command's config fields) take precedence over flags.

Exit codes: 0 success, 2 configuration error, 3 fit failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .cluster import ClusterConfig, cluster
from .experiments import (Report, SweepSpec, TruncationSpec, run_noise_sweep,
                          run_regularizer_comparison, run_truncation_study, write_csv)
from .optimize import FitConfig, FitError, FitResult, Regularizer, multistart_fit
from .plots import emit_plots, plot_decomposition
from .rheology import TABLE1_MODEL, LoadingProgram, MaterialModel, TimeGrid, stress_decomposition
from .synth import DatasetFormatError, NoiseSpec, add_noise, read_dataset, simulate_dataset, write_dataset

logger = logging.getLogger("maxwellfit")

EXIT_CONFIG, EXIT_FIT, EXIT_IO = 2, 3, 4


class ConfigError(ValueError):
    pass


def _load_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(obj: dict, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _overrides(args) -> dict:
    return _load_json(args.config) if args.config else {}


def _model_from_args(args) -> MaterialModel:
    if args.model:
        return MaterialModel.from_dict(_load_json(args.model))
    if args.element or args.mu is not None:
        return MaterialModel.from_params(args.mu if args.mu is not None else 0.0,
                                         [e[0] for e in args.element or []],
                                         [e[1] for e in args.element or []])
    return TABLE1_MODEL


def _program_from_args(args) -> LoadingProgram:
    return LoadingProgram(args.rate, args.max_strain, args.horizon)


def _fit_config_from_args(args, reg: Regularizer | None = None) -> FitConfig:
    reg = Regularizer(args.reg, args.lam) if reg is None else reg
    cfg = FitConfig(n_max=args.n_max, regularizer=reg, starts=args.starts,
                    tau_lo=args.tau_lo, tau_hi=args.tau_hi, max_iter=args.max_iter, seed=args.seed)
    return cfg


def _merge_fit_config(cfg: FitConfig, extra: dict) -> FitConfig:
    if not extra:
        return cfg
    return FitConfig.from_dict({**cfg.to_dict(), **extra})


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    extra = _overrides(args)
    program = LoadingProgram.from_dict({**_program_from_args(args).to_dict(), **extra.get("program", {})})
    model = MaterialModel.from_dict(extra["truth"]) if "truth" in extra else _model_from_args(args)
    m = int(extra.get("m", args.m))
    d = simulate_dataset(model, program, m)
    if "noise_level" in extra or args.noise:
        d = add_noise(d, NoiseSpec(float(extra.get("noise_level", args.noise)), args.seed))
    out = Path(args.out) if args.out else Path(args.out_dir) / "dataset.csv"
    write_dataset(d, out)
    print(out)


def cmd_add_noise(args):
    extra = _overrides(args)
    d = read_dataset(args.data)
    level = float(extra.get("level", args.level))
    seed = int(extra.get("seed", args.seed))
    noisy = add_noise(d, NoiseSpec(level, seed))
    out = Path(args.out) if args.out else Path(args.out_dir) / "noisy.csv"
    write_dataset(noisy, out)
    print(f"{out} achieved relative noise {noisy.noise_level:.6g}")


def cmd_fit(args):
    d = read_dataset(args.data)
    cfg = _merge_fit_config(_fit_config_from_args(args), _overrides(args))
    res = multistart_fit(d, cfg)
    out = Path(args.out) if args.out else Path(args.out_dir) / "fit.json"
    _write_json(res.to_dict(), out)
    print(f"{out} residual {res.residual:.6g} best start {res.best}")


def cmd_cluster(args):
    fit = FitResult.from_dict(_load_json(args.fit))
    d = read_dataset(args.data)
    extra = _overrides(args)
    ccfg = ClusterConfig(**{**ClusterConfig(post_step=args.post_step, mu_drop=args.mu_drop).to_dict(), **extra})
    rep = cluster(fit, d, ccfg, fit.config)
    out = Path(args.out) if args.out else Path(args.out_dir) / "cluster.json"
    _write_json(rep.to_dict(), out)
    print(f"{out} n={rep.n}")


def cmd_decompose(args):
    extra = _overrides(args)
    program = LoadingProgram.from_dict({**_program_from_args(args).to_dict(), **extra.get("program", {})})
    model = MaterialModel.from_dict(extra["truth"]) if "truth" in extra else _model_from_args(args)
    g = TimeGrid(int(extra.get("m", args.m)), program.horizon)
    parts = stress_decomposition(model, program, g)
    rows = [{"t": float(t), **{f"sigma{j}": float(parts[j, i]) for j in range(parts.shape[0])}}
            for i, t in enumerate(g.nodes)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(rows, out_dir / "decomposition.csv")
    plot_decomposition(model, program, out_dir / "decomposition.svg", g.count)
    print(out_dir / "decomposition.csv")


def _sweep_spec(args, extra: dict, reg: Regularizer | None = None) -> SweepSpec:
    fit_cfg = _merge_fit_config(_fit_config_from_args(args, reg), extra.pop("fit", {}))
    spec = SweepSpec(replicas=args.replicas, base_seed=args.seed, noise_level=args.level,
                     program=_program_from_args(args), truth=_model_from_args(args), m=args.m,
                     fits=(fit_cfg,), cluster=ClusterConfig(post_step=args.post_step, mu_drop=args.mu_drop))
    if extra:
        spec = SweepSpec.from_dict({**spec.to_dict(), **extra})
    return spec


def _finish(report: Report, args):
    files = report.write(args.out_dir)
    files += emit_plots(report, args.out_dir)
    for f in files:
        print(f)
    print(json.dumps(report.to_dict()["summary"], indent=2, sort_keys=True))


def cmd_sweep(args):
    _finish(run_noise_sweep(_sweep_spec(args, _overrides(args))), args)


def cmd_compare_reg(args):
    extra = _overrides(args)
    lam = float(extra.pop("lam", args.lam))
    # the variants are set by the comparison itself
    _finish(run_regularizer_comparison(_sweep_spec(args, extra, Regularizer()), lam), args)


def cmd_truncate_study(args):
    extra = _overrides(args)
    fit_cfg = _merge_fit_config(_fit_config_from_args(args), extra.pop("fit", {}))
    spec = TruncationSpec(rates=tuple(args.rates), cut_times=tuple(args.cuts), truth=_model_from_args(args),
                          max_strain=args.max_strain, horizon=args.horizon, m=args.m,
                          noise_level=args.level, seed=args.seed, fit=fit_cfg,
                          cluster=ClusterConfig(post_step=args.post_step, mu_drop=args.mu_drop))
    if extra:
        spec = TruncationSpec.from_dict({**spec.to_dict(), **extra})
    _finish(run_truncation_study(spec), args)


def cmd_report(args):
    report = Report.from_dict(_load_json(args.report))
    files = [p for p in report.write(args.out_dir) if p.suffix == ".csv"]
    files += emit_plots(report, args.out_dir)
    for f in files:
        print(f)


# ---------------------------------------------------------------------------
# parser


def _add_model_args(p):
    p.add_argument("--model", help="JSON file with base_stiffness and elements")
    p.add_argument("--mu", type=float, help="base spring stiffness [MPa]")
    p.add_argument("--element", nargs=2, type=float, action="append", metavar=("MU", "TAU"),
                   help="Maxwell element (repeatable); default is the reference 3-element material")


def _add_program_args(p, rate=True):
    if rate:
        p.add_argument("--rate", type=float, default=10.0, help="strain rate [%%/s]")
    p.add_argument("--max-strain", type=float, default=20.0, help="plateau strain [%%]")
    p.add_argument("--horizon", type=float, default=100.0, help="experiment duration [s]")
    p.add_argument("--m", type=int, default=1000, help="number of time intervals")


def _add_fit_args(p, reg="none", lam=0.0):
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--starts", type=int, default=20)
    p.add_argument("--reg", choices=("none", "tikhonov_full", "first_stiffness"), default=reg)
    p.add_argument("--lam", type=float, default=lam)
    p.add_argument("--tau-lo", type=float, default=1e-2)
    p.add_argument("--tau-hi", type=float, default=1e3)
    p.add_argument("--max-iter", type=int, default=500)


def _add_cluster_args(p, post_step="merge"):
    p.add_argument("--post-step", choices=("merge", "refit"), default=post_step)
    p.add_argument("--mu-drop", type=float, default=1e-6)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxwellfit",
                                     description="Generalized Maxwell relaxation fitting.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out-dir", default="out")
    parser.add_argument("--config", help="JSON file overriding command options")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write an exact (or noisy) synthetic dataset")
    _add_model_args(p)
    _add_program_args(p)
    p.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("add-noise", help="perturb an exact dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--level", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_add_noise)

    p = sub.add_parser("fit", help="multi-start least-squares fit")
    p.add_argument("--data", required=True)
    _add_fit_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("cluster", help="decade clustering of a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--data", required=True)
    _add_cluster_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("decompose", help="per-element stress contributions")
    _add_model_args(p)
    _add_program_args(p)
    p.set_defaults(func=cmd_decompose)

    for name, func, help_, reg, lam in (
            ("sweep", cmd_sweep, "noisy replica sweep", "none", 0.0),
            ("compare-reg", cmd_compare_reg, "compare regularizers on matched replicas", "none", 1.0)):
        p = sub.add_parser(name, help=help_)
        _add_model_args(p)
        _add_program_args(p)
        _add_fit_args(p, reg, lam)
        _add_cluster_args(p)
        p.add_argument("--replicas", type=int, default=100)
        p.add_argument("--level", type=float, default=0.01)
        p.set_defaults(func=func)

    p = sub.add_parser("truncate-study", help="fits on progressively shortened data")
    _add_model_args(p)
    _add_program_args(p, rate=False)
    _add_fit_args(p, "first_stiffness", 1e-2)
    _add_cluster_args(p, "refit")
    p.add_argument("--rates", type=float, nargs="+", default=[10.0, 1.0])
    p.add_argument("--cuts", type=float, nargs="+", default=[float(t) for t in range(100, 20, -5)])
    p.add_argument("--level", type=float, default=0.01)
    p.set_defaults(func=cmd_truncate_study)

    p = sub.add_parser("report", help="re-emit CSV tables and SVG plots from a report JSON")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FitError as exc:
        logger.error("fit failed: %s", exc)
        return EXIT_FIT
    except (DatasetFormatError, OSError, json.JSONDecodeError) as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    except (ValueError, KeyError, TypeError) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
