"""Command-line entry point: ``fbmsteer {steer,validate,sample}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .dynamics import NeutralLipschitzError
from .fractional_noise import sample_fbm_path
from .scenario import (
    ConfigError,
    RunReport,
    ScenarioConfig,
    build_spectral_model,
    run_steering_experiment,
    run_validation_suite,
)
from .spectral_space import sample_qfbm


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _nonneg(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fbmsteer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, replications=True):
        p.add_argument("--config", type=Path, help="scenario JSON (defaults are used for missing keys)")
        p.add_argument("--seed", type=_u64, help="override run.seed")
        p.add_argument("--out", type=Path, default=Path("fbmsteer-out"), help="output directory")
        p.add_argument("--grid", type=_positive, help="override run.n_steps")
        if replications:
            p.add_argument("--replications", type=_nonneg, help="override run.n_replications")

    steer = sub.add_parser("steer", help="Monte Carlo steering experiment")
    common(steer)
    steer.add_argument("--workers", type=_positive, default=1, help="replications solved concurrently")

    validate = sub.add_parser("validate", help="run the numerical validation suite")
    common(validate, replications=False)
    validate.add_argument("--mc-paths", type=_positive, default=2000, help="Monte Carlo paths per check")

    sample = sub.add_parser("sample", help="write raw Q-fBm (or scalar fBm) paths as CSV")
    common(sample)
    sample.add_argument("--scalar", action="store_true", help="scalar fBm paths, columns (t, value)")
    return parser


def _load(args, strict: bool) -> ScenarioConfig:
    data = {}
    if args.config is not None:
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = ScenarioConfig.from_dict(data, strict=strict)
    return cfg.with_overrides(seed=args.seed, n_replications=getattr(args, "replications", None),
                              n_steps=args.grid, strict=strict)


def _sample(cfg: ScenarioConfig, out: Path, scalar: bool) -> RunReport:
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rep in range(cfg.n_replications):
        if scalar:
            path = sample_fbm_path(cfg.hurst, cfg.grid, cfg.seed, rep)
            name = f"fbm_{rep}.csv"
            path.to_csv(out / name)
            terminal = [float(path.values[-1])]
        else:
            vp = sample_qfbm(build_spectral_model(cfg), cfg.hurst, cfg.grid, cfg.seed, rep)
            name = f"sample_{rep}.csv"
            vp.to_csv(out / name)
            terminal = [float(v) for v in vp.terminal]
        rows.append({"replication_index": rep, "file": name, "terminal": terminal})
    report = RunReport("sample", cfg.to_dict(), rows, {"n_replications": len(rows)}, [])
    report.write(out)
    return report


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args, strict=args.command != "validate")
    except (ConfigError, NeutralLipschitzError, ValueError, OSError) as exc:
        print(f"fbmsteer: configuration rejected: {exc}", file=sys.stderr)
        return 2
    if args.command == "steer":
        report = run_steering_experiment(cfg, args.out, workers=args.workers)
        agg = report.aggregate
        print(f"replications={agg['n_replications']} failed={agg['n_failed']} "
              f"mean_relative_error={agg['mean_relative_error']} "
              f"max_outer_iterations={agg['max_outer_iterations']}")
    elif args.command == "validate":
        report = run_validation_suite(cfg, args.out, mc_paths=args.mc_paths)
        for c in report.checks:
            status = "SKIP" if c["skipped"] else ("PASS" if c["passed"] else "FAIL")
            print(f"{status:4s} {c['name']}: value={c['value']} tolerance={c['tolerance']}")
    else:
        report = _sample(cfg, args.out, args.scalar)
        print(f"wrote {report.aggregate['n_replications']} paths to {args.out}")
    for c in report.checks:
        if not c["passed"] and not c["skipped"] and args.command == "steer":
            print(f"FAIL {c['name']}: value={c['value']} tolerance={c['tolerance']}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
