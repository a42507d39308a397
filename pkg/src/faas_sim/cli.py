"""Command-line entry point: run, sweep, scale, gen-trace, validate-config."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import distributions, harness, workload
from .config import ConfigError, load_config, load_sweep
from .workload import SyntheticSpec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faas-sim",
        description="Deterministic simulator for serverless autoscaling policies")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config YAML")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory (default: config/output_dir, "
                                     "or $FAAS_SIM_OUT)")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY.PATH=VALUE", help="dotted-path config override")

    run = sub.add_parser("run", help="run a single experiment")
    common(run)
    run.add_argument("--event-log", action="store_true",
                     help="dump the processed-event log (debug)")

    sweep = sub.add_parser("sweep", help="run a parameter sweep")
    sweep.add_argument("--config", required=True, help="sweep spec YAML")
    sweep.add_argument("--out", help="output directory")
    sweep.add_argument("--parallel", type=int, help="max concurrent experiments")

    scale = sub.add_parser("scale", help="run the large-scale simulation mode")
    common(scale)

    gen = sub.add_parser("gen-trace", help="generate a synthetic three-file trace")
    gen.add_argument("--out", required=True, help="directory for the CSV files")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--spec", help="YAML file with synthetic class definitions")
    gen.add_argument("--functions", type=int, help="single-class: function count")
    gen.add_argument("--minutes", type=int, help="single-class: trace minutes")
    gen.add_argument("--rate", default="1",
                     help="single-class rate/min dist, e.g. 'loguniform:0.3,2'")
    gen.add_argument("--duration-median", default="300",
                     help="single-class duration median ms dist")
    gen.add_argument("--duration-sigma", default="0.5")
    gen.add_argument("--memory", default="256", help="single-class memory MB dist")

    val = sub.add_parser("validate-config", help="validate and echo a config")
    val.add_argument("--config", required=True)
    val.add_argument("--set", dest="overrides", action="append", default=[])
    return parser


def _parse_dist_arg(text: str) -> distributions.ValueDist:
    """Mini syntax: '5', 'uniform:1,3', 'loguniform:0.3,2', 'lognormal:mu,sigma,lo,hi'."""
    if ":" not in text:
        return distributions.deterministic(float(text))
    kind, _, args = text.partition(":")
    vals = [float(v) for v in args.split(",")]
    if kind == "uniform":
        return distributions.uniform(*vals)
    if kind == "loguniform":
        return distributions.loguniform(*vals)
    if kind == "lognormal":
        return distributions.lognormal(*vals)
    raise ValueError(f"unknown distribution syntax {text!r}")


def cmd_run(args, scale: bool = False) -> int:
    config = load_config(args.config, overrides=args.overrides)
    seed = args.seed if args.seed is not None else config.seed
    out = Path(args.out) if args.out else config.output_dir
    runner = harness.scale_mode if scale else harness.run_experiment
    report = runner(config, seed=seed, out_dir=out,
                    **({"capture_event_log": True}
                       if getattr(args, "event_log", False) else {}))
    stem = harness.experiment_stem(config, seed)
    print(f"wrote {out / (stem + '.json')}")
    if report.slowdown_geomean_p99 is not None:
        print(f"slowdown_geomean_p99={report.slowdown_geomean_p99:.4g} "
              f"normalized_memory={_fmt(report.normalized_memory)} "
              f"creation_rate_per_s={report.creation_rate_per_s:.4g} "
              f"cpu_overhead_total={_fmt(report.cpu_overhead_total)}")
    return 0


def _fmt(x) -> str:
    return f"{x:.4g}" if x is not None else "undefined"


def cmd_sweep(args) -> int:
    spec = load_sweep(args.config)
    print(f"sweep cross-product: {spec.size} points over {list(spec.axes)}")
    outcome = harness.run_sweep(spec, out_dir=args.out, parallelism=args.parallel)
    print(f"wrote {outcome.summary_path}")
    for index, err in outcome.failures:
        print(f"point {index} FAILED: {err}", file=sys.stderr)
    return 0 if outcome.ok else 1


def cmd_gen_trace(args) -> int:
    if args.spec:
        import yaml

        raw = yaml.safe_load(Path(args.spec).read_text(encoding="utf-8"))
        classes = raw["classes"] if isinstance(raw, dict) else raw
        specs = [SyntheticSpec(
            num_functions=c["functions"], minutes=c["minutes"],
            rate_per_minute=distributions.from_dict(c["rate_per_minute"]),
            duration_median_ms=distributions.from_dict(c["duration_median_ms"]),
            duration_sigma=distributions.from_dict(c.get("duration_sigma", 0.5)),
            memory_mb=distributions.from_dict(c["memory_mb"]),
            id_prefix=c.get("id_prefix", f"c{i}"),
        ) for i, c in enumerate(classes)]
    else:
        if not args.functions or not args.minutes:
            print("gen-trace needs --spec or both --functions and --minutes",
                  file=sys.stderr)
            return 2
        specs = [SyntheticSpec(
            num_functions=args.functions, minutes=args.minutes,
            rate_per_minute=_parse_dist_arg(args.rate),
            duration_median_ms=_parse_dist_arg(args.duration_median),
            duration_sigma=_parse_dist_arg(args.duration_sigma),
            memory_mb=_parse_dist_arg(args.memory))]
    profiles = workload.gen_synthetic_classes(specs, args.seed)
    paths = workload.write_trace(profiles, args.out)
    total = sum(p.total_invocations for p in profiles)
    print(f"wrote {len(profiles)} functions, {total} invocations:")
    for p in paths:
        print(f"  {p}")
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config, overrides=args.overrides)
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "scale":
            return cmd_run(args, scale=True)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "gen-trace":
            return cmd_gen_trace(args)
        if args.command == "validate-config":
            return cmd_validate(args)
    except (ConfigError, workload.TraceError, workload.InsufficientFunctions,
            harness.ScalePreconditionError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
