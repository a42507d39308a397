"""Experiment runner: wires workload, simulation, and reporting; runs single
experiments, parameter sweeps (one engine per point, workload expansion shared
so policy is the only variable), and the large-scale mode.
"""

from __future__ import annotations

import concurrent.futures
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path

from . import metrics, rng, workload
from .config import ExperimentConfig, SweepSpec
from .metrics import ExperimentReport, build_report, export_report, summary_row, \
    write_summary_csv
from .policies import SYNC_KEEPALIVE
from .simulation import run_simulation
from .workload import FunctionProfile, InvocationPlan

logger = logging.getLogger(__name__)

SCALE_MIN_NODES = 50
SCALE_MIN_FUNCTIONS = 2000


class ScalePreconditionError(ValueError):
    pass


def prepare_workload(config: ExperimentConfig) -> tuple[list[FunctionProfile],
                                                        InvocationPlan]:
    """Parse or synthesize profiles, sample, and expand the invocation plan.
    Uses the config seed, so every sweep point replays the identical plan."""
    w = config.workload
    if w.trace_dir is not None:
        profiles = workload.parse_trace(w.trace_dir / "invocations.csv",
                                        w.trace_dir / "durations.csv",
                                        w.trace_dir / "memory.csv")
    else:
        profiles = workload.gen_synthetic_classes(list(w.synthetic), config.seed)
    if w.sample_k is not None:
        profiles = workload.sample_functions(profiles, w.sample_k, config.seed)
    plan = workload.generate_invocations(profiles, w.experiment_minutes,
                                         w.warmup_minutes, config.seed)
    return profiles, plan


def experiment_stem(config: ExperimentConfig, seed: int,
                    axis_parts: list[str] | None = None) -> str:
    policy = config.policy
    if axis_parts is None:
        if policy.variant == SYNC_KEEPALIVE:
            axis_parts = [f"keepalive_s-{policy.keepalive_ms // 1000}"]
        else:
            axis_parts = [f"window_s-{policy.window_ms // 1000}",
                          f"target-{policy.utilization_target:g}",
                          f"cc-{policy.container_concurrency}"]
    return "_".join([policy.variant, *axis_parts, f"seed{seed}"])


def run_experiment(config: ExperimentConfig, *,
                   profiles: list[FunctionProfile] | None = None,
                   plan: InvocationPlan | None = None,
                   seed: int | None = None,
                   out_dir: Path | None = None,
                   stem: str | None = None,
                   write_files: bool = True,
                   capture_event_log: bool = False) -> ExperimentReport:
    """Run one experiment end to end and (optionally) write its report files."""
    seed = config.seed if seed is None else seed
    if plan is None or profiles is None:
        profiles, plan = prepare_workload(config)

    started = time.perf_counter()
    result = run_simulation(plan, profiles, config.cluster, config.cost_model,
                            config.policy, seed,
                            capture_event_log=capture_event_log)
    report = build_report(plan, result.recorder, result.cluster, config.to_dict(),
                          seed, result.stats.events_processed)
    elapsed = time.perf_counter() - started
    logger.info("experiment %s: %d events in %.2fs wall-clock",
                stem or experiment_stem(config, seed),
                result.stats.events_processed, elapsed)

    if write_files:
        out = out_dir or config.output_dir
        stem = stem or experiment_stem(config, seed)
        export_report(report, out, stem)
        write_summary_csv([summary_row(report)], Path(out) / f"{stem}_summary.csv")
        if capture_event_log and result.event_log is not None:
            (Path(out) / f"{stem}_events.log").write_text(
                "\n".join(result.event_log) + "\n", encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# Sweeps

@dataclass
class SweepOutcome:
    reports: list[ExperimentReport | None]  # point order; None where failed
    failures: list[tuple[int, str]]  # (point index, error)
    summary_path: Path | None

    @property
    def ok(self) -> bool:
        return not self.failures


def _axis_parts(point: dict[str, object]) -> list[str]:
    return [f"{name.rsplit('.', 1)[-1]}-{value}" for name, value in point.items()]


def _run_point(args) -> tuple[int, list[str] | None, str | None, ExperimentReport | None]:
    index, config, profiles, plan, seed, out_dir, stem = args
    try:
        report = run_experiment(config, profiles=profiles, plan=plan, seed=seed,
                                out_dir=out_dir, stem=stem)
        return index, summary_row(report), None, report
    except Exception as e:  # per-point failure: record, keep sweeping
        return index, None, f"{type(e).__name__}: {e}", None


def run_sweep(spec: SweepSpec, out_dir: str | Path | None = None,
              parallelism: int | None = None) -> SweepOutcome:
    """Run the cross product of the sweep axes. Each point gets an independent
    engine and a seed derived from (base seed, point index); all points share
    one workload expansion (verified via the plan checksum in each report)."""
    points = spec.points()
    base_config = spec.config_for({})
    out = Path(out_dir) if out_dir is not None else base_config.output_dir
    out.mkdir(parents=True, exist_ok=True)
    logger.info("sweep: %d points over axes %s", len(points), list(spec.axes))

    profiles, plan = prepare_workload(base_config)
    jobs = []
    for index, point in enumerate(points):
        config = spec.config_for(point)
        seed = rng.derive_seed(base_config.seed, index)
        stem = experiment_stem(config, seed, _axis_parts(point))
        jobs.append((index, config, profiles, plan, seed, out, stem))

    workers = parallelism or spec.parallelism or os.cpu_count() or 1
    results: list[tuple[int, list[str] | None, str | None, ExperimentReport | None]]
    if workers <= 1 or len(jobs) == 1:
        results = [_run_point(job) for job in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_point, jobs))

    results.sort(key=lambda r: r[0])
    reports: list[ExperimentReport | None] = [r[3] for r in results]
    failures = [(i, err) for i, _, err, _ in results if err is not None]
    rows = [row for _, row, _, _ in results if row is not None]
    summary_path = out / "summary.csv"
    write_summary_csv(rows, summary_path)
    for index, err in failures:
        logger.error("sweep point %d failed: %s", index, err)
    return SweepOutcome(reports=reports, failures=failures, summary_path=summary_path)


# ---------------------------------------------------------------------------
# Large-scale mode

def scale_mode(config: ExperimentConfig, **kwargs) -> ExperimentReport:
    """run_experiment with large-input preconditions: a production-shaped
    cluster (>= 50 nodes) and >= 2000 functions. Designed to finish on a
    4-core workstation in well under 30 minutes."""
    if config.cluster.nodes < SCALE_MIN_NODES:
        raise ScalePreconditionError(
            f"scale mode needs >= {SCALE_MIN_NODES} nodes, got {config.cluster.nodes}")
    profiles, plan = prepare_workload(config)
    if len(profiles) < SCALE_MIN_FUNCTIONS:
        raise ScalePreconditionError(
            f"scale mode needs >= {SCALE_MIN_FUNCTIONS} functions, got {len(profiles)}")
    logger.info("scale mode: %d functions, %d invocations, %d nodes",
                len(profiles), len(plan), config.cluster.nodes)
    return run_experiment(config, profiles=profiles, plan=plan, **kwargs)
