"""Per-invocation lifecycle records, cluster usage snapshots, and the four
evaluation metrics: slowdown geomean of per-function p99s, normalized memory,
instance creation rate, and normalized CPU overhead (worker/master split).

Percentiles use the nearest-rank method (no interpolation), computed with
integer arithmetic so tiny per-function samples are handled exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import Cluster
from .engine import Engine, EventKind
from .workload import InvocationPlan


class EmptyFunction(ValueError):
    pass


class NonPositiveSlowdown(ValueError):
    pass


class ZeroBusyIntegral(ValueError):
    pass


class ZeroUsefulWork(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metric operations

def nearest_rank_index(n: int, percentile_tenths: int) -> int:
    """0-based nearest-rank index into a sorted sample of size n, percentile
    given in tenths (990 = p99). Exact integer ceil, 1-based rank clamped >= 1."""
    rank = -((-percentile_tenths * n) // 1000)
    return max(rank, 1) - 1


def per_function_p99(slowdowns) -> float:
    """Nearest-rank 99th percentile of one function's slowdown values."""
    values = sorted(float(v) for v in slowdowns)
    if not values:
        raise EmptyFunction("no completed records after warm-up filtering")
    return values[nearest_rank_index(len(values), 990)]


def aggregate_slowdown(p99_values) -> float:
    """Geometric mean; 1.0 is the unloaded-system baseline."""
    values = [float(v) for v in p99_values]
    if not values:
        raise EmptyFunction("no per-function values to aggregate")
    for v in values:
        if v <= 0:
            raise NonPositiveSlowdown(f"slowdown {v} is not positive")
    return math.exp(sum(math.log(v) for v in values) / len(values))


def normalized_memory(samples, window_end_ms: int) -> float:
    """Step-integrate (timestamp_ms, total_mb, busy_mb) state-change samples
    over [first timestamp, window_end_ms]; returns total / busy."""
    total_integral = 0.0
    busy_integral = 0.0
    for (t0, total, busy), t1 in zip(samples,
                                     [s[0] for s in samples[1:]] + [window_end_ms]):
        dt = max(0, t1 - t0)
        total_integral += total * dt
        busy_integral += busy * dt
    if busy_integral == 0:
        raise ZeroBusyIntegral("no busy instance time in the measurement window")
    return total_integral / busy_integral


def creation_rate(count_start: int, count_end: int, window_s: float) -> float:
    if window_s <= 0:
        raise ValueError("window length must be > 0")
    return (count_end - count_start) / window_s


def normalized_cpu_overhead(worker_cpu_ms: float, master_cpu_ms: float,
                            function_work_cpu_ms: float) -> dict:
    """Management CPU over useful CPU; shares partition the overhead exactly."""
    if function_work_cpu_ms <= 0:
        raise ZeroUsefulWork("no function work in the measurement window")
    overhead = worker_cpu_ms + master_cpu_ms
    total = overhead / function_work_cpu_ms
    if overhead == 0:
        return {"total": 0.0, "worker_share": None, "master_share": None}
    return {"total": total,
            "worker_share": worker_cpu_ms / overhead,
            "master_share": master_cpu_ms / overhead}


# ---------------------------------------------------------------------------
# Recording

METRICS_SAMPLE_PERIOD_MS = 10_000


class Recorder:
    """Engine-thread recording: per-invocation timestamps, boundary snapshots
    at the warm-up cutoff and experiment end, periodic usage samples."""

    def __init__(self, plan: InvocationPlan, cluster: Cluster, engine: Engine,
                 sample_period_ms: int | None = METRICS_SAMPLE_PERIOD_MS):
        n = len(plan)
        self.plan = plan
        self.cluster = cluster
        self.engine = engine
        self.sample_period_ms = sample_period_ms
        self.dispatch_ms = np.full(n, -1, dtype=np.int64)
        self.completion_ms = np.full(n, -1, dtype=np.int64)
        self.cold = np.zeros(n, dtype=bool)
        self.snapshots: dict[str, dict] = {}
        self.usage_rows: list[dict] = []
        self._prev_node_cpu: list[float] | None = None
        self._prev_sample_ms = 0
        self.peak_node_utilization: float | None = None

    def install_boundaries(self) -> None:
        """Schedule the measurement-window boundary snapshots."""
        cutoff, end = self.plan.warmup_cutoff_ms, self.plan.total_duration_ms
        self.engine.schedule(cutoff, EventKind.METRICS_SAMPLE, "window-start",
                             lambda: self._snapshot("window-start"))
        self.engine.schedule(end, EventKind.METRICS_SAMPLE, "window-end",
                             lambda: self._snapshot("window-end"))

    def install_periodic(self) -> None:
        if self.sample_period_ms:
            self.engine.schedule(self.sample_period_ms, EventKind.METRICS_SAMPLE,
                                 "periodic", self._periodic_sample)

    def record_dispatch(self, idx: int, dispatch_ms: int, cold: bool) -> None:
        assert self.dispatch_ms[idx] < 0, "invocation dispatched twice"
        self.dispatch_ms[idx] = dispatch_ms
        self.cold[idx] = cold

    def record_completion(self, idx: int, completion_ms: int) -> None:
        assert self.completion_ms[idx] < 0, "invocation completed twice"
        self.completion_ms[idx] = completion_ms

    def _snapshot(self, name: str) -> None:
        c = self.cluster
        c.sync_accounting(self.engine.now)
        self.snapshots[name] = {
            "time_ms": self.engine.now,
            "creations": c.creations,
            "teardowns": c.teardowns,
            "function_work_cpu_ms": c.function_work_cpu_ms,
            "worker_overhead_cpu_ms": c.worker_overhead_cpu_ms,
            "master_overhead_cpu_ms": c.master_overhead_cpu_ms,
            "live_memory_integral": c.live_memory_integral,
            "busy_memory_integral": c.busy_memory_integral,
            "live_count_integral": c.live_count_integral,
        }

    def _periodic_sample(self) -> None:
        now = self.engine.now
        c = self.cluster
        c.sync_accounting(now)
        node_cpu = [n.function_work_cpu_ms + n.worker_overhead_cpu_ms for n in c.nodes]
        utils = []
        if self._prev_node_cpu is not None and now > self._prev_sample_ms:
            interval = now - self._prev_sample_ms
            utils = [(cur - prev) / (node.cores * interval)
                     for cur, prev, node in zip(node_cpu, self._prev_node_cpu, c.nodes)]
            if self.plan.warmup_cutoff_ms < now <= self.plan.total_duration_ms:
                peak = max(utils)
                if self.peak_node_utilization is None or peak > self.peak_node_utilization:
                    self.peak_node_utilization = peak
        self._prev_node_cpu = node_cpu
        self._prev_sample_ms = now
        self.usage_rows.append({
            "time_ms": now,
            "live_instances": c.live_count,
            "total_memory_mb": c.live_memory_mb,
            "busy_memory_mb": c.busy_memory_mb,
            "creations": c.creations,
            "teardowns": c.teardowns,
            "function_work_cpu_ms": round(c.function_work_cpu_ms, 6),
            "worker_overhead_cpu_ms": round(c.worker_overhead_cpu_ms, 6),
            "master_overhead_cpu_ms": round(c.master_overhead_cpu_ms, 6),
            "node_utilization": [round(u, 6) for u in utils],
        })
        if now < self.plan.total_duration_ms:
            self.engine.schedule(now + self.sample_period_ms, EventKind.METRICS_SAMPLE,
                                 "periodic", self._periodic_sample)


# ---------------------------------------------------------------------------
# Report

CDF_PERCENTILE_TENTHS = [p * 100 for p in range(9)] + list(range(900, 1001))


@dataclass
class ExperimentReport:
    slowdown_geomean_p99: float | None
    per_function_p99: dict[str, float]
    excluded_functions: int
    normalized_memory: float | None
    creation_rate_per_s: float
    teardown_rate_per_s: float
    cpu_overhead_total: float | None
    cpu_overhead_worker_share: float | None
    cpu_overhead_master_share: float | None
    cold_start_fraction: float | None
    queueing_cdf: list[tuple[float, float]]
    config: dict
    seed: int
    plan_checksum: str
    events_processed: int
    records_total: int
    records_measured: int
    peak_node_utilization: float | None
    window: dict
    usage_series: list[dict] = field(repr=False, default_factory=list)

    def to_json_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "usage_series"}
        d["queueing_cdf"] = [[p, v] for p, v in self.queueing_cdf]
        return d


def build_report(plan: InvocationPlan, recorder: Recorder, cluster: Cluster,
                 config_echo: dict, seed: int, events_processed: int) -> ExperimentReport:
    cutoff = plan.warmup_cutoff_ms
    window_ms = plan.total_duration_ms - cutoff
    measured = plan.arrival_ms >= cutoff
    n_measured = int(measured.sum())

    assert np.all(recorder.completion_ms >= 0), "lost invocations: records incomplete"

    per_fn: dict[str, float] = {}
    excluded = 0
    if n_measured:
        slowdown = ((recorder.completion_ms[measured] - plan.arrival_ms[measured])
                    / plan.duration_ms[measured])
        fn_idx = plan.fn_index[measured]
        for fi, fid in enumerate(plan.function_ids):
            values = slowdown[fn_idx == fi]
            if len(values) == 0:
                excluded += 1
            else:
                per_fn[fid] = per_function_p99(values)
    else:
        excluded = len(plan.function_ids)
    geomean = aggregate_slowdown(per_fn.values()) if per_fn else None

    start = recorder.snapshots["window-start"]
    end = recorder.snapshots["window-end"]
    live_delta = end["live_memory_integral"] - start["live_memory_integral"]
    busy_delta = end["busy_memory_integral"] - start["busy_memory_integral"]
    norm_mem = live_delta / busy_delta if busy_delta > 0 else None

    window_s = window_ms / 1000.0
    c_rate = creation_rate(start["creations"], end["creations"], window_s)
    t_rate = creation_rate(start["teardowns"], end["teardowns"], window_s)

    worker_d = end["worker_overhead_cpu_ms"] - start["worker_overhead_cpu_ms"]
    master_d = end["master_overhead_cpu_ms"] - start["master_overhead_cpu_ms"]
    work_d = end["function_work_cpu_ms"] - start["function_work_cpu_ms"]
    if work_d > 0:
        overhead = normalized_cpu_overhead(worker_d, master_d, work_d)
    else:
        overhead = {"total": None, "worker_share": None, "master_share": None}

    if n_measured:
        queueing = np.sort(recorder.dispatch_ms[measured] - plan.arrival_ms[measured])
        cdf = [(t / 10.0, float(queueing[nearest_rank_index(n_measured, t)]))
               for t in CDF_PERCENTILE_TENTHS]
        cold_fraction = float(recorder.cold[measured].mean())
    else:
        cdf = []
        cold_fraction = None

    return ExperimentReport(
        slowdown_geomean_p99=geomean,
        per_function_p99=per_fn,
        excluded_functions=excluded,
        normalized_memory=norm_mem,
        creation_rate_per_s=c_rate,
        teardown_rate_per_s=t_rate,
        cpu_overhead_total=overhead["total"],
        cpu_overhead_worker_share=overhead["worker_share"],
        cpu_overhead_master_share=overhead["master_share"],
        cold_start_fraction=cold_fraction,
        queueing_cdf=cdf,
        config=config_echo,
        seed=seed,
        plan_checksum=plan.checksum(),
        events_processed=events_processed,
        records_total=len(plan),
        records_measured=n_measured,
        peak_node_utilization=recorder.peak_node_utilization,
        window={
            "start_ms": cutoff,
            "end_ms": plan.total_duration_ms,
            "creations": end["creations"] - start["creations"],
            "teardowns": end["teardowns"] - start["teardowns"],
            "function_work_cpu_ms": work_d,
            "worker_overhead_cpu_ms": worker_d,
            "master_overhead_cpu_ms": master_d,
            "live_memory_integral_mb_ms": live_delta,
            "busy_memory_integral_mb_ms": busy_delta,
            "live_instance_ms": (end["live_count_integral"]
                                 - start["live_count_integral"]),
        },
        usage_series=recorder.usage_rows,
    )


# ---------------------------------------------------------------------------
# Export

def export_report(report: ExperimentReport, out_dir: str | Path, stem: str) -> list[Path]:
    """Write the JSON report, queueing-time CDF CSV, and usage time-series CSV.
    Two exports of the same report are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.json", out / f"{stem}_cdf.csv", out / f"{stem}_usage.csv"]

    paths[0].write_text(json.dumps(report.to_json_dict(), sort_keys=True, indent=2,
                                   default=_json_default) + "\n", encoding="utf-8")

    with open(paths[1], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["percentile", "queueing_ms"])
        for p, v in report.queueing_cdf:
            w.writerow([f"{p:.1f}", f"{v:.6g}"])

    n_nodes = max((len(r["node_utilization"]) for r in report.usage_series), default=0)
    with open(paths[2], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["time_ms", "live_instances", "total_memory_mb", "busy_memory_mb",
                    "creations", "teardowns", "function_work_cpu_ms",
                    "worker_overhead_cpu_ms", "master_overhead_cpu_ms"]
                   + [f"util_node_{i}" for i in range(n_nodes)])
        for r in report.usage_series:
            utils = [f"{u:.6g}" for u in r["node_utilization"]]
            utils += [""] * (n_nodes - len(utils))
            w.writerow([r["time_ms"], r["live_instances"], r["total_memory_mb"],
                        r["busy_memory_mb"], r["creations"], r["teardowns"],
                        f"{r['function_work_cpu_ms']:.6g}",
                        f"{r['worker_overhead_cpu_ms']:.6g}",
                        f"{r['master_overhead_cpu_ms']:.6g}"] + utils)
    return paths


SUMMARY_COLUMNS = ["policy", "keepalive_s", "window_s", "target", "cc",
                   "slowdown", "norm_mem", "creation_rate", "cpu_overhead",
                   "worker_share"]


def summary_row(report: ExperimentReport) -> list[str]:
    policy = report.config.get("policy", {})

    def num(x, scale=1.0):
        return f"{x * scale:.6g}" if x is not None else ""

    return [
        policy.get("variant", ""),
        num(policy.get("keepalive_ms"), 1e-3),
        num(policy.get("window_ms"), 1e-3),
        num(policy.get("utilization_target")),
        str(policy.get("container_concurrency") or ""),
        num(report.slowdown_geomean_p99),
        num(report.normalized_memory),
        num(report.creation_rate_per_s),
        num(report.cpu_overhead_total),
        num(report.cpu_overhead_worker_share),
    ]


def write_summary_csv(rows: list[list[str]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(rows)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")
