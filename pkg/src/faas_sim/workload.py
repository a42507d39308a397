"""Azure-style trace parsing, function sampling, and invocation timeline expansion.

All operations here are pure functions of their inputs plus an explicit seed,
so they are safe to call from parallel experiment runners.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .distributions import ValueDist

# Quantile levels matching the trace schema percentile columns p0..p100.
PERCENTILE_LEVELS = (0.0, 0.01, 0.25, 0.50, 0.75, 0.99, 1.0)
PERCENTILE_NAMES = (0, 1, 25, 50, 75, 99, 100)

MS_PER_MINUTE = 60_000


class TraceError(ValueError):
    """A trace file violates the expected schema or invariants."""


class MissingColumn(TraceError):
    pass


class UnknownFunctionId(TraceError):
    pass


class NonMonotonePercentiles(TraceError):
    pass


class NegativeCount(TraceError):
    pass


class InsufficientFunctions(ValueError):
    pass


@dataclass(frozen=True)
class DurationStats:
    """Per-function execution-duration statistics in milliseconds."""

    average_ms: float
    percentile_ms: tuple[float, ...]  # values at PERCENTILE_LEVELS, non-decreasing

    def __post_init__(self) -> None:
        if len(self.percentile_ms) != len(PERCENTILE_LEVELS):
            raise ValueError("expected one value per percentile level")
        for a, b in zip(self.percentile_ms, self.percentile_ms[1:]):
            if b < a:
                raise NonMonotonePercentiles(
                    f"percentiles must be non-decreasing, got {self.percentile_ms}")
        if not (self.percentile_ms[0] <= self.average_ms <= self.percentile_ms[-1]):
            raise TraceError(
                f"average {self.average_ms} outside [p0, p100] = "
                f"[{self.percentile_ms[0]}, {self.percentile_ms[-1]}]")

    def interpolant_mean(self) -> float:
        """Mean of the piecewise-linear inverse CDF through the percentile points."""
        total = 0.0
        for q0, q1, v0, v1 in zip(PERCENTILE_LEVELS, PERCENTILE_LEVELS[1:],
                                  self.percentile_ms, self.percentile_ms[1:]):
            total += (q1 - q0) * (v0 + v1) / 2.0
        return total

    @classmethod
    def constant(cls, value_ms: float) -> "DurationStats":
        return cls(value_ms, tuple([value_ms] * len(PERCENTILE_LEVELS)))


@dataclass(frozen=True)
class FunctionProfile:
    function_id: str
    memory_mb: int
    duration_stats: DurationStats
    per_minute_counts: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.memory_mb <= 0:
            raise TraceError(f"{self.function_id}: memory_mb must be > 0")
        for m, c in enumerate(self.per_minute_counts):
            if c < 0:
                raise NegativeCount(f"{self.function_id}: negative count at minute {m + 1}")

    @property
    def total_invocations(self) -> int:
        return sum(self.per_minute_counts)


@dataclass(frozen=True)
class InvocationPlan:
    """Concrete invocation timeline: parallel arrays sorted by arrival time.

    Ties are broken by (function_id, per-function sequence index). Durations
    are integer milliseconds (the simulation clock unit).
    """

    function_ids: tuple[str, ...]  # distinct functions, profile order
    fn_index: np.ndarray  # int32, index into function_ids, one per entry
    arrival_ms: np.ndarray  # int64, offset from experiment start
    duration_ms: np.ndarray  # int64, > 0
    total_duration_ms: int
    warmup_cutoff_ms: int

    def __len__(self) -> int:
        return len(self.arrival_ms)

    def entries(self):
        """Iterate (function_id, arrival_ms, duration_ms) tuples."""
        for i in range(len(self)):
            yield (self.function_ids[self.fn_index[i]],
                   int(self.arrival_ms[i]), int(self.duration_ms[i]))

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update("|".join(self.function_ids).encode())
        h.update(np.ascontiguousarray(self.fn_index).tobytes())
        h.update(np.ascontiguousarray(self.arrival_ms).tobytes())
        h.update(np.ascontiguousarray(self.duration_ms).tobytes())
        h.update(f"{self.total_duration_ms}:{self.warmup_cutoff_ms}".encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# Trace parsing

_DURATION_COLUMNS = ["Average"] + [f"percentile_Average_{p}" for p in PERCENTILE_NAMES]


def _read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise MissingColumn(f"{path}: empty file, header row required")
        return list(reader.fieldnames), list(reader)


def _require(columns: list[str], needed: list[str], path: str | Path) -> None:
    for col in needed:
        if col not in columns:
            raise MissingColumn(f"{path}: missing column {col!r}")


def parse_trace(invocations_path: str | Path, durations_path: str | Path,
                memory_path: str | Path) -> list[FunctionProfile]:
    """Parse the three-file trace into one FunctionProfile per invocations row.

    Extra columns are ignored; minute columns must be named 1..N contiguously.
    Every function id in the invocations file must appear in the durations and
    memory files (extra ids there are ignored).
    """
    inv_cols, inv_rows = _read_csv(invocations_path)
    _require(inv_cols, ["HashFunction"], invocations_path)
    minute_cols = sorted((c for c in inv_cols if c.isdigit()), key=int)
    if not minute_cols:
        raise MissingColumn(f"{invocations_path}: no per-minute count columns found")
    for i, c in enumerate(minute_cols, start=1):
        if int(c) != i:
            raise MissingColumn(f"{invocations_path}: minute columns not contiguous, "
                                f"expected column {i!r} but found {c!r}")

    dur_cols, dur_rows = _read_csv(durations_path)
    _require(dur_cols, ["HashFunction"] + _DURATION_COLUMNS, durations_path)
    mem_cols, mem_rows = _read_csv(memory_path)
    _require(mem_cols, ["HashFunction", "AverageAllocatedMb"], memory_path)

    durations = {r["HashFunction"]: r for r in dur_rows}
    memories = {r["HashFunction"]: r for r in mem_rows}

    profiles = []
    for rownum, row in enumerate(inv_rows, start=2):
        fid = row["HashFunction"]
        if fid not in durations:
            raise UnknownFunctionId(
                f"{durations_path}: function {fid!r} (invocations row {rownum}) not found")
        if fid not in memories:
            raise UnknownFunctionId(
                f"{memory_path}: function {fid!r} (invocations row {rownum}) not found")
        try:
            counts = tuple(int(row[c]) for c in minute_cols)
        except ValueError as e:
            raise TraceError(f"{invocations_path} row {rownum} ({fid}): {e}") from None
        for m, c in zip(minute_cols, counts):
            if c < 0:
                raise NegativeCount(
                    f"{invocations_path} row {rownum} ({fid}): negative count at minute {m}")
        drow = durations[fid]
        try:
            stats = DurationStats(
                float(drow["Average"]),
                tuple(float(drow[f"percentile_Average_{p}"]) for p in PERCENTILE_NAMES))
        except NonMonotonePercentiles as e:
            raise NonMonotonePercentiles(f"{durations_path} ({fid}): {e}") from None
        except (TraceError, ValueError) as e:
            raise TraceError(f"{durations_path} ({fid}): {e}") from None
        try:
            memory_mb = int(round(float(memories[fid]["AverageAllocatedMb"])))
            profiles.append(FunctionProfile(fid, memory_mb, stats, counts))
        except (TraceError, ValueError) as e:
            raise TraceError(f"{memory_path} ({fid}): {e}") from None
    return profiles


def write_trace(profiles: list[FunctionProfile], out_dir: str | Path) -> list[Path]:
    """Write profiles back out in the three-file trace schema."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    minutes = len(profiles[0].per_minute_counts) if profiles else 0
    paths = [out / "invocations.csv", out / "durations.csv", out / "memory.csv"]

    with open(paths[0], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["HashFunction"] + [str(m) for m in range(1, minutes + 1)])
        for p in profiles:
            w.writerow([p.function_id] + list(p.per_minute_counts))
    with open(paths[1], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["HashFunction"] + _DURATION_COLUMNS)
        for p in profiles:
            w.writerow([p.function_id, _fmt(p.duration_stats.average_ms)]
                       + [_fmt(v) for v in p.duration_stats.percentile_ms])
    with open(paths[2], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["HashFunction", "AverageAllocatedMb"])
        for p in profiles:
            w.writerow([p.function_id, p.memory_mb])
    return paths


def _fmt(x: float) -> str:
    return f"{x:.6g}"


# ---------------------------------------------------------------------------
# Representative sampling

def sample_functions(profiles: list[FunctionProfile], k: int,
                     seed: int) -> list[FunctionProfile]:
    """Stratified sample over log10 buckets of total invocation count.

    Bucket quotas use proportional allocation with largest-remainder rounding
    (ties: larger remainder first, then lower bucket). Zero-invocation
    functions are never sampled. Output preserves input order.
    """
    eligible = [p for p in profiles if p.total_invocations > 0]
    if k > len(eligible):
        raise InsufficientFunctions(
            f"requested {k} functions but only {len(eligible)} have invocations")
    buckets: dict[int, list[FunctionProfile]] = {}
    for p in eligible:
        buckets.setdefault(int(math.floor(math.log10(p.total_invocations))), []).append(p)

    keys = sorted(buckets)
    n = len(eligible)
    quotas = {b: k * len(buckets[b]) / n for b in keys}
    take = {b: int(math.floor(quotas[b])) for b in keys}
    remaining = k - sum(take.values())
    for b in sorted(keys, key=lambda b: (-(quotas[b] - take[b]), b))[:remaining]:
        take[b] += 1

    gen = rng.stream(seed, "sampling")
    chosen: set[str] = set()
    for b in keys:
        idx = gen.choice(len(buckets[b]), size=take[b], replace=False)
        chosen.update(buckets[b][i].function_id for i in idx)
    return [p for p in eligible if p.function_id in chosen]


# ---------------------------------------------------------------------------
# Timeline expansion

def generate_invocations(profiles: list[FunctionProfile], experiment_minutes: int,
                         warmup_minutes: int, seed: int) -> InvocationPlan:
    """Expand per-minute counts into a concrete arrival/duration timeline.

    Arrivals are placed uniformly at random within their minute (equivalent to
    Poisson arrivals conditioned on the per-minute count). Durations are drawn
    from the piecewise-linear inverse CDF through the percentile points and
    rounded to integer milliseconds (clamped to stay >= 1ms).
    """
    if warmup_minutes >= experiment_minutes:
        raise ValueError("warmup_minutes must be < experiment_minutes")
    for p in profiles:
        if experiment_minutes > len(p.per_minute_counts):
            raise ValueError(f"{p.function_id}: trace has {len(p.per_minute_counts)} "
                             f"minutes, need {experiment_minutes}")

    arrival_rng = rng.stream(seed, "arrivals")
    duration_rng = rng.stream(seed, "durations")
    qs = np.asarray(PERCENTILE_LEVELS)

    fn_parts, arr_parts, dur_parts, seq_parts = [], [], [], []
    for fi, p in enumerate(profiles):
        counts = np.asarray(p.per_minute_counts[:experiment_minutes], dtype=np.int64)
        total = int(counts.sum())
        if total == 0:
            continue
        starts = np.repeat(np.arange(experiment_minutes, dtype=np.int64) * MS_PER_MINUTE,
                           counts)
        offsets = arrival_rng.integers(0, MS_PER_MINUTE, size=total)
        arrivals = starts + offsets
        # within-minute order defines the per-function sequence index
        order = np.argsort(arrivals, kind="stable")
        arrivals = arrivals[order]

        vs = np.asarray(p.duration_stats.percentile_ms)
        draws = np.interp(duration_rng.random(total), qs, vs)
        durations = np.clip(np.rint(draws), 1, None).astype(np.int64)

        fn_parts.append(np.full(total, fi, dtype=np.int32))
        arr_parts.append(arrivals)
        dur_parts.append(durations)
        seq_parts.append(np.arange(total, dtype=np.int64))

    if fn_parts:
        fn_index = np.concatenate(fn_parts)
        arrival = np.concatenate(arr_parts)
        duration = np.concatenate(dur_parts)
        seq = np.concatenate(seq_parts)
        # sort by arrival, ties by (function_id, per-function sequence index)
        id_rank = np.argsort(np.argsort([p.function_id for p in profiles], kind="stable"))
        order = np.lexsort((seq, id_rank[fn_index], arrival))
        fn_index, arrival, duration = fn_index[order], arrival[order], duration[order]
    else:
        fn_index = np.empty(0, dtype=np.int32)
        arrival = np.empty(0, dtype=np.int64)
        duration = np.empty(0, dtype=np.int64)

    return InvocationPlan(
        function_ids=tuple(p.function_id for p in profiles),
        fn_index=fn_index, arrival_ms=arrival, duration_ms=duration,
        total_duration_ms=experiment_minutes * MS_PER_MINUTE,
        warmup_cutoff_ms=warmup_minutes * MS_PER_MINUTE)


# ---------------------------------------------------------------------------
# Synthetic traces

@dataclass(frozen=True)
class SyntheticSpec:
    """One population of synthetic functions with independent per-function draws."""

    num_functions: int
    minutes: int
    rate_per_minute: ValueDist
    duration_median_ms: ValueDist
    duration_sigma: ValueDist
    memory_mb: ValueDist
    id_prefix: str = "fn"

    def __post_init__(self) -> None:
        if self.num_functions <= 0 or self.minutes <= 0:
            raise ValueError("num_functions and minutes must be positive")


def gen_synthetic_trace(spec: SyntheticSpec, seed: int) -> list[FunctionProfile]:
    """Deterministic synthetic profiles: lognormal durations, Poisson counts."""
    gen = rng.stream(seed, f"synthetic:{spec.id_prefix}")
    profiles = []
    for i in range(spec.num_functions):
        rate = max(spec.rate_per_minute.sample(gen), 0.0)
        median = max(spec.duration_median_ms.sample(gen), 1.0)
        sigma = max(spec.duration_sigma.sample(gen), 0.01)
        memory = max(int(round(spec.memory_mb.sample(gen))), 1)
        counts = tuple(int(c) for c in gen.poisson(rate, size=spec.minutes))
        # percentile points from the function's lognormal; p0/p100 use the
        # 0.5%/99.5% quantiles so the support stays bounded
        z = [_z(0.005), _z(0.01), _z(0.25), 0.0, _z(0.75), _z(0.99), _z(0.995)]
        pcts = tuple(round(median * math.exp(sigma * zi), 3) for zi in z)
        stats = DurationStats(round(_pl_mean(pcts), 3), pcts)
        profiles.append(FunctionProfile(
            f"{spec.id_prefix}-{i:04d}", memory, stats, counts))
    return profiles


def gen_synthetic_classes(specs: list[SyntheticSpec], seed: int) -> list[FunctionProfile]:
    """Concatenate several populations (id prefixes must be distinct)."""
    prefixes = [s.id_prefix for s in specs]
    if len(set(prefixes)) != len(prefixes):
        raise ValueError("class id prefixes must be distinct")
    profiles = []
    for s in specs:
        profiles.extend(gen_synthetic_trace(s, seed))
    return profiles


def _z(q: float) -> float:
    from statistics import NormalDist
    return NormalDist().inv_cdf(q)


def _pl_mean(pcts: tuple[float, ...]) -> float:
    total = 0.0
    for q0, q1, v0, v1 in zip(PERCENTILE_LEVELS, PERCENTILE_LEVELS[1:], pcts, pcts[1:]):
        total += (q1 - q0) * (v0 + v1) / 2.0
    return total
