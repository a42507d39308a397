"""Experiment configuration: a single human-editable YAML key tree.

Durations in config files are given in seconds (keepalive_s, window_s, ...)
and converted to the integer-millisecond units used internally. Unknown keys
are rejected with their full key path. Relative trace paths resolve against
the directory containing the config file.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import distributions
from .cluster import COST_PROFILES, CostModel
from .policies import ASYNC_WINDOW, SYNC_KEEPALIVE, PolicyConfig
from .simulation import ClusterSpec
from .workload import SyntheticSpec


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    pass


class UnknownKey(ConfigError):
    pass


class InvariantViolation(ConfigError):
    pass


DEFAULT_CLUSTER = {"nodes": 8, "cores_per_node": 10, "memory_mb_per_node": 196_608}
DEFAULT_COST_PROFILE = "knative-like"


@dataclass(frozen=True)
class WorkloadSpec:
    experiment_minutes: int
    warmup_minutes: int
    trace_dir: Path | None = None
    synthetic: tuple[SyntheticSpec, ...] = ()
    sample_k: int | None = None
    source_echo: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.warmup_minutes >= self.experiment_minutes:
            raise InvariantViolation(
                "workload.warmup_minutes must be < workload.experiment_minutes")
        if (self.trace_dir is None) == (len(self.synthetic) == 0):
            raise InvariantViolation(
                "workload requires exactly one of trace_dir or synthetic")


@dataclass(frozen=True)
class ExperimentConfig:
    cluster: ClusterSpec
    cost_model: CostModel
    cost_model_name: str | None
    policy: PolicyConfig
    workload: WorkloadSpec
    seed: int
    output_dir: Path

    def to_dict(self) -> dict:
        """Resolved config echo embedded in reports (output_dir excluded so
        that re-runs into different directories stay byte-identical)."""
        return {
            "cluster": self.cluster.to_dict(),
            "cost_model": {"profile": self.cost_model_name,
                           **self.cost_model.to_dict()},
            "policy": self.policy.to_dict(),
            "workload": {
                "experiment_minutes": self.workload.experiment_minutes,
                "warmup_minutes": self.workload.warmup_minutes,
                "sample_k": self.workload.sample_k,
                **self.workload.source_echo,
            },
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Parsing helpers

_TOP_KEYS = {"cluster", "cost_model", "policy", "workload", "seed", "output_dir"}
_CLUSTER_KEYS = {"nodes", "cores_per_node", "memory_mb_per_node"}
_COST_KEYS = {"profile", "creation_delay_ms", "warm_overhead_ms",
              "cpu_create_worker_ms", "cpu_teardown_worker_ms",
              "cpu_master_per_lifecycle_ms", "idle_background_cpu_ms_per_s",
              "master_background_cpu_ms_per_s"}
_POLICY_KEYS = {"variant", "keepalive_s", "window_s", "utilization_target",
                "container_concurrency", "evaluation_period_s", "sample_period_s"}
_WORKLOAD_KEYS = {"trace_dir", "invocations", "durations", "memory", "synthetic",
                  "sample_k", "experiment_minutes", "warmup_minutes"}
_SYNTH_KEYS = {"id_prefix", "functions", "rate_per_minute", "duration_median_ms",
               "duration_sigma", "memory_mb"}


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    if not isinstance(mapping, dict):
        raise ParseError(f"{path}: expected a mapping")
    for key in mapping:
        if key not in allowed:
            raise UnknownKey(f"unknown key {path}.{key}" if path else f"unknown key {key}")


def _seconds_to_ms(value, path: str) -> int:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        raise InvariantViolation(f"{path}: expected a positive number of seconds")
    return int(round(value * 1000))


def _positive_int(value, path: str) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value <= 0:
        raise InvariantViolation(f"{path}: expected a positive integer")
    return value


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: {e}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    if overrides:
        raw = apply_overrides(raw, overrides)
    return config_from_dict(raw, base_dir=path.parent)


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides; values parse as YAML scalars."""
    raw = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r} must look like key.path=value")
        dotted, text = item.split("=", 1)
        value = yaml.safe_load(text)
        node = raw
        parts = dotted.split(".")
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = value
    return raw


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    _check_keys(raw, _TOP_KEYS, "")
    base_dir = base_dir or Path.cwd()

    cluster_raw = {**DEFAULT_CLUSTER, **(raw.get("cluster") or {})}
    _check_keys(raw.get("cluster") or {}, _CLUSTER_KEYS, "cluster")
    cluster = ClusterSpec(
        nodes=_positive_int(cluster_raw["nodes"], "cluster.nodes"),
        cores_per_node=_positive_int(cluster_raw["cores_per_node"],
                                     "cluster.cores_per_node"),
        memory_mb_per_node=_positive_int(cluster_raw["memory_mb_per_node"],
                                         "cluster.memory_mb_per_node"))

    cost_model, cost_name = _parse_cost_model(raw.get("cost_model", DEFAULT_COST_PROFILE))
    policy = _parse_policy(raw.get("policy"))
    workload = _parse_workload(raw.get("workload"), base_dir)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise InvariantViolation("seed: expected a non-negative integer")

    out = raw.get("output_dir") or os.environ.get("FAAS_SIM_OUT") or "out"
    return ExperimentConfig(cluster=cluster, cost_model=cost_model,
                            cost_model_name=cost_name, policy=policy,
                            workload=workload, seed=seed, output_dir=Path(out))


def _parse_cost_model(raw) -> tuple[CostModel, str | None]:
    if isinstance(raw, str):
        if raw not in COST_PROFILES:
            raise InvariantViolation(
                f"cost_model: unknown profile {raw!r}; available: "
                f"{sorted(COST_PROFILES)}")
        return COST_PROFILES[raw], raw
    _check_keys(raw, _COST_KEYS, "cost_model")
    name = raw.get("profile")
    if name is not None and name not in COST_PROFILES:
        raise InvariantViolation(f"cost_model.profile: unknown profile {name!r}")
    base = COST_PROFILES[name] if name else COST_PROFILES[DEFAULT_COST_PROFILE]
    fields = base.to_dict()
    for key in raw:
        if key != "profile":
            fields[key] = raw[key]
    try:
        return CostModel(
            creation_delay_ms=distributions.from_dict(
                fields["creation_delay_ms"], "cost_model.creation_delay_ms"),
            warm_overhead_ms=distributions.from_dict(
                fields["warm_overhead_ms"], "cost_model.warm_overhead_ms"),
            cpu_create_worker_ms=float(fields["cpu_create_worker_ms"]),
            cpu_teardown_worker_ms=float(fields["cpu_teardown_worker_ms"]),
            cpu_master_per_lifecycle_ms=float(fields["cpu_master_per_lifecycle_ms"]),
            idle_background_cpu_ms_per_s=float(fields["idle_background_cpu_ms_per_s"]),
            master_background_cpu_ms_per_s=float(
                fields["master_background_cpu_ms_per_s"]),
        ), name
    except ValueError as e:
        raise InvariantViolation(f"cost_model: {e}") from None


def _parse_policy(raw) -> PolicyConfig:
    if raw is None:
        raise InvariantViolation("policy: section is required")
    _check_keys(raw, _POLICY_KEYS, "policy")
    variant = raw.get("variant")
    try:
        if variant == SYNC_KEEPALIVE:
            return PolicyConfig(variant=SYNC_KEEPALIVE, keepalive_ms=_seconds_to_ms(
                raw.get("keepalive_s"), "policy.keepalive_s"))
        if variant == ASYNC_WINDOW:
            target = raw.get("utilization_target")
            if not isinstance(target, (int, float)) or isinstance(target, bool):
                raise InvariantViolation("policy.utilization_target: expected a number")
            return PolicyConfig(
                variant=ASYNC_WINDOW,
                window_ms=_seconds_to_ms(raw.get("window_s"), "policy.window_s"),
                utilization_target=float(target),
                container_concurrency=_positive_int(
                    raw.get("container_concurrency", 1), "policy.container_concurrency"),
                evaluation_period_ms=_seconds_to_ms(
                    raw.get("evaluation_period_s", 2), "policy.evaluation_period_s"),
                sample_period_ms=_seconds_to_ms(
                    raw.get("sample_period_s", 1), "policy.sample_period_s"))
    except ValueError as e:
        raise InvariantViolation(f"policy: {e}") from None
    raise InvariantViolation(
        f"policy.variant: expected {SYNC_KEEPALIVE!r} or {ASYNC_WINDOW!r}, "
        f"got {variant!r}")


def _parse_workload(raw, base_dir: Path) -> WorkloadSpec:
    if raw is None:
        raise InvariantViolation("workload: section is required")
    _check_keys(raw, _WORKLOAD_KEYS, "workload")
    experiment = _positive_int(raw.get("experiment_minutes"),
                               "workload.experiment_minutes")
    warmup = raw.get("warmup_minutes", 0)
    if not isinstance(warmup, int) or isinstance(warmup, bool) or warmup < 0:
        raise InvariantViolation("workload.warmup_minutes: expected a non-negative integer")

    sample_k = raw.get("sample_k")
    if sample_k is not None:
        sample_k = _positive_int(sample_k, "workload.sample_k")

    trace_dir = None
    synthetic: tuple[SyntheticSpec, ...] = ()
    echo: dict = {}
    if "trace_dir" in raw:
        trace_dir = Path(raw["trace_dir"])
        if not trace_dir.is_absolute():
            trace_dir = base_dir / trace_dir
        echo["trace_dir"] = str(raw["trace_dir"])
    if "synthetic" in raw:
        synthetic = tuple(_parse_synthetic(raw["synthetic"], experiment))
        echo["synthetic"] = raw["synthetic"]
    try:
        return WorkloadSpec(experiment_minutes=experiment, warmup_minutes=warmup,
                            trace_dir=trace_dir, synthetic=synthetic,
                            sample_k=sample_k, source_echo=echo)
    except ValueError as e:
        raise InvariantViolation(str(e)) from None


def _parse_synthetic(raw, experiment_minutes: int) -> list[SyntheticSpec]:
    classes = raw.get("classes") if isinstance(raw, dict) else None
    if classes is None:
        classes = [raw]
    specs = []
    for i, cls in enumerate(classes):
        where = f"workload.synthetic.classes[{i}]"
        _check_keys(cls, _SYNTH_KEYS | {"minutes"}, where)
        try:
            specs.append(SyntheticSpec(
                num_functions=_positive_int(cls.get("functions"), f"{where}.functions"),
                minutes=cls.get("minutes", experiment_minutes),
                rate_per_minute=distributions.from_dict(
                    cls.get("rate_per_minute"), f"{where}.rate_per_minute"),
                duration_median_ms=distributions.from_dict(
                    cls.get("duration_median_ms"), f"{where}.duration_median_ms"),
                duration_sigma=distributions.from_dict(
                    cls.get("duration_sigma", 0.5), f"{where}.duration_sigma"),
                memory_mb=distributions.from_dict(
                    cls.get("memory_mb"), f"{where}.memory_mb"),
                id_prefix=str(cls.get("id_prefix", "fn" if len(classes) == 1 else f"c{i}")),
            ))
        except ValueError as e:
            raise InvariantViolation(f"{where}: {e}") from None
    return specs


# ---------------------------------------------------------------------------
# Sweeps

@dataclass(frozen=True)
class SweepSpec:
    base_raw: dict
    base_dir: Path
    axes: dict[str, list]  # dotted parameter path -> values, file order
    parallelism: int | None

    @property
    def size(self) -> int:
        n = 1
        for values in self.axes.values():
            n *= len(values)
        return n

    def points(self) -> list[dict[str, object]]:
        """Cross product in row-major order (first axis outermost)."""
        combos: list[dict[str, object]] = [{}]
        for name, values in self.axes.items():
            combos = [{**c, name: v} for c in combos for v in values]
        return combos

    def config_for(self, point: dict[str, object]) -> ExperimentConfig:
        overrides = [f"{k}={yaml.safe_dump(v, default_flow_style=True).strip()}"
                     for k, v in point.items()]
        return config_from_dict(apply_overrides(self.base_raw, overrides),
                                base_dir=self.base_dir)


_SWEEP_KEYS = {"base", "axes", "parallelism"}


def load_sweep(path: str | Path) -> SweepSpec:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ParseError(f"{path}: {e}") from None
    _check_keys(raw, _SWEEP_KEYS, "")
    base = raw.get("base")
    if isinstance(base, str):
        base_path = Path(base)
        if not base_path.is_absolute():
            base_path = path.parent / base_path
        base_raw = yaml.safe_load(base_path.read_text(encoding="utf-8"))
        base_dir = base_path.parent
    elif isinstance(base, dict):
        base_raw = base
        base_dir = path.parent
    else:
        raise ParseError(f"{path}: base must be a config path or an inline mapping")

    axes = raw.get("axes") or {}
    if not isinstance(axes, dict) or not axes:
        raise ParseError(f"{path}: axes must be a non-empty mapping")
    for name, values in axes.items():
        if name.split(".")[0] in ("workload", "seed"):
            raise InvariantViolation(
                f"axes.{name}: workload and seed cannot be swept (every point "
                "replays the identical invocation plan)")
        if not isinstance(values, list) or not values:
            raise ParseError(f"axes.{name}: expected a non-empty list of values")

    parallelism = raw.get("parallelism")
    if parallelism is not None:
        parallelism = _positive_int(parallelism, "parallelism")
    spec = SweepSpec(base_raw=base_raw, base_dir=base_dir, axes=dict(axes),
                     parallelism=parallelism)
    for point in spec.points():  # fail fast on invalid combinations
        spec.config_for(point)
    return spec
