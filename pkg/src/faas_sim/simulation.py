"""Wires engine, cluster, router, policy, and recorder into one experiment run.

Setup scheduling order is pinned (it defines event seq numbers and therefore
the tie-break order at coincident timestamps): first arrival, window-start
boundary, window-end boundary, policy periodic events (async sampler then
evaluator), periodic metrics sampling.
"""

from __future__ import annotations

from dataclasses import dataclass

from .cluster import Cluster, CostModel
from .engine import Engine, EventKind, RunStats
from .metrics import METRICS_SAMPLE_PERIOD_MS, Recorder
from .policies import PolicyConfig, build_policy
from .router import Router
from .workload import FunctionProfile, InvocationPlan


@dataclass(frozen=True)
class ClusterSpec:
    nodes: int
    cores_per_node: int
    memory_mb_per_node: int

    def __post_init__(self) -> None:
        if self.nodes <= 0 or self.cores_per_node <= 0 or self.memory_mb_per_node <= 0:
            raise ValueError("cluster capacities must be positive")

    def to_dict(self) -> dict:
        return {"nodes": self.nodes, "cores_per_node": self.cores_per_node,
                "memory_mb_per_node": self.memory_mb_per_node}


@dataclass
class SimulationResult:
    plan: InvocationPlan
    recorder: Recorder
    cluster: Cluster
    engine: Engine
    stats: RunStats
    event_log: list[str] | None


def run_simulation(plan: InvocationPlan, profiles: list[FunctionProfile],
                   cluster_spec: ClusterSpec, cost_model: CostModel,
                   policy_config: PolicyConfig, seed: int,
                   capture_event_log: bool = False,
                   metrics_sample_period_ms: int | None = METRICS_SAMPLE_PERIOD_MS,
                   ) -> SimulationResult:
    event_log: list[str] | None = [] if capture_event_log else None
    engine = Engine(seed, event_log=event_log)
    cluster = Cluster(engine, cluster_spec.nodes, cluster_spec.cores_per_node,
                      cluster_spec.memory_mb_per_node, cost_model)
    recorder = Recorder(plan, cluster, engine,
                        sample_period_ms=metrics_sample_period_ms)
    memory_by_fn = {p.function_id: p.memory_mb for p in profiles}
    cc = policy_config.container_concurrency or 1
    router = Router(engine, cluster, recorder, container_concurrency=cc)
    policy = build_policy(policy_config, engine, cluster, memory_by_fn,
                          plan.function_ids)
    router.policy = policy
    policy.router = router

    def schedule_arrival(i: int) -> None:
        fn = plan.function_ids[plan.fn_index[i]]
        engine.schedule(int(plan.arrival_ms[i]), EventKind.REQUEST_ARRIVAL,
                        f"fn={fn} inv={i}", lambda: arrive(i, fn))

    def arrive(i: int, fn: str) -> None:
        if i + 1 < len(plan):
            schedule_arrival(i + 1)
        router.on_arrival(i, fn, int(plan.duration_ms[i]), engine.now)

    if len(plan):
        schedule_arrival(0)
    recorder.install_boundaries()
    policy.setup(plan.total_duration_ms)
    recorder.install_periodic()

    stats = engine.run()
    assert router.total_queued == 0 and policy_stuck(policy) == 0, \
        "simulation drained with requests still waiting"
    return SimulationResult(plan, recorder, cluster, engine, stats, event_log)


def policy_stuck(policy) -> int:
    parked = getattr(policy, "parked_count", None)
    return parked() if parked else 0
