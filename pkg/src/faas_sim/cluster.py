"""Worker nodes, instance lifecycle, placement, and resource accounting.

Memory is reserved from creation start (a sandbox allocates while booting).
CPU accounting distinguishes useful function work from management overhead,
split between worker nodes (sandbox lifecycle + per-instance background) and
the master (per-lifecycle-decision charge + flat control-plane rate).
Executions always run at full speed; per-node utilization is reported so
overloaded configurations can be rejected rather than modeled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .distributions import ValueDist, deterministic, uniform
from .engine import Engine, EventHandle, EventKind


class ClusterOutOfMemory(RuntimeError):
    pass


class TerminateBusyInstance(RuntimeError):
    pass


class ConcurrencyExceeded(RuntimeError):
    pass


class IllegalTransition(RuntimeError):
    pass


class InstanceState(enum.Enum):
    CREATING = "Creating"
    IDLE = "Idle"
    BUSY = "Busy"
    TERMINATING = "Terminating"


@dataclass(frozen=True)
class CostModel:
    creation_delay_ms: ValueDist
    warm_overhead_ms: ValueDist
    cpu_create_worker_ms: float = 0.0
    cpu_teardown_worker_ms: float = 0.0
    cpu_master_per_lifecycle_ms: float = 0.0
    idle_background_cpu_ms_per_s: float = 0.0  # per live instance, worker-side
    master_background_cpu_ms_per_s: float = 0.0  # flat control-plane rate

    def __post_init__(self) -> None:
        for name in ("cpu_create_worker_ms", "cpu_teardown_worker_ms",
                     "cpu_master_per_lifecycle_ms", "idle_background_cpu_ms_per_s",
                     "master_background_cpu_ms_per_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "creation_delay_ms": self.creation_delay_ms.to_dict(),
            "warm_overhead_ms": self.warm_overhead_ms.to_dict(),
            "cpu_create_worker_ms": self.cpu_create_worker_ms,
            "cpu_teardown_worker_ms": self.cpu_teardown_worker_ms,
            "cpu_master_per_lifecycle_ms": self.cpu_master_per_lifecycle_ms,
            "idle_background_cpu_ms_per_s": self.idle_background_cpu_ms_per_s,
            "master_background_cpu_ms_per_s": self.master_background_cpu_ms_per_s,
        }


# CPU cost block shared by the shipped profiles, tuned once against the
# bundled desk-trace sweeps so that overhead lands in a 5-45% band with a
# worker/master split of 80/20 at every sweep point, then frozen.
_CPU_COSTS = dict(
    cpu_create_worker_ms=470.0,
    cpu_teardown_worker_ms=470.0,
    cpu_master_per_lifecycle_ms=117.5,
    idle_background_cpu_ms_per_s=2.9,
    master_background_cpu_ms_per_s=26.0,
)

COST_PROFILES: dict[str, CostModel] = {
    # Knative-style sandbox: ~1s instance creation, 5-10ms warm routing path.
    "knative-like": CostModel(
        creation_delay_ms=uniform(950, 1050),
        warm_overhead_ms=uniform(5, 10),
        **_CPU_COSTS,
    ),
    # AWS-style sandbox: ~300ms instance creation, 20-30ms warm routing path.
    "aws-like": CostModel(
        creation_delay_ms=uniform(280, 320),
        warm_overhead_ms=uniform(20, 30),
        **_CPU_COSTS,
    ),
}


@dataclass
class Node:
    node_id: int
    cores: int
    memory_capacity_mb: int
    reserved_memory_mb: int = 0
    running_requests: int = 0
    live_instances: int = 0
    function_work_cpu_ms: float = 0.0
    worker_overhead_cpu_ms: float = 0.0
    _last_advance_ms: int = 0

    @property
    def free_memory_mb(self) -> int:
        return self.memory_capacity_mb - self.reserved_memory_mb

    def advance(self, now: int, idle_bg_per_s: float) -> None:
        """Accrue per-instance background CPU up to `now`."""
        if now > self._last_advance_ms:
            if idle_bg_per_s > 0 and self.live_instances > 0:
                self.worker_overhead_cpu_ms += (
                    idle_bg_per_s * self.live_instances * (now - self._last_advance_ms) / 1000.0)
            self._last_advance_ms = now


@dataclass
class Instance:
    instance_id: int
    function_id: str
    node_id: int
    memory_mb: int
    concurrency_limit: int
    created_at_ms: int
    state: InstanceState = InstanceState.CREATING
    in_flight: int = 0
    ready_at_ms: int | None = None
    idle_since_ms: int | None = None
    bound_request: object | None = None  # sync policy: pending request bound 1:1
    ready_handle: EventHandle | None = None
    expiry_handle: EventHandle | None = None

    @property
    def has_free_slot(self) -> bool:
        return self.in_flight < self.concurrency_limit


class Cluster:
    """Owned exclusively by one engine; all mutation happens in event handlers."""

    def __init__(self, engine: Engine, nodes: int, cores_per_node: int,
                 memory_mb_per_node: int, cost_model: CostModel):
        self.engine = engine
        self.cost_model = cost_model
        self.nodes = [Node(i, cores_per_node, memory_mb_per_node) for i in range(nodes)]
        self.instances: dict[int, Instance] = {}
        self.instances_by_fn: dict[str, dict[int, Instance]] = {}
        self.creations = 0
        self.teardowns = 0
        self.master_overhead_cpu_ms = 0.0
        self._master_last_ms = 0
        self._next_instance_id = 1
        # cluster-wide running totals and their exact time integrals
        self.live_memory_mb = 0
        self.busy_memory_mb = 0
        self.live_count = 0
        self.live_memory_integral = 0.0  # MB * ms
        self.busy_memory_integral = 0.0
        self.live_count_integral = 0.0  # instances * ms
        self._integral_last_ms = 0
        # wiring points set by the router/policy layer
        self.on_instance_ready = lambda instance: None
        self.on_teardown = lambda now: None

    # -- accounting ---------------------------------------------------------

    def _advance_integrals(self, now: int) -> None:
        if now > self._integral_last_ms:
            dt = now - self._integral_last_ms
            self.live_memory_integral += self.live_memory_mb * dt
            self.busy_memory_integral += self.busy_memory_mb * dt
            self.live_count_integral += self.live_count * dt
            self._integral_last_ms = now

    def _advance_master(self, now: int) -> None:
        if now > self._master_last_ms:
            rate = self.cost_model.master_background_cpu_ms_per_s
            if rate > 0:
                self.master_overhead_cpu_ms += rate * (now - self._master_last_ms) / 1000.0
            self._master_last_ms = now

    def sync_accounting(self, now: int) -> None:
        """Bring every lazy accumulator up to `now` (snapshot points)."""
        self._advance_integrals(now)
        self._advance_master(now)
        for node in self.nodes:
            node.advance(now, self.cost_model.idle_background_cpu_ms_per_s)

    @property
    def function_work_cpu_ms(self) -> float:
        return sum(n.function_work_cpu_ms for n in self.nodes)

    @property
    def worker_overhead_cpu_ms(self) -> float:
        return sum(n.worker_overhead_cpu_ms for n in self.nodes)

    # -- lifecycle ----------------------------------------------------------

    def start_instance(self, function_id: str, memory_mb: int, now: int,
                       concurrency_limit: int = 1) -> Instance:
        """Reserve memory on the most-free node and begin booting an instance."""
        node = max(self.nodes, key=lambda n: (n.free_memory_mb, -n.node_id))
        if node.free_memory_mb < memory_mb:
            raise ClusterOutOfMemory(
                f"no node has {memory_mb}MB free for {function_id}")
        self._advance_integrals(now)
        node.advance(now, self.cost_model.idle_background_cpu_ms_per_s)
        self._advance_master(now)

        instance = Instance(
            instance_id=self._next_instance_id, function_id=function_id,
            node_id=node.node_id, memory_mb=memory_mb,
            concurrency_limit=concurrency_limit, created_at_ms=now)
        self._next_instance_id += 1
        node.reserved_memory_mb += memory_mb
        assert 0 <= node.reserved_memory_mb <= node.memory_capacity_mb
        node.live_instances += 1
        node.worker_overhead_cpu_ms += self.cost_model.cpu_create_worker_ms
        self.master_overhead_cpu_ms += self.cost_model.cpu_master_per_lifecycle_ms
        self.creations += 1
        self.live_memory_mb += memory_mb
        self.live_count += 1
        self.instances[instance.instance_id] = instance
        self.instances_by_fn.setdefault(function_id, {})[instance.instance_id] = instance

        delay = max(0, round(self.cost_model.creation_delay_ms.sample(
            self.engine.stream("creation-delay"))))
        instance.ready_handle = self.engine.schedule(
            now + delay, EventKind.INSTANCE_READY,
            f"inst={instance.instance_id} fn={function_id}",
            lambda: self._handle_ready(instance))
        return instance

    def _handle_ready(self, instance: Instance) -> None:
        assert instance.state is InstanceState.CREATING
        now = self.engine.now
        instance.state = InstanceState.IDLE
        instance.ready_at_ms = now
        instance.idle_since_ms = now
        instance.ready_handle = None
        self.on_instance_ready(instance)

    def terminate_instance(self, instance: Instance, now: int) -> None:
        """Tear down an Idle instance, or abort one still Creating."""
        if instance.state not in (InstanceState.IDLE, InstanceState.CREATING):
            raise TerminateBusyInstance(
                f"instance {instance.instance_id} is {instance.state.value}")
        if instance.ready_handle is not None:  # abort: creation never completes
            instance.ready_handle.cancel()
            instance.ready_handle = None
        if instance.expiry_handle is not None:
            instance.expiry_handle.cancel()
            instance.expiry_handle = None
        node = self.nodes[instance.node_id]
        self._advance_integrals(now)
        node.advance(now, self.cost_model.idle_background_cpu_ms_per_s)
        self._advance_master(now)

        instance.state = InstanceState.TERMINATING
        node.reserved_memory_mb -= instance.memory_mb
        assert 0 <= node.reserved_memory_mb <= node.memory_capacity_mb
        node.live_instances -= 1
        node.worker_overhead_cpu_ms += self.cost_model.cpu_teardown_worker_ms
        self.master_overhead_cpu_ms += self.cost_model.cpu_master_per_lifecycle_ms
        self.teardowns += 1
        self.live_memory_mb -= instance.memory_mb
        self.live_count -= 1
        del self.instances[instance.instance_id]
        del self.instances_by_fn[instance.function_id][instance.instance_id]
        self.on_teardown(now)

    # -- execution ----------------------------------------------------------

    def begin_execution(self, instance: Instance, duration_ms: int, now: int,
                        dispatch_ms: int, subject: str, on_complete) -> EventHandle:
        """Occupy one concurrency slot now; execution runs [dispatch_ms,
        dispatch_ms + duration_ms] where dispatch_ms >= now carries the
        frontend overhead. Only duration_ms is booked as function work."""
        if instance.state not in (InstanceState.IDLE, InstanceState.BUSY):
            raise IllegalTransition(
                f"cannot execute on {instance.state.value} instance {instance.instance_id}")
        if not instance.has_free_slot:
            raise ConcurrencyExceeded(
                f"instance {instance.instance_id} at concurrency limit "
                f"{instance.concurrency_limit}")
        assert dispatch_ms >= now
        if instance.state is InstanceState.IDLE:
            self._advance_integrals(now)
            instance.state = InstanceState.BUSY
            instance.idle_since_ms = None
            self.busy_memory_mb += instance.memory_mb
        instance.in_flight += 1
        assert instance.in_flight <= instance.concurrency_limit
        self.nodes[instance.node_id].running_requests += 1

        def fire() -> None:
            self._finish_execution(instance, duration_ms, self.engine.now)
            on_complete()

        return self.engine.schedule(dispatch_ms + duration_ms,
                                    EventKind.REQUEST_COMPLETE, subject, fire)

    def _finish_execution(self, instance: Instance, duration_ms: int, now: int) -> None:
        assert instance.state is InstanceState.BUSY and instance.in_flight >= 1
        node = self.nodes[instance.node_id]
        instance.in_flight -= 1
        node.running_requests -= 1
        node.function_work_cpu_ms += duration_ms
        if instance.in_flight == 0:
            self._advance_integrals(now)
            instance.state = InstanceState.IDLE
            instance.idle_since_ms = now
            self.busy_memory_mb -= instance.memory_mb

    # -- inspection ---------------------------------------------------------

    def live_instances_of(self, function_id: str) -> list[Instance]:
        return list(self.instances_by_fn.get(function_id, {}).values())

    def snapshot_usage(self, now: int) -> dict:
        self.sync_accounting(now)
        return {
            "total_instance_memory_mb": self.live_memory_mb,
            "busy_instance_memory_mb": self.busy_memory_mb,
            "live_instances": self.live_count,
            "per_node": [
                {"node_id": n.node_id,
                 "reserved_memory_mb": n.reserved_memory_mb,
                 "memory_utilization": n.reserved_memory_mb / n.memory_capacity_mb,
                 "running_requests": n.running_requests}
                for n in self.nodes
            ],
        }
