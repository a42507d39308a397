"""Front-door load balancer: routes arrivals to idle capacity, buffers per the
active policy's semantics (bound-to-instance for sync, FIFO-any-instance for
async), and timestamps the invocation lifecycle.

The frontend path cost (warm overhead) is drawn once per request at arrival
and added to the dispatch latency of every request, warm or cold.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .cluster import Cluster, Instance, InstanceState
from .engine import Engine
from .policies import PARKED


class BindingViolation(RuntimeError):
    pass


@dataclass
class PendingRequest:
    inv_index: int
    function_id: str
    duration_ms: int
    overhead_ms: int
    enqueued_at_ms: int
    binding: int | None = None  # instance id, sync only


class Router:
    def __init__(self, engine: Engine, cluster: Cluster, recorder,
                 container_concurrency: int = 1):
        self.engine = engine
        self.cluster = cluster
        self.recorder = recorder
        self.container_concurrency = container_concurrency
        self.policy = None  # wired by the simulation
        self.idle_pools: dict[str, list[Instance]] = {}  # most-recently-idle last
        self.queues: dict[str, deque[PendingRequest]] = {}
        self.total_queued = 0
        self.dispatched = 0
        cluster.on_instance_ready = self.on_instance_ready

    # -- arrival ------------------------------------------------------------

    def on_arrival(self, inv_index: int, function_id: str, duration_ms: int,
                   now: int) -> None:
        overhead = max(0, round(self.cluster.cost_model.warm_overhead_ms.sample(
            self.engine.stream("warm-overhead"))))
        self._route(PendingRequest(inv_index, function_id, duration_ms, overhead, now),
                    now)

    def retry_arrival(self, pending: PendingRequest, now: int) -> None:
        pending.enqueued_at_ms = now
        self._route(pending, now)

    def _route(self, pending: PendingRequest, now: int) -> None:
        fn = pending.function_id
        pool = self.idle_pools.get(fn)
        if pool:
            self._dispatch(pool.pop(), pending, now, cold=False)
            return
        if self.container_concurrency > 1:
            slot = self._busy_with_slot(fn)
            if slot is not None:
                self._dispatch(slot, pending, now, cold=False)
                return
        decision = self.policy.on_arrival_no_capacity(pending, now)
        if decision is PARKED:
            return  # sync, cluster full: re-attempted on the next teardown
        if decision is not None:
            pending.binding = decision.instance_id  # sync create-and-bind
        else:
            self.queues.setdefault(fn, deque()).append(pending)
            self.total_queued += 1

    def _busy_with_slot(self, fn: str) -> Instance | None:
        best = None
        for inst in self.cluster.instances_by_fn.get(fn, {}).values():
            if inst.state is InstanceState.BUSY and inst.has_free_slot:
                if best is None or (inst.in_flight, inst.instance_id) < (
                        best.in_flight, best.instance_id):
                    best = inst
        return best

    # -- instance events ----------------------------------------------------

    def on_instance_ready(self, instance: Instance) -> None:
        now = self.engine.now
        fn = instance.function_id
        if instance.bound_request is not None:  # sync: one-shot binding
            pending, instance.bound_request = instance.bound_request, None
            self._dispatch(instance, pending, now, cold=True)
            return
        if self.policy.is_sync:
            raise BindingViolation(
                f"sync instance {instance.instance_id} became ready without a binding")
        queue = self.queues.get(fn)
        dispatched = 0
        while queue and dispatched < instance.concurrency_limit:
            self._dispatch(instance, queue.popleft(), now, cold=True)
            self.total_queued -= 1
            dispatched += 1
        if dispatched == 0:
            self.idle_pools.setdefault(fn, []).append(instance)

    def _on_completion(self, instance: Instance, pending: PendingRequest) -> None:
        now = self.engine.now
        self.recorder.record_completion(pending.inv_index, now)
        if not self.policy.is_sync:
            queue = self.queues.get(instance.function_id)
            if queue:
                # freed slot is work-conserving: head dispatches at this timestamp
                self._dispatch(instance, queue.popleft(), now, cold=False)
                self.total_queued -= 1
                return
        if instance.state is InstanceState.IDLE:
            self.idle_pools.setdefault(instance.function_id, []).append(instance)
            self.policy.on_instance_idle(instance, now)

    # -- dispatch -----------------------------------------------------------

    def _dispatch(self, instance: Instance, pending: PendingRequest, now: int,
                  cold: bool) -> None:
        if instance.expiry_handle is not None:  # reuse resets the keepalive timer
            instance.expiry_handle.cancel()
            instance.expiry_handle = None
        dispatch_ms = now + pending.overhead_ms
        self.recorder.record_dispatch(pending.inv_index, dispatch_ms, cold)
        self.dispatched += 1
        subject = (f"inst={instance.instance_id} fn={instance.function_id} "
                   f"inv={pending.inv_index}")
        self.cluster.begin_execution(
            instance, pending.duration_ms, now, dispatch_ms, subject,
            lambda: self._on_completion(instance, pending))

    # -- policy support -----------------------------------------------------

    def concurrency(self, fn: str) -> int:
        """Observed load: in-flight executing plus queued requests."""
        executing = sum(i.in_flight
                        for i in self.cluster.instances_by_fn.get(fn, {}).values())
        return executing + self.queue_len(fn)

    def queue_len(self, fn: str) -> int:
        queue = self.queues.get(fn)
        return len(queue) if queue else 0

    def discard_idle(self, instance: Instance) -> None:
        pool = self.idle_pools.get(instance.function_id)
        if pool and instance in pool:
            pool.remove(instance)
