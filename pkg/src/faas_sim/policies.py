"""Autoscaling policies: synchronous fixed-keepalive and asynchronous
window-averaged concurrency, behind one interface consumed by the router.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .cluster import Cluster, ClusterOutOfMemory, Instance, InstanceState
from .engine import Engine, EventKind

SYNC_KEEPALIVE = "sync-keepalive"
ASYNC_WINDOW = "async-window"

# floating-point slack so that e.g. 3.5 / 0.7 rounds to exactly 5 instances
_CEIL_EPS = 1e-9

# sentinel returned by the sync policy when a request must wait out a full
# cluster (re-attempted on the next teardown, not FIFO-queued)
PARKED = object()


@dataclass(frozen=True)
class PolicyConfig:
    variant: str
    keepalive_ms: int | None = None  # sync
    window_ms: int | None = None  # async
    utilization_target: float | None = None
    container_concurrency: int | None = None
    evaluation_period_ms: int = 2000
    sample_period_ms: int = 1000

    def __post_init__(self) -> None:
        if self.variant == SYNC_KEEPALIVE:
            if not self.keepalive_ms or self.keepalive_ms <= 0:
                raise ValueError("sync-keepalive requires keepalive_ms > 0")
            for name in ("window_ms", "utilization_target", "container_concurrency"):
                if getattr(self, name) is not None:
                    raise ValueError(f"{name} is not a sync-keepalive parameter")
        elif self.variant == ASYNC_WINDOW:
            if self.keepalive_ms is not None:
                raise ValueError("keepalive_ms is not an async-window parameter")
            if not self.window_ms or self.window_ms < self.sample_period_ms:
                raise ValueError("async-window requires window_ms >= sample_period_ms")
            if self.window_ms % self.sample_period_ms != 0:
                raise ValueError("window_ms must be a multiple of sample_period_ms")
            if not self.utilization_target or not (0 < self.utilization_target <= 1):
                raise ValueError("utilization_target must be in (0, 1]")
            if not self.container_concurrency or self.container_concurrency < 1:
                raise ValueError("container_concurrency must be >= 1")
            if self.evaluation_period_ms <= 0 or self.sample_period_ms <= 0:
                raise ValueError("evaluation and sample periods must be > 0")
        else:
            raise ValueError(f"unknown policy variant {self.variant!r}")

    def to_dict(self) -> dict:
        d = {"variant": self.variant}
        if self.variant == SYNC_KEEPALIVE:
            d["keepalive_ms"] = self.keepalive_ms
        else:
            d.update(window_ms=self.window_ms,
                     utilization_target=self.utilization_target,
                     container_concurrency=self.container_concurrency,
                     evaluation_period_ms=self.evaluation_period_ms,
                     sample_period_ms=self.sample_period_ms)
        return d


def desired_instances(window_avg: float, utilization_target: float,
                      container_concurrency: int) -> int:
    """ceil(window_avg / (U * CC)); 0 when the window average is 0 (scale-to-zero)."""
    if window_avg <= 0:
        return 0
    return max(1, math.ceil(window_avg / (utilization_target * container_concurrency)
                            - _CEIL_EPS))


class ConcurrencyWindow:
    """Ring buffer of per-function concurrency samples with an O(1) average."""

    def __init__(self, capacity: int):
        assert capacity >= 1
        self.capacity = capacity
        self._samples: deque[tuple[int, float]] = deque()
        self._sum = 0.0

    def push(self, timestamp_ms: int, concurrency: float) -> None:
        if len(self._samples) == self.capacity:
            _, old = self._samples.popleft()
            self._sum -= old
        self._samples.append((timestamp_ms, concurrency))
        self._sum += concurrency

    def average(self) -> float:
        """Average over the samples present (zero when empty)."""
        if not self._samples:
            return 0.0
        return self._sum / len(self._samples)

    def __len__(self) -> int:
        return len(self._samples)


class SyncKeepalivePolicy:
    """Instance creation on the critical path; idle instances reaped after a
    fixed keepalive period of inactivity."""

    is_sync = True

    def __init__(self, config: PolicyConfig, engine: Engine, cluster: Cluster,
                 memory_by_fn: dict[str, int]):
        self.keepalive_ms = config.keepalive_ms
        self.engine = engine
        self.cluster = cluster
        self.memory_by_fn = memory_by_fn
        self.router = None  # wired by the simulation
        self._parked: deque = deque()  # requests waiting out a full cluster
        cluster.on_teardown = self._on_teardown

    def on_arrival_no_capacity(self, pending, now: int):
        """Create-and-bind; returns PARKED when the cluster is out of memory
        (the request then waits for the next teardown)."""
        try:
            instance = self.cluster.start_instance(
                pending.function_id, self.memory_by_fn[pending.function_id], now,
                concurrency_limit=1)
        except ClusterOutOfMemory:
            self._parked.append(pending)
            return PARKED
        instance.bound_request = pending
        return instance

    def on_instance_idle(self, instance: Instance, now: int) -> None:
        if instance.expiry_handle is not None:
            instance.expiry_handle.cancel()
        stamp = now
        instance.expiry_handle = self.engine.schedule(
            now + self.keepalive_ms, EventKind.IDLE_EXPIRY,
            f"inst={instance.instance_id} fn={instance.function_id}",
            lambda: self._expire(instance, stamp))

    def _expire(self, instance: Instance, idle_stamp: int) -> None:
        instance.expiry_handle = None
        if instance.state is InstanceState.IDLE and instance.idle_since_ms == idle_stamp:
            self.router.discard_idle(instance)
            self.cluster.terminate_instance(instance, self.engine.now)

    def _on_teardown(self, now: int) -> None:
        # re-attempt parked requests in arrival order; they may re-park
        parked, self._parked = self._parked, deque()
        for pending in parked:
            self.router.retry_arrival(pending, now)

    def parked_count(self) -> int:
        return len(self._parked)

    def setup(self, end_ms: int) -> None:
        pass


class AsyncWindowPolicy:
    """Window-averaged concurrency scaling off the critical path: a sampler
    records queued+executing concurrency per function, an evaluator sizes each
    function to ceil(windowAvg / (U * CC)) and retires the surplus."""

    is_sync = False

    def __init__(self, config: PolicyConfig, engine: Engine, cluster: Cluster,
                 memory_by_fn: dict[str, int], function_ids: tuple[str, ...]):
        self.config = config
        self.engine = engine
        self.cluster = cluster
        self.memory_by_fn = memory_by_fn
        self.function_ids = function_ids
        self.router = None
        capacity = config.window_ms // config.sample_period_ms
        self.windows = {fn: ConcurrencyWindow(capacity) for fn in function_ids}
        self._end_ms = 0

    def setup(self, end_ms: int) -> None:
        self._end_ms = end_ms
        self.engine.schedule(self.config.sample_period_ms, EventKind.CONCURRENCY_SAMPLE,
                             "sampler", self._sample)
        self.engine.schedule(self.config.evaluation_period_ms, EventKind.SCALE_EVALUATION,
                             "autoscaler", self._evaluate)

    def on_arrival_no_capacity(self, pending, now: int) -> Instance | None:
        return None  # requests queue until any instance becomes available

    def on_instance_idle(self, instance: Instance, now: int) -> None:
        pass  # retirement happens at evaluation time only

    def _keep_running(self) -> bool:
        # periodic events stop once the trace is exhausted and no request waits
        return self.engine.now < self._end_ms or self.router.total_queued > 0

    def _sample(self) -> None:
        now = self.engine.now
        for fn in self.function_ids:
            self.windows[fn].push(now, self.router.concurrency(fn))
        if self._keep_running():
            self.engine.schedule(now + self.config.sample_period_ms,
                                 EventKind.CONCURRENCY_SAMPLE, "sampler", self._sample)

    def _evaluate(self) -> None:
        now = self.engine.now
        cfg = self.config
        for fn in self.function_ids:
            desired = desired_instances(self.windows[fn].average(),
                                        cfg.utilization_target, cfg.container_concurrency)
            live = self.cluster.live_instances_of(fn)
            if desired > len(live):
                try:
                    for _ in range(desired - len(live)):
                        self.cluster.start_instance(
                            fn, self.memory_by_fn[fn], now,
                            concurrency_limit=cfg.container_concurrency)
                except ClusterOutOfMemory:
                    pass  # deficit carries over to the next evaluation
            elif desired < len(live):
                self._retire(fn, live, len(live) - desired, now)
        if self._keep_running():
            self.engine.schedule(now + cfg.evaluation_period_ms,
                                 EventKind.SCALE_EVALUATION, "autoscaler", self._evaluate)

    def _retire(self, fn: str, live: list[Instance], surplus: int, now: int) -> None:
        idle = sorted((i for i in live if i.state is InstanceState.IDLE),
                      key=lambda i: (i.idle_since_ms, i.instance_id))
        victims = idle[:surplus]
        if len(victims) < surplus and self.router.queue_len(fn) == 0:
            # creations with no queued demand may be aborted, newest first
            creating = sorted((i for i in live if i.state is InstanceState.CREATING),
                              key=lambda i: (-i.created_at_ms, -i.instance_id))
            victims += creating[:surplus - len(victims)]
        for instance in victims:
            self.router.discard_idle(instance)
            self.cluster.terminate_instance(instance, now)


def build_policy(config: PolicyConfig, engine: Engine, cluster: Cluster,
                 memory_by_fn: dict[str, int], function_ids: tuple[str, ...]):
    if config.variant == SYNC_KEEPALIVE:
        return SyncKeepalivePolicy(config, engine, cluster, memory_by_fn)
    return AsyncWindowPolicy(config, engine, cluster, memory_by_fn, function_ids)
