"""Warm/cold GPU pool allocation.

The allocators are pure decisions: they read pool state and pending jobs and
return a plan.  The caller (normally the simulator's event loop) applies it.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .core import Job, ModelSpec, SimConfig, predict_time


@dataclass
class WarmPool:
    """GPUs holding a pre-loaded runtime for one model.

    ``idle_since`` has one entry per free GPU.  ``reserved`` GPUs are free
    but promised to a job waiting on cold additions; ``warming`` GPUs are in
    transition from the cold pool.
    """

    model: ModelSpec
    idle_since: list[float] = field(default_factory=list)
    busy: int = 0
    reserved: int = 0
    warming: int = 0
    earliest_avail: list[float] = field(default_factory=list)

    @property
    def free(self) -> int:
        return len(self.idle_since)

    @property
    def provisioned(self) -> int:
        return self.free + self.busy + self.reserved + self.warming

    def add_free(self, n: int, now: float) -> None:
        self.idle_since.extend([now] * n)

    def take_free(self, n: int) -> None:
        # most recently idle first, so long-idle GPUs age out and get reclaimed
        if n > self.free:
            raise ValueError(f"{self.model.name}: want {n} free GPUs, have {self.free}")
        self.idle_since.sort()
        del self.idle_since[len(self.idle_since) - n:]


@dataclass
class ColdPool:
    size: int
    transition_time: Mapping[str, float] = field(default_factory=dict)
    default_transition: float = 30.0

    def t_cold(self, model: str) -> float:
        return self.transition_time.get(model, self.default_transition)


@dataclass
class AllocationPlan:
    allocations: dict[int, int] = field(default_factory=dict)  # job id -> A_i (0: stays pending)
    cold_additions: dict[str, int] = field(default_factory=dict)  # model -> B_l
    warm_topups: dict[int, int] = field(default_factory=dict)  # job id -> free warm GPUs combined with cold ones
    start_times: dict[int, float] = field(default_factory=dict)
    delayed: list[int] = field(default_factory=list)
    earliest_avail: dict[str, list[float]] = field(default_factory=dict)

    def started(self) -> list[int]:
        return [j for j, a in self.allocations.items() if a > 0]


def by_remaining_slo(jobs: Iterable[Job], now: float) -> list[Job]:
    return sorted(jobs, key=lambda j: (j.remaining_slo(now), j.id))


def min_feasible_gpus(
    job: Job, limit: int, budget: float, cfg: SimConfig, include_cold: bool = False
) -> int:
    """Smallest replica multiple ``a <= limit`` with predict_time <= budget, else 0."""
    g = job.model.gpus_per_replica
    a = g
    while a <= limit:
        if predict_time(job, a, include_cold, cfg) <= budget:
            return a
        a += g
    return 0


def allocate_warm(pool: WarmPool, pending: Sequence[Job], now: float, cfg: SimConfig) -> AllocationPlan:
    """Deadline-ordered gang allocation from one model's warm pool."""
    plan = AllocationPlan()
    free = pool.free
    for job in by_remaining_slo(pending, now):
        a = min_feasible_gpus(job, free, job.remaining_slo(now), cfg)
        plan.allocations[job.id] = a
        if a:
            free -= a
            plan.start_times[job.id] = now
    return plan


def delay_schedulable(E_l: list[float], job: Job, now: float, cfg: SimConfig) -> bool:
    """Can ``job`` meet its deadline by waiting for GPUs that will free up?

    ``E_l[k-1]`` is the time by which ``k`` GPUs of the pool are available.
    On success the first ``k`` entries are overwritten with the job's
    projected finish time; on failure ``E_l`` is left untouched.
    """
    E_l.sort()
    g = job.model.gpus_per_replica
    budget = job.remaining_slo(now)
    for k in range(g, len(E_l) + 1, g):
        t_k = E_l[k - 1]
        run = predict_time(job, k, False, cfg)
        if run - now + t_k <= budget:
            finish = t_k + run
            E_l[:k] = [finish] * k
            E_l.sort()
            return True
    return False


def never_delay(E_l, job, now, cfg) -> bool:
    return False


def allocate_cold(
    cold: ColdPool,
    pools: Mapping[str, WarmPool],
    pending: Sequence[Job],
    now: float,
    cfg: SimConfig,
    warm_free: Mapping[str, int] | None = None,
    delay_fn: Callable[[list[float], Job, float, SimConfig], bool] = delay_schedulable,
) -> AllocationPlan:
    """Decide how many cold GPUs each warm pool receives this round.

    ``warm_free`` is the per-model count of free warm GPUs left over after the
    warm pass; a job may combine those with cold additions.  Jobs served this
    way start once the cold GPUs are warm.
    """
    plan = AllocationPlan()
    E = {name: sorted(p.earliest_avail) for name, p in pools.items()}
    leftover = dict(warm_free) if warm_free is not None else {n: 0 for n in pools}
    remaining_cold = cold.size
    for job in by_remaining_slo(pending, now):
        name = job.model.name
        if delay_fn(E[name], job, now, cfg):
            plan.delayed.append(job.id)
            continue
        t_cold = cold.t_cold(name)
        spare = leftover.get(name, 0)
        # latest start that still meets the deadline is bounded by the transition
        a = min_feasible_gpus(job, remaining_cold + spare, job.remaining_slo(now) - t_cold, cfg)
        if not a:
            plan.allocations[job.id] = 0
            continue
        warm_part = min(spare, a)
        cold_part = a - warm_part
        leftover[name] = spare - warm_part
        remaining_cold -= cold_part
        plan.allocations[job.id] = a
        plan.warm_topups[job.id] = warm_part
        plan.cold_additions[name] = plan.cold_additions.get(name, 0) + cold_part
        plan.start_times[job.id] = now + t_cold
        finish = now + t_cold + predict_time(job, a, False, cfg)
        for _ in range(a):
            bisect.insort(E[name], finish)
    plan.earliest_avail = E
    return plan


def reclaim_idle(pools: Mapping[str, WarmPool], now: float, window: float) -> dict[str, int]:
    """Drop free GPUs idle for at least ``window`` seconds; return counts per model."""
    if window <= 0:
        raise ValueError("window must be > 0")
    removed = {}
    for name, pool in pools.items():
        keep = [t for t in pool.idle_since if now - t < window]
        removed[name] = pool.free - len(keep)
        pool.idle_since = keep
    return removed


def route_to_bank(job: Job, bank_latency_estimate: float, cfg: SimConfig) -> bool:
    if bank_latency_estimate < 0:
        raise ValueError("bank latency estimate must be >= 0")
    return bank_latency_estimate <= cfg.latency_budget_fraction * job.slo
