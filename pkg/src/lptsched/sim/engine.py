"""Deterministic discrete-event simulator.

Events are ordered by (virtual time, insertion sequence).  The scheduling
round is itself an event that recurs every ``tick_interval`` seconds while
there is anything left to schedule or reclaim.
"""
from __future__ import annotations

import collections
import heapq
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..core import Job, JobState, LptError, ModelSpec, SimConfig, job_slo_from_trace, predict_time
from ..scheduler import (
    ColdPool,
    WarmPool,
    allocate_cold,
    allocate_warm,
    by_remaining_slo,
    delay_schedulable,
    min_feasible_gpus,
    never_delay,
    reclaim_idle,
    route_to_bank,
)
from .ita import ModelBank, build_bank
from .report import JobOutcome, RunReport, account_cost
from .trace import Trace

POLICIES = ("prompttuner", "infless_like", "elasticflow_like")

ARRIVAL, READY, BANK_DONE, COMPLETION, TICK = "arrival", "ready", "bank_done", "completion", "tick"

# slack for float round-off when comparing finish times against deadlines
EPS = 1e-6


class InvariantBreach(LptError, RuntimeError):
    def __init__(self, msg: str, event_log: list[str]):
        super().__init__(msg)
        self.event_log = event_log


@dataclass
class Launch:
    job: Job
    warm: int
    cold: int
    ready: float

    @property
    def gpus(self) -> int:
        return self.warm + self.cold


@dataclass
class Running:
    job: Job
    gpus: int
    start: float
    finish: float
    pool: str


@dataclass
class Simulator:
    trace: Trace
    cfg: SimConfig
    policy: str = "prompttuner"
    observer: Callable[["Simulator"], None] | None = None
    check_invariants: bool = True

    now: float = 0.0
    events_processed: int = 0
    _heap: list = field(default_factory=list)
    _seq: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise LptError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        names = {m.name for m in self.cfg.models}
        for r in self.trace.records:
            if r.model not in names:
                raise LptError(f"trace references unknown model {r.model!r}")
        self.cold = ColdPool(self.cfg.total_gpus, dict(self.cfg.cold_transition_overrides), self.cfg.cold_transition_time)
        if self.policy == "elasticflow_like":
            # one statically provisioned cluster; any GPU can load any model
            shared = WarmPool(ModelSpec("cluster"))
            shared.add_free(self.cfg.total_gpus, 0.0)
            self.cold.size = 0
            self.pools = {"cluster": shared}
        else:
            self.pools = {m.name: WarmPool(m) for m in self.cfg.models}
        self.banks: dict[str, ModelBank] = {
            m.name: build_bank(m, self.cfg.bank, i) for i, m in enumerate(self.cfg.models)
        }
        self.pending: dict[str, list[Job]] = {m.name: [] for m in self.cfg.models}
        self.launches: dict[int, Launch] = {}
        self.running: dict[int, Running] = {}
        self.outcomes: dict[int, JobOutcome] = {}
        self.series: list[tuple[float, str, int, int]] = []
        self._last_row: dict[str, tuple[int, int]] = {}
        self._log: collections.deque[str] = collections.deque(maxlen=2000)
        self._tick_scheduled = False
        self.cold_added = 0  # GPUs moved cold -> warm over the run
        self._max_gpus = self.cfg.total_gpus
        self._dispatch = {
            ARRIVAL: self._on_arrival,
            READY: self._on_ready,
            BANK_DONE: self._on_bank_done,
            COMPLETION: self._on_completion,
            TICK: self._on_tick,
        }

    # -- event queue -----------------------------------------------------

    def _push(self, t: float, kind: str, payload=None) -> None:
        heapq.heappush(self._heap, (t, self._seq, kind, payload))
        self._seq += 1

    def _schedule_tick(self, k: int) -> None:
        self._push(k * self.cfg.tick_interval, TICK, k)
        self._tick_scheduled = True

    def _next_tick_index(self) -> int:
        return math.ceil(self.now / self.cfg.tick_interval - 1e-9)

    def run(self) -> RunReport:
        for i, rec in enumerate(self.trace.records):
            self._push(rec.submit_time, ARRIVAL, (i, rec))
        self._record_series(force=True)
        while self._heap:
            t, _, kind, payload = heapq.heappop(self._heap)
            if t < self.now - 1e-12:
                self._breach(f"event {kind} at {t} precedes clock {self.now}")
            self.now = t
            self._dispatch[kind](payload)
            self.events_processed += 1
            self._record_series()
            if self.check_invariants:
                self._check()
            if self.observer is not None:
                self.observer(self)
        return self._report()

    # -- handlers --------------------------------------------------------

    def _on_arrival(self, payload) -> None:
        i, rec = payload
        job = self._make_job(i, rec)
        self._log.append(f"{self.now:.6f} arrival job={i} model={rec.model} slo={job.slo:.3f}")
        self.pending[rec.model].append(job)
        if not self._tick_scheduled:
            self._schedule_tick(self._next_tick_index())

    def _on_ready(self, job_id: int) -> None:
        launch = self.launches.pop(job_id)
        pool = self._pool_of(launch.job)
        pool.reserved -= launch.warm
        pool.warming -= launch.cold
        self._start(launch.job, launch.gpus)

    def _on_bank_done(self, job_id: int) -> None:
        self.running[job_id].job.advance(JobState.RUNNING)

    def _on_completion(self, job_id: int) -> None:
        run = self.running.pop(job_id)
        pool = self.pools[run.pool]
        pool.busy -= run.gpus
        pool.add_free(run.gpus, self.now)
        out = self.outcomes[job_id]
        out.finish = self.now
        late = self.now > run.job.deadline + EPS
        out.violated = late
        run.job.advance(JobState.VIOLATED if late else JobState.DONE)
        self._log.append(f"{self.now:.6f} completion job={job_id} late={late}")

    def _on_tick(self, k: int) -> None:
        self._tick_scheduled = False
        self._expire_pending()
        if self.policy == "prompttuner":
            if self.cfg.warm_allocator:
                self._gang_round()
            else:
                self._piecemeal_round()
        elif self.policy == "infless_like":
            self._piecemeal_round()
        else:
            self._static_round()
        if self.policy != "elasticflow_like":
            removed = reclaim_idle(self.pools, self.now, self.cfg.reclaim_window)
            n = sum(removed.values())
            if n:
                self.cold.size += n
                self._log.append(f"{self.now:.6f} reclaim {removed}")
        if self._active():
            self._schedule_tick(k + 1)

    def _active(self) -> bool:
        if self.launches or self.running or any(self.pending.values()):
            return True
        return self.policy != "elasticflow_like" and any(p.free for p in self.pools.values())

    # -- job construction ------------------------------------------------

    def _make_job(self, i: int, rec) -> Job:
        model = self.cfg.model(rec.model)
        bank = self.banks[rec.model]
        base_iters = max(1, round(rec.gpu_time / model.iter_time))
        rng = np.random.default_rng([self.cfg.rng_seed, i, 17])
        m_default = bank.random_prompt_multiplier(rec.task_id, rng)
        choice = bank.choose(rec.task_id)
        slo = job_slo_from_trace(rec.duration, self.trace.S, self.cfg.slo_alloc_overhead)
        iters = {
            m_default: math.ceil(base_iters * m_default),
            choice.multiplier: math.ceil(base_iters * choice.multiplier),
        }
        job = Job(
            i, model, rec.submit_time, iters, iters[m_default], model.iter_time, slo,
            task_id=rec.task_id, requested_gpus=rec.gpus,
        )
        if self._wants_bank(job, bank):
            job.remaining_iters = iters[choice.multiplier]
            job.setup_time = choice.evals * model.bank_eval_cost
            mult = choice.multiplier
        else:
            mult = m_default
        self.outcomes[i] = JobOutcome(
            id=i,
            model=rec.model,
            task_id=rec.task_id,
            arrival=rec.submit_time,
            deadline=job.deadline,
            bank_used=job.setup_time > 0,
            multiplier=mult,
        )
        return job

    def _wants_bank(self, job: Job, bank: ModelBank) -> bool:
        if self.policy == "prompttuner" and self.cfg.latency_budget:
            return route_to_bank(job, bank.latency_estimate(), self.cfg)
        return True

    # -- scheduling rounds ----------------------------------------------

    def _expire_pending(self) -> None:
        if self.policy == "infless_like":
            # serving systems run every request, late or not
            return
        for name, jobs in self.pending.items():
            keep = []
            for job in jobs:
                top = self._max_gpus - self._max_gpus % job.model.gpus_per_replica
                budget = job.remaining_slo(self.now)
                hopeless = top < job.model.gpus_per_replica or predict_time(job, top, False, self.cfg) > budget
                if budget <= 0 or hopeless:
                    job.advance(JobState.VIOLATED)
                    self.outcomes[job.id].violated = True
                    self._log.append(f"{self.now:.6f} violated job={job.id} (not started)")
                else:
                    keep.append(job)
            self.pending[name] = keep

    def _gang_round(self) -> None:
        for name, pool in self.pools.items():
            jobs = self.pending[name]
            if not jobs or not pool.free:
                continue
            plan = allocate_warm(pool, jobs, self.now, self.cfg)
            started = set()
            for job in by_remaining_slo(jobs, self.now):
                a = plan.allocations[job.id]
                if a:
                    pool.take_free(a)
                    self._start(job, a)
                    started.add(job.id)
            self.pending[name] = [j for j in jobs if j.id not in started]
        waiting = [j for jobs in self.pending.values() for j in jobs]
        if not waiting:
            return
        for name, pool in self.pools.items():
            pool.earliest_avail = self._earliest_avail(name)
        delay_fn = delay_schedulable if self.cfg.delay_schedulable else never_delay
        free = {name: p.free for name, p in self.pools.items()}
        plan = allocate_cold(self.cold, self.pools, waiting, self.now, self.cfg, free, delay_fn)
        for job in by_remaining_slo(waiting, self.now):
            a = plan.allocations.get(job.id, 0)
            if a:
                warm = plan.warm_topups[job.id]
                self._launch(job, warm, a - warm, plan.start_times[job.id])

    def _piecemeal_round(self) -> None:
        """Assemble each job's GPUs instance by instance, without a gang guarantee.

        Free warm instances are used first; the rest are launched from the
        cold pool, each with its own readiness delay.  Sizing ignores those
        delays, so the job starts when its slowest instance is ready.  Under
        ``infless_like`` a job that cannot meet its deadline still runs, at its
        requested size, once that many instances can be found.
        """
        waiting = [j for jobs in self.pending.values() for j in jobs]
        lo, hi = self.cfg.instance_init_delay
        best_effort = self.policy == "infless_like"
        for job in by_remaining_slo(waiting, self.now):
            pool = self._pool_of(job)
            room = pool.free + self.cold.size
            a = min_feasible_gpus(job, room, job.remaining_slo(self.now), self.cfg)
            if not a and best_effort:
                g = job.model.gpus_per_replica
                want = max(g, job.requested_gpus - job.requested_gpus % g)
                a = want if want <= room else 0
            if not a:
                continue
            warm = min(pool.free, a)
            cold = a - warm
            if cold == 0:
                pool.take_free(a)
                self._remove_pending(job)
                self._start(job, a)
                continue
            rng = np.random.default_rng([self.cfg.rng_seed, job.id, 29])
            delay = float(rng.uniform(lo, hi, size=cold).max())
            self._launch(job, warm, cold, self.now + delay)

    def _static_round(self) -> None:
        pool = self.pools["cluster"]
        waiting = [j for jobs in self.pending.values() for j in jobs]
        for job in by_remaining_slo(waiting, self.now):
            if not pool.free:
                break
            load = self.cfg.t_cold(job.model)
            a = min_feasible_gpus(job, pool.free, job.remaining_slo(self.now) - load, self.cfg)
            if a:
                # every start reloads runtime and weights on the chosen GPUs
                self._launch(job, a, 0, self.now + load)

    # -- state transitions -------------------------------------------------

    def _pool_of(self, job: Job) -> WarmPool:
        if self.policy == "elasticflow_like":
            return self.pools["cluster"]
        return self.pools[job.model.name]

    def _remove_pending(self, job: Job) -> None:
        self.pending[job.model.name] = [j for j in self.pending[job.model.name] if j.id != job.id]

    def _launch(self, job: Job, warm: int, cold: int, ready: float) -> None:
        pool = self._pool_of(job)
        pool.take_free(warm)
        pool.reserved += warm
        if cold > self.cold.size:
            self._breach(f"job {job.id} wants {cold} cold GPUs, {self.cold.size} left")
        self.cold.size -= cold
        self.cold_added += cold
        pool.warming += cold
        self._remove_pending(job)
        self.launches[job.id] = Launch(job, warm, cold, ready)
        self.outcomes[job.id].admitted = True
        self._push(ready, READY, job.id)
        self._log.append(f"{self.now:.6f} launch job={job.id} warm={warm} cold={cold} ready={ready:.6f}")

    def _start(self, job: Job, gpus: int) -> None:
        pool = self._pool_of(job)
        pool.busy += gpus
        run_time = predict_time(job, gpus, False, self.cfg)
        finish = self.now + run_time
        self.running[job.id] = Running(job, gpus, self.now, finish, self._pool_key(job))
        out = self.outcomes[job.id]
        out.admitted = True
        out.start = self.now
        out.gpus = gpus
        if job.setup_time > 0:
            job.advance(JobState.IN_BANK)
            self._push(self.now + job.setup_time, BANK_DONE, job.id)
        else:
            job.advance(JobState.RUNNING)
        self._push(finish, COMPLETION, job.id)
        self._log.append(f"{self.now:.6f} start job={job.id} gpus={gpus} finish={finish:.6f}")

    def _pool_key(self, job: Job) -> str:
        return "cluster" if self.policy == "elasticflow_like" else job.model.name

    def _earliest_avail(self, name: str) -> list[float]:
        pool = self.pools[name]
        E = [self.now] * pool.free
        for r in self.running.values():
            if r.pool == name:
                E.extend([r.finish] * r.gpus)
        for l in self.launches.values():
            if l.job.model.name == name:
                E.extend([l.ready + predict_time(l.job, l.gpus, False, self.cfg)] * l.gpus)
        E.sort()
        return E

    # -- bookkeeping -------------------------------------------------------

    def provisioned_total(self) -> int:
        return sum(p.provisioned for p in self.pools.values())

    def _record_series(self, force: bool = False) -> None:
        for name, pool in self.pools.items():
            row = (pool.provisioned, pool.busy + pool.reserved + pool.warming)
            if force or self._last_row.get(name) != row:
                self._last_row[name] = row
                self.series.append((self.now, name, row[0], row[1]))

    def _check(self) -> None:
        total = self.cold.size + self.provisioned_total()
        if total != self.cfg.total_gpus:
            self._breach(f"GPU count drifted: cold={self.cold.size} warm={self.provisioned_total()}")
        for name, p in self.pools.items():
            if min(p.busy, p.reserved, p.warming, p.free) < 0:
                self._breach(f"negative GPU count in pool {name}")
        if self.cold.size < 0:
            self._breach("negative cold pool")

    def _breach(self, msg: str):
        self._log.append(f"{self.now:.6f} BREACH {msg}")
        raise InvariantBreach(msg, list(self._log))

    def _report(self) -> RunReport:
        horizon = self.now
        if self.policy == "elasticflow_like":
            horizon = max(horizon, self.trace.span)
            self.series.append((horizon, "cluster", self.cfg.total_gpus, 0))
        else:
            for name, pool in self.pools.items():
                self.series.append((horizon, name, pool.provisioned, 0))
        storage_gb_h = sum(
            self.cfg.cost.storage_gb_per_job * (o.finish - o.start) / 3600.0
            for o in self.outcomes.values()
            if o.finish is not None and o.start is not None
        )
        gpu_cost, storage_cost = account_cost(self.series, self.cfg.cost, storage_gb_h)
        jobs = [self.outcomes[i] for i in sorted(self.outcomes)]
        return RunReport(
            policy=self.policy,
            seed=self.cfg.rng_seed,
            config_hash=self.cfg.hash(),
            config=self.cfg.to_dict(),
            trace_meta={"seed": self.trace.seed, "S": self.trace.S, "label": self.trace.label, "jobs": len(self.trace)},
            jobs=jobs,
            series=list(self.series),
            horizon=horizon,
            gpu_cost=gpu_cost,
            storage_cost=storage_cost,
            events=self.events_processed,
            extra={"cold_gpus_added": self.cold_added},
        )

    def event_log(self) -> list[str]:
        return list(self._log)


def run(trace: Trace, cfg: SimConfig, policy: str = "prompttuner", **kw) -> RunReport:
    return Simulator(trace, cfg, policy, **kw).run()
