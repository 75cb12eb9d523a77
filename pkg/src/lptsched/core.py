"""Domain types, configuration and the execution-time model.

Everything here is shared by the scheduler and the simulator.  Virtual time is
a float count of seconds; nothing in this module reads a wall clock.
"""
from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

# AWS p4de.24xlarge on-demand, 8 x A100-80GB per instance.
P4DE_HOURLY_PRICE = 40.96
P4DE_GPUS = 8


class LptError(Exception):
    """Base class for errors raised by this package."""


class InvalidGpuCount(LptError, ValueError):
    pass


class ConfigError(LptError, ValueError):
    pass


class InvalidTransition(LptError, RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    """One hosted LLM.

    ``iter_time`` is the seconds per tuning iteration on a single replica and
    ``bank_eval_cost`` the seconds one prompt score evaluation takes on it.
    """

    name: str
    gpus_per_replica: int = 1
    iter_time: float = 0.1
    bank_eval_cost: float = 0.053

    def __post_init__(self):
        if self.gpus_per_replica < 1:
            raise ConfigError(f"{self.name}: gpus_per_replica must be >= 1")
        if self.iter_time <= 0 or self.bank_eval_cost <= 0:
            raise ConfigError(f"{self.name}: iter_time and bank_eval_cost must be > 0")


class JobState(str, enum.Enum):
    PENDING = "pending"
    IN_BANK = "in_bank"
    RUNNING = "running"
    DONE = "done"
    VIOLATED = "violated"


_ALLOWED = {
    JobState.PENDING: {JobState.IN_BANK, JobState.RUNNING},
    JobState.IN_BANK: {JobState.RUNNING},
    JobState.RUNNING: {JobState.DONE},
    JobState.DONE: set(),
    JobState.VIOLATED: set(),
}


@dataclass(eq=False)
class Job:
    """A single prompt-tuning request.

    ``total_iters_by_prompt`` maps an ITA multiplier (1.0 is the ideal
    prompt) to the iteration count the job needs when started from a prompt
    of that quality.  ``setup_time`` is serial work executed before tuning
    (the prompt-bank phase) and is charged to the job's timeline.
    """

    id: int
    model: ModelSpec
    arrival_time: float
    total_iters_by_prompt: dict[float, int]
    remaining_iters: int
    iter_time_1gpu: float
    slo: float
    state: JobState = JobState.PENDING
    task_id: int = -1
    setup_time: float = 0.0
    requested_gpus: int = 1

    def __post_init__(self):
        if self.slo <= 0:
            raise ValueError(f"job {self.id}: slo must be > 0")
        if self.remaining_iters < 0:
            raise ValueError(f"job {self.id}: remaining_iters must be >= 0")
        if self.total_iters_by_prompt and self.remaining_iters > max(self.total_iters_by_prompt.values()):
            raise ValueError(f"job {self.id}: remaining_iters exceeds every prompt's iteration count")

    @property
    def deadline(self) -> float:
        return self.arrival_time + self.slo

    def remaining_slo(self, now: float) -> float:
        return self.deadline - now

    def advance(self, new: JobState) -> None:
        if new is JobState.VIOLATED and self.state is not JobState.DONE:
            self.state = new
            return
        if new not in _ALLOWED[self.state]:
            raise InvalidTransition(f"job {self.id}: {self.state.value} -> {new.value}")
        self.state = new


@dataclass(frozen=True)
class ExecTimeModel:
    # share of each iteration spent on gradient exchange
    comm_fraction: float = 0.005
    # reference only: measured allocation overhead share of total execution time
    alloc_overhead_fraction: float = 0.39

    def __post_init__(self):
        if not 0.0 <= self.comm_fraction <= 0.01:
            raise ConfigError("comm_fraction must lie in [0, 0.01]")


@dataclass(frozen=True)
class CostModel:
    gpu_price_per_hour: float = P4DE_HOURLY_PRICE / P4DE_GPUS
    storage_price_per_gb_hour: float = 0.0125
    storage_gb_per_job: float = 0.01

    def __post_init__(self):
        if min(self.gpu_price_per_hour, self.storage_price_per_gb_hour, self.storage_gb_per_job) < 0:
            raise ConfigError("prices must be >= 0")


@dataclass(frozen=True)
class BankConfig:
    clusters: int = 50
    capacity: int = 3000
    size: int = 2500
    eval_samples: int = 16
    dim: int = 64
    topics: int = 50
    noise: float = 0.05
    tasks_per_model: int = 120
    seed: int = 0

    def __post_init__(self):
        if min(self.clusters, self.size, self.eval_samples, self.dim, self.topics) < 1:
            raise ConfigError("bank clusters, size, eval_samples, dim and topics must be >= 1")
        if self.size > self.capacity:
            raise ConfigError(f"bank size {self.size} exceeds capacity {self.capacity}")
        if self.noise < 0:
            raise ConfigError("bank noise must be >= 0")


def default_models() -> tuple[ModelSpec, ...]:
    return (
        ModelSpec("gpt2-base", 1, iter_time=0.05, bank_eval_cost=0.053),
        ModelSpec("gpt2-large", 1, iter_time=0.1, bank_eval_cost=0.08),
        ModelSpec("vicuna-7b", 1, iter_time=0.2, bank_eval_cost=0.1),
    )


@dataclass(frozen=True)
class SimConfig:
    models: tuple[ModelSpec, ...] = field(default_factory=default_models)
    total_gpus: int = 32
    tick_interval: float = 0.05
    reclaim_window: float = 60.0
    cold_transition_time: float = 30.0
    cold_transition_overrides: Mapping[str, float] = field(default_factory=dict)
    latency_budget_fraction: float = 0.20
    slo_alloc_overhead: float = 30.0
    rng_seed: int = 0
    exec_model: ExecTimeModel = field(default_factory=ExecTimeModel)
    cost: CostModel = field(default_factory=CostModel)
    bank: BankConfig = field(default_factory=BankConfig)
    # per-instance readiness delay range for assemblies without gang allocation
    instance_init_delay: tuple[float, float] = (5.0, 40.0)
    # component switches, used by ablations
    warm_allocator: bool = True
    delay_schedulable: bool = True
    latency_budget: bool = True

    def __post_init__(self):
        if self.tick_interval <= 0:
            raise ConfigError("tick_interval must be > 0")
        if not 0 < self.latency_budget_fraction < 1:
            raise ConfigError("latency_budget_fraction must lie in (0, 1)")
        if self.reclaim_window <= 0:
            raise ConfigError("reclaim_window must be > 0")
        if self.total_gpus < 0:
            raise ConfigError("total_gpus must be >= 0")
        if self.slo_alloc_overhead < 0:
            raise ConfigError("slo_alloc_overhead must be >= 0")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("model names must be unique")
        unknown = set(self.cold_transition_overrides) - set(names)
        if unknown:
            raise ConfigError(f"cold_transition_overrides for unknown models: {sorted(unknown)}")
        lo, hi = self.instance_init_delay
        if not 0 <= lo <= hi:
            raise ConfigError("instance_init_delay must be an ordered nonnegative range")

    def t_cold(self, model: str | ModelSpec) -> float:
        name = model.name if isinstance(model, ModelSpec) else model
        return float(self.cold_transition_overrides.get(name, self.cold_transition_time))

    def model(self, name: str) -> ModelSpec:
        for m in self.models:
            if m.name == name:
                return m
        raise ConfigError(f"unknown model {name!r}")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["models"] = [dataclasses.asdict(m) for m in self.models]
        d["cold_transition_overrides"] = dict(sorted(self.cold_transition_overrides.items()))
        d["instance_init_delay"] = list(self.instance_init_delay)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


_NESTED = {"exec_model": ExecTimeModel, "cost": CostModel, "bank": BankConfig}


def config_from_dict(data: Mapping[str, Any]) -> SimConfig:
    known = {f.name for f in dataclasses.fields(SimConfig)}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    kw: dict[str, Any] = {}
    try:
        for key, value in data.items():
            if key == "models":
                kw[key] = tuple(ModelSpec(**m) for m in value)
            elif key in _NESTED:
                kw[key] = _NESTED[key](**value)
            elif key == "instance_init_delay":
                kw[key] = tuple(float(v) for v in value)
            elif key == "cold_transition_overrides":
                kw[key] = {str(k): float(v) for k, v in value.items()}
            else:
                kw[key] = value
        return SimConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path | None) -> SimConfig:
    if path is None:
        return SimConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(data)


def predict_time(job: Job, a: int, include_cold: bool, cfg: SimConfig) -> float:
    """Upper bound on the time ``job`` needs with ``a`` GPUs.

    Throughput scales per replica, so ``a`` is rounded down to a multiple of
    the model's replica size.  The serial setup phase is not parallelised.
    """
    g = job.model.gpus_per_replica
    if a < g:
        raise InvalidGpuCount(f"{a} GPUs cannot host a {g}-GPU replica of {job.model.name}")
    replicas = a // g
    t = job.remaining_iters * job.iter_time_1gpu * (1.0 + cfg.exec_model.comm_fraction) / replicas
    t += job.setup_time
    if include_cold:
        t += cfg.t_cold(job.model)
    return t


def job_slo_from_trace(duration: float, S: float, alloc_overhead: float) -> float:
    if duration <= 0 or S <= 0 or alloc_overhead < 0:
        raise ValueError("need duration > 0, S > 0, alloc_overhead >= 0")
    return duration * S + alloc_overhead
