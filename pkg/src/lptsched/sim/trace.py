"""Workload traces: generation, presets and the line-delimited file format.

File layout::

    # seed=11 S=1.0 label=medium config_hash=3f0c9a1e5b7d2c44
    submit_time_s,model,gpu_time_s,task_id,gpus
    3.2109,gpt2-base,41.5,17,2
    ...

Header tokens beyond seed, S and label are kept as metadata; presets record
a hash of their generation parameters there.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..core import LptError

# requests per model over a 20-minute window (GPT2-B / GPT2-L / V7B)
LOAD_PRESETS: dict[str, dict[str, int]] = {
    "low": {"gpt2-base": 41, "gpt2-large": 55, "vicuna-7b": 42},
    "medium": {"gpt2-base": 77, "gpt2-large": 71, "vicuna-7b": 65},
    "high": {"gpt2-base": 99, "gpt2-large": 85, "vicuna-7b": 76},
}
BUNDLED_SEEDS: tuple[int, ...] = (11, 23, 37)
TRACE_MINUTES = 20
PEAK_TO_MEAN = 5.0


class TraceError(LptError, ValueError):
    pass


@dataclass(frozen=True)
class TraceRecord:
    submit_time: float
    model: str
    gpu_time: float
    task_id: int
    gpus: int = 1

    @property
    def submit_minute(self) -> int:
        return int(self.submit_time // 60)

    @property
    def duration(self) -> float:
        return self.gpu_time / self.gpus


@dataclass
class Trace:
    records: list[TraceRecord]
    seed: int = 0
    S: float = 1.0
    label: str = ""
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        times = [r.submit_time for r in self.records]
        if times != sorted(times):
            raise TraceError("records must be sorted by submit time")
        for r in self.records:
            if r.gpu_time <= 0 or r.gpus < 1:
                raise TraceError(f"bad record {r}")

    def __len__(self):
        return len(self.records)

    def per_minute_counts(self, model: str | None = None) -> list[int]:
        if not self.records:
            return []
        n = max(r.submit_minute for r in self.records) + 1
        out = [0] * n
        for r in self.records:
            if model is None or r.model == model:
                out[r.submit_minute] += 1
        return out

    @property
    def span(self) -> float:
        """End of the last submission minute."""
        if not self.records:
            return 0.0
        return 60.0 * (self.records[-1].submit_minute + 1)


def spiky_rates(total: int, minutes: int = TRACE_MINUTES, peak_ratio: float = PEAK_TO_MEAN, seed: int = 0) -> list[int]:
    """Per-minute request counts summing to ``total`` with one burst minute.

    The busiest minute carries ``round(peak_ratio * mean)`` requests, the rest
    are spread multinomially over the other minutes and kept below the peak.
    """
    if total <= 0:
        return [0] * minutes
    rng = np.random.default_rng(seed)
    peak = min(total, max(1, round(peak_ratio * total / minutes)))
    peak_at = int(rng.integers(minutes))
    others = [m for m in range(minutes) if m != peak_at]
    rates = [0] * minutes
    rates[peak_at] = peak
    rest = total - peak
    weights = rng.gamma(2.0, 1.0, size=len(others))
    draw = rng.multinomial(rest, weights / weights.sum())
    for m, c in zip(others, draw):
        rates[m] = int(c)
    # shave any minute that rivals the burst and hand the excess to the quietest
    while True:
        over = [m for m in others if rates[m] >= peak]
        if not over or peak <= 1:
            break
        for m in over:
            low = min(others, key=lambda x: (rates[x], x))
            rates[m] -= 1
            rates[low] += 1
    return rates


def arrivals_in_minute(n: int, minute: int, rng: np.random.Generator) -> list[float]:
    """``n`` arrival times inside one minute with exponential gaps.

    n + 1 exponential gaps are drawn and rescaled to span the minute, which
    keeps the exponential spacing while landing exactly ``n`` requests in it.
    """
    if n <= 0:
        return []
    gaps = rng.exponential(1.0, size=n + 1)
    pos = np.cumsum(gaps)[:-1] / gaps.sum()
    return [60.0 * (minute + float(p)) for p in pos]


@dataclass(frozen=True)
class TaskSpec:
    id: int
    model: str
    gpu_time: float


def task_catalog(
    models: Sequence[str],
    n_tasks: int = 120,
    seed: int = 0,
    gpu_time_range: tuple[float, float] = (8.0, 400.0),
) -> dict[str, list[TaskSpec]]:
    """Per-model tasks with log-uniform GPU time."""
    out = {}
    lo, hi = gpu_time_range
    for mi, name in enumerate(models):
        rng = np.random.default_rng([seed, 7919, mi])
        gt = np.exp(rng.uniform(math.log(lo), math.log(hi), size=n_tasks))
        out[name] = [TaskSpec(i, name, float(round(g, 3))) for i, g in enumerate(gt)]
    return out


GPU_CHOICES = (1, 2, 4)
GPU_WEIGHTS = (0.5, 0.3, 0.2)


def generate_trace(
    rates: Mapping[str, Sequence[int]] | Sequence[int],
    models: Sequence[str],
    tasks: Mapping[str, Sequence[TaskSpec]],
    S: float = 1.0,
    seed: int = 0,
    label: str = "",
) -> Trace:
    """Build a trace from per-minute request counts.

    ``rates`` is either one sequence applied to every model or a mapping from
    model to its own per-minute counts.
    """
    if not isinstance(rates, Mapping):
        rates = {m: list(rates) for m in models}
    if any(c < 0 for r in rates.values() for c in r):
        raise TraceError("rates must be nonnegative")
    records: list[TraceRecord] = []
    for mi, name in enumerate(models):
        rng = np.random.default_rng([seed, mi])
        pool = tasks[name]
        for minute, n in enumerate(rates.get(name, ())):
            for t in arrivals_in_minute(int(n), minute, rng):
                task = pool[int(rng.integers(len(pool)))]
                gpus = int(rng.choice(GPU_CHOICES, p=GPU_WEIGHTS))
                records.append(TraceRecord(round(t, 6), name, task.gpu_time, task.id, gpus))
    records.sort(key=lambda r: (r.submit_time, r.model, r.task_id))
    return Trace(records, seed=seed, S=S, label=label)


def preset_trace(
    load: str = "medium",
    seed: int = BUNDLED_SEEDS[0],
    S: float = 1.0,
    scale: float = 1.0,
    n_tasks: int = 120,
    task_seed: int = 0,
    gpu_time_range: tuple[float, float] = (8.0, 400.0),
) -> Trace:
    if load not in LOAD_PRESETS:
        raise TraceError(f"unknown load {load!r}; choose from {sorted(LOAD_PRESETS)}")
    counts = LOAD_PRESETS[load]
    models = list(counts)
    tasks = task_catalog(models, n_tasks, seed=task_seed, gpu_time_range=gpu_time_range)
    rates = {
        m: spiky_rates(round(c * scale), TRACE_MINUTES, PEAK_TO_MEAN, seed=seed * 31 + i)
        for i, (m, c) in enumerate(counts.items())
    }
    trace = generate_trace(rates, models, tasks, S=S, seed=seed, label=load)
    params = {"load": load, "seed": seed, "S": S, "scale": scale, "n_tasks": n_tasks, "task_seed": task_seed,
              "gpu_time_range": list(gpu_time_range)}
    blob = json.dumps(params, sort_keys=True, separators=(",", ":"))
    trace.meta["config_hash"] = hashlib.sha256(blob.encode()).hexdigest()[:16]
    return trace


# ---------------------------------------------------------------------------
# File format

COLUMNS = "submit_time_s,model,gpu_time_s,task_id,gpus"


def format_trace(trace: Trace) -> str:
    head = f"# seed={trace.seed} S={trace.S!r} label={trace.label or '-'}"
    extra = {k: v for k, v in trace.meta.items() if k not in ("seed", "S", "label")}
    head += "".join(f" {k}={v}" for k, v in sorted(extra.items()))
    lines = [head, COLUMNS]
    for r in trace.records:
        lines.append(f"{r.submit_time!r},{r.model},{r.gpu_time!r},{r.task_id},{r.gpus}")
    return "\n".join(lines) + "\n"


def write_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(format_trace(trace))


def parse_trace(text: str, source: str = "<trace>") -> Trace:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise TraceError(f"{source}:1: missing '# seed=... S=... label=...' header")
    meta = {}
    for tok in lines[0][1:].split():
        if "=" not in tok:
            raise TraceError(f"{source}:1: malformed header token {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = v
    try:
        seed = int(meta.get("seed", "0"))
        S = float(meta.get("S", "1.0"))
    except ValueError as exc:
        raise TraceError(f"{source}:1: {exc}") from exc
    if S <= 0:
        raise TraceError(f"{source}:1: S must be > 0")
    label = meta.get("label", "")
    records = []
    prev = -math.inf
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("submit_time_s,"):
            continue
        parts = line.split(",")
        if len(parts) not in (4, 5):
            raise TraceError(f"{source}:{lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            rec = TraceRecord(
                float(parts[0]), parts[1].strip(), float(parts[2]), int(parts[3]), int(parts[4]) if len(parts) == 5 else 1
            )
        except ValueError as exc:
            raise TraceError(f"{source}:{lineno}: {exc}") from exc
        if not rec.model:
            raise TraceError(f"{source}:{lineno}: empty model name")
        if rec.gpu_time <= 0 or rec.gpus < 1 or rec.submit_time < 0 or not math.isfinite(rec.submit_time):
            raise TraceError(f"{source}:{lineno}: gpu_time, gpus and submit time must be positive")
        if rec.submit_time < prev:
            raise TraceError(f"{source}:{lineno}: records out of order")
        prev = rec.submit_time
        records.append(rec)
    return Trace(records, seed=seed, S=S, label="" if label == "-" else label, meta=meta)


def read_trace(path: str | Path) -> Trace:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise TraceError(f"{p}: {exc.strerror or exc}") from exc
    return parse_trace(text, str(p))
