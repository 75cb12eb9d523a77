"""Run reports, cost accounting and the report file formats."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..core import CostModel

SeriesRow = tuple[float, str, int, int]  # time_s, model, provisioned, busy


@dataclass
class JobOutcome:
    id: int
    model: str
    task_id: int
    arrival: float
    deadline: float
    admitted: bool = False
    start: float | None = None
    finish: float | None = None
    gpus: int = 0
    bank_used: bool = False
    multiplier: float = 1.0
    violated: bool = False


def gpu_seconds(series: Iterable[SeriesRow]) -> float:
    """Integral of provisioned GPUs over time.

    ``series`` is a step function per model: each row holds until the next
    row of the same model.  The last row of every model closes its interval.
    """
    total = 0.0
    last: dict[str, tuple[float, int]] = {}
    for t, model, provisioned, _ in series:
        if model in last:
            t0, n0 = last[model]
            total += n0 * (t - t0)
        last[model] = (t, provisioned)
    return total


def account_cost(series: Sequence[SeriesRow], cost: CostModel, storage_gb_hours: float = 0.0) -> tuple[float, float]:
    """Return (gpu dollars, storage dollars). Cold GPUs are not billed."""
    gpu = gpu_seconds(series) / 3600.0 * cost.gpu_price_per_hour
    storage = storage_gb_hours * cost.storage_price_per_gb_hour
    return gpu, storage


@dataclass
class RunReport:
    policy: str
    seed: int
    config_hash: str
    config: dict
    trace_meta: dict
    jobs: list[JobOutcome]
    series: list[SeriesRow]
    horizon: float
    gpu_cost: float
    storage_cost: float
    events: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_jobs(self) -> int:
        return len(self.jobs)

    @property
    def n_violated(self) -> int:
        return sum(j.violated for j in self.jobs)

    @property
    def slo_violation_pct(self) -> float:
        return 100.0 * self.n_violated / self.n_jobs if self.jobs else 0.0

    @property
    def cost_dollars(self) -> float:
        return self.gpu_cost + self.storage_cost

    def aggregates(self) -> dict:
        return {
            "policy": self.policy,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "jobs": self.n_jobs,
            "admitted": sum(j.admitted for j in self.jobs),
            "violated": self.n_violated,
            "bank_used": sum(j.bank_used for j in self.jobs),
            "slo_violation_pct": round(self.slo_violation_pct, 6),
            "cost_dollars": round(self.cost_dollars, 6),
            "gpu_cost_dollars": round(self.gpu_cost, 6),
            "storage_cost_dollars": round(self.storage_cost, 6),
            "horizon_s": round(self.horizon, 6),
            "events": self.events,
        }


def _stamp(report: RunReport) -> str:
    return f"# policy={report.policy} seed={report.seed} config_hash={report.config_hash}\n"


def jobs_csv(report: RunReport) -> str:
    buf = io.StringIO()
    buf.write(_stamp(report))
    names = [f for f in JobOutcome.__dataclass_fields__]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for j in report.jobs:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in asdict(j).values()])
    return buf.getvalue()


def pools_csv(report: RunReport) -> str:
    buf = io.StringIO()
    buf.write(_stamp(report))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_s", "model", "provisioned", "busy"])
    for t, m, p, b in report.series:
        w.writerow([repr(float(t)), m, p, b])
    return buf.getvalue()


def report_json(report: RunReport) -> str:
    doc = {
        "aggregates": report.aggregates(),
        "trace": report.trace_meta,
        "config": report.config,
    }
    if report.extra:
        doc["extra"] = report.extra
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_report(report: RunReport, out_dir: str | Path, figures: bool = True) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in (("report.json", report_json(report)), ("jobs.csv", jobs_csv(report)), ("pools.csv", pools_csv(report))):
        p = out / name
        p.write_text(text)
        written.append(p)
    if figures:
        from ..plotting import plot_pool_sizes

        written.append(plot_pool_sizes(report, out / "pools.png"))
    return written


def per_model_busy(series: Iterable[SeriesRow]) -> dict[str, list[tuple[float, int, int]]]:
    out: dict[str, list[tuple[float, int, int]]] = defaultdict(list)
    for t, m, p, b in series:
        out[m].append((t, p, b))
    return dict(out)
