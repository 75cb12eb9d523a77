"""Command-line front end.

Exit codes: 0 success, 2 usage error, 3 input error, 4 internal invariant
breach (the event log is dumped next to the reports).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path

from . import promptbank
from .core import ConfigError, LptError, SimConfig, load_config
from .plotting import plot_bars
from .sim import POLICIES, InvariantBreach, read_trace, run, write_report, write_trace
from .sim.ita import build_bank
from .sim.trace import BUNDLED_SEEDS, LOAD_PRESETS, TraceError, preset_trace

OUT_ENV = "LPTSCHED_OUT"

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_BREACH = 0, 2, 3, 4


class UsageError(LptError):
    pass


def parse_knob(knob: str, cfg: SimConfig) -> SimConfig:
    """Apply one ablation knob to a config."""
    if knob == "no-warm-allocator":
        return dataclasses.replace(cfg, warm_allocator=False)
    if knob == "no-delay":
        return dataclasses.replace(cfg, delay_schedulable=False)
    if knob == "no-budget":
        return dataclasses.replace(cfg, latency_budget=False)
    name, _, value = knob.partition("=")
    try:
        if name == "window":
            return dataclasses.replace(cfg, reclaim_window=float(value))
        if name == "bank-size":
            n = int(value)
            return dataclasses.replace(cfg, bank=dataclasses.replace(cfg.bank, size=n, capacity=max(n, cfg.bank.capacity)))
        if name == "clusters":
            return dataclasses.replace(cfg, bank=dataclasses.replace(cfg.bank, clusters=int(value)))
    except (ValueError, ConfigError) as exc:
        raise UsageError(f"bad knob value {knob!r}: {exc}") from exc
    raise UsageError(
        f"unknown knob {knob!r}; expected no-warm-allocator, no-delay, no-budget, window=N, bank-size=N or clusters=K"
    )


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise UsageError(f"--out is required (or set {OUT_ENV})")
    p = Path(out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _config(args) -> SimConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else SimConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    return cfg


def _summary_line(report) -> str:
    a = report.aggregates()
    return f"{a['policy']}: violation {a['slo_violation_pct']:.2f}% cost ${a['cost_dollars']:.2f} ({a['jobs']} jobs)"


def _table(rows: list[dict], stamp: str) -> str:
    buf = io.StringIO()
    buf.write(stamp)
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


# -- commands ----------------------------------------------------------------


def cmd_gen_trace(args) -> int:
    out = _out_dir(args)
    trace = preset_trace(args.load, seed=args.trace_seed, S=args.S, scale=args.scale)
    path = out / (args.name or f"trace-{args.load}-{args.trace_seed}.csv")
    write_trace(trace, path)
    print(f"wrote {len(trace)} records to {path}")
    return EXIT_OK


def cmd_bank_build(args) -> int:
    out = _out_dir(args)
    cfg = _config(args)
    if args.clusters:
        cfg = dataclasses.replace(cfg, bank=dataclasses.replace(cfg.bank, clusters=args.clusters))
    pos, model = _model(cfg, args.model)
    bank = build_bank(model, cfg.bank, pos)
    path = out / f"bank-{model.name}.jsonl"
    promptbank.save_index(bank.index, path, meta={"config_hash": cfg.hash(), "model": model.name})
    info = {
        "model": model.name,
        "candidates": len(bank.index),
        "K": bank.index.K,
        "capacity": bank.index.capacity,
        "latency_estimate_s": round(bank.latency_estimate(), 9),
        "config_hash": cfg.hash(),
        "seed": cfg.bank.seed,
    }
    (out / f"bank-{model.name}.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(json.dumps(info, sort_keys=True))
    return EXIT_OK


def cmd_bank_query(args) -> int:
    out = _out_dir(args)
    cfg = _config(args)
    pos, model = _model(cfg, args.model)
    index = promptbank.load_index(args.bank)
    world = build_bank(model, dataclasses.replace(cfg.bank, dim=index.dim), pos)
    scorer = world.scorer(args.task, args.sigma)
    eval_set = promptbank.EvalSet.synthetic(cfg.bank.eval_samples)
    res = index.lookup(eval_set, scorer)
    doc = {
        "task": args.task,
        "best_id": res.best.id,
        "best_text": res.best.text,
        "score": round(res.score, 12),
        "evals": res.evals_performed,
        "latency_estimate_s": round(promptbank.bank_latency(index, model.bank_eval_cost), 9),
        "config_hash": cfg.hash(),
        "seed": cfg.bank.seed,
    }
    if args.full_scan:
        full = promptbank.full_scan(index.candidates(), eval_set, scorer)
        doc["full_scan_best_id"] = full.best.id
        doc["full_scan_evals"] = full.evals_performed
    (out / f"query-{model.name}-task{args.task}.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = _out_dir(args)
    cfg = _config(args)
    trace = read_trace(args.trace)
    report = _run_or_dump(trace, cfg, args.policy, out)
    write_report(report, out, figures=not args.no_plots)
    print(_summary_line(report))
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _out_dir(args)
    cfg = _config(args)
    trace = read_trace(args.trace)
    rows = []
    for policy in POLICIES:
        report = _run_or_dump(trace, cfg, policy, out / policy)
        write_report(report, out / policy, figures=not args.no_plots)
        rows.append(
            {
                "policy": policy,
                "violation_pct": f"{report.slo_violation_pct:.6f}",
                "cost": f"{report.cost_dollars:.6f}",
            }
        )
        print(_summary_line(report))
    stamp = f"# seed={cfg.rng_seed} trace_seed={trace.seed} S={trace.S!r} config_hash={cfg.hash()}\n"
    (out / "compare.csv").write_text(_table(rows, stamp))
    if not args.no_plots:
        plot_bars(
            [r["policy"] for r in rows],
            [float(r["violation_pct"]) for r in rows],
            [float(r["cost"]) for r in rows],
            out / "compare.png",
            stamp.strip("# \n"),
        )
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    variant = parse_knob(args.knob, cfg)
    out = _out_dir(args)
    trace = read_trace(args.trace)
    rows = []
    for label, c in (("full", cfg), (args.knob, variant)):
        sub = out / label.replace("=", "-")
        report = _run_or_dump(trace, c, "prompttuner", sub)
        write_report(report, sub, figures=not args.no_plots)
        rows.append(
            {
                "variant": label,
                "violation_pct": f"{report.slo_violation_pct:.6f}",
                "cost": f"{report.cost_dollars:.6f}",
                "config_hash": c.hash(),
            }
        )
        print(f"[{label}] " + _summary_line(report))
    stamp = f"# seed={cfg.rng_seed} trace_seed={trace.seed} knob={args.knob} config_hash={cfg.hash()}\n"
    (out / "ablation.csv").write_text(_table(rows, stamp))
    if not args.no_plots:
        plot_bars(
            [r["variant"] for r in rows],
            [float(r["violation_pct"]) for r in rows],
            [float(r["cost"]) for r in rows],
            out / "ablation.png",
            stamp.strip("# \n"),
        )
    return EXIT_OK


def _model(cfg: SimConfig, name: str | None):
    if name is None:
        return 0, cfg.models[0]
    for i, m in enumerate(cfg.models):
        if m.name == name:
            return i, m
    raise ConfigError(f"unknown model {name!r}")


def _run_or_dump(trace, cfg, policy, out: Path):
    try:
        return run(trace, cfg, policy)
    except InvariantBreach as exc:
        out.mkdir(parents=True, exist_ok=True)
        (out / "event_log.txt").write_text("\n".join(exc.event_log) + "\n")
        raise


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lptsched", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trace=True, config=True):
        if trace:
            sp.add_argument("--trace", required=True, help="trace file")
        if config:
            sp.add_argument("--config", help="JSON config; defaults apply when omitted")
        sp.add_argument("--seed", type=int, help="simulation RNG seed (overrides the config)")
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")

    g = sub.add_parser("gen-trace", help="generate a preset workload trace")
    g.add_argument("--load", choices=sorted(LOAD_PRESETS), default="medium")
    g.add_argument("--seed", dest="trace_seed", type=int, default=BUNDLED_SEEDS[0])
    g.add_argument("--S", type=float, default=1.0, help="SLO emergence")
    g.add_argument("--scale", type=float, default=1.0, help="multiply request counts")
    g.add_argument("--name", help="file name inside --out")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_trace)

    b = sub.add_parser("bank-build", help="cluster a synthetic prompt bank and snapshot it")
    common(b, trace=False)
    b.add_argument("--model")
    b.add_argument("--clusters", type=int)
    b.set_defaults(func=cmd_bank_build)

    q = sub.add_parser("bank-query", help="look up the best initial prompt for a task")
    common(q, trace=False)
    q.add_argument("--bank", required=True, help="snapshot written by bank-build")
    q.add_argument("--model")
    q.add_argument("--task", type=int, required=True)
    q.add_argument("--sigma", type=float, help="scorer noise (default: config)")
    q.add_argument("--full-scan", action="store_true", help="also score every candidate")
    q.set_defaults(func=cmd_bank_query)

    s = sub.add_parser("simulate", help="run one policy over a trace")
    common(s)
    s.add_argument("--policy", choices=POLICIES, default="prompttuner")
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run every policy over one trace")
    common(c)
    c.add_argument("--no-plots", action="store_true")
    c.set_defaults(func=cmd_compare)

    a = sub.add_parser("ablate", help="rerun with one scheduler component disabled or varied")
    common(a)
    a.add_argument("--knob", required=True)
    a.add_argument("--no-plots", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"lptsched: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantBreach as exc:
        print(f"lptsched: invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except (TraceError, ConfigError, promptbank.BankError, LptError, OSError) as exc:
        print(f"lptsched: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
