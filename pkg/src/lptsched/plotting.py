"""Figures written next to the CSV reports.

All output is PNG from the Agg backend with fixed metadata, so reruns are
byte-identical.
"""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 100,
    "path.simplify": False,
    "svg.hashsalt": "lptsched",
}

POLICY_COLORS = {"prompttuner": "#1b9e77", "infless_like": "#d95f02", "elasticflow_like": "#7570b3"}


def _save(fig, path: Path, description: str) -> Path:
    path = Path(path)
    fig.savefig(path, format="png", metadata={"Software": None, "Description": description})
    plt.close(fig)
    return path


def plot_pool_sizes(report, path: Path) -> Path:
    from .sim.report import per_model_busy

    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.4, 3.2))
        for model, rows in sorted(per_model_busy(report.series).items()):
            ts = [r[0] for r in rows]
            ax.step(ts, [r[1] for r in rows], where="post", label=f"{model} provisioned")
            ax.step(ts, [r[2] for r in rows], where="post", linestyle=":", linewidth=0.8, label=f"{model} busy")
        ax.set_xlabel("time (s)")
        ax.set_ylabel("GPUs")
        ax.set_title(f"{report.policy}: violation {report.slo_violation_pct:.1f}%, cost ${report.cost_dollars:.2f}")
        ax.legend(ncol=2, frameon=False)
        fig.tight_layout()
        return _save(fig, path, f"seed={report.seed} config_hash={report.config_hash}")


def plot_bars(labels: Sequence[str], violation: Sequence[float], cost: Sequence[float], path: Path, stamp: str, title: str = "") -> Path:
    with plt.rc_context(RC):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(6.4, 2.8))
        colors = [POLICY_COLORS.get(l, "#666666") for l in labels]
        x = range(len(labels))
        a1.bar(x, violation, color=colors)
        a1.set_ylabel("SLO violation (%)")
        a2.bar(x, cost, color=colors)
        a2.set_ylabel("cost ($)")
        for ax in (a1, a2):
            ax.set_xticks(list(x))
            ax.set_xticklabels(labels, rotation=20, ha="right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path, stamp)
