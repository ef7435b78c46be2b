"""Static figures written next to the CSV/JSON outputs of a run."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .core import SloKind  # noqa: E402
from .report import Report  # noqa: E402
from .tiersim import Trace  # noqa: E402

# stable metadata so reruns produce identical files
_META = {"Software": None}


def plot_timeseries(trace: Trace, path: Path) -> Path:
    """One panel per app: the SLO metric over time with the target as a dashed line."""
    apps = list(trace.app_specs.values())
    fig, axes = plt.subplots(len(apps), 1, figsize=(8, 2.2 * len(apps)), sharex=True,
                             squeeze=False)
    for ax, spec in zip(axes[:, 0], apps):
        series = trace.series(spec.id)
        ts = [t for t, _ in series]
        lat = spec.slo.kind is SloKind.LATENCY
        ys = [a.latency_ns if lat else a.bw_gbs for _, a in series]
        ax.plot(ts, ys, lw=1.0, color="tab:blue")
        ax.axhline(spec.slo.value, ls="--", lw=0.8, color="tab:red")
        ax.set_ylabel("latency (ns)" if lat else "bw (GB/s)")
        ax.set_title(f"{spec.id} (prio {spec.priority})", fontsize=9, loc="left")
        if lat and ys:
            # saturated queues produce huge spikes; keep the SLO band readable
            ax.set_ylim(0, max(spec.slo.value * 3, min(max(ys), spec.slo.value * 3)))
    axes[-1, 0].set_xlabel("time (s)")
    fig.suptitle(f"{trace.scenario}: {trace.controller}", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_slo_fractions(report: Report, path: Path) -> Path:
    """Grouped bars: SLO-satisfaction fraction per app for each controller."""
    ctrls: Sequence[str] = report.controllers
    apps = list(report.runs[0].apps) if report.runs else []
    width = 0.8 / max(1, len(ctrls))
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(apps), 3))
    for i, c in enumerate(ctrls):
        run = report.run(c)
        xs = [j + i * width for j in range(len(apps))]
        ax.bar(xs, [run.apps[a].slo_fraction for a in apps], width, label=c)
    ax.set_xticks([j + 0.4 - width / 2 for j in range(len(apps))])
    ax.set_xticklabels(apps)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("SLO satisfied (fraction)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
    return path
