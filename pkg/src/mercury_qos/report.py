"""Per-run summaries, cross-controller comparison and report emission."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .core import SloKind
from .tiersim import Trace

SCHEMA = 1
FORMATS = ("json", "csv-summary")
CSV_COLUMNS = ["controller", "app", "class", "slo_kind", "slo_value", "slo_fraction",
               "slo_time_s", "present_s", "mean", "p50", "p95", "p99", "migrated_gb",
               "rejected", "delta_slo_fraction"]


@dataclass
class AppSummary:
    app: str
    app_class: str
    slo_kind: str
    slo_value: float
    slo_fraction: float
    slo_time_s: float
    present_s: float
    mean: Optional[float]
    p50: Optional[float]
    p95: Optional[float]
    p99: Optional[float]
    migrated_gb: float
    rejected: bool


@dataclass
class RunSummary:
    controller: str
    apps: dict[str, AppSummary]
    actions: int
    wall_time_s: Optional[float] = None


@dataclass
class Report:
    scenario: str
    seed: int
    warmup_s: float
    runs: list[RunSummary] = field(default_factory=list)
    schema: int = SCHEMA

    @property
    def controllers(self) -> list[str]:
        return [r.controller for r in self.runs]

    def run(self, controller: str) -> RunSummary:
        for r in self.runs:
            if r.controller == controller:
                return r
        raise KeyError(controller)

    def deltas(self) -> dict[str, dict[str, float]]:
        """SLO-fraction difference of every controller against the first one."""
        if not self.runs:
            return {}
        base = self.runs[0]
        out = {}
        for r in self.runs:
            out[r.controller] = {
                app: round(s.slo_fraction - base.apps[app].slo_fraction, 6)
                for app, s in r.apps.items() if app in base.apps
            }
        return out

    def to_dict(self) -> dict:
        runs = {}
        for r in self.runs:
            d = {"apps": {a: asdict(s) for a, s in r.apps.items()}, "actions": r.actions}
            if r.wall_time_s is not None:
                d["wall_time_s"] = r.wall_time_s
            runs[r.controller] = d
        return {
            "schema": self.schema,
            "scenario": self.scenario,
            "seed": self.seed,
            "warmup_s": self.warmup_s,
            "controllers": self.controllers,
            "runs": runs,
            "deltas": self.deltas(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        if d.get("schema") != SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        runs = []
        for name in d["controllers"]:
            r = d["runs"][name]
            apps = {a: AppSummary(**s) for a, s in r["apps"].items()}
            runs.append(RunSummary(name, apps, r["actions"], r.get("wall_time_s")))
        return cls(d["scenario"], d["seed"], d["warmup_s"], runs, d["schema"])


def _r(x: Optional[float]) -> Optional[float]:
    return None if x is None else round(float(x), 6)


def summarize_trace(trace: Trace, warmup_s: float = 0.0) -> RunSummary:
    apps = {}
    for app_id, spec in trace.app_specs.items():
        series = trace.series(app_id)
        rows = [a for t, a in series if t >= warmup_s - 1e-9]
        lat = spec.slo.kind is SloKind.LATENCY
        vals = np.array([a.latency_ns if lat else a.bw_gbs for a in rows])
        met = sum(1 for a in rows if a.slo_met)
        pct = np.percentile(vals, [50, 95, 99]) if len(vals) else [None] * 3
        apps[app_id] = AppSummary(
            app=app_id,
            app_class=spec.app_class.value,
            slo_kind=spec.slo.kind.value,
            slo_value=spec.slo.value,
            slo_fraction=_r(met / len(rows)) if rows else 0.0,
            slo_time_s=_r(met * trace.dt),
            present_s=_r(len(rows) * trace.dt),
            mean=_r(vals.mean()) if len(vals) else None,
            p50=_r(pct[0]),
            p95=_r(pct[1]),
            p99=_r(pct[2]),
            migrated_gb=_r(trace.migrated_gb.get(app_id, 0.0)),
            rejected=app_id in trace.rejected,
        )
    return RunSummary(trace.controller, apps, len(trace.actions))


def emit_report(report: Report, fmt: str = "json") -> str:
    """Render ``report`` as text in one of FORMATS."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "csv-summary":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema", SCHEMA])
        w.writerow(CSV_COLUMNS)
        deltas = report.deltas()
        for r in report.runs:
            for app, s in r.apps.items():
                w.writerow([r.controller, app, s.app_class, s.slo_kind, s.slo_value,
                            s.slo_fraction, s.slo_time_s, s.present_s, s.mean, s.p50, s.p95,
                            s.p99, s.migrated_gb, int(s.rejected), deltas[r.controller].get(app)])
        return buf.getvalue()
    raise ValueError(f"unknown report format {fmt!r}; choose from {FORMATS}")
