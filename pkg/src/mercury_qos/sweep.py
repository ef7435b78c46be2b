"""Static interleave sweeps: vary one app's slow-tier fraction, everything else local."""

from __future__ import annotations

from dataclasses import dataclass

from .core import ScenarioSpec
from .perfmodel import AppLoad, solve_system


@dataclass(frozen=True)
class SweepPoint:
    p: float
    latency_ns: dict[str, float]
    bw_gbs: dict[str, float]


def interleave_sweep(scenario: ScenarioSpec, app_id: str, steps: int = 20) -> list[SweepPoint]:
    """Solve the model at p = 0, 1/steps, ..., 1 for ``app_id`` with the other apps fully local."""
    apps = [a.with_phase(a.initial_phase()) for a in scenario.apps]
    if app_id not in {a.id for a in apps}:
        raise KeyError(app_id)
    out = []
    for k in range(steps + 1):
        p = k / steps
        loads = [AppLoad(a.id, a.app_class, p if a.id == app_id else 0.0, 1.0, a.full_util_bw())
                 for a in apps]
        s = solve_system(loads, scenario.machine)
        out.append(SweepPoint(p, dict(s.latency_ns), dict(s.bandwidth_gbs)))
    return out
