"""Domain types and scenario validation shared by every other module."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional


class AppClass(str, Enum):
    LS = "LS"
    BI = "BI"


class SloKind(str, Enum):
    LATENCY = "LatencyNs"
    BANDWIDTH = "BandwidthGBs"


# one cache line per access
ACCESS_BYTES = 64


@dataclass(frozen=True)
class MachineSpec:
    local_capacity_gb: float = 64.0
    cxl_capacity_gb: float = 256.0
    local_bw_cap: float = 200.0
    cxl_bw_cap: float = 50.0
    lat_local_base: float = 100.0
    lat_cxl_base: float = 200.0
    kq_local: float = 40.0
    kq_cxl: float = 80.0
    coupling_c: float = 20.0
    interleave_ratio: tuple[int, int] = (1, 1)
    migration_rate: float = 2.0
    fault_coeff: float = 1e-6
    # relative std-dev of multiplicative noise on sampled metrics
    measure_noise: float = 0.0

    @property
    def interleave_fraction(self) -> float:
        """Share of accesses sent to the slow tier by the m:n interleave policy."""
        m, n = self.interleave_ratio
        return n / (m + n)


@dataclass(frozen=True)
class SloTarget:
    kind: SloKind
    value: float

    def met(self, latency_ns: float, bw_gbs: float) -> bool:
        if self.kind is SloKind.LATENCY:
            return latency_ns <= self.value
        return bw_gbs >= self.value

    def slack(self, latency_ns: float, bw_gbs: float) -> float:
        """Relative margin to the target; positive when better than the SLO."""
        if self.kind is SloKind.LATENCY:
            return (self.value - latency_ns) / self.value
        return (bw_gbs - self.value) / self.value


@dataclass(frozen=True)
class WorkloadPhase:
    start_s: float
    demand_bw: float
    wss_gb: float
    access_rate: float


@dataclass(frozen=True)
class AppSpec:
    id: str
    app_class: AppClass
    priority: int
    wss_gb: float
    demand_bw: float
    access_rate: float
    slo: SloTarget
    phases: tuple[WorkloadPhase, ...] = ()
    arrival_s: float = 0.0

    @property
    def is_bi(self) -> bool:
        return self.app_class is AppClass.BI

    def initial_phase(self) -> WorkloadPhase:
        if self.phases:
            return self.phases[0]
        return WorkloadPhase(self.arrival_s, self.demand_bw, self.wss_gb, self.access_rate)

    def with_phase(self, phase: WorkloadPhase) -> "AppSpec":
        return replace(
            self, wss_gb=phase.wss_gb, demand_bw=phase.demand_bw, access_rate=phase.access_rate
        )

    def full_util_bw(self) -> float:
        """Bandwidth offered at cpu cap 1: demand for BI, access traffic for LS."""
        if self.is_bi:
            return self.demand_bw
        return self.access_rate * ACCESS_BYTES / 1e9


@dataclass(frozen=True)
class Allocation:
    local_mem_limit_gb: float
    cpu_util_cap: float = 1.0


@dataclass(frozen=True)
class Thresholds:
    thresh_local_bw: float
    thresh_numa: float


class EventKind(str, Enum):
    ARRIVAL = "arrival"
    DEPARTURE = "departure"
    PHASE = "phase"


@dataclass(frozen=True)
class Event:
    at_s: float
    kind: EventKind
    app_id: str
    phase: Optional[WorkloadPhase] = None


@dataclass(frozen=True)
class ScenarioSpec:
    machine: MachineSpec
    apps: tuple[AppSpec, ...]
    events: tuple[Event, ...] = ()
    horizon_s: float = 10.0
    tick_s: float = 0.2
    seed: int = 0
    name: str = ""

    def app(self, app_id: str) -> AppSpec:
        for a in self.apps:
            if a.id == app_id:
                return a
        raise KeyError(app_id)

    def timeline(self) -> list[Event]:
        """All events (arrivals, explicit events, phase starts) in firing order."""
        out: list[Event] = []
        for a in self.apps:
            out.append(Event(a.arrival_s, EventKind.ARRIVAL, a.id))
            for ph in a.phases[1:]:
                out.append(Event(ph.start_s, EventKind.PHASE, a.id, ph))
        out.extend(self.events)
        order = {EventKind.ARRIVAL: 1, EventKind.PHASE: 2, EventKind.DEPARTURE: 0}
        prio = {a.id: a.priority for a in self.apps}
        # stable, total order: time, departures first, then higher priority first
        return sorted(out, key=lambda e: (e.at_s, order[e.kind], -prio.get(e.app_id, 0), e.app_id))


@dataclass(frozen=True)
class Issue:
    code: str
    app: Optional[str]
    message: str

    def __str__(self) -> str:
        where = f"[{self.app}] " if self.app else ""
        return f"{self.code}: {where}{self.message}"


class ValidationError(ValueError):
    """Raised with the full list of problems found in a scenario."""

    def __init__(self, issues: list[Issue]):
        self.issues = issues
        super().__init__("; ".join(str(i) for i in issues))

    @property
    def codes(self) -> list[str]:
        return [i.code for i in self.issues]


def _positive(value: float) -> bool:
    return isinstance(value, (int, float)) and math.isfinite(value) and value > 0


def _validate_machine(m: MachineSpec) -> list[Issue]:
    issues = []
    for name in ("local_capacity_gb", "cxl_capacity_gb", "local_bw_cap", "cxl_bw_cap",
                 "lat_local_base", "lat_cxl_base", "migration_rate"):
        if not _positive(getattr(m, name)):
            issues.append(Issue("NonPositiveQuantity", None, f"machine.{name} must be > 0"))
    for name in ("kq_local", "kq_cxl", "coupling_c", "fault_coeff", "measure_noise"):
        v = getattr(m, name)
        if not (math.isfinite(v) and v >= 0):
            issues.append(Issue("NonPositiveQuantity", None, f"machine.{name} must be >= 0"))
    if m.lat_cxl_base < m.lat_local_base:
        issues.append(Issue("InvalidMachine", None, "lat_cxl_base must be >= lat_local_base"))
    if len(m.interleave_ratio) != 2 or any(int(x) != x or x <= 0 for x in m.interleave_ratio):
        issues.append(Issue("InvalidMachine", None, "interleave_ratio must be two positive integers"))
    return issues


def _validate_app(a: AppSpec) -> list[Issue]:
    issues = []
    if not _positive(a.wss_gb):
        issues.append(Issue("NonPositiveQuantity", a.id, "wss_gb must be > 0"))
    if not (math.isfinite(a.demand_bw) and a.demand_bw >= 0):
        issues.append(Issue("NonPositiveQuantity", a.id, "demand_bw must be >= 0"))
    if not (math.isfinite(a.access_rate) and a.access_rate >= 0):
        issues.append(Issue("NonPositiveQuantity", a.id, "access_rate must be >= 0"))
    if not _positive(a.slo.value):
        issues.append(Issue("NonPositiveQuantity", a.id, "slo value must be > 0"))
    if isinstance(a.priority, bool) or not isinstance(a.priority, int) or a.priority <= 0:
        issues.append(Issue("NonPositiveQuantity", a.id, "priority must be a positive integer"))
    want = SloKind.LATENCY if a.app_class is AppClass.LS else SloKind.BANDWIDTH
    if a.slo.kind is not want:
        issues.append(Issue("SloKindMismatch", a.id,
                            f"{a.app_class.value} app needs a {want.value} SLO, got {a.slo.kind.value}"))
    if a.arrival_s < 0:
        issues.append(Issue("NonPositiveQuantity", a.id, "arrival_s must be >= 0"))
    if a.phases:
        starts = [p.start_s for p in a.phases]
        if starts != sorted(starts):
            issues.append(Issue("PhaseOrder", a.id, "phases must be sorted by start_s"))
        if starts[0] != a.arrival_s:
            issues.append(Issue("PhaseOrder", a.id, "first phase must start at arrival"))
        for p in a.phases:
            if not _positive(p.wss_gb) or p.demand_bw < 0 or p.access_rate < 0:
                issues.append(Issue("NonPositiveQuantity", a.id,
                                    f"phase at {p.start_s}s has invalid quantities"))
    return issues


def validate_scenario(scenario: ScenarioSpec) -> ScenarioSpec:
    """Check every type invariant; raise ValidationError listing all issues."""
    issues = _validate_machine(scenario.machine)
    seen_ids: set[str] = set()
    by_priority: dict[int, str] = {}
    for a in scenario.apps:
        if a.id in seen_ids:
            issues.append(Issue("DuplicateApp", a.id, "app id used twice"))
        seen_ids.add(a.id)
        issues.extend(_validate_app(a))
        if a.priority in by_priority:
            issues.append(Issue("DuplicatePriority", a.id,
                                f"priority {a.priority} already used by {by_priority[a.priority]}"))
        else:
            by_priority[a.priority] = a.id
    for ev in scenario.events:
        if ev.app_id not in seen_ids:
            issues.append(Issue("UnknownApp", ev.app_id, f"event at {ev.at_s}s names unknown app"))
        if ev.kind is EventKind.PHASE and ev.phase is None:
            issues.append(Issue("InvalidEvent", ev.app_id, "phase event without phase"))
    if not _positive(scenario.horizon_s):
        issues.append(Issue("NonPositiveQuantity", None, "horizon_s must be > 0"))
    if not _positive(scenario.tick_s):
        issues.append(Issue("NonPositiveQuantity", None, "tick_s must be > 0"))
    if isinstance(scenario.seed, bool) or not isinstance(scenario.seed, int) or scenario.seed < 0:
        issues.append(Issue("InvalidSeed", None, "seed must be a non-negative integer"))
    if issues:
        raise ValidationError(issues)
    return scenario


def ls_app(app_id: str, priority: int, wss_gb: float, slo_ns: float,
           access_rate: float = 0.0, arrival_s: float = 0.0) -> AppSpec:
    return AppSpec(app_id, AppClass.LS, priority, wss_gb, 0.0, access_rate,
                   SloTarget(SloKind.LATENCY, slo_ns), arrival_s=arrival_s)


def bi_app(app_id: str, priority: int, wss_gb: float, demand_bw: float, slo_gbs: float,
           access_rate: Optional[float] = None, arrival_s: float = 0.0) -> AppSpec:
    if access_rate is None:
        access_rate = demand_bw * 1e9 / ACCESS_BYTES
    return AppSpec(app_id, AppClass.BI, priority, wss_gb, demand_bw, access_rate,
                   SloTarget(SloKind.BANDWIDTH, slo_gbs), arrival_s=arrival_s)
