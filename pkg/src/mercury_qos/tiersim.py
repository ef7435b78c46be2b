"""Discrete-time engine for page placement, migration and metric sampling."""

from __future__ import annotations

import csv
import io
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import (
    Allocation,
    AppSpec,
    Event,
    EventKind,
    MachineSpec,
    ScenarioSpec,
    WorkloadPhase,
)
from .perfmodel import AppLoad, NoConvergence, PerfSample, solve_system

EMA_ALPHA = 0.5
TRACE_HEADER = ["time", "app", "latency_ns", "bw_gbs", "local_gb", "cxl_gb",
                "cpu_cap", "slo_met", "numa_faults"]
_EPS = 1e-9


class UnknownApp(KeyError):
    pass


class SimulationError(RuntimeError):
    """A tick failed; carries the simulated time it failed at."""

    def __init__(self, time_s: float, cause: Exception):
        self.time_s = time_s
        self.cause = cause
        super().__init__(f"t={time_s:.3f}s: {cause}")


@dataclass
class AppRuntime:
    base: AppSpec
    spec: AppSpec
    alloc: Allocation
    resident_local: float
    resident_cxl: float
    arrived_at: float
    ema_latency: Optional[float] = None
    ema_bw: Optional[float] = None
    migrated_gb: float = 0.0

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def wss(self) -> float:
        return self.spec.wss_gb

    @property
    def p(self) -> float:
        """Fraction of the working set (and of accesses) served by the slow tier."""
        w = self.spec.wss_gb
        return max(0.0, (w - self.resident_local) / w) if w > 0 else 0.0

    @property
    def target_local(self) -> float:
        return min(self.spec.wss_gb, self.alloc.local_mem_limit_gb)

    @property
    def migrating(self) -> bool:
        return abs(self.resident_local - self.target_local) > _EPS and not (
            self.resident_local < self.target_local and self.resident_cxl <= _EPS
        )

    def load(self) -> AppLoad:
        return AppLoad(self.id, self.spec.app_class, self.p, self.alloc.cpu_util_cap,
                       self.spec.full_util_bw())


@dataclass(frozen=True)
class AppTick:
    app: str
    latency_ns: float
    bw_gbs: float
    local_gb: float
    cxl_gb: float
    cpu_cap: float
    slo_met: bool
    numa_faults: float
    local_limit_gb: float = 0.0


@dataclass(frozen=True)
class TickRecord:
    tick: int
    time: float
    apps: tuple[AppTick, ...]
    local_bw_total: float
    numa_system: float
    migrating: bool

    def app(self, app_id: str) -> Optional[AppTick]:
        for a in self.apps:
            if a.app == app_id:
                return a
        return None


ArrivalHook = Callable[["Simulation", AppSpec], Optional[Allocation]]


class Simulation:
    """Mutable state of one run: placements, allocations, clock and pending events."""

    def __init__(self, machine: MachineSpec, dt: float = 0.2, seed: int = 0,
                 ema_alpha: float = EMA_ALPHA):
        if dt <= 0:
            raise ValueError("dt must be > 0")
        self.machine = machine
        self.dt = dt
        self.ema_alpha = ema_alpha
        self.apps: dict[str, AppRuntime] = {}
        self.tick = 0
        self.rejected: list[str] = []
        self.departed: list[str] = []
        self.arrival_hook: Optional[ArrivalHook] = None
        self.departure_hook: Optional[Callable[["Simulation", str], None]] = None
        self.phase_hook: Optional[Callable[["Simulation", str], None]] = None
        self._events: list[Event] = []
        self._specs: dict[str, AppSpec] = {}
        self._rng = random.Random(seed)
        self.last_sample: Optional[PerfSample] = None
        self.migrated: dict[str, float] = {}

    @property
    def clock(self) -> float:
        return round(self.tick * self.dt, 9)

    # -- setup -----------------------------------------------------------------

    def schedule(self, scenario: ScenarioSpec) -> None:
        self._specs.update({a.id: a for a in scenario.apps})
        self._events.extend(scenario.timeline())

    def local_used(self) -> float:
        return sum(a.resident_local for a in self.apps.values())

    def local_free(self) -> float:
        return max(0.0, self.machine.local_capacity_gb - self.local_used())

    def add_app(self, spec: AppSpec, alloc: Optional[Allocation] = None) -> AppRuntime:
        """Place a new app fast-tier first, up to its limit and the free capacity."""
        phase = spec.initial_phase()
        cur = spec.with_phase(phase)
        if alloc is None:
            alloc = Allocation(cur.wss_gb, 1.0)
        local = min(cur.wss_gb, alloc.local_mem_limit_gb, self.local_free())
        rt = AppRuntime(spec, cur, alloc, local, cur.wss_gb - local, self.clock)
        self.apps[spec.id] = rt
        return rt

    def remove_app(self, app_id: str) -> None:
        self._get(app_id)
        del self.apps[app_id]
        self.departed.append(app_id)

    def set_phase(self, app_id: str, phase: WorkloadPhase) -> None:
        rt = self._get(app_id)
        old_wss = rt.wss
        rt.spec = rt.base.with_phase(phase)
        delta = rt.wss - old_wss
        if delta > 0:
            room = max(0.0, min(rt.alloc.local_mem_limit_gb, rt.wss) - rt.resident_local)
            grow_local = min(delta, room, self.local_free())
            rt.resident_local += grow_local
            rt.resident_cxl += delta - grow_local
        elif delta < 0:
            shrink = -delta
            from_cxl = min(shrink, rt.resident_cxl)
            rt.resident_cxl -= from_cxl
            rt.resident_local -= shrink - from_cxl

    def _get(self, app_id: str) -> AppRuntime:
        try:
            return self.apps[app_id]
        except KeyError:
            raise UnknownApp(app_id) from None

    # -- control surface ---------------------------------------------------------

    def apply_allocation(self, app_id: str, alloc: Allocation) -> None:
        """Set a new limit/cap. The cap acts now; residency follows at migration_rate."""
        if not (0.0 <= alloc.cpu_util_cap <= 1.0) or alloc.local_mem_limit_gb < 0:
            raise ValueError(f"invalid allocation {alloc}")
        self._get(app_id).alloc = alloc

    def numa_fault_rate(self, app_id: str) -> float:
        """Remote hint faults/s: fault_coeff * slow-tier fraction * issued accesses."""
        rt = self._get(app_id)
        return self.machine.fault_coeff * rt.p * rt.alloc.cpu_util_cap * rt.spec.access_rate

    def system_fault_rate(self) -> float:
        return sum(self.numa_fault_rate(i) for i in self.apps)

    def migrations_pending(self) -> bool:
        return any(rt.migrating for rt in self.apps.values())

    def loads(self) -> list[AppLoad]:
        return [rt.load() for rt in self.apps.values()]

    # -- time --------------------------------------------------------------------

    def _fire_events(self) -> None:
        now = self.clock
        while self._events and self._events[0].at_s <= now + _EPS:
            ev = self._events.pop(0)
            if ev.kind is EventKind.ARRIVAL:
                spec = self._specs[ev.app_id]
                alloc = self.arrival_hook(self, spec) if self.arrival_hook else None
                if self.arrival_hook and alloc is None:
                    self.rejected.append(spec.id)
                    continue
                self.add_app(spec, alloc)
            elif ev.app_id not in self.apps:
                continue
            elif ev.kind is EventKind.DEPARTURE:
                self.remove_app(ev.app_id)
                if self.departure_hook:
                    self.departure_hook(self, ev.app_id)
            elif ev.kind is EventKind.PHASE:
                self.set_phase(ev.app_id, ev.phase)
                if self.phase_hook:
                    self.phase_hook(self, ev.app_id)

    def _drain_migrations(self) -> None:
        budget = self.machine.migration_rate * self.dt
        for rt in self.apps.values():
            excess = rt.resident_local - rt.target_local
            if excess > _EPS:
                moved = min(excess, budget)
                rt.resident_local -= moved
                rt.resident_cxl += moved
                rt.migrated_gb += moved
                self.migrated[rt.id] = self.migrated.get(rt.id, 0.0) + moved
        # hottest memory (accesses per GB) is promoted first
        hot_first = sorted(self.apps.values(),
                           key=lambda r: (-r.spec.access_rate / r.wss, -r.spec.priority, r.id))
        for rt in hot_first:
            deficit = rt.target_local - rt.resident_local
            if deficit > _EPS and rt.resident_cxl > _EPS:
                moved = min(deficit, budget, self.local_free(), rt.resident_cxl)
                if moved > 0:
                    rt.resident_local += moved
                    rt.resident_cxl -= moved
                    rt.migrated_gb += moved
                    self.migrated[rt.id] = self.migrated.get(rt.id, 0.0) + moved

    def _measure(self, value: float) -> float:
        noise = self.machine.measure_noise
        if noise <= 0:
            return value
        return max(0.0, value * (1.0 + self._rng.gauss(0.0, noise)))

    def advance_tick(self) -> TickRecord:
        """Fire due events, move pages, solve contention, sample metrics."""
        now = self.clock
        try:
            self._fire_events()
            self._drain_migrations()
            sample = solve_system(self.loads(), self.machine)
        except (NoConvergence, UnknownApp) as exc:
            raise SimulationError(now, exc) from exc
        self.last_sample = sample
        a = self.ema_alpha
        rows = []
        ordered = sorted(self.apps.values(), key=lambda r: -r.spec.priority)
        for rt in ordered:
            lat = self._measure(sample.latency_ns[rt.id])
            bw = self._measure(sample.bandwidth_gbs[rt.id])
            rt.ema_latency = lat if rt.ema_latency is None else a * lat + (1 - a) * rt.ema_latency
            rt.ema_bw = bw if rt.ema_bw is None else a * bw + (1 - a) * rt.ema_bw
            rows.append(AppTick(
                app=rt.id,
                latency_ns=rt.ema_latency,
                bw_gbs=rt.ema_bw,
                local_gb=rt.resident_local,
                cxl_gb=rt.resident_cxl,
                cpu_cap=rt.alloc.cpu_util_cap,
                slo_met=rt.spec.slo.met(rt.ema_latency, rt.ema_bw),
                numa_faults=self.numa_fault_rate(rt.id),
                local_limit_gb=rt.alloc.local_mem_limit_gb,
            ))
        record = TickRecord(
            tick=self.tick,
            time=now,
            apps=tuple(rows),
            local_bw_total=sum(sample.granted_local.values()),
            numa_system=self.system_fault_rate(),
            migrating=self.migrations_pending(),
        )
        self.tick += 1
        return record


class Controller:
    """Default policy: no limits, full CPU. Subclasses override the hooks."""

    name = "none"

    def __init__(self) -> None:
        self.actions: list[dict] = []
        self.tick = 0

    def reset(self, machine: MachineSpec) -> None:
        self.actions = []
        self.tick = 0

    def on_arrival(self, sim: Simulation, spec: AppSpec) -> Optional[Allocation]:
        return Allocation(spec.initial_phase().wss_gb, 1.0)

    def on_departure(self, sim: Simulation, app_id: str) -> None:
        pass

    def on_phase(self, sim: Simulation, app_id: str) -> None:
        pass

    def on_tick(self, sim: Simulation, record: TickRecord) -> list[tuple[str, Allocation]]:
        return []

    def log(self, action: str, app: str, field_name: str, old, new, reason: str) -> None:
        self.actions.append({
            "tick": self.tick, "actor": self.name, "action": action, "app": app,
            "field": field_name, "old": _r(old), "new": _r(new), "reason": reason,
        })


def _r(v):
    return round(v, 6) if isinstance(v, float) else v


@dataclass
class Trace:
    scenario: str
    controller: str
    dt: float
    records: list[TickRecord] = field(default_factory=list)
    actions: list[dict] = field(default_factory=list)
    rejected: list[str] = field(default_factory=list)
    app_specs: dict[str, AppSpec] = field(default_factory=dict)
    migrated_gb: dict[str, float] = field(default_factory=dict)

    def rows(self):
        for rec in self.records:
            for a in rec.apps:
                yield rec.time, a

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for t, a in self.rows():
            w.writerow([f"{t:.6f}", a.app, f"{a.latency_ns:.6f}", f"{a.bw_gbs:.6f}",
                        f"{a.local_gb:.6f}", f"{a.cxl_gb:.6f}", f"{a.cpu_cap:.6f}",
                        int(a.slo_met), f"{a.numa_faults:.6f}"])
        return buf.getvalue()

    def series(self, app_id: str) -> list[tuple[float, AppTick]]:
        return [(t, a) for t, a in self.rows() if a.app == app_id]


def run_scenario(scenario: ScenarioSpec, controller: Optional[Controller] = None,
                 seed: Optional[int] = None) -> Trace:
    """Run ``scenario`` from t=0 to its horizon under ``controller``."""
    controller = controller or Controller()
    controller.reset(scenario.machine)
    sim = Simulation(scenario.machine, scenario.tick_s,
                     scenario.seed if seed is None else seed)
    sim.arrival_hook = controller.on_arrival
    sim.departure_hook = controller.on_departure
    sim.phase_hook = controller.on_phase
    sim.schedule(scenario)
    trace = Trace(scenario.name, controller.name, scenario.tick_s,
                  app_specs={a.id: a for a in scenario.apps})
    n_ticks = int(round(scenario.horizon_s / scenario.tick_s))
    for _ in range(n_ticks):
        controller.tick = sim.tick
        rec = sim.advance_tick()
        trace.records.append(rec)
        for app_id, alloc in controller.on_tick(sim, rec):
            sim.apply_allocation(app_id, alloc)
    trace.actions = list(controller.actions)
    trace.rejected = list(sim.rejected)
    trace.migrated_gb = dict(sim.migrated)
    return trace
