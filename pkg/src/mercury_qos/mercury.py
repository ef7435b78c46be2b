"""QoS controller: priority registry, admission, yield primitives, periodic adaptation.

Resources are a per-app fast-tier memory limit and a CPU utilization cap.
Every reduction taken on behalf of an app comes from strictly lower-priority
apps, in ascending priority order.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Optional

from .core import Allocation, AppClass, AppSpec, MachineSpec, Thresholds
from .perfmodel import AppLoad, PerfSample, solve_system
from .profiler import MEM_GRID_GB, ProfileResult, calibrate_thresholds, profile_app
from .tiersim import Controller, Simulation, TickRecord

ACT_BAND = 0.02    # act when worse than the SLO by more than this
YIELD_BAND = 0.10  # yield only when better than the SLO by more than this
GAIN_MARGIN = 0.0  # slack a gain must leave to every higher-priority app
MEM_STEP = 0.5
CPU_STEP = 0.05
CPU_FLOOR = 0.05
_EPS = 1e-9


class RejectedInadmissible(Exception):
    pass


class RejectedUnprofiled(Exception):
    pass


@dataclass
class Entry:
    spec: AppSpec
    profile: ProfileResult
    alloc: Allocation

    @property
    def id(self) -> str:
        return self.spec.id

    @property
    def priority(self) -> int:
        return self.spec.priority

    @property
    def is_bi(self) -> bool:
        return self.spec.app_class is AppClass.BI

    @property
    def limit(self) -> float:
        return min(self.alloc.local_mem_limit_gb, self.spec.wss_gb)

    @property
    def cpu(self) -> float:
        return self.alloc.cpu_util_cap

    def load(self) -> AppLoad:
        w = self.spec.wss_gb
        p = max(0.0, (w - self.limit) / w)
        return AppLoad(self.id, self.spec.app_class, p, self.cpu, self.spec.full_util_bw())


@dataclass
class ControllerState:
    machine: MachineSpec
    thresholds: Thresholds
    entries: dict[str, Entry] = field(default_factory=dict)

    def ordered(self, descending: bool = True) -> list[Entry]:
        return sorted(self.entries.values(), key=lambda e: e.priority, reverse=descending)

    def below(self, priority: int) -> list[Entry]:
        """Apps strictly below ``priority``, lowest first (victim order)."""
        return [e for e in self.ordered(descending=False) if e.priority < priority]

    def free_local(self) -> float:
        return self.machine.local_capacity_gb - sum(e.limit for e in self.entries.values())

    def predict(self) -> PerfSample:
        return solve_system([e.load() for e in self.ordered()], self.machine)

    def slack(self, e: Entry, sample: PerfSample) -> float:
        return e.spec.slo.slack(sample.latency_ns[e.id], sample.bandwidth_gbs[e.id])

    def fault_rate(self) -> float:
        m = self.machine
        return sum(m.fault_coeff * ld.p * ld.cpu_cap * e.spec.access_rate
                   for e in self.entries.values() for ld in [e.load()])

    def accounted_local_bw(self) -> float:
        return sum(e.load().offered_local for e in self.entries.values())

    def higher_ls_exists(self, priority: int) -> bool:
        return any(not e.is_bi and e.priority > priority for e in self.entries.values())

    def max_mem_drop(self, e: Entry) -> float:
        """Largest limit cut on ``e`` that keeps the system fault rate under thresh_numa."""
        budget = self.thresholds.thresh_numa - self.fault_rate()
        per_gb = self.machine.fault_coeff * e.cpu * e.spec.access_rate / e.spec.wss_gb
        if per_gb <= 0:
            return math.inf
        return max(0.0, budget / per_gb)

    def set(self, e: Entry, alloc: Allocation) -> None:
        e.alloc = alloc


@dataclass(frozen=True)
class AdmitDecision:
    admitted: bool
    allocation: Optional[Allocation] = None
    reason: str = ""
    side_effects: tuple[tuple[str, Allocation], ...] = ()


@dataclass
class Change:
    app: str
    action: str
    field: str
    old: float
    new: float
    reason: str


def _cpu(u: float) -> float:
    """Clamp a CPU cap to [floor, 1] on a 1e-6 grid so repeated steps do not drift."""
    return round(min(1.0, max(CPU_FLOOR, u)), 6)


def _record(changes: list[Change], e: Entry, new: Allocation, action: str, reason: str) -> None:
    if abs(new.local_mem_limit_gb - e.alloc.local_mem_limit_gb) > _EPS:
        changes.append(Change(e.id, action, "local_mem_limit_gb",
                              e.alloc.local_mem_limit_gb, new.local_mem_limit_gb, reason))
    if abs(new.cpu_util_cap - e.alloc.cpu_util_cap) > _EPS:
        changes.append(Change(e.id, action, "cpu_util_cap",
                              e.alloc.cpu_util_cap, new.cpu_util_cap, reason))
    e.alloc = new


# -- yield primitives ------------------------------------------------------------


def yield_mem(state: ControllerState, requester_priority: int, amount_gb: float,
              max_per_victim: float = math.inf,
              changes: Optional[list[Change]] = None,
              beneficiary: str = "") -> tuple[float, list[tuple[str, Allocation]]]:
    """Lower victims' fast-tier limits, lowest priority first, until ``amount_gb`` is gathered."""
    changes = [] if changes is None else changes
    gathered = 0.0
    effects: list[tuple[str, Allocation]] = []
    for v in state.below(requester_priority):
        want = amount_gb - gathered
        if want <= _EPS:
            break
        take = min(v.limit, want, max_per_victim, state.max_mem_drop(v))
        if take <= _EPS:
            continue
        new = Allocation(v.limit - take, v.cpu)
        _record(changes, v, new, "yield_mem", f"yield_mem:for={beneficiary}")
        effects.append((v.id, new))
        gathered += take
    return gathered, effects


def _victim_step(state: ControllerState, v: Entry) -> Optional[tuple[Allocation, str]]:
    """Next bandwidth cut on a BI victim: memory while the fault guard allows, then CPU."""
    if v.limit > _EPS:
        d = min(MEM_STEP, v.limit, state.max_mem_drop(v))
        if d > _EPS:
            return Allocation(v.limit - d, v.cpu), "mem"
        if v.cpu > CPU_FLOOR + _EPS:
            return Allocation(v.limit, _cpu(v.cpu - CPU_STEP)), "numa_guard"
        return None
    if v.cpu > CPU_FLOOR + _EPS:
        return Allocation(v.limit, _cpu(v.cpu - CPU_STEP)), "mem_exhausted"
    return None


def _helpful_step(state: ControllerState, v: Entry,
                  e: Entry) -> Optional[tuple[Allocation, str]]:
    """A cut on victim ``v`` that the model says improves ``e``: memory first, else CPU."""
    candidates = []
    if v.limit > _EPS:
        d = min(MEM_STEP, v.limit, state.max_mem_drop(v))
        if d > _EPS:
            candidates.append((Allocation(v.limit - d, v.cpu), "mem"))
    if v.cpu > CPU_FLOOR + _EPS:
        if v.limit <= _EPS:
            why = "mem_exhausted"
        elif not candidates:
            why = "numa_guard"
        else:
            why = "mem_no_gain"
        candidates.append((Allocation(v.limit, _cpu(v.cpu - CPU_STEP)), why))
    if not candidates:
        return None
    base = state.slack(e, state.predict())
    old = v.alloc
    try:
        for alloc, why in candidates:
            v.alloc = alloc
            if state.slack(e, state.predict()) > base + 1e-9:
                return alloc, why
    finally:
        v.alloc = old
    return None


def bw_reducible(state: ControllerState, e: Entry) -> bool:
    """Whether some lower-priority BI app can still be cut to the benefit of ``e``."""
    return any(v.is_bi and _helpful_step(state, v, e) is not None
               for v in state.below(e.priority))


def yield_bw(state: ControllerState, requester_priority: int, amount_gbs: float,
             changes: Optional[list[Change]] = None,
             beneficiary: str = "") -> tuple[float, list[tuple[str, Allocation]]]:
    """Cut lower-priority BI apps' bandwidth, lowest priority first.

    Each victim's fast-tier limit is lowered first; once that would push the
    remote fault rate past thresh_numa, its CPU cap is lowered instead.
    """
    changes = [] if changes is None else changes
    gathered = 0.0
    effects: list[tuple[str, Allocation]] = []
    for v in state.below(requester_priority):
        if not v.is_bi:
            continue
        while gathered < amount_gbs - _EPS:
            step = _victim_step(state, v)
            if step is None:
                break
            new, why = step
            before = state.predict().bandwidth_gbs[v.id]
            _record(changes, v, new, "yield_bw", f"yield_bw:{why}:for={beneficiary}")
            after = state.predict().bandwidth_gbs[v.id]
            gathered += max(0.0, before - after)
            effects.append((v.id, new))
    return gathered, effects


def yield_bw_step(state: ControllerState, e: Entry, changes: list[Change]) -> bool:
    """One interference-mitigation step for ``e``: cut the lowest-priority BI app that helps."""
    for v in state.below(e.priority):
        if not v.is_bi:
            continue
        step = _helpful_step(state, v, e)
        if step is not None:
            new, why = step
            _record(changes, v, new, "yield_bw", f"yield_bw:{why}:for={e.id}")
            return True
    return False


# -- admission ---------------------------------------------------------------------


def admit(app: AppSpec, profile: Optional[ProfileResult],
          state: ControllerState) -> AdmitDecision:
    """Initial allocation for ``app``; side effects only shrink lower-priority apps."""
    if profile is None:
        raise RejectedUnprofiled(app.id)
    if not profile.admissible:
        raise RejectedInadmissible(app.id)
    if app.id in state.entries:
        raise ValueError(f"{app.id} already admitted")
    work = copy.deepcopy(state)
    changes: list[Change] = []
    need = min(profile.profiled_mem_limit_gb, app.wss_gb)
    if work.free_local() >= need:
        mem = need
    else:
        yield_mem(work, app.priority, need - max(0.0, work.free_local()),
                  changes=changes, beneficiary=app.id)
        mem = min(need, max(0.0, work.free_local()))
    cpu = profile.profiled_cpu_util if app.app_class is AppClass.BI else 1.0
    entry = Entry(app, profile, Allocation(mem, cpu))

    if app.app_class is AppClass.BI:
        cap = (work.thresholds.thresh_local_bw if work.higher_ls_exists(app.priority)
               else work.machine.local_bw_cap)
        need_bw = entry.load().offered_local
        avail = cap - work.accounted_local_bw()
        if avail < need_bw:
            yield_bw(work, app.priority, need_bw - avail, changes=changes, beneficiary=app.id)
            avail = cap - work.accounted_local_bw()
            granted_bw = max(0.0, min(need_bw, avail))
            if granted_bw < need_bw:
                # stop assigning fast-tier bandwidth: shrink the local share accordingly
                frac = granted_bw / (cpu * app.full_util_bw()) if app.full_util_bw() > 0 else 0.0
                mem = min(mem, math.floor(frac * app.wss_gb / MEM_GRID_GB) * MEM_GRID_GB)
                entry.alloc = Allocation(mem, cpu)

    effects: dict[str, Allocation] = {}
    for ch in changes:
        effects[ch.app] = work.entries[ch.app].alloc
    return AdmitDecision(True, entry.alloc, "admitted", tuple(effects.items()))


# -- adaptation --------------------------------------------------------------------


@dataclass(frozen=True)
class Measurement:
    latency_ns: float
    bw_gbs: float
    slo_met: bool


def _gain_permitted(state: ControllerState, e: Entry, new: Allocation) -> bool:
    """Whether ``e`` may move to ``new`` without breaking guards or higher-priority SLOs."""
    before_sample = state.predict()
    before_faults = state.fault_rate()
    before_bw = state.accounted_local_bw()
    old = e.alloc
    e.alloc = new
    try:
        after = state.predict()
        faults = state.fault_rate()
        if faults > state.thresholds.thresh_numa + _EPS and faults > before_faults + _EPS:
            return False
        if e.is_bi and state.higher_ls_exists(e.priority):
            bw = state.accounted_local_bw()
            if bw > state.thresholds.thresh_local_bw + _EPS and bw > before_bw + _EPS:
                return False
        for h in state.entries.values():
            if h.priority <= e.priority:
                continue
            s_after = state.slack(h, after)
            if s_after < GAIN_MARGIN and s_after < state.slack(h, before_sample) - 1e-9:
                return False
        return True
    finally:
        e.alloc = old


def _self_cut_ok(state: ControllerState, e: Entry, new: Allocation) -> bool:
    """A voluntary yield must not drop the app below its SLO or hurt higher priorities."""
    before = state.predict()
    old = e.alloc
    e.alloc = new
    try:
        after = state.predict()
        if state.slack(e, after) < 0:
            return False
        for h in state.entries.values():
            if h.priority > e.priority:
                s = state.slack(h, after)
                if s < GAIN_MARGIN and s < state.slack(h, before) - 1e-9:
                    return False
        return True
    finally:
        e.alloc = old


def yield_resource(state: ControllerState, e: Entry, changes: list[Change],
                   contended: bool = True) -> None:
    """Give back resources an app does not need.

    Memory is only handed back while some app is short of its SLO; with nobody
    waiting, demoting pages would just add slow-tier traffic.
    """
    floor = 0.0 if e.is_bi else min(e.profile.profiled_mem_limit_gb or 0.0, e.spec.wss_gb)
    if contended and e.limit > floor + _EPS:
        d = min(MEM_STEP, e.limit - floor, state.max_mem_drop(e))
        if d > _EPS:
            new = Allocation(e.limit - d, e.cpu)
            if _self_cut_ok(state, e, new):
                _record(changes, e, new, "yield_resource", "slo_slack")
            return
        if not e.is_bi:
            return
    if e.is_bi and e.cpu > CPU_FLOOR + _EPS:
        new = Allocation(e.limit, _cpu(e.cpu - CPU_STEP))
        if _self_cut_ok(state, e, new):
            why = "slo_slack:numa_guard" if e.limit > _EPS else "slo_slack:mem_exhausted"
            _record(changes, e, new, "yield_resource", why)


def _grow_mem(state: ControllerState, e: Entry, want: float, changes: list[Change],
              action: str) -> bool:
    """Give ``e`` up to ``want`` GB, free memory first, then from lower priorities."""
    gain = want
    while gain > _EPS and not _gain_permitted(state, e, Allocation(e.limit + gain, e.cpu)):
        gain = gain / 2 if gain > MEM_GRID_GB else 0.0
    if gain <= _EPS:
        return False
    free = max(0.0, state.free_local())
    if gain > free + _EPS:
        got, _ = yield_mem(state, e.priority, gain - free, changes=changes, beneficiary=e.id)
        gain = min(gain, free + got)
    if gain <= _EPS:
        return False
    _record(changes, e, Allocation(e.limit + gain, e.cpu), action, "slo_violation")
    return True


def shore_up(state: ControllerState, e: Entry, changes: list[Change]) -> bool:
    """Give a step of headroom to the highest-priority app above ``e`` sitting at its SLO edge.

    Called when every step for ``e`` is blocked by such an app. The memory comes
    from the free pool, then from apps below that app in ascending priority (which
    may include ``e``). The whole transfer is tried on a copy first: it must
    improve the app, leave it inside the yield band so it is not handed straight
    back, and keep every app above it on target.
    """
    for h in state.ordered():
        if h.priority <= e.priority:
            break
        room = h.spec.wss_gb - h.limit
        before = state.predict()
        if room <= _EPS or state.slack(h, before) >= YIELD_BAND:
            continue
        gain = min(MEM_STEP, room)
        while gain > _EPS:
            trial = copy.deepcopy(state)
            trial_changes: list[Change] = []
            if _transfer(trial, trial.entries[h.id], gain, trial_changes, e.id):
                after = trial.predict()
                th = trial.entries[h.id]
                s_before, s_after = state.slack(h, before), trial.slack(th, after)
                above_ok = all(
                    trial.slack(g, after) >= GAIN_MARGIN or
                    trial.slack(g, after) >= state.slack(state.entries[g.id], before) - 1e-9
                    for g in trial.entries.values() if g.priority > h.priority)
                if s_before + 1e-9 < s_after < YIELD_BAND and above_ok:
                    _transfer(state, h, gain, changes, e.id)
                    return True
            gain = gain / 2 if gain > MEM_GRID_GB else 0.0
    return False


def _transfer(state: ControllerState, h: Entry, gain: float, changes: list[Change],
              blocked: str) -> bool:
    """Raise ``h``'s limit by ``gain`` from free memory, then from lower priorities."""
    free = max(0.0, state.free_local())
    if gain > free + _EPS:
        got, _ = yield_mem(state, h.priority, gain - free, changes=changes, beneficiary=h.id)
        gain = min(gain, free + got)
    if gain <= _EPS:
        return False
    _record(changes, h, Allocation(h.limit + gain, h.cpu), "grow_mem", f"headroom:for={blocked}")
    return True


def remediate(state: ControllerState, e: Entry, changes: list[Change]) -> None:
    # (1) a throttled BI app first gets its CPU back
    if e.is_bi and e.cpu < 1.0 - _EPS:
        new = Allocation(e.limit, _cpu(e.cpu + CPU_STEP))
        if _gain_permitted(state, e, new):
            _record(changes, e, new, "raise_cpu", "slo_violation")
            return
    # (2) interference from lower-priority BI apps
    if yield_bw_step(state, e, changes):
        return
    # (3) more fast-tier memory, if some of the app still lives on the slow tier
    if e.limit < e.spec.wss_gb - _EPS:
        if _grow_mem(state, e, min(MEM_STEP, e.spec.wss_gb - e.limit), changes, "grow_mem"):
            return
    # blocked by a higher-priority app at its edge: give that app headroom instead
    shore_up(state, e, changes)


def work_conservation(state: ControllerState, changes: list[Change]) -> None:
    for e in state.ordered():
        free = state.free_local()
        if free <= MEM_GRID_GB:
            return
        room = e.spec.wss_gb - e.limit
        if room <= _EPS:
            continue
        gain = min(free, room)
        while gain > _EPS and not _gain_permitted(state, e, Allocation(e.limit + gain, e.cpu)):
            gain = gain / 2 if gain > MEM_GRID_GB else 0.0
        if gain > _EPS:
            _record(changes, e, Allocation(e.limit + gain, e.cpu), "work_conservation", "all_slo_met")


def adapt_tick(state: ControllerState, measurements: dict[str, Measurement]) -> list[Change]:
    """One adaptation period; returns the allocation changes in the order they were made."""
    changes: list[Change] = []
    contended = any(
        state.entries[i].spec.slo.slack(m.latency_ns, m.bw_gbs) < -ACT_BAND
        for i, m in measurements.items() if i in state.entries
    )
    for e in state.ordered():
        m = measurements.get(e.id)
        if m is None:
            continue
        measured = e.spec.slo.slack(m.latency_ns, m.bw_gbs)
        predicted = state.slack(e, state.predict())
        if measured > YIELD_BAND and predicted > YIELD_BAND:
            yield_resource(state, e, changes, contended)
        elif measured < -ACT_BAND and predicted < 0:
            remediate(state, e, changes)
    if measurements and all(m.slo_met for m in measurements.values()):
        work_conservation(state, changes)
    return changes


# -- controller wrapper --------------------------------------------------------------


class MercuryController(Controller):
    name = "mercury"

    def __init__(self, thresholds: Optional[Thresholds] = None):
        super().__init__()
        self._fixed_thresholds = thresholds
        self.state: Optional[ControllerState] = None

    def reset(self, machine: MachineSpec) -> None:
        super().reset(machine)
        th = self._fixed_thresholds or calibrate_thresholds(machine)
        self.state = ControllerState(machine, th)

    def _emit(self, changes: list[Change]) -> None:
        for ch in changes:
            self.log(ch.action, ch.app, ch.field, ch.old, ch.new, ch.reason)

    def on_arrival(self, sim: Simulation, spec: AppSpec) -> Optional[Allocation]:
        cur = spec.with_phase(spec.initial_phase())
        profile = profile_app(cur, self.state.machine)
        try:
            decision = admit(cur, profile, self.state)
        except RejectedInadmissible:
            self.log("reject", spec.id, "admission", 0.0, 0.0, "RejectedInadmissible")
            return None
        for victim, alloc in decision.side_effects:
            e = self.state.entries[victim]
            _record_changes = []
            _record(_record_changes, e, alloc, "yield_mem" if abs(alloc.cpu_util_cap - e.cpu) < _EPS
                    else "yield_bw", f"admit:for={spec.id}")
            self._emit(_record_changes)
            sim.apply_allocation(victim, alloc)
        self.state.entries[spec.id] = Entry(cur, profile, decision.allocation)
        self.log("admit", spec.id, "local_mem_limit_gb", 0.0,
                 decision.allocation.local_mem_limit_gb, "admitted")
        self.log("admit", spec.id, "cpu_util_cap", 0.0, decision.allocation.cpu_util_cap, "admitted")
        return decision.allocation

    def on_departure(self, sim: Simulation, app_id: str) -> None:
        self.state.entries.pop(app_id, None)
        self.log("depart", app_id, "local_mem_limit_gb", 0.0, 0.0, "departure")

    def on_phase(self, sim: Simulation, app_id: str) -> None:
        e = self.state.entries.get(app_id)
        if e is None:
            return
        e.spec = sim.apps[app_id].spec
        if e.alloc.local_mem_limit_gb > e.spec.wss_gb:
            changes: list[Change] = []
            _record(changes, e, Allocation(e.spec.wss_gb, e.cpu), "clamp", "wss_shrink")
            self._emit(changes)
            sim.apply_allocation(app_id, e.alloc)

    def on_tick(self, sim: Simulation, record: TickRecord) -> list[tuple[str, Allocation]]:
        meas = {a.app: Measurement(a.latency_ns, a.bw_gbs, a.slo_met)
                for a in record.apps if a.app in self.state.entries}
        changes = adapt_tick(self.state, meas)
        self._emit(changes)
        touched = dict.fromkeys(ch.app for ch in changes)
        return [(app, self.state.entries[app].alloc) for app in touched]
