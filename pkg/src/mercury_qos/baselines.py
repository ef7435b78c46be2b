"""Reference policies: hotness tiering (TPP-like), latency balancing (Colloid-like), FCFS."""

from __future__ import annotations

from enum import Enum
from typing import Optional, Sequence

from .core import Allocation, AppClass, AppSpec, MachineSpec
from .mercury import AdmitDecision
from .perfmodel import TierLoad, tier_latencies
from .profiler import ProfileResult, profile_app
from .tiersim import AppRuntime, Controller, Simulation, TickRecord

_EPS = 1e-9


class BaselineKind(str, Enum):
    TPP = "TppLike"
    COLLOID = "ColloidLike"
    FCFS = "Fcfs"


class RejectedNoCapacity(Exception):
    pass


def weighted_fill(weights: Sequence[float], caps: Sequence[float], capacity: float) -> list[float]:
    """Split ``capacity`` proportionally to ``weights``, each share capped, surplus redistributed."""
    n = len(weights)
    out = [0.0] * n
    active = [i for i in range(n) if caps[i] > 0]
    left = float(capacity)
    while active and left > _EPS:
        total_w = sum(weights[i] for i in active)
        if total_w <= 0:
            # nobody is hot: split the rest evenly
            share = {i: left / len(active) for i in active}
        else:
            share = {i: left * weights[i] / total_w for i in active}
        saturated = [i for i in active if out[i] + share[i] >= caps[i] - _EPS]
        if not saturated:
            for i in active:
                out[i] += share[i]
            break
        for i in saturated:
            left -= caps[i] - out[i]
            out[i] = caps[i]
        active = [i for i in active if i not in saturated]
    return out


def tpp_targets(apps: Sequence[AppSpec], machine: MachineSpec) -> dict[str, float]:
    """Local residency by hotness alone; priority and SLO play no part."""
    ordered = sorted(apps, key=lambda a: a.id)
    fill = weighted_fill([a.access_rate for a in ordered], [a.wss_gb for a in ordered],
                         machine.local_capacity_gb)
    return {a.id: f for a, f in zip(ordered, fill)}


def tpp_tick(apps: Sequence[AppSpec], current: dict[str, Allocation],
             machine: MachineSpec) -> list[tuple[str, Allocation]]:
    targets = tpp_targets(apps, machine)
    out = []
    for app_id, limit in sorted(targets.items()):
        cur = current.get(app_id)
        if cur is None or abs(cur.local_mem_limit_gb - limit) > 1e-6 or cur.cpu_util_cap != 1.0:
            out.append((app_id, Allocation(limit, 1.0)))
    return out


def colloid_tick(apps: Sequence[AppRuntime], machine: MachineSpec,
                 dt: float) -> list[tuple[str, Allocation]]:
    """Move one migration budget of pages toward whichever tier is currently faster."""
    if not apps:
        return []
    loads = [rt.load() for rt in apps]
    tl = TierLoad(sum(ld.offered_local for ld in loads), sum(ld.offered_cxl for ld in loads))
    local_lat, cxl_lat = tier_latencies(tl, machine)
    step = machine.migration_rate * dt
    out = []
    if local_lat > cxl_lat + _EPS:
        for rt in sorted(apps, key=lambda r: r.id):
            if rt.resident_local > _EPS:
                out.append((rt.id, Allocation(max(0.0, rt.resident_local - step), 1.0)))
    elif local_lat < cxl_lat - _EPS:
        free = machine.local_capacity_gb - sum(rt.alloc.local_mem_limit_gb for rt in apps)
        for rt in sorted(apps, key=lambda r: (-r.spec.access_rate / r.wss, r.id)):
            room = rt.wss - rt.alloc.local_mem_limit_gb
            give = min(step, room, free)
            if give > _EPS:
                out.append((rt.id, Allocation(rt.alloc.local_mem_limit_gb + give, 1.0)))
                free -= give
    return out


def fcfs_admit(app: AppSpec, profile: Optional[ProfileResult], free_local_gb: float,
               free_cxl_gb: float = float("inf"), local_bw_free: float = float("inf"),
               ) -> AdmitDecision:
    """Grant what the profile asks for out of whatever is left; nobody else is touched."""
    if free_local_gb + free_cxl_gb < app.wss_gb - _EPS:
        raise RejectedNoCapacity(app.id)
    want = app.wss_gb
    if profile is not None and profile.admissible:
        want = profile.profiled_mem_limit_gb
    mem = max(0.0, min(want, free_local_gb))
    cpu = 1.0
    if app.app_class is AppClass.BI and profile is not None and profile.profiled_cpu_util:
        cpu = profile.profiled_cpu_util
    if app.app_class is AppClass.BI and app.demand_bw > 0:
        # fast-tier bandwidth is the other thing that can run out
        local_bw = cpu * app.demand_bw * mem / app.wss_gb
        if local_bw > local_bw_free:
            mem = max(0.0, local_bw_free) * app.wss_gb / (cpu * app.demand_bw)
    return AdmitDecision(True, Allocation(mem, cpu), "admitted")


class TppController(Controller):
    name = "tpp"

    def on_arrival(self, sim: Simulation, spec: AppSpec) -> Optional[Allocation]:
        cur = spec.with_phase(spec.initial_phase())
        apps = [rt.spec for rt in sim.apps.values()] + [cur]
        return Allocation(tpp_targets(apps, sim.machine)[spec.id], 1.0)

    def on_tick(self, sim: Simulation, record: TickRecord) -> list[tuple[str, Allocation]]:
        current = {i: rt.alloc for i, rt in sim.apps.items()}
        out = tpp_tick([rt.spec for rt in sim.apps.values()], current, sim.machine)
        for app_id, alloc in out:
            self.log("retier", app_id, "local_mem_limit_gb",
                     current[app_id].local_mem_limit_gb, alloc.local_mem_limit_gb, "hotness")
        return out


class ColloidController(Controller):
    name = "colloid"

    def on_arrival(self, sim: Simulation, spec: AppSpec) -> Optional[Allocation]:
        cur = spec.with_phase(spec.initial_phase())
        return Allocation(min(cur.wss_gb, sim.local_free()), 1.0)

    def on_tick(self, sim: Simulation, record: TickRecord) -> list[tuple[str, Allocation]]:
        out = colloid_tick(list(sim.apps.values()), sim.machine, sim.dt)
        for app_id, alloc in out:
            old = sim.apps[app_id].alloc.local_mem_limit_gb
            why = "local_slower" if alloc.local_mem_limit_gb < old else "local_faster"
            self.log("balance", app_id, "local_mem_limit_gb", old, alloc.local_mem_limit_gb, why)
        return out


class FcfsController(Controller):
    name = "fcfs"

    def on_arrival(self, sim: Simulation, spec: AppSpec) -> Optional[Allocation]:
        cur = spec.with_phase(spec.initial_phase())
        m = sim.machine
        held = sum(rt.alloc.local_mem_limit_gb for rt in sim.apps.values())
        cxl_used = sum(rt.resident_cxl for rt in sim.apps.values())
        bw_used = sum(rt.load().offered_local for rt in sim.apps.values())
        try:
            d = fcfs_admit(cur, profile_app(cur, m), max(0.0, m.local_capacity_gb - held),
                           m.cxl_capacity_gb - cxl_used, m.local_bw_cap - bw_used)
        except RejectedNoCapacity:
            self.log("reject", spec.id, "admission", 0.0, 0.0, "RejectedNoCapacity")
            return None
        self.log("admit", spec.id, "local_mem_limit_gb", 0.0, d.allocation.local_mem_limit_gb,
                 "fcfs")
        return d.allocation


def make_controller(name: str) -> Controller:
    from .mercury import MercuryController

    table = {
        "mercury": MercuryController,
        "tpp": TppController,
        "colloid": ColloidController,
        "fcfs": FcfsController,
        "none": Controller,
    }
    try:
        return table[name]()
    except KeyError:
        raise ValueError(f"unknown controller {name!r}; choose from {sorted(table)}") from None


CONTROLLERS = ("mercury", "tpp", "colloid", "fcfs", "none")
