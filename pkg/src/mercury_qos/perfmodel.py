"""Closed-form latency/bandwidth model of a two-tier memory system.

Each tier has its own request queue; requests to the slow tier also steal
cycles from the cores serving the fast tier, which is what makes moving a
bandwidth hog entirely onto the slow tier worse than leaving part of it local.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import AppClass, MachineSpec

RHO_CAP = 0.99


class NoConvergence(RuntimeError):
    pass


def queue_delay(rho: float, k: float) -> float:
    """Queueing delay in ns at utilization ``rho``: k*rho^2 / (1 - min(rho, 0.99))."""
    if rho <= 0:
        return 0.0
    return k * rho * rho / (1.0 - min(rho, RHO_CAP))


def inter_tier_pressure(offered_cxl_bw: float, machine: MachineSpec) -> float:
    """Delay added to fast-tier requests by slow-tier traffic (offered, not granted)."""
    x = max(offered_cxl_bw, 0.0) / machine.cxl_bw_cap
    return machine.coupling_c * x * x


def tier_share(demands: Sequence[float], capacity: float) -> list[float]:
    """Max-min fair (water-filling) split of ``capacity`` among ``demands``."""
    n = len(demands)
    granted = [0.0] * n
    if n == 0:
        return granted
    remaining = float(capacity)
    order = sorted(range(n), key=lambda i: demands[i])
    left = n
    for i in order:
        fair = remaining / left
        give = min(max(demands[i], 0.0), fair)
        granted[i] = give
        remaining -= give
        left -= 1
    return granted


@dataclass(frozen=True)
class TierLoad:
    offered_local_bw: float
    offered_cxl_bw: float


@dataclass(frozen=True)
class AppLoad:
    """One app's contribution to the tiers: slow-tier fraction, cpu cap, full-util bandwidth."""

    app_id: str
    app_class: AppClass
    p: float
    cpu_cap: float
    full_bw: float

    @property
    def offered_local(self) -> float:
        return self.cpu_cap * (1.0 - self.p) * self.full_bw

    @property
    def offered_cxl(self) -> float:
        return self.cpu_cap * self.p * self.full_bw


@dataclass(frozen=True)
class PerfSample:
    latency_ns: dict[str, float]
    bandwidth_gbs: dict[str, float]
    util_local: float
    util_cxl: float
    offered_local_bw: float
    offered_cxl_bw: float
    granted_local: dict[str, float]
    granted_cxl: dict[str, float]
    iterations: int = 1


def tier_latencies(loads: TierLoad, machine: MachineSpec) -> tuple[float, float]:
    """Effective per-access latency of the fast and slow tier under ``loads``."""
    rho_loc = min(loads.offered_local_bw, machine.local_bw_cap) / machine.local_bw_cap
    rho_cxl = min(loads.offered_cxl_bw, machine.cxl_bw_cap) / machine.cxl_bw_cap
    local = (machine.lat_local_base + queue_delay(rho_loc, machine.kq_local)
             + inter_tier_pressure(loads.offered_cxl_bw, machine))
    cxl = machine.lat_cxl_base + queue_delay(rho_cxl, machine.kq_cxl)
    return local, cxl


def ls_access_latency(p: float, loads: TierLoad, machine: MachineSpec) -> float:
    """Mean access latency of an app with slow-tier fraction ``p``."""
    local, cxl = tier_latencies(loads, machine)
    return (1.0 - p) * local + p * cxl


def bi_offered(demand: float, p: float, u: float) -> tuple[float, float]:
    return u * (1.0 - p) * demand, u * p * demand


def bi_achieved_bandwidth(
    demand: float,
    p: float,
    u: float,
    machine: MachineSpec,
    others_local: Sequence[float] = (),
    others_cxl: Sequence[float] = (),
) -> float:
    """Bandwidth a BI app gets when sharing each tier with the given other demands."""
    off_loc, off_cxl = bi_offered(demand, p, u)
    g_loc = tier_share([off_loc, *others_local], machine.local_bw_cap)[0]
    g_cxl = tier_share([off_cxl, *others_cxl], machine.cxl_bw_cap)[0]
    return g_loc + g_cxl


def _grants(loads: Sequence[AppLoad], machine: MachineSpec) -> tuple[list[float], list[float]]:
    g_loc = tier_share([a.offered_local for a in loads], machine.local_bw_cap)
    g_cxl = tier_share([a.offered_cxl for a in loads], machine.cxl_bw_cap)
    return g_loc, g_cxl


def solve_system(
    loads: Sequence[AppLoad],
    machine: MachineSpec,
    damping: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> PerfSample:
    """Compute every app's latency and bandwidth under simultaneous contention.

    Grants are iterated to a damped fixed point. With offered loads independent
    of grants the map is constant and the loop exits on its first check.
    """
    g_loc, g_cxl = _grants(loads, machine)
    for it in range(1, max_iter + 1):
        n_loc, n_cxl = _grants(loads, machine)
        err = max(
            [abs(a - b) / max(abs(b), 1e-12) for a, b in zip(g_loc + g_cxl, n_loc + n_cxl)],
            default=0.0,
        )
        if err <= tol:
            g_loc, g_cxl = n_loc, n_cxl
            break
        g_loc = [damping * a + (1 - damping) * b for a, b in zip(g_loc, n_loc)]
        g_cxl = [damping * a + (1 - damping) * b for a, b in zip(g_cxl, n_cxl)]
    else:
        raise NoConvergence(f"contention closure did not converge in {max_iter} iterations")

    tl = TierLoad(sum(a.offered_local for a in loads), sum(a.offered_cxl for a in loads))
    local_lat, cxl_lat = tier_latencies(tl, machine)
    latency = {a.app_id: (1.0 - a.p) * local_lat + a.p * cxl_lat for a in loads}
    bandwidth = {a.app_id: gl + gc for a, gl, gc in zip(loads, g_loc, g_cxl)}
    return PerfSample(
        latency_ns=latency,
        bandwidth_gbs=bandwidth,
        util_local=sum(g_loc) / machine.local_bw_cap,
        util_cxl=sum(g_cxl) / machine.cxl_bw_cap,
        offered_local_bw=tl.offered_local_bw,
        offered_cxl_bw=tl.offered_cxl_bw,
        granted_local={a.app_id: g for a, g in zip(loads, g_loc)},
        granted_cxl={a.app_id: g for a, g in zip(loads, g_cxl)},
        iterations=it,
    )
