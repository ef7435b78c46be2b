"""Offline per-app profiling and one-time machine threshold calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

from .core import ACCESS_BYTES, AppClass, AppSpec, MachineSpec, Thresholds
from .perfmodel import AppLoad, TierLoad, ls_access_latency, solve_system

MEM_GRID_GB = 0.25
CPU_GRID = 0.01
BW_SWEEP_STEP = 1.0
P_SWEEP_STEPS = 20  # 0.05 interleave steps
DEGRADATION = 0.10
PROBE_WSS_GB = 4.0


class CalibrationUnreachable(RuntimeError):
    pass


@dataclass(frozen=True)
class ProfileResult:
    admissible: bool
    profiled_mem_limit_gb: Optional[float] = None
    profiled_bw: Optional[float] = None
    profiled_cpu_util: Optional[float] = None

    def to_json(self) -> dict:
        return {
            "admissible": self.admissible,
            "mem_limit_gb": self.profiled_mem_limit_gb,
            "bw_gbs": self.profiled_bw,
            "cpu_util": self.profiled_cpu_util,
        }


def mem_grid(wss: float) -> list[float]:
    """Candidate limits 0, 0.25, ... below wss, then wss itself."""
    n = int(math.floor(wss / MEM_GRID_GB + 1e-9))
    grid = [round(k * MEM_GRID_GB, 10) for k in range(n + 1)]
    if wss - grid[-1] > 1e-9:
        grid.append(wss)
    return grid


def cpu_grid() -> list[float]:
    return [k / 100 for k in range(int(round(1 / CPU_GRID)) + 1)]


def isolated_perf(app: AppSpec, machine: MachineSpec, limit: float, cpu: float = 1.0):
    """(latency ns, bandwidth GB/s) of ``app`` alone with the given allocation."""
    w = app.wss_gb
    p = max(0.0, (w - min(limit, w)) / w)
    load = AppLoad(app.id, app.app_class, p, cpu, app.full_util_bw())
    s = solve_system([load], machine)
    return s.latency_ns[app.id], s.bandwidth_gbs[app.id]


def _lowest_passing(grid: list[float], ok: Callable[[float], bool]) -> float:
    """Smallest grid value passing ``ok``; assumes ok is monotone and ok(grid[-1])."""
    lo, hi = 0, len(grid) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(grid[mid]):
            hi = mid
        else:
            lo = mid + 1
    return grid[lo]


def profile_app(app: AppSpec, machine: MachineSpec) -> ProfileResult:
    """Minimum local memory (then CPU, for BI) meeting the SLO in isolation."""
    app = app.with_phase(app.initial_phase())
    wss = app.wss_gb

    def meets(limit: float, cpu: float = 1.0) -> bool:
        lat, bw = isolated_perf(app, machine, limit, cpu)
        return app.slo.met(lat, bw)

    if not meets(wss):
        return ProfileResult(False)
    limit = _lowest_passing(mem_grid(wss), meets)
    cpu = 1.0
    if app.app_class is AppClass.BI and limit == 0.0:
        cpu = _lowest_passing(cpu_grid(), lambda u: meets(0.0, u))
    lat, bw = isolated_perf(app, machine, limit, cpu)
    if app.app_class is AppClass.BI:
        return ProfileResult(True, limit, bw, cpu)
    return ProfileResult(True, limit)


def _probe_latency(machine: MachineSpec, bi_bw: float, bi_p: float) -> float:
    """Latency of a fully-local pointer-chase probe next to a BI generator."""
    loads = TierLoad((1.0 - bi_p) * bi_bw, bi_p * bi_bw)
    return ls_access_latency(0.0, loads, machine)


def calibrate_local_bw(machine: MachineSpec) -> float:
    base = _probe_latency(machine, 0.0, 0.0)
    target = (1.0 + DEGRADATION) * base
    steps = int(math.ceil(machine.local_bw_cap / BW_SWEEP_STEP))
    prev = 0.0
    for k in range(1, steps + 1):
        b = min(k * BW_SWEEP_STEP, machine.local_bw_cap)
        if _probe_latency(machine, b, 0.0) >= target:
            lo, hi = prev, b
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if _probe_latency(machine, mid, 0.0) >= target:
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = b
    raise CalibrationUnreachable("fast-tier bandwidth never degrades the probe by 10%")


def numa_probe_bw(machine: MachineSpec) -> float:
    """Bandwidth of the generator used for the interleave sweep: what the slow tier sustains."""
    return machine.cxl_bw_cap


def calibrate_numa(machine: MachineSpec) -> float:
    base = _probe_latency(machine, 0.0, 0.0)
    target = (1.0 + DEGRADATION) * base
    bw = numa_probe_bw(machine)
    access_rate = bw * 1e9 / ACCESS_BYTES
    for k in range(P_SWEEP_STEPS + 1):
        p = k / P_SWEEP_STEPS
        if _probe_latency(machine, bw, p) >= target:
            return machine.fault_coeff * p * access_rate
    raise CalibrationUnreachable("slow-tier traffic never degrades the probe by 10%")


def calibrate_thresholds(machine: MachineSpec) -> Thresholds:
    local_bw = calibrate_local_bw(machine)
    numa = calibrate_numa(machine)
    if numa <= 0:
        raise CalibrationUnreachable("probe degraded with no slow-tier traffic")
    return Thresholds(local_bw, numa)
