from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mercury_qos.core import AppClass, MachineSpec, bi_app, ls_app
from mercury_qos.perfmodel import AppLoad, TierLoad, ls_access_latency, queue_delay, solve_system
from mercury_qos.profiler import (
    CalibrationUnreachable,
    calibrate_thresholds,
    cpu_grid,
    isolated_perf,
    mem_grid,
    numa_probe_bw,
    profile_app,
)

M = MachineSpec()


def exhaustive_profile(app, machine):
    """Oracle: walk every grid point, smallest passing memory, then smallest passing CPU."""
    def ok(limit, cpu=1.0):
        lat, bw = isolated_perf(app, machine, limit, cpu)
        return app.slo.met(lat, bw)

    if not ok(app.wss_gb):
        return None
    mem = next(g for g in mem_grid(app.wss_gb) if ok(g))
    cpu = None
    if app.is_bi:
        cpu = 1.0
        if mem == 0.0:
            cpu = next(u for u in cpu_grid() if u > 0 and ok(0.0, u))
    return mem, cpu


def test_ls_slo_at_cxl_latency_needs_no_local_memory():
    r = profile_app(ls_app("a", 1, 4, 200), M)
    assert r.admissible and r.profiled_mem_limit_gb == 0.0


def test_ls_slo_at_local_latency_needs_everything():
    r = profile_app(ls_app("a", 1, 4, 100), M)
    assert r.profiled_mem_limit_gb == 4.0


def test_ls_midpoint_slo_needs_half():
    r = profile_app(ls_app("a", 1, 4, 150), M)
    assert r.profiled_mem_limit_gb == 2.0


def test_ls_below_floor_is_inadmissible():
    r = profile_app(ls_app("a", 1, 4, 90), M)
    assert not r.admissible
    assert r.profiled_mem_limit_gb is None and r.profiled_cpu_util is None
    assert r.to_json() == {"admissible": False, "mem_limit_gb": None, "bw_gbs": None,
                           "cpu_util": None}


def test_bi_profile_records_bandwidth_and_cpu():
    r = profile_app(bi_app("b", 1, 8, 100, 20), M)
    # 20 GB/s fits on the slow tier alone, so memory goes to 0 and CPU is trimmed
    assert r.profiled_mem_limit_gb == 0.0
    assert r.profiled_cpu_util == pytest.approx(0.2)
    assert r.profiled_bw == pytest.approx(20.0)


def test_bi_profile_needs_local_memory_above_slow_tier_cap():
    r = profile_app(bi_app("b", 1, 8, 150, 100), M)
    assert r.profiled_cpu_util == 1.0
    assert exhaustive_profile(bi_app("b", 1, 8, 150, 100), M) == (r.profiled_mem_limit_gb, 1.0)


def test_thresh_local_bw_matches_root_finder():
    rho = brentq(lambda r: queue_delay(r, M.kq_local) - 0.1 * M.lat_local_base, 1e-6, 0.98)
    th = calibrate_thresholds(M)
    assert th.thresh_local_bw == pytest.approx(rho * M.local_bw_cap, rel=1e-6)
    assert rho == pytest.approx(0.3904, abs=1e-4)


def test_thresh_numa_matches_sweep_oracle():
    bw = numa_probe_bw(M)
    access = bw * 1e9 / 64
    hit = None
    for k in range(21):
        p = k / 20
        loads = [AppLoad("ls", AppClass.LS, 0.0, 1.0, 0.0),
                 AppLoad("bi", AppClass.BI, p, 1.0, bw)]
        lat = solve_system(loads, M).latency_ns["ls"]
        if lat >= 1.1 * M.lat_local_base - 1e-9:
            hit = M.fault_coeff * p * access
            break
    assert hit is not None
    assert calibrate_thresholds(M).thresh_numa == pytest.approx(hit)
    assert hit == pytest.approx(546.875)


def test_calibration_unreachable_without_interference():
    m = MachineSpec(coupling_c=0, kq_local=0, kq_cxl=0)
    with pytest.raises(CalibrationUnreachable):
        calibrate_thresholds(m)


def test_calibration_deterministic():
    assert calibrate_thresholds(M) == calibrate_thresholds(M)


@settings(max_examples=60, deadline=None)
@given(st.floats(101, 260), st.floats(0.5, 16))
def test_ls_profile_is_minimal(slo, wss):
    app = ls_app("a", 1, wss, slo, access_rate=1e6)
    r = profile_app(app, M)
    grid = mem_grid(wss)
    lim = r.profiled_mem_limit_gb
    assert app.slo.met(*isolated_perf(app, M, lim))
    i = grid.index(lim)
    if i > 0:
        assert not app.slo.met(*isolated_perf(app, M, grid[i - 1]))


@settings(max_examples=60, deadline=None)
@given(st.floats(101, 260), st.floats(0, 80), st.floats(0.5, 16))
def test_looser_slo_never_needs_more_memory(slo, extra, wss):
    tight = ls_app("a", 1, wss, slo, access_rate=1e6)
    loose = replace(tight, slo=replace(tight.slo, value=slo + extra))
    assert profile_app(loose, M).profiled_mem_limit_gb <= profile_app(tight, M).profiled_mem_limit_gb


def test_profiling_is_pure():
    app = ls_app("a", 1, 4, 150)
    before = (app, M)
    profile_app(app, M)
    assert (app, M) == before


def test_probe_latency_helper_consistency():
    assert ls_access_latency(0, TierLoad(0, 0), M) == M.lat_local_base
