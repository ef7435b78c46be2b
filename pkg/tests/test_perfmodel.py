import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mercury_qos.core import AppClass, MachineSpec
from mercury_qos.perfmodel import (
    AppLoad,
    NoConvergence,
    TierLoad,
    bi_achieved_bandwidth,
    inter_tier_pressure,
    ls_access_latency,
    queue_delay,
    solve_system,
    tier_latencies,
    tier_share,
)

M = MachineSpec()


@pytest.mark.parametrize("rho,k,expected", [(0, 40, 0.0), (0.5, 40, 20.0), (0.75, 40, 90.0)])
def test_queue_delay_hand_values(rho, k, expected):
    assert queue_delay(rho, k) == pytest.approx(expected)


def test_queue_delay_capped_and_finite():
    assert queue_delay(5.0, 40) == pytest.approx(40 * 25 / 0.01)


@pytest.mark.parametrize("bw,expected", [(0, 0.0), (50, 20.0), (150, 180.0)])
def test_inter_tier_pressure_hand_values(bw, expected):
    assert inter_tier_pressure(bw, M) == pytest.approx(expected)


@pytest.mark.parametrize("demands,cap,expected", [
    ([10, 20], 100, [10, 20]),
    ([80, 80], 100, [50, 50]),
    ([30, 90], 100, [30, 70]),
])
def test_tier_share_examples(demands, cap, expected):
    assert tier_share(demands, cap) == pytest.approx(expected)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 500), max_size=8), st.floats(0.1, 500))
def test_tier_share_conservation_and_maxmin(demands, cap):
    g = tier_share(demands, cap)
    assert sum(g) == pytest.approx(min(sum(demands), cap), rel=1e-9, abs=1e-9)
    for d, x in zip(demands, g):
        assert -1e-12 <= x <= d + 1e-9
    # max-min: any app short of its demand gets at least as much as every other app
    for i, (d, x) in enumerate(zip(demands, g)):
        if x < d - 1e-9:
            assert all(x >= y - 1e-6 for y in g)


@pytest.mark.parametrize("p,expected", [(0, 100.0), (1, 200.0), (0.5, 150.0)])
def test_ls_latency_unloaded(p, expected):
    assert ls_access_latency(p, TierLoad(0, 0), M) == pytest.approx(expected)


def test_ls_latency_affine_and_increasing_without_contention():
    ps = [k / 20 for k in range(21)]
    lat = [ls_access_latency(p, TierLoad(0, 0), M) for p in ps]
    diffs = [b - a for a, b in zip(lat, lat[1:])]
    assert all(d > 0 for d in diffs)
    assert max(diffs) - min(diffs) < 1e-9


@pytest.mark.parametrize("p,u,demand,expected", [(0, 1, 150, 150), (1, 1, 200, 50),
                                                 (0, 0.4, 150, 60)])
def test_bi_bandwidth_examples(p, u, demand, expected):
    assert bi_achieved_bandwidth(demand, p, u, M) == pytest.approx(expected)


def test_bi_bandwidth_nonincreasing_in_p():
    bws = [bi_achieved_bandwidth(200, k / 20, 1.0, M) for k in range(21)]
    assert all(b <= a + 1e-9 for a, b in zip(bws, bws[1:]))
    assert bws[-1] == pytest.approx(0.25 * bws[0])


def _ls(p=0.0):
    return AppLoad("ls", AppClass.LS, p, 1.0, 0.0)


def _bi(p, demand=150.0, u=1.0):
    return AppLoad("bi", AppClass.BI, p, u, demand)


def test_solve_sole_ls_is_base_latency():
    s = solve_system([_ls()], M)
    assert s.latency_ns["ls"] == pytest.approx(M.lat_local_base)


def test_solve_ls_with_local_bi():
    s = solve_system([_ls(), _bi(0.0)], M)
    assert s.latency_ns["ls"] == pytest.approx(100 + queue_delay(0.75, 40))
    assert 185 < s.latency_ns["ls"] < 195


def test_solve_ls_with_bi_fully_on_cxl():
    s = solve_system([_ls(), _bi(1.0)], M)
    assert s.latency_ns["ls"] == pytest.approx(280.0)


def test_solve_is_a_fixed_point():
    loads = [_ls(0.2), _bi(0.4), AppLoad("b2", AppClass.BI, 0.7, 0.6, 120)]
    a = solve_system(loads, M)
    b = solve_system(loads, M)
    assert a == b
    for app in a.latency_ns:
        assert a.latency_ns[app] >= M.lat_local_base
        assert a.bandwidth_gbs[app] <= next(ld for ld in loads if ld.app_id == app).cpu_cap * \
            next(ld for ld in loads if ld.app_id == app).full_bw + 1e-9


def test_solve_surfaces_nonconvergence():
    with pytest.raises(NoConvergence):
        solve_system([_bi(0.5)], M, max_iter=0)


def test_tier_latencies_use_offered_cxl_for_pressure():
    local, cxl = tier_latencies(TierLoad(0, 150), M)
    assert local == pytest.approx(100 + 180)
    assert cxl == pytest.approx(200 + queue_delay(1.0, 80))
