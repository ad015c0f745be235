import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ntrack.model import build_reference_fcnn, pointwise, ModelGraph
from ntrack.planner import (MAX_PERF, MIN_POWER, MemoryBudget, OperatingPoint, count_macs,
                            estimate_cycles, estimate_rate_power, l2_usage, param_bytes,
                            plan_csv, plan_memory, platform_power_w, require_feasible,
                            InfeasiblePlan)


@pytest.fixture(scope="module")
def ref():
    return build_reference_fcnn()


def test_pointwise_head_macs():
    m = ModelGraph([pointwise(32, 3)], input_shape=(32, 20, 20))
    assert count_macs(m) == 400 * 3 * 32 == 38_400


def test_budget_cross_check():
    implied = 78.7e6 / 8.3
    assert int(implied) == 9_481_927
    assert abs(4.4e6 * 2.2 - implied) / implied <= 0.03


def test_cycle_examples(ref):
    assert estimate_cycles(9.68e6) == 4_400_000
    assert estimate_cycles(ref) == 3_578_182
    assert estimate_cycles(7_872_000, efficiency=1.0) == 7_872_000
    with pytest.raises(ValueError):
        estimate_cycles(100, efficiency=0)


def test_rate_and_power():
    fast = estimate_rate_power(4.4e6, MAX_PERF)
    slow = estimate_rate_power(4.4e6, MIN_POWER)
    assert fast.fps == pytest.approx(39.77, abs=0.01)
    assert slow.fps == pytest.approx(5.68, abs=0.005)
    assert (slow.soc_mw, fast.soc_mw, fast.system_mw) == (10.7, 100.8, 109.6)
    assert slow.system_mw is None
    assert platform_power_w(109.6) == pytest.approx(7.664, rel=1e-3)
    assert fast.platform_power_w == pytest.approx(7.664, rel=1e-3)


def test_energy_per_frame_at_paper_rate():
    r = estimate_rate_power(MAX_PERF.cl_freq_hz / 39.0, MAX_PERF)
    assert r.energy_per_frame_mj == pytest.approx(100.8 / 39, rel=1e-9)
    assert r.energy_per_frame_mj == pytest.approx(2.58, rel=0.01)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10**9), st.floats(1e6, 1e9))
def test_fps_times_cycles_is_frequency(macs, freq):
    cycles = estimate_cycles(macs)
    r = estimate_rate_power(cycles, OperatingPoint("p", freq, 1.0))
    assert r.fps * cycles == pytest.approx(freq, rel=1e-12)


def test_reference_memory_plan(ref):
    plan = require_feasible(plan_memory(ref))
    assert plan.l2 == {"params": 15_508, "images": 51_200, "activations": 102_400,
                       "code": 40_960}
    assert plan.l2_total == 210_068 < 512 * 1024
    assert param_bytes(ref) == sum(w.size + 4 * b.size for w, b in ref.params.values())
    for lp in plan.layers:
        assert lp.feasible and lp.l1_bytes <= 64 * 1024
    assert [lp.cycles for lp in plan.layers] == [209_455, 837_819, 837_819, 1_675_637, 17_455]
    assert plan.total_cycles == 3_578_182


def test_tiny_l1_names_first_conv(ref):
    plan = plan_memory(ref, MemoryBudget(l1_bytes=1024))
    assert not plan.feasible
    assert plan.errors[0].startswith("L0:")
    with pytest.raises(InfeasiblePlan):
        require_feasible(plan)
    assert "infeasible" in plan_csv(plan)


def test_double_image_size_quadruples_activations(ref):
    small = l2_usage(ref)
    big = l2_usage(ref, (1, 320, 320))
    assert big["activations"] == 4 * small["activations"] == 409_600
    assert big["images"] == 4 * small["images"]
    assert big["params"] == small["params"]


@settings(max_examples=30, deadline=None)
@given(st.integers(4_000, 80_000), st.integers(100_000, 600_000), st.integers(0, 50_000),
       st.integers(0, 200_000))
def test_feasibility_is_monotone_in_budget(l1, l2, d1, d2):
    ref = build_reference_fcnn()
    small = plan_memory(ref, MemoryBudget(l1, l2))
    large = plan_memory(ref, MemoryBudget(l1 + d1, l2 + d2))
    if small.feasible:
        assert large.feasible
    for a, b in zip(small.layers, large.layers):
        if a.feasible:
            assert b.feasible and b.tile_rows >= a.tile_rows


def test_csv_columns(ref):
    lines = plan_csv(plan_memory(ref)).splitlines()
    assert lines[0] == "layer,macs,tile,l1_bytes,cycles"
    assert len(lines) == 6


def test_quantized_model_plans_like_its_source(ref):
    from ntrack.quant import calibrate
    qm = calibrate(ref, np.zeros((2, 160, 160), np.uint8), rounding="nearest")
    assert plan_memory(qm).l2 == plan_memory(ref).l2
    assert qm.param_bytes() == param_bytes(ref)
