import math

import pytest
from hypothesis import assume, given, strategies as st

from adsim.autoscale import (
    BAND, DegenerateLoad, FlatSecant, InstanceCapacity, NoTargetError, OpMetrics, PhaseWorkload,
    PressureRow, ScalerState, actuate, decide, exact_root, health_score, queue_growing,
    random_phases, read_pressure_csv, round_half_up, run_scaling_scenario, secant_step,
    solve_instances, stabilized, step_pressure, write_pressure_csv,
)
from adsim.simkernel import Rng

CAP = InstanceCapacity(30.0, 10.0)
PAIRS = [(0, 10), (5, 15), (20, 40)]

loads = st.builds(PhaseWorkload, st.floats(1.0, 1e5), st.floats(1.0, 1e5))
caps = st.builds(InstanceCapacity, st.floats(0.1, 1e3), st.floats(0.1, 1e3))
alphas = st.floats(0.0, 1.0)


def test_balanced_load_scores_one():
    for a in (0.0, 0.3, 1.0):
        assert health_score(4, CAP, PhaseWorkload(120.0, 40.0), a) == pytest.approx(1.0)


def test_single_term_arithmetic():
    assert health_score(2, CAP, PhaseWorkload(120.0, 1.0), alpha=1.0) == 0.5


def test_degenerate_inputs():
    with pytest.raises(DegenerateLoad):
        health_score(1, CAP, PhaseWorkload(0.0, 5.0))
    with pytest.raises(ValueError):
        health_score(0, CAP, PhaseWorkload(1.0, 1.0))
    with pytest.raises(ValueError):
        InstanceCapacity(0.0, 1.0)


def test_secant_fixed_point_and_flat_case():
    assert secant_step(ScalerState(3.0, 7.0, 0.4, 1.0)) == 7.0
    with pytest.raises(FlatSecant):
        secant_step(ScalerState(3.0, 7.0, 0.4, 0.4))


def test_secant_lands_on_closed_form_root():
    load = PhaseWorkload(600.0, 200.0)
    x0, x1 = 1e-6, 10.0
    st_ = ScalerState(x0, x1, health_score(x0, CAP, load), health_score(x1, CAP, load))
    # 1 / (0.5*30/600 + 0.5*10/200) = 20
    assert secant_step(st_) == pytest.approx(20.0, rel=1e-12)
    assert exact_root(CAP, load) == pytest.approx(20.0, rel=1e-12)


@given(caps, loads, alphas, st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
def test_one_secant_step_reaches_the_root(cap, load, alpha, xa, xb):
    assume(abs(xa - xb) > 1e-3 * max(xa, xb))
    fa, fb = health_score(xa, cap, load, alpha), health_score(xb, cap, load, alpha)
    root = secant_step(ScalerState(xa, xb, fa, fb, alpha))
    assert math.isclose(root, exact_root(cap, load, alpha), rel_tol=1e-9)
    assert math.isclose(health_score(root, cap, load, alpha), 1.0, rel_tol=1e-9)


@given(caps, loads, alphas, st.floats(1e-3, 1e4), st.floats(1e-3, 1e4))
def test_health_is_linear_and_increasing(cap, load, alpha, x, y):
    assume(x < y)
    fx, fy = health_score(x, cap, load, alpha), health_score(y, cap, load, alpha)
    assert fx < fy
    assert math.isclose(fy / fx, y / x, rel_tol=1e-9)


def test_rounding_and_actuation():
    assert [round_half_up(v) for v in (0.5, 1.5, 2.5, 2.49)] == [1, 2, 3, 2]
    assert actuate(0.2) == 1 and actuate(-4.0) == 1


@given(st.floats(-1e6, 1e6))
def test_actuated_count_at_least_one(x):
    assert actuate(x) >= 1


@pytest.mark.parametrize("pair", PAIRS)
def test_random_phases_converge_within_four_iterations(pair):
    for load in random_phases(Rng(0).fork("phases"), 50):
        res = solve_instances(CAP, load, *pair)
        assert res.converged
        assert res.iterations <= 4
        assert res.count >= 1


def test_random_phases_have_large_roots():
    for load in random_phases(Rng(1), 200):
        assert exact_root(CAP, load) >= 10.0


def test_decide_paths():
    calm = OpMetrics(5, 100, 100, 0.2, (5, 5, 5))
    assert decide(calm, "op", False, [1, 2], health=1.0).action == "none"
    hot = OpMetrics(5, 100, 100, 0.95)
    out = decide(hot, "op", False, [4, 2], {4: 0, 2: 3})
    assert (out.action, out.target) == ("scale-out", 4)
    assert decide(hot, "op", True, [4, 2]).action == "migrate"
    grow = OpMetrics(9, 100, 100, 0.1, (3, 6, 9))
    up = decide(grow, "op", False, [1], health=1.0, new_count=7)
    assert (up.action, up.new_count) == ("scale-up", 7)
    assert decide(calm, "op", False, [1], health=0.5).action == "scale-up"
    with pytest.raises(NoTargetError):
        decide(hot, "op", False, [])


metrics = st.builds(OpMetrics, st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1.5),
                    st.lists(st.floats(0, 1e4), max_size=5).map(tuple))


@given(metrics, st.booleans(), st.lists(st.integers(0, 50), min_size=1, max_size=5),
       st.one_of(st.none(), st.floats(0, 3)))
def test_decide_is_pure(m, stateful, leaf, health):
    a = decide(m, "x", stateful, leaf, {}, health, 3)
    b = decide(m, "x", stateful, list(leaf), {}, health, 3)
    assert a == b


def test_queue_growth_needs_three_rising_samples():
    assert queue_growing((1, 2, 3))
    assert not queue_growing((1, 2))
    assert not queue_growing((1, 3, 3))
    assert queue_growing((9, 1, 2, 3))


def test_constant_matched_load_is_flat():
    rows = [PressureRow(float(t), "op", 120.0, 40.0) for t in range(0, 60, 5)]
    trace = run_scaling_scenario(rows, CAP, initial={"op": 4})
    assert {t.instances for t in trace} == {4}
    assert {t.action for t in trace} == {"none"}


def test_step_load_rises_then_settles():
    rows = step_pressure(bandwidth_at_s=None)
    trace = run_scaling_scenario(rows, CAP)
    for op in ("op0", "op1", "op2"):
        counts = [t.instances for t in trace if t.op_id == op]
        assert counts[-1] > counts[0]
        # after each step the op is back in band within two samples
        for step_t in range(0, 151, 30):
            assert stabilized(trace, op, after_s=step_t) is not None
            assert stabilized(trace, op, after_s=step_t) <= step_t + 10


def test_bandwidth_bottleneck_triggers_scale_out_after_sixty_seconds():
    trace = run_scaling_scenario(step_pressure(), CAP)
    outs = [t for t in trace if t.action == "scale-out"]
    assert outs and all(t.time_s >= 60 for t in outs)
    assert all(t.op_id == "op1" for t in outs)
    migr = run_scaling_scenario(step_pressure(), CAP, stateful={"op1"})
    assert any(t.action == "migrate" and t.time_s >= 60 for t in migr)


def test_pressure_csv_round_trip(tmp_path):
    rows = step_pressure(duration_s=20)
    text = write_pressure_csv(rows)
    assert "\r" not in text
    assert read_pressure_csv(text) == rows
    p = tmp_path / "p.csv"
    p.write_text(text)
    assert read_pressure_csv(p) == rows


def test_in_band_edges():
    assert BAND == (0.9, 1.1)
    assert solve_instances(CAP, PhaseWorkload(600, 200), 20, 25).iterations == 1
