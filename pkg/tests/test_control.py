import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cavflow.control import (
    assign_focus, average_density, balance_rates, control_speed, predict_dissipation,
    raw_control_speed, total_time_spent,
)
from cavflow.ctm import RoadParams, RoadState
from cavflow.lagrangian import Cav, Role, Wave, discharge_density, make_wave, wave_front_speed

from oracles import brute_mean, euler_balance

P = RoadParams()


def wave80(front=3.05, tail=2.0, id=0):
    return make_wave(id, tail, front, 80.0, P)


def test_average_density_examples():
    assert average_density(np.full(10, 35.0), 2, 6) == pytest.approx(35.0)
    assert average_density([30.0, 50.0], 0, 1) == pytest.approx(40.0)
    with pytest.raises(ValueError):
        average_density(np.zeros(5), 3, 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 120.0), min_size=50, max_size=50), st.integers(0, 48), st.integers(1, 49))
def test_average_density_matches_summation(rho, a, width):
    b = min(a + width, 49)
    assert average_density(rho, a, b) == pytest.approx(brute_mean(rho, a, b), rel=1e-12, abs=1e-12)


def test_control_speed_no_excess_vehicles():
    cmd = control_speed(35.0, wave80(), P)
    assert cmd.speed == P.V and not cmd.failed


def test_control_speed_heavy_stretch_fails():
    # (100*15 - 33.33*25) / 40 = 16.67 lies below u_min
    cmd = control_speed(60.0, wave80(), P)
    assert cmd.raw == pytest.approx((1500.0 - 2500.0 / 3.0) / 40.0)
    assert cmd.speed == P.u_min and cmd.failed


def test_control_speed_without_offset_fails():
    p = RoadParams(sigma_b=0.0)
    cmd = control_speed(60.0, make_wave(0, 2.0, 3.05, 80.0, p), p)
    assert cmd.raw < 0
    assert cmd.speed == p.u_min and cmd.failed


def test_control_speed_in_range():
    cmd = control_speed(45.0, wave80(), P)
    assert cmd.raw == pytest.approx((1500.0 - 1000.0 / 3.0) / 25.0)
    assert cmd.speed == pytest.approx(cmd.raw) and not cmd.failed


def test_degenerate_denominator_commands_v():
    cmd = control_speed(P.sigma - P.sigma_b, wave80(), P)
    assert cmd.degenerate and cmd.speed == P.V


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 120.0), st.floats(41.0, 120.0))
def test_control_speed_clamped(rho_bar, rho_c):
    cmd = control_speed(rho_bar, make_wave(0, 1.0, 2.05, rho_c, P), P)
    assert P.u_min <= cmd.speed <= P.V


@settings(max_examples=200, deadline=None)
@given(st.floats(41.0, 120.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_raw_speed_nonincreasing_in_average_density(rho_c, a, b):
    w = make_wave(0, 1.0, 2.05, rho_c, P)
    rd = w.discharge_density
    lo, hi = sorted((rd + a * (P.P - rd), rd + b * (P.P - rd)))
    assert raw_control_speed(hi, w, P) <= raw_control_speed(lo, w, P) + 1e-9


def test_predict_dissipation_trivial_cases():
    w = wave80()
    assert predict_dissipation(0.0, 0.0, P.V, w, P) == 0.0
    assert predict_dissipation(10.0, 1.0, w.front_speed, w, P) is None
    with pytest.raises(ValueError):
        predict_dissipation(10.0, -1.0, 50.0, w, P)


def test_speed_law_empties_stretch_on_arrival():
    w = wave80()
    rho_bar, d = 45.0, 1.0
    u = raw_control_speed(rho_bar, w, P)
    theta = d / (u - w.front_speed)
    t_n, t_d = euler_balance(rho_bar * d, d, u, w.front_speed, w.discharge_density,
                             P.V, P.sigma, P.sigma_b, theta / 5000, 2 * theta)
    assert t_n == pytest.approx(theta, rel=0.01)
    assert t_d == pytest.approx(theta, rel=0.01)
    assert predict_dissipation(rho_bar * d, d, u, w, P) == pytest.approx(theta, rel=0.05)


def test_balance_rates_units():
    n_dot, d_dot = balance_rates(P.V, wave80(), P)
    assert n_dot == pytest.approx(-(P.V + 100.0 / 3.0) * 35.0)
    assert d_dot == pytest.approx(-100.0 / 3.0 - P.V)


def actuator(id, pos):
    return Cav(id, pos, Role.ACTUATOR, command=P.V)


def test_assign_single_wave():
    rho = np.full(P.N, 35.0)
    rho[20:31] = 80.0
    w = wave80()
    a = assign_focus([actuator(0, 1.0)], [w], rho, P)
    assert a.focus[0] == w.id
    assert P.u_min <= a.commands[0] <= P.V


def test_assign_no_waves():
    a = assign_focus([actuator(0, 1.0), actuator(1, 0.5)], [], np.full(P.N, 32.0), P)
    assert a.commands == {0: P.V, 1: P.V}
    assert a.focus == {0: None, 1: None}


def test_failing_actuator_forces_upstream_backup():
    rho = np.full(P.N, 35.0)
    rho[10:31] = 80.0
    w = wave80(tail=1.0)
    lead, back = actuator(0, 0.95), actuator(1, 0.3)
    a = assign_focus([back, lead], [w], rho, P)
    assert not a.predicted_success[0]
    assert a.focus[1] == a.focus[0] == w.id


def test_assign_ignores_waves_behind():
    rho = np.full(P.N, 35.0)
    behind = make_wave(0, 0.2, 0.55, 80.0, P)
    a = assign_focus([actuator(0, 2.0)], [behind], rho, P)
    assert a.focus[0] is None and a.commands[0] == P.V


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 4.9), min_size=1, max_size=5),
       st.lists(st.tuples(st.floats(0.3, 4.9), st.floats(0.1, 1.0)), min_size=0, max_size=4))
def test_focus_never_upstream(positions, specs):
    waves = [make_wave(k, max(z - w, 0.0), z, 80.0, P) for k, (z, w) in enumerate(specs)]
    heads = {w.id: w.head_cell for w in waves}
    cavs = [actuator(k, y) for k, y in enumerate(positions)]
    rho = np.full(P.N, 50.0)
    a = assign_focus(cavs, waves, rho, P)
    for cav in cavs:
        k = a.focus[cav.id]
        if k is not None:
            assert heads[k] > cav.cell(P)


def test_tts_examples():
    empty = [RoadState(np.zeros(P.N))] * 10
    assert total_time_spent(empty, P) == 0.0
    steady = [RoadState(np.full(P.N, 32.0))] * 1000
    assert total_time_spent(steady, P) == pytest.approx(160.0)
    queued = [RoadState(np.zeros(P.N), 10.0)] * 100
    assert total_time_spent(queued, P) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        total_time_spent([], P)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 120.0), st.floats(0.0, 50.0)), min_size=2, max_size=30),
       st.integers(1, 29))
def test_tts_additive(levels, cut):
    trace = [RoadState(np.full(P.N, r), q) for r, q in levels]
    cut = min(cut, len(trace) - 1)
    whole = total_time_spent(trace, P)
    parts = total_time_spent(trace[:cut], P) + total_time_spent(trace[cut:], P)
    assert whole == pytest.approx(parts, rel=1e-12)
