import io
import statistics

import numpy as np
import pytest

from cavflow.ctm import RoadParams
from cavflow.harness import (
    BatchSpec, ControlCase, delay_ratio, run_batch, run_case, tts_min, write_records, write_summary,
)
from cavflow.lagrangian import Role
from cavflow.scenario import ScenarioConfig, generate

P = RoadParams()


def test_delay_ratio_examples():
    assert delay_ratio(170.0, 170.0, 160.0) == 1.0
    assert delay_ratio(160.0, 170.0, 160.0) == 0.0
    assert delay_ratio(165.0, 170.0, 160.0) == pytest.approx(0.5)
    assert delay_ratio(160.0, 160.0, 160.0) is None
    with pytest.raises(ValueError):
        delay_ratio(150.0, 150.0, 160.0)


def test_minimum_tts_from_table_values():
    assert tts_min(3200.0, 5.0, 1.0, P) == pytest.approx(160.0)


def steady(**kwargs):
    return ScenarioConfig(inflow_range=(1.0, 1.0), init_range=(1.0, 1.0), **kwargs)


def test_wave_free_run_has_no_delay():
    sc = generate(steady(wave_schedule=()), P)
    rec = run_case(sc, ControlCase.NO_CONTROL, P)
    assert rec.tts == pytest.approx(160.0, rel=1e-9)
    assert delay_ratio(rec.tts, rec.tts, rec.tts_min) is None


def test_full_information_matches_all_cavs_under_full_coverage():
    sc = generate(ScenarioConfig(G=0.01, seed=1), P)
    full = run_case(sc, ControlCase.FULL_INFO, P)
    every = run_case(sc, ControlCase.ALL_CAVS, P)
    assert every.tts == pytest.approx(full.tts, rel=1e-12)
    assert every.min_command == full.min_command


def test_adaptive_with_every_cav_sensing_matches_all_cavs():
    sc = generate(ScenarioConfig(seed=2), P)
    everyone = range(len(sc.cavs))
    adaptive = run_case(sc, ControlCase.ADAPTIVE, P, delta=float("inf"), always_on=everyone)
    every = run_case(sc, ControlCase.ALL_CAVS, P)
    assert adaptive.tts == every.tts
    assert adaptive.messages_sent == every.messages_sent


def test_run_is_deterministic():
    sc = generate(ScenarioConfig(seed=6), P)
    a = run_case(sc, ControlCase.ADAPTIVE, P, keep_trace=True)
    b = run_case(sc, ControlCase.ADAPTIVE, P, keep_trace=True)
    assert a.tts == b.tts and a.messages_sent == b.messages_sent
    np.testing.assert_array_equal(a.rho_trace, b.rho_trace)


def test_no_control_never_commands_below_v():
    sc = generate(ScenarioConfig(seed=3), P)
    rec = run_case(sc, ControlCase.NO_CONTROL, P, keep_trace=True)
    assert rec.messages_sent == 0
    assert all(cmd == P.V for step in rec.cav_trace for (_, _, _, cmd, _) in step)


def test_actuators_slow_down_when_a_wave_is_near():
    sc = generate(ScenarioConfig(seed=0), P)
    rec = run_case(sc, ControlCase.FULL_INFO, P, keep_trace=True)
    cmds = [cmd for step in rec.cav_trace for (_, _, role, cmd, _) in step if role == Role.ACTUATOR.value]
    assert min(cmds) < P.V
    assert all(P.u_min <= c <= P.V for c in cmds)


def test_traces_cover_every_step():
    sc = generate(ScenarioConfig(seed=0), P)
    rec = run_case(sc, ControlCase.PREDEFINED, P, keep_trace=True)
    assert rec.rho_trace.shape == (sc.n_steps + 1, P.N)
    assert rec.rho_hat_trace.shape == (sc.n_steps + 1, P.N)
    assert len(rec.cav_trace) == sc.n_steps
    assert np.all(rec.rho_trace >= 0) and np.all(rec.rho_trace <= P.P)


@pytest.fixture(scope="module")
def small_batch():
    spec = BatchSpec(G_values=(0.5, 1.0), p_p_values=(0.1, 0.3), runs=3)
    return run_batch(spec, P)


def test_batch_order_and_size(small_batch):
    keys = [(r.G, r.p_p, r.seed, r.case) for r in small_batch.records]
    assert len(keys) == 2 * 2 * 3 * 5
    order = {c: k for k, c in enumerate(ControlCase)}
    assert keys == sorted(keys, key=lambda k: (k[0], k[1], k[2], order[k[3]]))


def test_batch_summary_is_median_of_records(small_batch):
    for row in small_batch.summary:
        ratios = [r.delay_ratio for r in small_batch.records
                  if r.G == row["G"] and r.p_p == row["p_p"] and r.case.value == row["case"]
                  and r.delay_ratio is not None]
        assert row["valid_runs"] == len(ratios)
        if ratios:
            assert row["median_delay_ratio"] == statistics.median(ratios)


def test_no_control_ratio_is_one(small_batch):
    for r in small_batch.records:
        if r.case is ControlCase.NO_CONTROL and r.delay_ratio is not None:
            assert r.delay_ratio == 1.0


def test_shared_runs_equal_direct_runs(small_batch):
    # AllCavs and FullInformation are simulated once per (G, seed); the
    # result must equal a direct run at any probe share
    for r in small_batch.records:
        if r.case in (ControlCase.ALL_CAVS, ControlCase.FULL_INFO) and r.p_p == 0.3 and r.G == 0.5:
            sc = generate(ScenarioConfig(G=r.G, p_p=r.p_p, seed=r.seed), P)
            direct = run_case(sc, r.case, P)
            assert direct.tts == r.tts and direct.messages_sent == r.messages_sent


def test_message_ordering_per_run(small_batch):
    by_key = {}
    for r in small_batch.records:
        by_key.setdefault((r.G, r.p_p, r.seed), {})[r.case] = r.messages_sent
    for msgs in by_key.values():
        assert msgs[ControlCase.PREDEFINED] <= msgs[ControlCase.ADAPTIVE] <= msgs[ControlCase.ALL_CAVS]
        assert msgs[ControlCase.NO_CONTROL] == msgs[ControlCase.FULL_INFO] == 0


def test_single_run_summary_equals_the_run():
    spec = BatchSpec(G_values=(0.5,), p_p_values=(0.3,), runs=1, first_seed=4)
    result = run_batch(spec, P)
    for rec in result.records:
        assert result.median(rec.case, 0.5, 0.3) == rec.delay_ratio


def dump(result):
    a, b = io.StringIO(), io.StringIO()
    write_records(result.records, a)
    write_summary(result.summary, b)
    return a.getvalue(), b.getvalue()


def test_batch_files_identical_across_job_counts():
    spec = BatchSpec(G_values=(1.0,), p_p_values=(0.1, 0.5), runs=2, first_seed=10)
    serial = dump(run_batch(spec, P, jobs=1))
    assert dump(run_batch(spec, P, jobs=1)) == serial
    assert dump(run_batch(spec, P, jobs=2)) == serial


def test_effective_sensor_gap(small_batch):
    rec = small_batch.records[0]
    assert rec.effective_sensor_gap == pytest.approx(rec.G / (rec.p_p + rec.p_a))
