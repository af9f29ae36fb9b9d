"""Closed-loop runs of the five control cases, metrics and batch driver."""

from __future__ import annotations

import enum
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .control import assign_focus, total_time_spent
from .ctm import RoadParams, RoadState, combine_overrides, reference_overrides, step_with_flows
from .estimation import EstimatorState, extract_waves, reconstruct_step, select_probes, sensed_cells
from .lagrangian import (Cav, Role, Wave, advance_cav, advance_wave, bottleneck_as_wave,
                         bottleneck_reference, enforce_actuator_order, make_wave, merge_waves,
                         wave_reference)
from .scenario import Scenario, ScenarioConfig, generate

log = logging.getLogger(__name__)


class ControlCase(enum.Enum):
    NO_CONTROL = "NoControl"
    PREDEFINED = "PredefinedSubset"
    ADAPTIVE = "AdaptiveSubset"
    ALL_CAVS = "AllCavs"
    FULL_INFO = "FullInformation"

    @classmethod
    def parse(cls, name: str) -> "ControlCase":
        for case in cls:
            if name in (case.value, case.name):
                return case
        raise ValueError(f"unknown control case {name!r}; choose from {[c.value for c in cls]}")


ALL_CASES = tuple(ControlCase)


class InvariantViolation(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass
class RunRecord:
    case: ControlCase
    seed: int
    G: float
    p_p: float
    p_a: float
    tts: float
    tts_min: float
    tts_unc: Optional[float] = None
    delay_ratio: Optional[float] = None
    messages_sent: int = 0
    waves_released: int = 0
    waves_dissipated: int = 0
    min_command: float = math.inf
    rho_trace: Optional[np.ndarray] = None
    rho_hat_trace: Optional[np.ndarray] = None
    cav_trace: Optional[list] = None

    @property
    def effective_sensor_gap(self) -> float:
        """Mean spacing of always-on sensing CAVs, G / (p_p + p_a)."""
        share = self.p_p + self.p_a
        return self.G / share if share > 0 else math.inf


def tts_min(q_bar_in: float, length: float, t_sim: float, params: RoadParams) -> float:
    return q_bar_in / params.V * length * t_sim


def delay_ratio(tts: float, tts_unc: float, tts_min: float, eps: float = 1e-9) -> Optional[float]:
    """Delay of a controlled run relative to the uncontrolled one.

    Returns None when the uncontrolled run has (almost) no delay.
    """
    if tts_unc < tts_min - eps:
        raise ValueError(f"uncontrolled TTS {tts_unc} below minimum {tts_min}")
    if tts_unc - tts_min < eps:
        return None
    return float((tts - tts_min) / (tts_unc - tts_min))


def _bottleneck_active(cav: Cav, speed: np.ndarray, params: RoadParams) -> bool:
    return cav.role is Role.ACTUATOR and cav.command < params.V and cav.command < speed[cav.cell(params)]


def _release_wave(rho: np.ndarray, rho_c: float, wave_id: int, params: RoadParams) -> Optional[Wave]:
    """Wave object for a spillback that has just stopped being fed from downstream."""
    N = params.N
    if rho[N - 1] <= params.sigma:
        return None
    i = N - 1
    while i > 0 and rho[i - 1] > params.sigma:
        i -= 1
    if i >= N - 1:
        return None
    return make_wave(wave_id, i * params.L, N * params.L, rho_c, params)


def _resync_wave(wave: Wave, rho: np.ndarray, params: RoadParams) -> Wave:
    """Pull a tracked wave's tail onto the congested core actually present.

    Cells count as core when their density is above the midpoint between
    critical and core density.  The tail never moves upstream here; a wave
    whose core has vanished is returned collapsed onto its head cell.
    """
    if wave.dissipated:
        return wave
    L = params.L
    thr = 0.5 * (params.sigma + wave.core_density)
    i = wave.head_cell
    if rho[i] < thr:
        i -= 1
    if i < wave.tail_cell or rho[i] < thr:
        return replace(wave, tail_cell=wave.head_cell, tail_pos=wave.front_pos)
    while i > wave.tail_cell and rho[i - 1] >= thr:
        i -= 1
    if i * L > wave.tail_pos:
        return replace(wave, tail_cell=i, tail_pos=i * L)
    return wave


def run_case(scenario: Scenario, case: ControlCase, params: Optional[RoadParams] = None, *,
             delta: float = 1.0, always_on: Optional[Iterable[int]] = None,
             keep_trace: bool = False) -> RunRecord:
    """Simulate one scenario under one control case.

    Per step: boundary conditions, ground-truth CTM step with wave and
    bottleneck overrides, CAV motion, sensing, reconstruction, probe
    selection, focus assignment and new speed commands.  ``always_on``
    replaces the default always-on sensor set (probes and actuators).
    """
    p = params or RoadParams()
    cfg = scenario.config
    T, L, N, V = p.T, p.L, p.N, p.V
    n_steps = scenario.n_steps

    arrivals: Dict[int, list] = {}
    initial: List[Cav] = []
    for cid, ev in enumerate(scenario.cavs):
        cav = Cav(cid, ev.pos, ev.role, command=V)
        if ev.time <= 0:
            initial.append(cav)
        else:
            arrivals.setdefault(int(round(ev.time / T)), []).append(cav)
    if always_on is None:
        always_on = {c for c, ev in enumerate(scenario.cavs) if ev.role is not Role.INACTIVE}
    always_on = frozenset(always_on)

    releases = {t1: (k, rc) for k, (t0, t1, rc) in enumerate(scenario.injections)}

    controlling = case is not ControlCase.NO_CONTROL
    estimating = case in (ControlCase.PREDEFINED, ControlCase.ADAPTIVE, ControlCase.ALL_CAVS)

    state = RoadState(scenario.rho0.copy(), 0.0, 0)
    speed = np.full(N, V)
    cavs: List[Cav] = list(initial)
    waves: List[Wave] = []
    est = EstimatorState.initial(cfg.q_bar_in, p)
    est_waves: List[Wave] = []
    active = set(always_on)
    tts = 0.0
    messages = 0
    released = dissipated = 0
    min_cmd = math.inf
    rho_tr = np.empty((n_steps + 1, N)) if keep_trace else None
    hat_tr = np.empty((n_steps + 1, N)) if keep_trace else None
    cav_tr: Optional[list] = [] if keep_trace else None
    if keep_trace:
        rho_tr[0] = state.rho
        hat_tr[0] = est.rho_hat if estimating else state.rho

    for t in range(n_steps):
        cavs.extend(arrivals.get(t, ()))

        if t in releases:
            k, rc = releases[t]
            w = _release_wave(state.rho, rc, k, p)
            if w is not None:
                waves = merge_waves(waves + [w])
                released += 1

        # ground truth
        controlled = [c for c in cavs if _bottleneck_active(c, speed, p)] if controlling else []
        parts = [reference_overrides(wave_reference(w, p), state.rho, p) for w in waves]
        parts += [reference_overrides(bottleneck_reference(replace(c, controlled=True), p), state.rho, p)
                  for c in controlled]
        U = combine_overrides(parts, p)
        new_state, q_in, q = step_with_flows(state, U, float(scenario.inflow[t]),
                                             float(scenario.supply[t]), p)
        rho = state.rho
        speed = np.where(rho > 0, q / np.where(rho > 0, rho, 1.0), V)

        moved = []
        for c in cavs:
            c = advance_cav(c, speed[c.cell(p)], p)
            if c.pos < N * L:
                moved.append(c)
        cavs = enforce_actuator_order(moved, p)

        nxt = []
        for w in waves:
            up = new_state.rho[w.tail_cell - 1] if w.tail_cell > 0 else q_in / V
            w = _resync_wave(advance_wave(w, up, p), new_state.rho, p)
            if w.dissipated:
                if w.tail_pos > 0:
                    dissipated += 1
            else:
                nxt.append(w)
        waves = merge_waves(nxt) if len(nxt) > 1 else nxt
        state = new_state

        if not np.all(np.isfinite(state.rho)) or state.queue < 0:
            raise InvariantViolation(t, "non-finite density or negative queue")

        # sensing and reconstruction
        if case is ControlCase.FULL_INFO:
            rho_hat = state.rho
        elif estimating:
            if case is ControlCase.ALL_CAVS:
                active = {c.id for c in cavs}
            on_road = [c for c in cavs if c.id in active]
            cells = sensed_cells(on_road, active, p)
            meas = {i: float(state.rho[i]) for i in cells}
            hat_speed = None
            eparts = [reference_overrides(wave_reference(w, p), est.rho_hat, p) for w in est_waves]
            eparts += [reference_overrides(bottleneck_reference(replace(c, controlled=True), p), est.rho_hat, p)
                       for c in controlled]
            U_hat = combine_overrides(eparts, p) if eparts else None
            est = reconstruct_step(est, meas, p, overrides=U_hat, n_messages=len(on_road))
            messages = est.messages_sent
            rho_hat = est.rho_hat
        else:
            rho_hat = None

        # control
        if controlling:
            actuators = [c for c in cavs if c.role is Role.ACTUATOR]
            wake_heads = set()
            bwaves = []
            for c in controlled:
                for c2 in actuators:
                    if c2.id == c.id:
                        i = c2.cell(p)
                        wake_heads.update((i - 1, i))
                        bw = bottleneck_as_wave(replace(c2, controlled=True), p)
                        if bw is not None:
                            bwaves.append(bw)
            est_waves = extract_waves(rho_hat, p, exclude_heads=wake_heads)
            assignment = assign_focus(actuators, est_waves + bwaves, rho_hat, p)
            cmds = assignment.commands
            cavs = [replace(c, command=cmds[c.id], focus_wave=assignment.focus[c.id])
                    if c.id in cmds else c for c in cavs]
            if cmds:
                min_cmd = min(min_cmd, min(cmds.values()))
            if case is ControlCase.ADAPTIVE:
                active = select_probes(est, cavs, always_on, delta, p)

        tts += T * (state.queue + state.rho.sum() * L)
        if keep_trace:
            rho_tr[t + 1] = state.rho
            hat_tr[t + 1] = rho_hat if rho_hat is not None else np.nan
            cav_tr.append([(c.id, c.pos, c.role.value, c.command,
                            case is ControlCase.ALL_CAVS or c.id in active or case is ControlCase.FULL_INFO)
                           for c in cavs])

    return RunRecord(
        case=case, seed=cfg.seed, G=cfg.G, p_p=cfg.p_p, p_a=cfg.p_a, tts=float(tts),
        tts_min=tts_min(cfg.q_bar_in, cfg.l, cfg.t_sim, p), messages_sent=messages,
        waves_released=released, waves_dissipated=dissipated, min_command=float(min_cmd),
        rho_trace=rho_tr, rho_hat_trace=hat_tr, cav_trace=cav_tr,
    )


# -- batches ----------------------------------------------------------------

GRID_G = (0.5, 1.0, 1.5, 2.5)
GRID_P_P = (0.1, 0.3, 0.5, 0.7)

RUN_FIELDS = ("G", "p_p", "p_a", "seed", "case", "tts", "tts_min", "tts_unc", "delay_ratio",
              "messages_sent", "waves_released", "waves_dissipated", "min_command",
              "effective_sensor_gap")
SUMMARY_FIELDS = ("G", "p_p", "p_a", "case", "runs", "valid_runs", "median_delay_ratio",
                  "median_messages")


@dataclass(frozen=True)
class BatchSpec:
    """Grid, seeds and run options of a batch.

    Runs whose uncontrolled delay ``tts_unc - tts_min`` is below
    ``min_delay`` (veh h) carry no usable ratio and are left out of medians.
    """

    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    G_values: Tuple[float, ...] = GRID_G
    p_p_values: Tuple[float, ...] = GRID_P_P
    runs: int = 100
    first_seed: int = 0
    delta: float = 1.0
    min_delay: float = 1.0
    cases: Tuple[ControlCase, ...] = ALL_CASES

    @property
    def seeds(self) -> range:
        return range(self.first_seed, self.first_seed + self.runs)


@dataclass
class BatchResult:
    spec: BatchSpec
    records: List[RunRecord]
    summary: List[dict]

    def median(self, case: ControlCase, G: float, p_p: float) -> Optional[float]:
        for row in self.summary:
            if row["case"] == case.value and row["G"] == G and row["p_p"] == p_p:
                return row["median_delay_ratio"]
        raise KeyError((case, G, p_p))


# Which inputs a case depends on: NoControl ignores CAVs entirely, AllCavs and
# FullInformation see every CAV and only the actuator subset (drawn
# independently of p_p), the subset cases depend on the whole grid point.
def _case_key(case: ControlCase, G: float, p_p: float, seed: int):
    if case is ControlCase.NO_CONTROL:
        return (case, seed)
    if case in (ControlCase.ALL_CAVS, ControlCase.FULL_INFO):
        return (case, G, seed)
    return (case, G, p_p, seed)


def _run_task(task):
    config, cases, params, delta = task
    scenario = generate(config, params)
    return [run_case(scenario, c, params, delta=delta) for c in cases]


def _with_ratio(rec: RunRecord, tts_unc: float, min_delay: float, G: float, p_p: float) -> RunRecord:
    ratio = None
    if tts_unc - rec.tts_min >= min_delay:
        ratio = delay_ratio(rec.tts, tts_unc, rec.tts_min)
    return replace(rec, G=G, p_p=p_p, tts_unc=tts_unc, delay_ratio=ratio)


def run_batch(spec: BatchSpec, params: Optional[RoadParams] = None, jobs: int = 1) -> BatchResult:
    """Run every case on every grid point and seed; summarize by median.

    Cases whose trajectory cannot depend on part of the grid point are
    simulated once and shared.  Output order is (G, p_p, seed, case)
    regardless of ``jobs``.
    """
    p = params or RoadParams()
    cases = tuple(spec.cases)
    if ControlCase.NO_CONTROL not in cases:
        cases = (ControlCase.NO_CONTROL,) + cases
    todo: Dict[tuple, Tuple[ScenarioConfig, list]] = {}
    seen = set()
    for G in spec.G_values:
        for p_p in spec.p_p_values:
            for seed in spec.seeds:
                cfg = replace(spec.base, G=G, p_p=p_p, seed=seed)
                for case in cases:
                    key = _case_key(case, G, p_p, seed)
                    if key in seen:
                        continue
                    seen.add(key)
                    todo.setdefault((G, p_p, seed), (cfg, []))[1].append(key)

    tasks = [(cfg, [k[0] for k in keys], p, spec.delta) for cfg, keys in todo.values()]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        outputs = [_run_task(t) for t in tasks]
    done = {}
    for (cfg, keys), recs in zip(todo.values(), outputs):
        for key, rec in zip(keys, recs):
            done[key] = rec

    records: List[RunRecord] = []
    summary: List[dict] = []
    for G in spec.G_values:
        for p_p in spec.p_p_values:
            by_case: Dict[ControlCase, List[RunRecord]] = {c: [] for c in cases}
            for seed in spec.seeds:
                unc = done[_case_key(ControlCase.NO_CONTROL, G, p_p, seed)].tts
                for case in cases:
                    rec = _with_ratio(done[_case_key(case, G, p_p, seed)], unc, spec.min_delay, G, p_p)
                    records.append(rec)
                    by_case[case].append(rec)
            for case in cases:
                recs = by_case[case]
                ratios = [r.delay_ratio for r in recs if r.delay_ratio is not None]
                summary.append({
                    "G": G, "p_p": p_p, "p_a": spec.base.p_a, "case": case.value,
                    "runs": len(recs), "valid_runs": len(ratios),
                    "median_delay_ratio": float(statistics.median(ratios)) if ratios else None,
                    "median_messages": float(statistics.median(r.messages_sent for r in recs)),
                })
    return BatchResult(spec, records, summary)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, ControlCase):
        return value.value
    return str(value)


def record_row(rec: RunRecord) -> dict:
    row = {name: getattr(rec, name) for name in RUN_FIELDS}
    if math.isinf(row["min_command"]):
        row["min_command"] = None
    return row


def write_records(records: Iterable[RunRecord], fh) -> None:
    import csv
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RUN_FIELDS)
    for rec in records:
        row = record_row(rec)
        w.writerow([_cell(row[k]) for k in RUN_FIELDS])


def write_summary(summary: Iterable[dict], fh) -> None:
    import csv
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for row in summary:
        w.writerow([_cell(row[k]) for k in SUMMARY_FIELDS])


def write_trace(matrix: np.ndarray, fh) -> None:
    """Density matrix as CSV: one row per time step, one column per cell."""
    import csv
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["t"] + [f"cell{i}" for i in range(matrix.shape[1])])
    for t, row in enumerate(matrix):
        w.writerow([t] + [repr(float(x)) for x in row])
