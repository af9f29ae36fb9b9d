"""Focus assignment and speed commands for actuator vehicles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .ctm import RoadParams, RoadState
from .lagrangian import Cav, Wave


class DegenerateCommand(ValueError):
    """Raised when the average density makes the speed law singular."""


@dataclass
class Command:
    speed: float
    failed: bool = False
    degenerate: bool = False
    raw: Optional[float] = None


@dataclass
class Assignment:
    """Result of one assignment pass, keyed by actuator id."""

    focus: Dict[int, Optional[int]] = field(default_factory=dict)
    commands: Dict[int, float] = field(default_factory=dict)
    predicted_success: Dict[int, bool] = field(default_factory=dict)
    predicted_horizon: Dict[int, Optional[float]] = field(default_factory=dict)


def average_density(rho_hat, i_from: int, i_to: int) -> float:
    """Mean estimated density over cells ``i_from..i_to`` inclusive."""
    if i_from >= i_to:
        raise ValueError(f"need i_from < i_to, got {i_from}, {i_to}")
    return float(np.mean(np.asarray(rho_hat)[i_from:i_to + 1]))


def raw_control_speed(rho_bar: float, wave: Wave, params: RoadParams) -> float:
    p = params
    rd, lam = wave.discharge_density, wave.front_speed
    den = rho_bar - p.sigma + p.sigma_b
    if den == 0:
        raise DegenerateCommand("rho_bar equals sigma - sigma_b")
    return (p.V * (rd - p.sigma + p.sigma_b) + lam * (rho_bar - rd)) / den


def control_speed(rho_bar: float, wave: Wave, params: RoadParams) -> Command:
    """Speed that empties the stretch up to the wave front exactly when the
    actuator reaches it, clamped to ``[u_min, V]``.

    A raw value below ``u_min`` is reported as a predicted failure.  A
    singular denominator yields ``V`` flagged as degenerate.
    """
    if not 0 <= rho_bar <= params.P:
        raise ValueError(f"average density outside [0, P]: {rho_bar}")
    try:
        raw = raw_control_speed(rho_bar, wave, params)
    except DegenerateCommand:
        return Command(params.V, degenerate=True)
    if raw < params.u_min:
        return Command(params.u_min, failed=True, raw=raw)
    return Command(min(raw, params.V), raw=raw)


def balance_rates(u: float, wave: Wave, params: RoadParams):
    """Rates (dn/dt, dd/dt) of vehicles and distance between actuator and front."""
    p = params
    lam = wave.front_speed
    n_dot = (p.V - u) * (p.sigma - p.sigma_b) - (p.V - lam) * wave.discharge_density
    d_dot = lam - u
    return n_dot, d_dot


def predict_dissipation(n_yz: float, d: float, u: float, wave: Wave, params: RoadParams) -> Optional[float]:
    """Time until the vehicles between actuator and wave front are gone.

    The balance rates are constant for a fixed command, so both quantities
    are integrated exactly.  Success needs the count to reach zero (within
    one vehicle) no later than the distance does (within one cell); returns
    None on failure.
    """
    if d < 0:
        raise ValueError("distance must be nonnegative")
    tol_n, tol_d = 1.0, params.L
    if n_yz <= tol_n and d <= tol_d:
        return 0.0
    if d == 0:
        raise ValueError("distance must be positive")
    n_dot, d_dot = balance_rates(u, wave, params)
    if n_yz <= tol_n:
        return 0.0
    if n_dot >= 0 or d_dot >= 0:
        return None
    t_n = (n_yz - tol_n) / -n_dot
    t_d = d / -d_dot
    return t_n if t_n <= t_d + tol_d / -d_dot else None


def assign_focus(actuators: Sequence[Cav], waves: Sequence[Wave], rho_hat, params: RoadParams) -> Assignment:
    """Give each actuator the nearest wave ahead of it and a speed command.

    ``actuators`` are processed downstream-first.  When an actuator is
    predicted to fail, the next actuator upstream is forced onto the same
    wave.  Actuators without a wave ahead drive at V.
    """
    result = Assignment()
    rho_hat = np.asarray(rho_hat)
    order = sorted(actuators, key=lambda c: -c.pos)
    forced: Optional[Wave] = None
    for cav in order:
        iy = cav.cell(params)
        if forced is not None and forced.head_cell > iy:
            wave = forced
        else:
            ahead = [w for w in waves if w.head_cell > iy and w.id != -(cav.id + 1)]
            wave = min(ahead, key=lambda w: w.head_cell) if ahead else None
        forced = None
        if wave is None:
            result.focus[cav.id] = None
            result.commands[cav.id] = params.V
            result.predicted_success[cav.id] = True
            result.predicted_horizon[cav.id] = None
            continue
        rho_bar = average_density(rho_hat, iy, wave.head_cell)
        cmd = control_speed(rho_bar, wave, params)
        dist = max(wave.front_pos - cav.pos, params.L)
        theta = predict_dissipation(rho_bar * dist, dist, cmd.speed, wave, params)
        failed = cmd.failed or theta is None
        result.focus[cav.id] = wave.id
        result.commands[cav.id] = cmd.speed
        result.predicted_success[cav.id] = not failed
        result.predicted_horizon[cav.id] = theta
        if failed:
            forced = wave
    return result


def total_time_spent(trace: Sequence[RoadState], params: RoadParams) -> float:
    """Vehicle-hours spent on the road and in the upstream queue."""
    if len(trace) == 0:
        raise ValueError("empty trace")
    return float(sum(params.T * (s.queue + s.rho.sum() * params.L) for s in trace))
