"""Density reconstruction from CAV measurements and adaptive probe activation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .ctm import RoadParams, RoadState, step_with_flows
from .lagrangian import Cav, Wave, discharge_density, wave_front_speed


@dataclass(frozen=True)
class EstimatorState:
    rho_hat: np.ndarray
    q_hat_in: float
    active_probes: frozenset = frozenset()
    messages_sent: int = 0

    @classmethod
    def initial(cls, q_bar_in: float, params: RoadParams) -> "EstimatorState":
        """Uniform estimate at the density that carries the mean inflow in free flow."""
        return cls(np.full(params.N, q_bar_in / params.V), q_bar_in)


def sensed_cells(fleet: Sequence[Cav], active: Iterable[int], params: RoadParams) -> set:
    """Cells within one cell of any active CAV."""
    active = set(active)
    cells = set()
    for cav in fleet:
        if cav.id in active:
            i = cav.cell(params)
            cells.update(j for j in (i - 1, i, i + 1) if 0 <= j < params.N)
    return cells


def reconstruct_step(est: EstimatorState, measurements: Mapping[int, float], params: RoadParams,
                     overrides: Optional[np.ndarray] = None, supply_out: Optional[float] = None,
                     n_messages: int = 0) -> EstimatorState:
    """Propagate the estimate one CTM step, then overwrite sensed cells.

    Propagation runs entirely on the estimate: inflow is ``q_hat_in``, speed
    overrides are those computed on the estimate, and the downstream end is
    unconstrained unless ``supply_out`` is given.
    """
    U = np.full(params.N, params.V) if overrides is None else overrides
    supply = params.max_flow if supply_out is None else supply_out
    state = RoadState(est.rho_hat, 0.0)
    rho = step_with_flows(state, U, est.q_hat_in, supply, params)[0].rho
    for i, value in measurements.items():
        if not 0 <= i < params.N:
            raise ValueError(f"measurement cell {i} outside the road")
        if not 0 <= value <= params.P:
            raise ValueError(f"measured density {value} outside [0, P]")
        rho[i] = value
    return replace(est, rho_hat=rho, messages_sent=est.messages_sent + n_messages)


def select_probes(est: EstimatorState, fleet: Sequence[Cav], always_on: Iterable[int],
                  delta: float, params: RoadParams) -> set:
    """Always-on CAVs plus every CAV with an estimated congested cell at most
    ``delta`` ahead of it (the window is one-sided: downstream only)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    selected = set(always_on)
    congested = np.flatnonzero(est.rho_hat > params.sigma)
    if congested.size == 0:
        return selected
    reach = math.inf if math.isinf(delta) else math.floor(delta / params.L + 1e-9)
    for cav in fleet:
        i = cav.cell(params)
        k = np.searchsorted(congested, i)
        if k < congested.size and congested[k] - i <= reach:
            selected.add(cav.id)
    return selected


def message_count(est: EstimatorState) -> int:
    return est.messages_sent


def extract_waves(rho_hat, params: RoadParams, exclude_heads: Iterable[int] = (),
                  first_id: int = 0) -> list:
    """Read stop-and-go waves off a density profile.

    Each maximal run of cells above the critical density is one wave; runs
    whose head sits at a cell in ``exclude_heads`` (wakes of controlled
    actuators) are skipped.  The core density is the run maximum and the
    front position is placed inside the head cell by inverting the head-cell
    interpolation.
    """
    rho = np.asarray(rho_hat)
    mask = rho > params.sigma
    exclude = set(exclude_heads)
    waves = []
    L = params.L
    lam = wave_front_speed(params)
    i = 0
    N = params.N
    while i < N:
        if not mask[i]:
            i += 1
            continue
        j = i
        while j + 1 < N and mask[j + 1]:
            j += 1
        if j not in exclude and j > i:
            rc = float(rho[i:j + 1].max())
            rd = discharge_density(rc, params)
            frac = 1.0 if rc <= rd else min(max((rho[j] - rd) / (rc - rd), 0.0), 1.0)
            waves.append(Wave(
                id=first_id + len(waves), tail_cell=i, head_cell=j,
                front_pos=(j + frac) * L, core_density=rc, discharge_density=rd,
                front_speed=lam, tail_pos=i * L,
            ))
        i = j + 1
    return waves
