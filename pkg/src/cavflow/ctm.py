"""Extended cell transmission model.

Triangular (Newell-Daganzo) fundamental diagram with a capacity drop, and a
per-cell free-flow speed ``U_i`` that reference density profiles use to shape
the solution near stop-and-go waves and moving bottlenecks.

Units throughout: km, h, veh/km, veh/h.  Densities are two-lane aggregates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np


@dataclass(frozen=True)
class RoadParams:
    """Fundamental-diagram and discretization constants.

    ``P`` defaults to ``sigma * (1 + V / W)`` so the diagram is continuous at
    the critical density, and ``T`` defaults to ``L / V``.
    """

    V: float = 100.0
    W: float = 50.0
    sigma: float = 40.0
    P: Optional[float] = None
    sigma_b: float = 20.0
    alpha: float = 0.25
    L: float = 0.1
    T: Optional[float] = None
    N: int = 50
    u_min: float = 30.0

    def __post_init__(self):
        if self.P is None:
            object.__setattr__(self, "P", self.sigma * (1.0 + self.V / self.W))
        if self.T is None:
            object.__setattr__(self, "T", self.L / self.V)
        object.__setattr__(self, "N", int(self.N))
        if self.V <= 0 or self.W <= 0:
            raise ValueError("V and W must be positive")
        if self.W > self.V:
            raise ValueError("W must not exceed V (density bounds need W <= V)")
        if not 0 < self.sigma < self.P:
            raise ValueError("need 0 < sigma < P")
        if not 0 <= self.sigma_b < self.sigma:
            raise ValueError("need 0 <= sigma_b < sigma")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0 < self.u_min <= self.V:
            raise ValueError("need 0 < u_min <= V")
        if self.N < 1 or self.L <= 0 or self.T <= 0:
            raise ValueError("N, L and T must be positive")
        if not math.isclose(self.L, self.V * self.T, rel_tol=1e-12):
            raise ValueError(f"L must equal V*T (L={self.L}, V*T={self.V * self.T})")

    @property
    def length(self) -> float:
        return self.N * self.L

    @property
    def max_flow(self) -> float:
        """Free-flow capacity V*sigma."""
        return self.V * self.sigma


@dataclass
class RoadState:
    """Densities of all cells plus the upstream queue at step ``t``."""

    rho: np.ndarray
    queue: float = 0.0
    t: int = 0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)

    def vehicles(self, params: RoadParams) -> float:
        """Vehicles on the road plus the queue."""
        return float(self.rho.sum() * params.L + self.queue)


@dataclass
class SpeedOverrides:
    U: np.ndarray = field(default=None)

    @classmethod
    def free(cls, params: RoadParams) -> "SpeedOverrides":
        return cls(np.full(params.N, params.V))


def _check_density(rho, params: RoadParams, name="density"):
    arr = np.asarray(rho, dtype=float)
    if np.any(arr < 0) or np.any(arr > params.P) or np.any(np.isnan(arr)):
        raise ValueError(f"{name} outside [0, {params.P}]: {rho}")


def capacity(rho_i, params: RoadParams):
    """Outflow capacity of a cell with capacity drop."""
    _check_density(rho_i, params)
    p = params
    return np.minimum(p.V * p.sigma, p.W * (p.P - (1 - p.alpha) * p.sigma - p.alpha * np.asarray(rho_i, dtype=float)))[()]


def cell_outflow(rho_i, rho_next, U_i, params: RoadParams):
    """Flow from cell i to cell i+1: min of demand, capacity and downstream supply."""
    _check_density(rho_i, params)
    _check_density(rho_next, params, "downstream density")
    U_arr = np.asarray(U_i, dtype=float)
    if np.any(U_arr < 0) or np.any(U_arr > params.V):
        raise ValueError(f"speed override outside [0, V]: {U_i}")
    demand = U_arr * np.asarray(rho_i, dtype=float)
    supply = params.W * (params.P - np.asarray(rho_next, dtype=float))
    return np.minimum(np.minimum(demand, capacity(rho_i, params)), supply)[()]


def traffic_speed(rho_i, outflow_i, params: RoadParams):
    """Space-mean speed q/rho of a cell; V for an empty cell."""
    rho = np.asarray(rho_i, dtype=float)
    if np.any(rho < 0):
        raise ValueError("density must be nonnegative")
    q = np.asarray(outflow_i, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(rho > 0, q / np.where(rho > 0, rho, 1.0), params.V)
    return v[()]


def equilibrium_flow(rho, params: RoadParams):
    """Triangular fundamental diagram q(rho) = min(V rho, V sigma, W (P - rho))."""
    r = np.asarray(rho, dtype=float)
    return np.minimum(np.minimum(params.V * r, params.V * params.sigma), params.W * (params.P - r))[()]


def cell_fluxes(rho: np.ndarray, U: np.ndarray, supply_out: float, params: RoadParams) -> np.ndarray:
    """Outflows q_0..q_{N-1} of every cell (no validation; hot path)."""
    p = params
    supply = np.empty_like(rho)
    supply[:-1] = p.W * (p.P - rho[1:])
    supply[-1] = supply_out
    cap = np.minimum(p.V * p.sigma, p.W * (p.P - (1 - p.alpha) * p.sigma - p.alpha * rho))
    return np.minimum(np.minimum(U * rho, cap), supply)


def boundary_inflow(demand: float, rho0: float, params: RoadParams) -> float:
    """Flow admitted into the first cell given upstream demand (incl. released queue)."""
    return min(demand, params.V * params.sigma, params.W * (params.P - rho0))


def step_with_flows(state: RoadState, U, demand_in: float, supply_out: float, params: RoadParams):
    """One density update; returns ``(new_state, q_in, q)`` with ``q`` the cell outflows."""
    if isinstance(U, SpeedOverrides):
        U = U.U
    rho = state.rho
    q = cell_fluxes(rho, U, supply_out, params)
    q_in = boundary_inflow(demand_in + state.queue / params.T, rho[0], params)
    inflow = np.empty_like(q)
    inflow[0] = q_in
    inflow[1:] = q[:-1]
    new_rho = rho + (params.T / params.L) * (inflow - q)
    # round-off only: the min-flux form keeps densities inside [0, P]
    np.clip(new_rho, 0.0, params.P, out=new_rho)
    queue = max(state.queue + params.T * (demand_in - q_in), 0.0)
    return RoadState(new_rho, queue, state.t + 1), q_in, q


def step(state: RoadState, overrides, demand_in: float, supply_out: float, params: RoadParams) -> RoadState:
    """Advance the road by one time step.

    ``demand_in`` is the exogenous upstream demand; unserved demand joins the
    queue.  ``supply_out`` caps the outflow of the last cell.
    """
    if demand_in < 0 or supply_out < 0:
        raise ValueError("demand and supply must be nonnegative")
    U = overrides.U if isinstance(overrides, SpeedOverrides) else overrides
    if U is None:
        U = np.full(params.N, params.V)
    return step_with_flows(state, np.asarray(U, dtype=float), demand_in, supply_out, params)[0]


def reference_overrides(profile, rho: np.ndarray, params: RoadParams) -> dict:
    """Speed overrides that steer densities towards a reference profile.

    ``profile`` covers cells ``i_minus..i_plus`` with next-step targets
    ``profile.target_next``.  The head cell ``i_plus - 1`` gets
    ``U = V min(1, target[i+1] / rho[i])``; cells ``i_plus - 2`` down to
    ``i_minus - 1`` follow the recursion

        U_i = V min(1, max(0, (target[i+1] - (V - U_{i+1}) / V * rho[i+1]) / rho[i])).

    Returns ``{cell: U}`` for the cells it touches (cells outside the road are
    skipped).  ``i_plus`` may equal N (a virtual cell past the downstream end).
    """
    i_minus, i_plus = profile.i_minus, profile.i_plus
    N, V = params.N, params.V
    if i_plus <= i_minus or i_minus < 0 or i_plus > N:
        raise ValueError(f"bad profile range [{i_minus}, {i_plus}] for N={N}")
    target = profile.target_next

    def tgt(i):
        return target[i - i_minus]

    out = {}
    head = i_plus - 1
    r = rho[head]
    u_next = V if r <= 0 else V * min(1.0, tgt(head + 1) / r)
    out[head] = u_next
    for i in range(i_plus - 2, i_minus - 2, -1):
        if i < 0:
            break
        r = rho[i]
        if r <= 0:
            u = V
        else:
            num = tgt(i + 1) - (V - u_next) / V * rho[i + 1]
            u = V * min(1.0, max(0.0, num / r))
        out[i] = u
        u_next = u
    return out


def combine_overrides(parts: Iterable[dict], params: RoadParams) -> np.ndarray:
    """Merge per-profile overrides cell-wise by the minimum speed."""
    U = np.full(params.N, params.V)
    for part in parts:
        for i, u in part.items():
            if u < U[i]:
                U[i] = u
    return U
