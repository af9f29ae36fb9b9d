"""Stop-and-go waves, connected vehicles, and the reference profiles that
couple them into the CTM."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .ctm import RoadParams, equilibrium_flow


class Role(enum.Enum):
    INACTIVE = "inactive"
    PROBE = "probe"
    ACTUATOR = "actuator"


class WaveSource(enum.Enum):
    EXOGENOUS = "exogenous"
    BOTTLENECK = "bottleneck"


@dataclass(frozen=True)
class Wave:
    """A tracked stop-and-go wave.

    The congested core spans cells ``tail_cell..head_cell``; ``front_pos`` is
    the downstream end in km.  ``tail_pos`` carries the fractional tail
    position between cell crossings.
    """

    id: int
    tail_cell: int
    head_cell: int
    front_pos: float
    core_density: float
    discharge_density: float
    front_speed: float
    source: WaveSource = WaveSource.EXOGENOUS
    tail_pos: Optional[float] = None
    entering: bool = False

    @property
    def dissipated(self) -> bool:
        return self.head_cell <= self.tail_cell

    @property
    def width(self) -> float:
        tail = self.tail_pos if self.tail_pos is not None else self.tail_cell
        return self.front_pos - tail


@dataclass(frozen=True)
class Cav:
    id: int
    pos: float
    role: Role = Role.INACTIVE
    sensing_active: bool = False
    command: float = 0.0
    focus_wave: Optional[int] = None
    controlled: bool = False

    def cell(self, params: RoadParams) -> int:
        return max(0, min(int(self.pos // params.L), params.N - 1))


@dataclass(frozen=True)
class ReferenceProfile:
    """Target densities on cells ``i_minus..i_plus`` at t (``target``) and t+1."""

    i_minus: int
    i_plus: int
    target: tuple
    target_next: tuple

    def __post_init__(self):
        n = self.i_plus - self.i_minus + 1
        if n < 1 or len(self.target) != n or len(self.target_next) != n:
            raise ValueError("profile range and targets disagree")


def discharge_density(rho_c: float, params: RoadParams) -> float:
    """Free-flow density discharged from a wave with core density ``rho_c``."""
    p = params
    if not p.sigma < rho_c <= p.P:
        raise ValueError(f"core density must lie in (sigma, P], got {rho_c}")
    return p.W / p.V * (p.P - (1 - p.alpha) * p.sigma - p.alpha * rho_c)


def wave_front_speed(params: RoadParams) -> float:
    p = params
    drop = (1 - p.alpha) * p.sigma
    return -p.V * drop / (p.P - drop)


def make_wave(id: int, tail_pos: float, front_pos: float, rho_c: float, params: RoadParams,
              entering: bool = False) -> Wave:
    return Wave(
        id=id,
        tail_cell=_cell_of(tail_pos, params),
        head_cell=_cell_of(front_pos, params),
        front_pos=front_pos,
        core_density=rho_c,
        discharge_density=discharge_density(rho_c, params),
        front_speed=wave_front_speed(params),
        tail_pos=tail_pos,
        entering=entering,
    )


def _cell_of(x: float, params: RoadParams) -> int:
    return max(0, min(int(math.floor(x / params.L)), params.N - 1))


def _wave_value(i, tail, head, z, rho_c, rho_d, L):
    if i < head:
        return rho_c
    if i == head:
        return rho_d + (rho_c - rho_d) * (z - head * L) / L
    return rho_d


def wave_reference(wave: Wave, params: RoadParams) -> ReferenceProfile:
    """Density profile around a wave over cells ``tail..head+1``.

    Core cells hold the core density, the head cell interpolates linearly
    between discharge and core density by the front's in-cell position, and
    the cell past the head holds the discharge density.  Next-step targets
    use the front advanced by one step.
    """
    if wave.dissipated:
        raise ValueError(f"wave {wave.id} is dissipated")
    L = params.L
    i_t, i_h = wave.tail_cell, wave.head_cell
    rc, rd = wave.core_density, wave.discharge_density
    cells = range(i_t, i_h + 2)
    now = tuple(_wave_value(i, i_t, i_h, wave.front_pos, rc, rd, L) for i in cells)
    z1 = wave.front_pos + wave.front_speed * params.T
    h1 = _cell_of(z1, params)
    nxt = tuple(_wave_value(i, i_t, h1, z1, rc, rd, L) for i in cells)
    return ReferenceProfile(i_t, i_h + 1, now, nxt)


def rh_speed(rho_up: float, rho_c: float, params: RoadParams) -> float:
    """Shock speed between an upstream state and a wave core."""
    if rho_up == rho_c:
        return 0.0
    return float((equilibrium_flow(rho_up, params) - equilibrium_flow(rho_c, params)) / (rho_up - rho_c))


def advance_wave(wave: Wave, upstream_density: float, params: RoadParams) -> Wave:
    """Move the front by the wave front speed and the tail by the shock speed.

    ``upstream_density`` is the density of the cell just upstream of the tail.
    """
    z = wave.front_pos + wave.front_speed * params.T
    tail = wave.tail_pos if wave.tail_pos is not None else wave.tail_cell * params.L
    tail += rh_speed(upstream_density, wave.core_density, params) * params.T
    tail = max(tail, 0.0)
    return replace(wave, front_pos=z, head_cell=_cell_of(z, params),
                   tail_pos=tail, tail_cell=_cell_of(tail, params))


def bottleneck_density(u: float, params: RoadParams) -> float:
    """Density of the congested wake behind a vehicle driving at ``u``."""
    p = params
    if not 0 <= u <= p.V:
        raise ValueError(f"speed must lie in [0, V], got {u}")
    return (p.W * p.P - (p.V - u) * (p.sigma - p.sigma_b)) / (u + p.W)


def _require_controlled(cav: Cav):
    if cav.role is not Role.ACTUATOR or not cav.controlled:
        raise ValueError(f"CAV {cav.id} is not an actively controlled actuator")


def bottleneck_reference(cav: Cav, params: RoadParams) -> ReferenceProfile:
    """Profile over cells ``i_y-1..i_y+1`` around a controlled actuator.

    Upstream cell at the wake density, the CAV cell interpolated between
    ``sigma_b`` and the wake density by in-cell position, and the downstream
    cell at ``sigma - sigma_b``.  The lower end is clipped at cell 0.
    """
    _require_controlled(cav)
    p = params
    rb = bottleneck_density(cav.command, p)
    ahead = p.sigma - p.sigma_b

    def values(y):
        iy = _cell_of(y, p)
        frac = (y - iy * p.L) / p.L
        return {iy - 1: rb, iy: p.sigma_b + (rb - p.sigma_b) * frac, iy + 1: ahead}, iy

    now, iy = values(cav.pos)
    nxt, iy1 = values(cav.pos + cav.command * p.T)
    lo = max(iy - 1, 0)
    cells = range(lo, iy + 2)

    def lookup(vals, i, iy_):
        if i in vals:
            return vals[i]
        # the CAV crosses into the next cell during the step
        return rb if i < iy_ else ahead

    return ReferenceProfile(
        lo, iy + 1,
        tuple(now[i] for i in cells),
        tuple(lookup(nxt, i, iy1) for i in cells),
    )


def advance_cav(cav: Cav, local_speed: float, params: RoadParams) -> Cav:
    """Move a CAV at ``min(local traffic speed, command)`` for one step.

    The caller drops CAVs whose position reaches ``N*L``.
    """
    v = min(local_speed, cav.command)
    return replace(cav, pos=cav.pos + v * params.T)


def enforce_actuator_order(cavs: Sequence[Cav], params: RoadParams) -> list:
    """Cap each trailing actuator behind the one ahead of it (by id order)."""
    gap = 2.0 / params.P
    out = list(cavs)
    idx = sorted((c.id, k) for k, c in enumerate(out) if c.role is Role.ACTUATOR)
    lead = None
    for _, k in idx:
        c = out[k]
        if lead is not None and c.pos > lead - gap:
            c = replace(c, pos=lead - gap)
            out[k] = c
        lead = c.pos
    return out


def bottleneck_as_wave(cav: Cav, params: RoadParams, wake_density: Optional[float] = None) -> Optional[Wave]:
    """View a controlled actuator's wake as a wave for focus assignment.

    Returns None when the CAV drives at V (no restriction).
    """
    _require_controlled(cav)
    if cav.command >= params.V:
        return None
    rb = bottleneck_density(cav.command, params)
    iy = cav.cell(params)
    return Wave(
        id=-(cav.id + 1),
        tail_cell=max(iy - 1, 0),
        head_cell=iy,
        front_pos=cav.pos,
        core_density=rb if wake_density is None else wake_density,
        discharge_density=rb,
        front_speed=cav.command,
        source=WaveSource.BOTTLENECK,
        tail_pos=max(iy - 1, 0) * params.L,
    )


def merge_waves(waves: Sequence[Wave]) -> list:
    """Merge waves whose cell ranges overlap into the one with larger core density."""
    out: list = []
    for w in sorted(waves, key=lambda w: w.tail_cell):
        if out and w.tail_cell <= out[-1].head_cell + 1:
            prev = out[-1]
            keep = w if w.core_density > prev.core_density else prev
            tail = min(prev.tail_pos if prev.tail_pos is not None else prev.tail_cell,
                       w.tail_pos if w.tail_pos is not None else w.tail_cell)
            front = max(prev.front_pos, w.front_pos)
            out[-1] = replace(keep, tail_cell=min(prev.tail_cell, w.tail_cell),
                              head_cell=max(prev.head_cell, w.head_cell),
                              tail_pos=tail, front_pos=front,
                              entering=prev.entering or w.entering)
        else:
            out.append(w)
    return out
