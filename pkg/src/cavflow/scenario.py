"""Seeded random scenarios: CAV arrivals, inflow, initial densities and
downstream wave injections."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, fields
from typing import List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .ctm import RoadParams
from .lagrangian import Role, rh_speed

FORMAT_TAG = "cavflow-scenario 1"


@dataclass(frozen=True)
class WaveEvent:
    """A wave entering from downstream: injection starts at ``time`` (h) and
    lasts until the spillback has grown to ``width`` km."""

    time: float
    core_density: float
    width: float


@dataclass(frozen=True)
class CavEvent:
    time: float
    role: Role
    pos: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    G: float = 0.5
    p_p: float = 0.3
    p_a: float = 0.3
    q_bar_in: float = 3200.0
    l: float = 5.0
    t_sim: float = 1.0
    seed: int = 0
    wave_schedule: Optional[Tuple[WaveEvent, ...]] = None
    cav_schedule: Optional[Tuple[CavEvent, ...]] = None
    inflow_range: Tuple[float, float] = (0.9, 1.1)
    inflow_block: float = 5.0 / 60.0
    init_range: Tuple[float, float] = (0.8, 1.2)
    wave_count_range: Tuple[int, int] = (1, 3)
    wave_time_range: Tuple[float, float] = (0.2, 0.8)
    wave_density_range: Tuple[float, float] = (104.0, 110.0)
    wave_width_range: Tuple[float, float] = (0.2, 0.4)

    def __post_init__(self):
        if self.p_p < 0 or self.p_a < 0 or self.p_p + self.p_a > 1 + 1e-12:
            raise ValueError(f"invalid role probabilities p_p={self.p_p}, p_a={self.p_a}")
        if self.G <= 0:
            raise ValueError("G must be positive")
        if self.t_sim <= 0 or self.l <= 0:
            raise ValueError("t_sim and l must be positive")


@dataclass
class Scenario:
    """Everything a run needs from the outside world, per time step."""

    config: ScenarioConfig
    n_steps: int
    inflow: np.ndarray
    rho0: np.ndarray
    supply: np.ndarray
    cavs: List[CavEvent]
    waves: List[WaveEvent]
    # (start step, release step, core density) per injected wave
    injections: List[Tuple[int, int, float]] = field(default_factory=list)


def _role(r: float, p_a: float, p_p: float) -> Role:
    # nested thresholds: the actuator set does not depend on p_p
    if r < p_a:
        return Role.ACTUATOR
    if r < p_a + p_p:
        return Role.PROBE
    return Role.INACTIVE


def injection_steps(event: WaveEvent, q_bar_in: float, params: RoadParams) -> int:
    """Steps of throttled supply needed for the spillback to reach ``width``."""
    s = rh_speed(q_bar_in / params.V, event.core_density, params)
    if s >= 0:
        raise ValueError("wave core too light to spill back against the mean inflow")
    return max(1, int(round(event.width / -s / params.T)))


def generate(config: ScenarioConfig, params: Optional[RoadParams] = None) -> Scenario:
    """Build a scenario; a pure function of ``config`` (seed included)."""
    p = params or RoadParams()
    if not math.isclose(config.l, p.length, rel_tol=1e-9):
        raise ValueError(f"segment length {config.l} km does not match N*L = {p.length} km")
    n_steps = int(round(config.t_sim / p.T))
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(5)]
    rng_cav, rng_role, rng_inflow, rng_init, rng_wave = streams

    # CAVs: Poisson in space with mean gap G, both already on the road and entering
    cavs: List[CavEvent] = []
    if config.cav_schedule is not None:
        cavs = sorted(config.cav_schedule, key=lambda e: (e.time, -e.pos))
    else:
        unit_gaps = rng_cav.exponential(1.0, size=4 * int((p.length + p.V * config.t_sim) / config.G) + 64)
        marks = rng_role.random(unit_gaps.size)
        x = np.cumsum(unit_gaps) * config.G
        on_road = x < p.length
        for xi, r in sorted(zip(p.length - x[on_road], marks[on_road]), key=lambda z: -z[0]):
            cavs.append(CavEvent(0.0, _role(r, config.p_a, config.p_p), float(xi)))
        start = np.count_nonzero(on_road)
        # distance upstream of the entry converts to arrival time at free-flow speed
        for xi, r in zip(x[start:], marks[start:]):
            tt = (xi - p.length) / p.V
            if tt >= config.t_sim:
                break
            cavs.append(CavEvent(float(tt), _role(r, config.p_a, config.p_p), 0.0))

    lo, hi = config.inflow_range
    n_blocks = int(math.ceil(config.t_sim / config.inflow_block)) + 1
    levels = config.q_bar_in * rng_inflow.uniform(lo, hi, size=n_blocks)
    block_of = (np.arange(n_steps) * p.T / config.inflow_block + 1e-9).astype(int)
    inflow = levels[block_of]

    lo, hi = config.init_range
    rho0 = config.q_bar_in / p.V * rng_init.uniform(lo, hi, size=p.N)

    if config.wave_schedule is not None:
        waves = list(config.wave_schedule)
    else:
        a, b = config.wave_count_range
        count = int(rng_wave.integers(a, b + 1))
        waves = []
        for _ in range(count):
            tt = rng_wave.uniform(*config.wave_time_range) * config.t_sim
            rc = rng_wave.uniform(*config.wave_density_range)
            w = rng_wave.uniform(*config.wave_width_range)
            waves.append(WaveEvent(float(tt), float(rc), float(w)))
        waves.sort(key=lambda e: e.time)

    supply = np.full(n_steps, p.max_flow)
    injections = []
    for ev in waves:
        t0 = int(round(ev.time / p.T))
        t1 = min(t0 + injection_steps(ev, config.q_bar_in, p), n_steps)
        cap = p.W * (p.P - ev.core_density)
        supply[t0:t1] = np.minimum(supply[t0:t1], cap)
        injections.append((t0, t1, ev.core_density))
    return Scenario(config, n_steps, inflow, rho0, supply, cavs, waves, injections)


def downstream_supply(scenario: Scenario, t: int) -> float:
    """Supply cap at the downstream end during step ``t``."""
    if not 0 <= t < scenario.n_steps:
        raise IndexError(f"step {t} outside [0, {scenario.n_steps})")
    return float(scenario.supply[t])


# -- text serialization ---------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def dump_scenario(scenario: Scenario, fh: TextIO) -> None:
    """Write one record per line: ``kind key=value ...``."""
    c = scenario.config
    fh.write(f"# {FORMAT_TAG}\n")
    fh.write(f"meta n_steps={scenario.n_steps} G={_fmt(c.G)} p_p={_fmt(c.p_p)} p_a={_fmt(c.p_a)} "
             f"q_bar_in={_fmt(c.q_bar_in)} l={_fmt(c.l)} t_sim={_fmt(c.t_sim)} seed={c.seed}\n")
    for ev in scenario.cavs:
        fh.write(f"cav time={_fmt(ev.time)} role={ev.role.value} pos={_fmt(ev.pos)}\n")
    for ev, (t0, t1, _) in zip(scenario.waves, scenario.injections):
        fh.write(f"wave time={_fmt(ev.time)} core_density={_fmt(ev.core_density)} "
                 f"width={_fmt(ev.width)} start={t0} release={t1}\n")
    for i, r in enumerate(scenario.rho0):
        fh.write(f"init cell={i} density={_fmt(r)}\n")
    for t, (q, s) in enumerate(zip(scenario.inflow, scenario.supply)):
        fh.write(f"step t={t} inflow={_fmt(q)} supply={_fmt(s)}\n")


def dumps_scenario(scenario: Scenario) -> str:
    buf = io.StringIO()
    dump_scenario(scenario, buf)
    return buf.getvalue()


def load_scenario(fh: TextIO) -> Scenario:
    header = fh.readline().strip()
    if header != f"# {FORMAT_TAG}":
        raise ValueError(f"not a scenario file: {header!r}")
    meta = {}
    cavs, waves, injections, rho0, inflow, supply = [], [], [], [], [], []
    for line in fh:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        kind, *items = line.split()
        rec = dict(item.split("=", 1) for item in items)
        if kind == "meta":
            meta = rec
        elif kind == "cav":
            cavs.append(CavEvent(float(rec["time"]), Role(rec["role"]), float(rec["pos"])))
        elif kind == "wave":
            ev = WaveEvent(float(rec["time"]), float(rec["core_density"]), float(rec["width"]))
            waves.append(ev)
            injections.append((int(rec["start"]), int(rec["release"]), ev.core_density))
        elif kind == "init":
            rho0.append(float(rec["density"]))
        elif kind == "step":
            inflow.append(float(rec["inflow"]))
            supply.append(float(rec["supply"]))
        else:
            raise ValueError(f"unknown record kind {kind!r}")
    config = ScenarioConfig(
        G=float(meta["G"]), p_p=float(meta["p_p"]), p_a=float(meta["p_a"]),
        q_bar_in=float(meta["q_bar_in"]), l=float(meta["l"]), t_sim=float(meta["t_sim"]),
        seed=int(meta["seed"]), wave_schedule=tuple(waves), cav_schedule=tuple(cavs),
    )
    return Scenario(config, int(meta["n_steps"]), np.array(inflow), np.array(rho0),
                    np.array(supply), cavs, waves, injections)
