"""Flat ``key = value`` configuration files for runs and batches.

One key per line, ``#`` starts a comment.  Tuples are comma-separated,
``none`` marks an absent optional value.  Wave and CAV schedules are
semicolon-separated records: ``time:core_density:width`` and
``time:role:pos``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, Optional, TextIO

from .ctm import RoadParams
from .harness import ALL_CASES, BatchSpec, ControlCase
from .lagrangian import Role
from .scenario import CavEvent, ScenarioConfig, WaveEvent

JOBS_ENV = "CAVFLOW_JOBS"


@dataclass(frozen=True)
class Config:
    road: RoadParams = field(default_factory=RoadParams)
    batch: BatchSpec = field(default_factory=BatchSpec)
    jobs: Optional[int] = None

    @property
    def scenario(self) -> ScenarioConfig:
        return self.batch.base


def _parse_float(s: str) -> float:
    s = s.strip().lower()
    if s in ("inf", "infinity"):
        return math.inf
    return float(s)


def _parse_tuple(s: str, conv=float) -> tuple:
    return tuple(conv(x) for x in s.split(",") if x.strip())


def _parse_waves(s: str):
    out = []
    for rec in filter(None, (r.strip() for r in s.split(";"))):
        t, rc, w = (float(x) for x in rec.split(":"))
        out.append(WaveEvent(t, rc, w))
    return tuple(out)


def _parse_cavs(s: str):
    out = []
    for rec in filter(None, (r.strip() for r in s.split(";"))):
        t, role, pos = rec.split(":")
        out.append(CavEvent(float(t), Role(role.strip()), float(pos)))
    return tuple(out)


def _fmt_waves(ws) -> str:
    return "; ".join(f"{w.time!r}:{w.core_density!r}:{w.width!r}" for w in ws)


def _fmt_cavs(cs) -> str:
    return "; ".join(f"{c.time!r}:{c.role.value}:{c.pos!r}" for c in cs)


_ROAD = {"V": float, "W": float, "sigma": float, "P": float, "sigma_b": float, "alpha": float,
         "L": float, "T": float, "N": int, "u_min": float}
_SCENARIO = {
    "G": float, "p_p": float, "p_a": float, "q_bar_in": float, "l": float, "t_sim": float,
    "seed": int, "wave_schedule": _parse_waves, "cav_schedule": _parse_cavs,
    "inflow_range": _parse_tuple, "inflow_block": float, "init_range": _parse_tuple,
    "wave_count_range": lambda s: _parse_tuple(s, int), "wave_time_range": _parse_tuple,
    "wave_density_range": _parse_tuple, "wave_width_range": _parse_tuple,
}
_BATCH = {
    "G_values": _parse_tuple, "p_p_values": _parse_tuple, "runs": int, "first_seed": int,
    "delta": _parse_float, "min_delay": float,
    "cases": lambda s: tuple(ControlCase.parse(x.strip()) for x in s.split(",") if x.strip()),
}


def parse_config(text: str) -> Config:
    road: Dict[str, object] = {}
    scen: Dict[str, object] = {}
    batch: Dict[str, object] = {}
    jobs = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        absent = value.lower() == "none"
        try:
            if key in _ROAD:
                road[key] = None if absent else _ROAD[key](value)
            elif key in _SCENARIO:
                scen[key] = None if absent else _SCENARIO[key](value)
            elif key in _BATCH:
                batch[key] = _BATCH[key](value)
            elif key == "jobs":
                jobs = None if absent else int(value)
            else:
                raise ValueError(f"unknown key {key!r}")
        except ValueError as exc:
            raise ValueError(f"line {n}: {exc}") from None
    base = ScenarioConfig(**scen)
    return Config(RoadParams(**road), BatchSpec(base=base, **batch), jobs)


def load_config(path: Optional[str]) -> Config:
    if path is None:
        return Config()
    with open(path) as fh:
        return parse_config(fh.read())


def resolve_jobs(cli_jobs: Optional[int], config: Config) -> int:
    """Command line, then config file, then environment, then 1."""
    if cli_jobs is not None:
        return max(1, cli_jobs)
    if config.jobs is not None:
        return max(1, config.jobs)
    env = os.environ.get(JOBS_ENV)
    return max(1, int(env)) if env else 1


def _fmt(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        if value and isinstance(value[0], WaveEvent):
            return _fmt_waves(value)
        if value and isinstance(value[0], CavEvent):
            return _fmt_cavs(value)
        if value and isinstance(value[0], ControlCase):
            return ", ".join(c.value for c in value)
        return ", ".join(repr(x) for x in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(config: Config, fh: TextIO) -> None:
    """Write every setting, so the output doubles as an example config."""
    fh.write("# road and discretization\n")
    for f in fields(RoadParams):
        fh.write(f"{f.name} = {_fmt(getattr(config.road, f.name))}\n")
    fh.write("\n# scenario generation\n")
    for f in fields(ScenarioConfig):
        fh.write(f"{f.name} = {_fmt(getattr(config.scenario, f.name))}\n")
    fh.write("\n# batch\n")
    for f in fields(BatchSpec):
        if f.name != "base":
            fh.write(f"{f.name} = {_fmt(getattr(config.batch, f.name))}\n")
    fh.write(f"jobs = {_fmt(config.jobs)}\n")
