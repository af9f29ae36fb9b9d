"""Macroscopic freeway simulation with vehicle-borne sensing and actuation.

Extended cell transmission model with capacity drop, stop-and-go waves and
moving bottlenecks driven by connected automated vehicles (CAVs), density
reconstruction from CAV measurements, and a seeded Monte-Carlo harness.
"""

from .control import Assignment, Command, assign_focus, average_density, control_speed, predict_dissipation, total_time_spent
from .ctm import RoadParams, RoadState, SpeedOverrides, capacity, cell_outflow, reference_overrides, step, traffic_speed
from .estimation import EstimatorState, extract_waves, message_count, reconstruct_step, select_probes, sensed_cells
from .harness import BatchResult, BatchSpec, ControlCase, InvariantViolation, RunRecord, delay_ratio, run_batch, run_case
from .lagrangian import Cav, ReferenceProfile, Role, Wave, WaveSource
from .scenario import CavEvent, Scenario, ScenarioConfig, WaveEvent, generate

__version__ = "0.1.0"
