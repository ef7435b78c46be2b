"""Priority-aware QoS control for two-tier (local + CXL) memory, with a model-driven simulator."""

from .core import (
    Allocation,
    AppClass,
    AppSpec,
    Event,
    EventKind,
    MachineSpec,
    ScenarioSpec,
    SloKind,
    SloTarget,
    Thresholds,
    ValidationError,
    WorkloadPhase,
    bi_app,
    ls_app,
    validate_scenario,
)
from .mercury import MercuryController, admit, adapt_tick, yield_bw, yield_mem
from .profiler import calibrate_thresholds, profile_app
from .scenario_io import dump_scenario, load_scenario, parse_scenario
from .tiersim import Simulation, Trace, run_scenario

__version__ = "0.1.0"
