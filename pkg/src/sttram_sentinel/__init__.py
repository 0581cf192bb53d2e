"""Discrete-event simulation of STTRAM-based IoT nodes under magnetic attack,
with sensor-based detection and peer-to-peer firmware recovery."""

from .engine import Deadlock, MetricsReport, SchedulePast, Simulator, run
from .magnetics import (FieldKind, FieldProfile, MtjParams, SpinCurrent, integrate,
                        simulate_exposure, switching_threshold)
from .scenario import Scenario, SchemaError, SemanticError, dump_scenario, load_scenario

__version__ = "0.1.0"

__all__ = [
    "Deadlock", "FieldKind", "FieldProfile", "MetricsReport", "MtjParams", "SchedulePast",
    "Scenario", "SchemaError", "SemanticError", "Simulator", "SpinCurrent", "dump_scenario",
    "integrate", "load_scenario", "run", "simulate_exposure", "switching_threshold",
]
