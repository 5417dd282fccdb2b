"""Cloud-mediated self-triggered synchronization of identical LTI agents:
offline parameter design plus a deterministic discrete-event simulator."""

from .cloud import CloudRecord, Repository, UnauthorizedRead
from .engine import RunSummary, SimConfig, Simulator, Trajectory, simulate
from .graph import AccessibilityGraph, build_graph, spectral
from .numerics import ExpSum, exp_envelope_integral, matexp, zoh_flow
from .scenario import Scenario, load_scenario
from .synthesis import (
    AgentDynamics,
    DesignCertificate,
    DesignError,
    ThresholdParams,
    design_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "AccessibilityGraph", "AgentDynamics", "CloudRecord", "DesignCertificate", "DesignError",
    "ExpSum", "Repository", "RunSummary", "Scenario", "SimConfig", "Simulator", "ThresholdParams",
    "Trajectory", "UnauthorizedRead", "build_graph", "design_pipeline", "exp_envelope_integral",
    "load_scenario", "matexp", "simulate", "spectral", "zoh_flow",
]
