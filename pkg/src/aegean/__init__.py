"""Simulator for a multi-agent refinement consensus protocol."""

from .protocol import ConfigError, ProtocolConfig, Solution, RefinementSet, quorum_size, max_failures
from .scenario import ScenarioConfig
from .sim import LivenessViolation, run
from .trace import Trace

__all__ = [
    "ConfigError",
    "LivenessViolation",
    "ProtocolConfig",
    "RefinementSet",
    "ScenarioConfig",
    "Solution",
    "Trace",
    "max_failures",
    "quorum_size",
    "run",
]
