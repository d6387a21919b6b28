"""Backpressure traffic signal control with capacity-aware queue weights."""

from .network import (
    MovementId, NetworkSpec, QueueState, SpecError, ActivationError,
    step, throughput, lyapunov_value, single_queue_spec,
)
from .policies import (
    Backpressure, FixedCycle, Alternating, Controller, UNIFORM, INVERSE_CAPACITY, CUSTOM,
    priorities, policy_from_flag, weights_for,
)
from .engine import simulate, Trajectory, CapacityOverlay, compare_policies, total_time_spent
from .junction import JunctionParams, build_junction, phase_region, analyze_junction

__all__ = [
    "MovementId", "NetworkSpec", "QueueState", "SpecError", "ActivationError",
    "step", "throughput", "lyapunov_value", "single_queue_spec",
    "Backpressure", "FixedCycle", "Alternating", "Controller", "UNIFORM", "INVERSE_CAPACITY", "CUSTOM",
    "priorities", "policy_from_flag", "weights_for",
    "simulate", "Trajectory", "CapacityOverlay", "compare_policies", "total_time_spent",
    "JunctionParams", "build_junction", "phase_region", "analyze_junction",
]

__version__ = "0.1.0"
