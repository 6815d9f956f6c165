from .physical import (
    FixtureSpec,
    Message,
    PhysicalInstance,
    Routing,
    SimulationError,
    SourceMessage,
    canonical,
    instantiate,
    stable_hash,
)
from .runtimes import RUNTIMES, ComponentRuntime, Emission
from .engine import (
    AnomalyReport,
    ExecutionResult,
    classify_anomalies,
    count_deliverable_events,
    enumerate_schedules,
    execute,
)

__all__ = [
    "AnomalyReport",
    "ComponentRuntime",
    "Emission",
    "ExecutionResult",
    "FixtureSpec",
    "Message",
    "PhysicalInstance",
    "Routing",
    "RUNTIMES",
    "SimulationError",
    "SourceMessage",
    "canonical",
    "classify_anomalies",
    "count_deliverable_events",
    "enumerate_schedules",
    "execute",
    "instantiate",
    "stable_hash",
]
