"""flowguard: consistency analysis and coordination synthesis for
annotated distributed dataflows, verified by an interleaving simulator."""

__version__ = "0.1.0"

from .analysis import (
    AnalysisReport,
    analyze,
    anomaly_class,
    infer_path,
    protected,
    reconcile,
)
from .config import (
    ConfigDocument,
    ConfigError,
    build_dataflow,
    build_fds,
    build_fixture,
    parse_config,
    serialize_config,
)
from .lineage import (
    WILDCARD,
    InjectiveFD,
    QueryDescriptor,
    compatible,
    derive_subscript,
    injective_fd,
)
from .model import (
    ComponentSpec,
    Interface,
    Label,
    LabelKind,
    LogicalDataflow,
    PathAnnotation,
    PathKind,
    StreamSpec,
    collapse_cycles,
    enumerate_paths,
    validate,
)
from .planning import (
    CoordinationPlan,
    SealProtocolSpec,
    SequencerSpec,
    plan_ordering,
    plan_sealing,
    synthesize,
    verify_plan,
)

__all__ = [
    "AnalysisReport",
    "ComponentSpec",
    "ConfigDocument",
    "ConfigError",
    "CoordinationPlan",
    "InjectiveFD",
    "Interface",
    "Label",
    "LabelKind",
    "LogicalDataflow",
    "PathAnnotation",
    "PathKind",
    "QueryDescriptor",
    "SealProtocolSpec",
    "SequencerSpec",
    "StreamSpec",
    "WILDCARD",
    "analyze",
    "anomaly_class",
    "build_dataflow",
    "build_fds",
    "build_fixture",
    "collapse_cycles",
    "compatible",
    "derive_subscript",
    "enumerate_paths",
    "infer_path",
    "injective_fd",
    "parse_config",
    "plan_ordering",
    "plan_sealing",
    "protected",
    "reconcile",
    "serialize_config",
    "synthesize",
    "validate",
    "verify_plan",
]
