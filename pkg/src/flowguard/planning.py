"""Coordination plan synthesis.

Non-confluent components are repaired with the cheapest sufficient
strategy.  When every order-sensitive path's gate is compatible with a
seal carried by its inputs, partition sealing applies: consumers buffer
each partition until per-producer completeness plus a unanimous vote
from the partition's producers, then process it atomically.  Otherwise a
sequencer enforces one global delivery order per run over the component's
state-modifying and racing read inputs.  Confluent components need no
coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .analysis import AnalysisReport, analyze, anomaly_class
from .lineage import InjectiveFD, compatible
from .model import Label, LabelKind, LogicalDataflow, PathKind


class PlanningError(Exception):
    pass


@dataclass(frozen=True)
class SealingDecision:
    key: frozenset[str]
    sealed_streams: tuple[str, ...]


@dataclass(frozen=True)
class OrderingDecision:
    # Input streams whose deliveries one sequencer orders globally per run.
    scope: tuple[str, ...]


@dataclass(frozen=True)
class ComponentPlan:
    component: str
    strategy: str  # "none" | "sealing" | "ordering"
    sealing: SealingDecision | None = None
    ordering: OrderingDecision | None = None
    # Anomaly class still expected under the strategy; the simulator checks
    # observations against this bound.  Ordering rules out cross-instance
    # anomalies and divergence but not cross-run nondeterminism.
    residual: str = "none"

    def to_dict(self) -> dict:
        out: dict = {"strategy": self.strategy, "residual": self.residual}
        if self.sealing is not None:
            out["key"] = sorted(self.sealing.key)
            out["sealed_streams"] = list(self.sealing.sealed_streams)
        if self.ordering is not None:
            out["scope"] = list(self.ordering.scope)
        return out


@dataclass(frozen=True)
class CoordinationPlan:
    entries: tuple[ComponentPlan, ...]

    def entry(self, component: str) -> ComponentPlan:
        for e in self.entries:
            if e.component == component:
                return e
        return ComponentPlan(component=component, strategy="none")

    def coordinated(self) -> tuple[ComponentPlan, ...]:
        return tuple(e for e in self.entries if e.strategy != "none")

    def to_dict(self) -> dict:
        return {e.component: e.to_dict() for e in self.entries}


@dataclass(frozen=True)
class SealProtocolSpec:
    """Resolved sealing protocol for one component at one physical topology.

    Punctuations carry the key attribute values of the partition they
    close.  A partition is released exactly once, only after every
    producer in its producer set has sealed it.  With a single producer
    per partition no voting round is needed.
    """

    component: str
    key: frozenset[str]
    partition_producers: dict[tuple, tuple[str, ...]]
    voting: bool

    def to_dict(self) -> dict:
        return {
            "component": self.component,
            "key": sorted(self.key),
            "voting": self.voting,
            "partitions": {
                "/".join(str(v) for _, v in partition): list(producers)
                for partition, producers in sorted(self.partition_producers.items())
            },
        }


@dataclass(frozen=True)
class SequencerSpec:
    """A single logical sequencer: one global order per run over the scoped
    input streams, delivered identically to all replicas."""

    component: str
    scope: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"component": self.component, "scope": list(self.scope)}


def _fed_paths(flow: LogicalDataflow, comp) -> list:
    return [
        ann for ann in comp.sorted_paths()
        if flow.streams_into(comp.name, ann.from_port)
    ]


def _compatible_seal_keys(
    flow: LogicalDataflow,
    report: AnalysisReport,
    comp_name: str,
    ann,
    fds: tuple[InjectiveFD, ...],
) -> list[tuple[frozenset[str], str]]:
    """Seal keys matching `ann`'s gate among the streams that rendezvous
    with it: every input feeding a path into the same output interface."""
    comp = flow.component(comp_name)
    ports = {
        other.from_port
        for other in comp.paths
        if other.to_port == ann.to_port
    }
    found = []
    for port in sorted(ports):
        for stream in flow.streams_into(comp_name, port):
            label = report.stream_labels.get(stream.name)
            if label is None or label.kind is not LabelKind.SEAL:
                continue
            if compatible(ann.gate, label.attrs, fds):
                found.append((label.attrs, stream.name))
    return found


def synthesize(
    flow: LogicalDataflow,
    report: AnalysisReport,
    fds: tuple[InjectiveFD, ...] = (),
) -> CoordinationPlan:
    """Choose a strategy per component of the analyzed (collapsed) dataflow."""
    fds = tuple(fds)
    collapsed = report.collapsed if report.collapsed is not None else flow
    entries: list[ComponentPlan] = []

    for comp in collapsed.sorted_components():
        fed = _fed_paths(collapsed, comp)
        nc = [ann for ann in fed if ann.kind in (PathKind.OR, PathKind.OW)]
        if not fed or not nc:
            entries.append(ComponentPlan(component=comp.name, strategy="none"))
            continue

        seal_hits = {
            id(ann): _compatible_seal_keys(collapsed, report, comp.name, ann, fds)
            for ann in nc
        }
        if all(seal_hits[id(ann)] for ann in nc):
            keys: list[frozenset[str]] = []
            streams: list[str] = []
            for ann in nc:
                key, stream = sorted(
                    seal_hits[id(ann)], key=lambda kv: (sorted(kv[0]), kv[1])
                )[0]
                keys.append(key)
                streams.append(stream)
            key = sorted(keys, key=sorted)[0]
            entries.append(
                ComponentPlan(
                    component=comp.name,
                    strategy="sealing",
                    sealing=SealingDecision(
                        key=key, sealed_streams=tuple(sorted(set(streams)))
                    ),
                )
            )
            continue

        # Ordering scope: inputs of the non-confluent paths plus the inputs
        # of state-writing paths they race with at the same component.
        scope: set[str] = set()
        for ann in fed:
            if ann.kind in (PathKind.OR, PathKind.OW) or ann.kind.stateful:
                for stream in collapsed.streams_into(comp.name, ann.from_port):
                    scope.add(stream.name)
        entries.append(
            ComponentPlan(
                component=comp.name,
                strategy="ordering",
                ordering=OrderingDecision(scope=tuple(sorted(scope))),
            )
        )

    # Residuals come from a what-if re-analysis: ordered components lose
    # their order-sensitivity but gain cross-run nondeterminism, sealed and
    # confluent components keep their static labels, and the consequences
    # propagate downstream.
    ordered_names = frozenset(
        e.component for e in entries if e.strategy == "ordering"
    )
    residual_report = analyze(collapsed, fds, ordering_overrides=ordered_names)
    residual_labels: dict[str, list[Label]] = {}
    for deriv in residual_report.derivations:
        residual_labels.setdefault(deriv.component, []).append(
            deriv.reconciliation.final
        )
    finalized = []
    for entry in entries:
        finals = residual_labels.get(entry.component, [])
        residual = "none"
        if finals:
            residual = anomaly_class(max(finals, key=lambda l: l.severity))
        finalized.append(replace(entry, residual=residual))
    return CoordinationPlan(entries=tuple(finalized))


def verify_plan(
    flow: LogicalDataflow,
    report: AnalysisReport,
    plan: CoordinationPlan,
    fds: tuple[InjectiveFD, ...] = (),
) -> list[str]:
    """Cross-check a plan against the synthesis invariants.

    Sealing must be preferred whenever legal: an Ordering entry while every
    non-confluent gate of the component has a compatible input seal is a
    synthesis bug.  Sealing entries must reference keys actually sealed on
    reachable input streams.
    """
    problems: list[str] = []
    collapsed = report.collapsed if report.collapsed is not None else flow
    comp_map = collapsed.component_map()
    for entry in plan.entries:
        comp = comp_map.get(entry.component)
        if comp is None:
            problems.append(f"plan names unknown component {entry.component!r}")
            continue
        nc = [a for a in _fed_paths(collapsed, comp) if a.kind in (PathKind.OR, PathKind.OW)]
        if entry.strategy == "ordering":
            if nc and all(
                _compatible_seal_keys(collapsed, report, comp.name, a, fds) for a in nc
            ):
                problems.append(
                    f"{entry.component}: ordered although a compatible seal "
                    "covers every non-confluent gate"
                )
        if entry.strategy == "sealing":
            hits = [
                hit
                for a in nc
                for hit in _compatible_seal_keys(collapsed, report, comp.name, a, fds)
            ]
            if entry.sealing is None or entry.sealing.key not in {k for k, _ in hits}:
                problems.append(
                    f"{entry.component}: sealing key is not a seal annotation "
                    "on any reachable input stream"
                )
    return problems


def plan_sealing(
    component: str,
    key: frozenset[str],
    partition_producers: dict[tuple, tuple[str, ...]],
) -> SealProtocolSpec:
    """Resolve the sealing protocol against a physical topology.

    `partition_producers` maps each partition (a tuple of key attribute
    value pairs) to the producer instances that contribute to it, as
    resolved by the simulator's instantiation.
    """
    for partition, producers in partition_producers.items():
        if not producers:
            raise PlanningError(
                f"{component}: partition {partition!r} has no producers"
            )
    voting = any(len(p) > 1 for p in partition_producers.values())
    return SealProtocolSpec(
        component=component,
        key=frozenset(key),
        partition_producers=dict(sorted(partition_producers.items())),
        voting=voting,
    )


def plan_ordering(component: str, inputs: tuple[str, ...]) -> SequencerSpec:
    """One sequencer for the component over the union of the scoped inputs.
    With a single input stream and one replica this degenerates to FIFO
    delivery."""
    return SequencerSpec(component=component, scope=tuple(sorted(inputs)))
