"""Core model of annotated logical dataflows.

Components expose named input/output ports.  Each path from an input port
to an output port carries one of four annotations: confluent or
order-sensitive, crossed with read-only or state-writing.  Order-sensitive
paths name the partitions they operate over with a gate attribute set (or
a wildcard meaning per-record partitions).  Streams connect one producer
interface to one consumer interface; endpoints may be external (sources
and sinks).  Stream behavior is summarized by a severity-ranked label
lattice, from sealed and asynchronous delivery up to permanent replica
divergence.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable

import networkx as nx

from .lineage import WILDCARD, InjectiveFD


# ---------------------------------------------------------------------------
# Path annotations


class PathKind(str, Enum):
    CR = "CR"  # confluent, read-only
    CW = "CW"  # confluent, writes state
    OR = "OR"  # order-sensitive, read-only
    OW = "OW"  # order-sensitive, writes state

    @property
    def confluent(self) -> bool:
        return self in (PathKind.CR, PathKind.CW)

    @property
    def stateful(self) -> bool:
        return self in (PathKind.CW, PathKind.OW)


# Higher severity annotations can produce more stream anomalies.
ANNOTATION_SEVERITY = {
    PathKind.CR: 1,
    PathKind.CW: 2,
    PathKind.OR: 3,
    PathKind.OW: 4,
}


def format_gate(gate) -> str:
    if gate is None:
        return ""
    if gate is WILDCARD:
        return "{*}"
    return "{" + ",".join(sorted(gate)) + "}"


@dataclass(frozen=True)
class PathAnnotation:
    """One annotated input-to-output path through a component."""

    from_port: str
    to_port: str
    kind: PathKind
    gate: object = None  # frozenset[str] | WILDCARD for OR/OW, None for CR/CW

    @property
    def severity(self) -> int:
        return ANNOTATION_SEVERITY[self.kind]

    def describe(self) -> str:
        return f"{self.kind.value}{format_gate(self.gate)}"

    def sort_key(self):
        gate = self.gate
        if gate is None:
            gate_key = (0, ())
        elif gate is WILDCARD:
            gate_key = (2, ())
        else:
            gate_key = (1, tuple(sorted(gate)))
        return (self.from_port, self.to_port, self.kind.value, gate_key)


# ---------------------------------------------------------------------------
# Stream labels


class LabelKind(str, Enum):
    ND_READ = "NDRead"  # internal: transiently nondeterministic read results
    TAINT = "Taint"     # internal: component state corrupted by input order
    SEAL = "Seal"
    ASYNC = "Async"
    RUN = "Run"         # cross-run nondeterminism
    INST = "Inst"       # cross-instance nondeterminism
    DIVERGE = "Diverge" # permanent replica divergence


LABEL_SEVERITY = {
    LabelKind.ND_READ: 0,
    LabelKind.TAINT: 0,
    LabelKind.SEAL: 1,
    LabelKind.ASYNC: 2,
    LabelKind.RUN: 3,
    LabelKind.INST: 4,
    LabelKind.DIVERGE: 5,
}

INTERNAL_LABEL_KINDS = (LabelKind.ND_READ, LabelKind.TAINT)


@dataclass(frozen=True)
class Label:
    """A stream label: the kind plus, for Seal and NDRead, the attribute set
    it is keyed on (a frozenset, or WILDCARD for per-record NDRead gates)."""

    kind: LabelKind
    attrs: object = None

    def __post_init__(self):
        needs_attrs = self.kind in (LabelKind.SEAL, LabelKind.ND_READ)
        if needs_attrs and self.attrs is None:
            raise ValueError(f"{self.kind.value} label requires an attribute set")
        if not needs_attrs and self.attrs is not None:
            raise ValueError(f"{self.kind.value} label carries no attribute set")
        if self.kind is LabelKind.SEAL and self.attrs is WILDCARD:
            raise ValueError("a seal key must be a finite attribute set")

    @property
    def severity(self) -> int:
        return LABEL_SEVERITY[self.kind]

    @property
    def internal(self) -> bool:
        return self.kind in INTERNAL_LABEL_KINDS

    def describe(self) -> str:
        return f"{self.kind.value}{format_gate(self.attrs)}"

    def sort_key(self):
        if self.attrs is None:
            attr_key = (0, ())
        elif self.attrs is WILDCARD:
            attr_key = (2, ())
        else:
            attr_key = (1, tuple(sorted(self.attrs)))
        return (self.severity, self.kind.value, attr_key)

    @staticmethod
    def seal(keys: Iterable[str]) -> "Label":
        return Label(LabelKind.SEAL, frozenset(keys))

    @staticmethod
    def nd_read(gate) -> "Label":
        if gate is not WILDCARD:
            gate = frozenset(gate)
        return Label(LabelKind.ND_READ, gate)


ASYNC = Label(LabelKind.ASYNC)
TAINT = Label(LabelKind.TAINT)
RUN = Label(LabelKind.RUN)
INST = Label(LabelKind.INST)
DIVERGE = Label(LabelKind.DIVERGE)


# ---------------------------------------------------------------------------
# Components, streams, dataflow


@dataclass(frozen=True)
class Interface:
    component: str
    port: str
    direction: str  # "input" | "output"

    def __post_init__(self):
        if self.direction not in ("input", "output"):
            raise ValueError(f"bad interface direction {self.direction!r}")

    def describe(self) -> str:
        return f"{self.component}.{self.port}"


@dataclass(frozen=True)
class ComponentSpec:
    name: str
    paths: tuple[PathAnnotation, ...] = ()
    replicated: bool = False

    @property
    def input_ports(self) -> tuple[str, ...]:
        return tuple(sorted({p.from_port for p in self.paths}))

    @property
    def output_ports(self) -> tuple[str, ...]:
        return tuple(sorted({p.to_port for p in self.paths}))

    def paths_from(self, port: str) -> tuple[PathAnnotation, ...]:
        return tuple(p for p in self.sorted_paths() if p.from_port == port)

    def paths_into(self, port: str) -> tuple[PathAnnotation, ...]:
        return tuple(p for p in self.sorted_paths() if p.to_port == port)

    def sorted_paths(self) -> tuple[PathAnnotation, ...]:
        return tuple(sorted(self.paths, key=PathAnnotation.sort_key))


@dataclass(frozen=True)
class StreamSpec:
    """A stream between one producer interface and one consumer interface.
    producer=None marks an external source; consumer=None an external sink.
    `seal` asserts the stream is punctuated on that key subset.  `replicated`
    asks the physical layer to fan identical contents out to every consumer
    instance."""

    name: str
    producer: Interface | None = None
    consumer: Interface | None = None
    schema: frozenset[str] = frozenset()
    seal: frozenset[str] | None = None
    replicated: bool = False

    @property
    def is_source(self) -> bool:
        return self.producer is None

    @property
    def is_sink(self) -> bool:
        return self.consumer is None


@dataclass(frozen=True)
class LogicalDataflow:
    components: tuple[ComponentSpec, ...] = ()
    streams: tuple[StreamSpec, ...] = ()

    def component(self, name: str) -> ComponentSpec:
        for comp in self.components:
            if comp.name == name:
                return comp
        raise KeyError(name)

    def component_map(self) -> dict[str, ComponentSpec]:
        return {c.name: c for c in self.components}

    def sorted_components(self) -> tuple[ComponentSpec, ...]:
        return tuple(sorted(self.components, key=lambda c: c.name))

    def sorted_streams(self) -> tuple[StreamSpec, ...]:
        return tuple(sorted(self.streams, key=lambda s: s.name))

    def stream(self, name: str) -> StreamSpec:
        for s in self.streams:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def sources(self) -> tuple[StreamSpec, ...]:
        return tuple(s for s in self.sorted_streams() if s.is_source)

    @property
    def sink_streams(self) -> tuple[StreamSpec, ...]:
        return tuple(s for s in self.sorted_streams() if s.is_sink)

    def streams_into(self, component: str, port: str) -> tuple[StreamSpec, ...]:
        return tuple(
            s for s in self.sorted_streams()
            if s.consumer is not None
            and s.consumer.component == component
            and s.consumer.port == port
        )

    def streams_out_of(self, component: str, port: str) -> tuple[StreamSpec, ...]:
        return tuple(
            s for s in self.sorted_streams()
            if s.producer is not None
            and s.producer.component == component
            and s.producer.port == port
        )

    def sink_ports(self) -> tuple[Interface, ...]:
        """Output ports with no outgoing stream that are fed by at least one
        input port carrying a stream.  These terminate dataflow paths."""
        out = []
        for comp in self.sorted_components():
            for port in comp.output_ports:
                if self.streams_out_of(comp.name, port):
                    continue
                fed = any(
                    self.streams_into(comp.name, ann.from_port)
                    for ann in comp.paths_into(port)
                )
                if fed:
                    out.append(Interface(comp.name, port, "output"))
        return tuple(out)


# ---------------------------------------------------------------------------
# Validation


def validate(flow: LogicalDataflow, fds: Iterable[InjectiveFD] = ()) -> list[str]:
    """Check structural invariants.  Violations are returned as data, one
    human-readable string each; an empty list means the dataflow is
    well-formed."""
    violations: list[str] = []
    fd_attrs: set[str] = set()
    for fd in fds:
        fd_attrs |= set(fd.determinant) | set(fd.dependent)

    if not flow.components:
        violations.append("no components")

    seen_names: set[str] = set()
    for comp in flow.components:
        if not comp.name:
            violations.append("component with empty name")
        if comp.name in seen_names:
            violations.append(f"duplicate component name {comp.name!r}")
        seen_names.add(comp.name)
        seen_paths: set[tuple[str, str]] = set()
        for ann in comp.paths:
            pair = (ann.from_port, ann.to_port)
            if pair in seen_paths:
                violations.append(
                    f"{comp.name}: duplicate annotation for path "
                    f"{ann.from_port} -> {ann.to_port}"
                )
            seen_paths.add(pair)
            if ann.kind in (PathKind.OR, PathKind.OW):
                if ann.gate is None:
                    violations.append(
                        f"{comp.name}: {ann.kind.value} path "
                        f"{ann.from_port} -> {ann.to_port} lacks a gate "
                        "(declare a subscript or the wildcard)"
                    )
                elif ann.gate is not WILDCARD and not ann.gate:
                    violations.append(
                        f"{comp.name}: {ann.kind.value} path "
                        f"{ann.from_port} -> {ann.to_port} has an empty gate"
                    )
            elif ann.gate is not None:
                violations.append(
                    f"{comp.name}: {ann.kind.value} path "
                    f"{ann.from_port} -> {ann.to_port} must not carry a gate"
                )

    comp_map = {c.name: c for c in flow.components}
    seen_streams: set[str] = set()
    for stream in flow.streams:
        if stream.name in seen_streams:
            violations.append(f"duplicate stream name {stream.name!r}")
        seen_streams.add(stream.name)
        for role, iface, direction in (
            ("producer", stream.producer, "output"),
            ("consumer", stream.consumer, "input"),
        ):
            if iface is None:
                continue
            if iface.direction != direction:
                violations.append(
                    f"stream {stream.name}: {role} interface has direction "
                    f"{iface.direction}, expected {direction}"
                )
            comp = comp_map.get(iface.component)
            if comp is None:
                violations.append(
                    f"stream {stream.name}: unknown component {iface.component!r}"
                )
                continue
            ports = comp.input_ports if direction == "input" else comp.output_ports
            if iface.port not in ports:
                violations.append(
                    f"stream {stream.name}: component {iface.component} has no "
                    f"{direction} port {iface.port!r}"
                )
        if stream.seal is not None:
            if not stream.seal:
                violations.append(f"stream {stream.name}: empty seal key")
            elif stream.schema and not stream.seal <= stream.schema:
                missing = ",".join(sorted(stream.seal - stream.schema))
                violations.append(
                    f"stream {stream.name}: seal attributes {{{missing}}} "
                    "not in the stream schema"
                )
            if not stream.is_source:
                violations.append(
                    f"stream {stream.name}: seal annotations are only "
                    "honored on source streams"
                )
        dup = [a for a in sorted(stream.schema) if not a]
        if dup:
            violations.append(f"stream {stream.name}: empty attribute name in schema")

    # Streamed input ports must feed some annotated path; streamed output
    # ports must be fed by one.  Both catch port-name typos in the wiring.
    for comp in flow.sorted_components():
        streamed_inputs = {
            s.consumer.port
            for s in flow.streams
            if s.consumer is not None and s.consumer.component == comp.name
        }
        for port in sorted(streamed_inputs):
            if not comp.paths_from(port):
                violations.append(
                    f"{comp.name}: input port {port!r} receives a stream but "
                    "no annotated path starts there"
                )
        streamed_outputs = {
            s.producer.port
            for s in flow.streams
            if s.producer is not None and s.producer.component == comp.name
        }
        for port in sorted(streamed_outputs):
            if not comp.paths_into(port):
                violations.append(
                    f"{comp.name}: output port {port!r} sends a stream but "
                    "no annotated path reaches it"
                )

    # Gate attributes must be resolvable: present in the schema of some
    # stream feeding the path's input port, or known to the lineage facts.
    for comp in flow.sorted_components():
        for ann in comp.sorted_paths():
            gate = ann.gate
            if gate is None or gate is WILDCARD:
                continue
            feeding = flow.streams_into(comp.name, ann.from_port)
            if not feeding:
                continue
            known: set[str] = set(fd_attrs)
            declared = False
            for s in feeding:
                if s.schema:
                    declared = True
                    known |= set(s.schema)
            if declared and not set(gate) <= known:
                missing = ",".join(sorted(set(gate) - known))
                violations.append(
                    f"{comp.name}: gate attributes {{{missing}}} on path "
                    f"{ann.from_port} -> {ann.to_port} are not in the input "
                    "schema and not declared in the lineage facts"
                )

    return violations


# ---------------------------------------------------------------------------
# Cycle collapsing


def _interface_graph(flow: LogicalDataflow) -> nx.DiGraph:
    graph = nx.DiGraph()
    for comp in flow.sorted_components():
        for ann in comp.sorted_paths():
            src = ("input", comp.name, ann.from_port)
            dst = ("output", comp.name, ann.to_port)
            graph.add_edge(src, dst)
    for stream in flow.sorted_streams():
        if stream.producer is None or stream.consumer is None:
            continue
        src = ("output", stream.producer.component, stream.producer.port)
        dst = ("input", stream.consumer.component, stream.consumer.port)
        graph.add_edge(src, dst)
    return graph


def _cyclic_sccs(flow: LogicalDataflow) -> list[set]:
    graph = _interface_graph(flow)
    return [scc for scc in nx.strongly_connected_components(graph) if len(scc) > 1]


def has_cycles(flow: LogicalDataflow) -> bool:
    return bool(_cyclic_sccs(flow))


def _collapsed_annotation(annotations: list[PathAnnotation]) -> PathAnnotation:
    """Highest-severity annotation among cycle members; severity ties keep
    the lexicographically first gate."""
    def gate_key(a: PathAnnotation):
        if a.gate is None:
            return (0, ())
        if a.gate is WILDCARD:
            return (2, ())
        return (1, tuple(sorted(a.gate)))

    top_severity = max(a.severity for a in annotations)
    top = sorted(
        (a for a in annotations if a.severity == top_severity),
        key=lambda a: (gate_key(a),) + a.sort_key(),
    )
    return top[0]


def collapse_cycles(flow: LogicalDataflow) -> LogicalDataflow:
    """Reduce every cycle to a single acyclic node.

    Cycles are found on the interface graph (annotated paths plus internal
    streams), so two components only form a cycle when some component path
    actually closes the loop.  Streams internal to a cycle are dropped.  A
    single-component cycle (a self-edge) keeps its per-pair annotations; a
    multi-component cycle merges members into one node whose connected
    port pairs carry the highest-severity member annotation.  Idempotent.
    """
    sccs = _cyclic_sccs(flow)
    if not sccs:
        return flow

    graph = _interface_graph(flow)
    node_scc: dict[tuple, int] = {}
    for idx, scc in enumerate(sccs):
        for node in scc:
            node_scc[node] = idx

    def in_same_scc(a: tuple, b: tuple) -> bool:
        return a in node_scc and node_scc.get(a) == node_scc.get(b)

    # Union components that share a cyclic SCC.
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for scc in sccs:
        comps = sorted({node[1] for node in scc})
        for name in comps:
            parent.setdefault(name, name)
        for name in comps[1:]:
            parent[find(name)] = find(comps[0])

    groups: dict[str, list[str]] = {}
    for name in sorted(parent):
        groups.setdefault(find(name), []).append(name)

    merged_name: dict[str, str] = {}
    for members in groups.values():
        name = "+".join(sorted(members))
        for member in members:
            merged_name[member] = name

    def rename(iface: Interface | None) -> Interface | None:
        if iface is None:
            return None
        target = merged_name.get(iface.component)
        if target is None or target == iface.component:
            return iface
        return Interface(target, f"{iface.component}.{iface.port}", iface.direction)

    # Drop streams whose two endpoints sit in the same cyclic SCC; they are
    # the cycle edges.  Everything else is re-pointed at merged nodes.
    new_streams: list[StreamSpec] = []
    for stream in flow.sorted_streams():
        if stream.producer is not None and stream.consumer is not None:
            src = ("output", stream.producer.component, stream.producer.port)
            dst = ("input", stream.consumer.component, stream.consumer.port)
            if in_same_scc(src, dst):
                continue
        new_streams.append(
            replace(stream, producer=rename(stream.producer), consumer=rename(stream.consumer))
        )

    new_components: list[ComponentSpec] = []
    done: set[str] = set()
    for comp in flow.sorted_components():
        target = merged_name.get(comp.name)
        if target is None:
            new_components.append(comp)
            continue
        if target in done:
            continue
        done.add(target)
        members = sorted(m for m, t in merged_name.items() if t == target)
        single = len(members) == 1
        annotations: list[PathAnnotation] = []
        cycle_annotations: list[PathAnnotation] = []
        for member in members:
            spec = flow.component(member)
            for ann in spec.sorted_paths():
                src = ("input", member, ann.from_port)
                dst = ("output", member, ann.to_port)
                inside = src in node_scc and dst in node_scc and node_scc[src] == node_scc[dst]
                qualified = ann if single else replace(
                    ann,
                    from_port=f"{member}.{ann.from_port}",
                    to_port=f"{member}.{ann.to_port}",
                )
                if inside and not single:
                    cycle_annotations.append(ann)
                else:
                    annotations.append(qualified)
        if cycle_annotations:
            collapsed = _collapsed_annotation(cycle_annotations)

            def externally_fed(node: tuple) -> bool:
                for stream in flow.streams_into(node[1], node[2]):
                    if stream.producer is None:
                        return True
                    src = (
                        "output",
                        stream.producer.component,
                        stream.producer.port,
                    )
                    if not in_same_scc(src, node):
                        return True
                return False

            def externally_drained(node: tuple) -> bool:
                for stream in flow.streams_out_of(node[1], node[2]):
                    if stream.consumer is None:
                        return True
                    dst = ("input", stream.consumer.component, stream.consumer.port)
                    if not in_same_scc(node, dst):
                        return True
                return False

            # Connect the cycle's externally fed inputs to its externally
            # drained outputs with the collapsed annotation.
            scc_nodes = {n for n in node_scc if n[1] in members}
            sub = graph.subgraph(scc_nodes)
            for src in sorted(scc_nodes):
                if src[0] != "input" or not externally_fed(src):
                    continue
                for dst in sorted(scc_nodes):
                    if dst[0] != "output" or not externally_drained(dst):
                        continue
                    if not nx.has_path(sub, src, dst):
                        continue
                    annotations.append(
                        replace(
                            collapsed,
                            from_port=f"{src[1]}.{src[2]}",
                            to_port=f"{dst[1]}.{dst[2]}",
                        )
                    )
        replicated = any(flow.component(m).replicated for m in members)
        new_components.append(
            ComponentSpec(name=target, paths=tuple(dict.fromkeys(annotations)), replicated=replicated)
        )

    collapsed_flow = LogicalDataflow(
        components=tuple(new_components), streams=tuple(new_streams)
    )
    if has_cycles(collapsed_flow):
        # A pathological nest of overlapping cycles; collapse again.
        return collapse_cycles(collapsed_flow)
    return collapsed_flow


# ---------------------------------------------------------------------------
# Path enumeration


@dataclass(frozen=True)
class PathStep:
    stream: str
    component: str | None = None
    annotation: PathAnnotation | None = None


@dataclass(frozen=True)
class DataflowPath:
    """One source-to-sink route: alternating streams and component path
    annotations, ending at an external stream or a terminal output port."""

    steps: tuple[PathStep, ...]
    terminal_port: str | None = None  # "Comp.port" when the path ends at a port

    def describe(self) -> str:
        parts: list[str] = []
        for step in self.steps:
            parts.append(step.stream)
            if step.component is not None:
                parts.append(f"{step.component}[{step.annotation.describe()}]")
        if self.terminal_port is not None:
            parts.append(self.terminal_port)
        return " -> ".join(parts)


def enumerate_paths(flow: LogicalDataflow) -> list[DataflowPath]:
    """All source-to-sink paths, deterministically ordered.

    Requires an acyclic dataflow; collapse cycles first.
    """
    if has_cycles(flow):
        raise ValueError("dataflow has cycles; run collapse_cycles first")

    comp_map = flow.component_map()
    paths: list[DataflowPath] = []

    def walk(stream: StreamSpec, steps: list[PathStep]):
        if stream.consumer is None:
            paths.append(DataflowPath(steps=tuple(steps) + (PathStep(stream.name),)))
            return
        comp = comp_map.get(stream.consumer.component)
        if comp is None:
            return
        annotations = comp.paths_from(stream.consumer.port)
        for ann in annotations:
            hop = PathStep(stream.name, comp.name, ann)
            outgoing = flow.streams_out_of(comp.name, ann.to_port)
            if not outgoing:
                paths.append(
                    DataflowPath(
                        steps=tuple(steps) + (hop,),
                        terminal_port=f"{comp.name}.{ann.to_port}",
                    )
                )
                continue
            for nxt in outgoing:
                walk(nxt, steps + [hop])

    for source in flow.sources:
        walk(source, [])

    paths.sort(key=lambda p: p.describe())
    return paths
