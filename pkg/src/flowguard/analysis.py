"""Label inference and reconciliation over annotated dataflows.

Per-path inference takes an input stream label and a path annotation and
derives additional (possibly internal) labels.  Per-interface
reconciliation pools the labels of every path reaching an output port,
converts internal labels into anomaly labels depending on replication,
and returns the surviving label of highest severity.  Whole-dataflow
analysis propagates labels from sources to sinks over the collapsed
(acyclic) graph, recording a derivation trace for every component.

Rule numbering in traces follows the inference table: (1) derives an
NDRead from unordered input to an order-sensitive read path, (2) taints
state written in nondeterministic order, (3) propagates cross-instance
nondeterminism into state, (4) taints state partitioned incompatibly
with an input seal.  "(p)" marks preservation of the input label and
"(s)" the consumption of a compatible seal into Async.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lineage import InjectiveFD, compatible
from .model import (
    ASYNC,
    DIVERGE,
    INST,
    Label,
    LabelKind,
    LogicalDataflow,
    PathAnnotation,
    PathKind,
    RUN,
    TAINT,
    collapse_cycles,
)

# A LabelSet is an ordered multiset of labels; pooling keeps duplicates.
LabelSet = tuple[Label, ...]


class AnalysisError(Exception):
    """Raised on internal label-engine contract violations."""


RULE_ND_READ = "1"
RULE_TAINT_WRITE = "2"
RULE_INST_WRITE = "3"
RULE_SEAL_MISMATCH = "4"
RULE_SEAL_CONSUME = "s"
RULE_PRESERVE = "p"


@dataclass(frozen=True)
class PathInference:
    """Inference record for one (input stream label, path annotation) pair."""

    input_label: Label
    annotation: PathAnnotation
    rule: str
    produced: LabelSet
    stream: str | None = None

    def describe(self) -> str:
        out = ", ".join(l.describe() for l in self.produced)
        src = f"{self.stream}: " if self.stream else ""
        return (
            f"{src}{self.input_label.describe()} x "
            f"{self.annotation.describe()} ({self.rule}) => {out}"
        )


def infer_path(
    input_label: Label,
    annotation: PathAnnotation,
    fds: tuple[InjectiveFD, ...] = (),
) -> LabelSet:
    """Apply the path reduction rules to one input label.

    Returns the input label together with every derived label, except that
    a seal consumed by a compatible order-sensitive path is replaced by
    Async outright.
    """
    return infer_path_detailed(input_label, annotation, fds).produced


def infer_path_detailed(
    input_label: Label,
    annotation: PathAnnotation,
    fds: tuple[InjectiveFD, ...] = (),
    stream: str | None = None,
    ordered: bool = False,
) -> PathInference:
    kind = annotation.kind
    lk = input_label.kind

    def record(rule: str, produced: tuple[Label, ...]) -> PathInference:
        return PathInference(input_label, annotation, rule, produced, stream)

    if ordered and kind in (PathKind.OR, PathKind.OW):
        # Sequenced delivery: inputs are no longer nondeterministically
        # ordered, so the unordered-input rules do not fire.  A compatible
        # seal still collapses to Async.
        if lk is LabelKind.SEAL and compatible(annotation.gate, input_label.attrs, fds):
            return record(RULE_SEAL_CONSUME, (ASYNC,))
        return record(RULE_PRESERVE, (input_label,))

    if lk in (LabelKind.ASYNC, LabelKind.RUN):
        if kind is PathKind.OR:
            return record(RULE_ND_READ, (input_label, Label.nd_read(annotation.gate)))
        if kind is PathKind.OW:
            return record(RULE_TAINT_WRITE, (input_label, TAINT))
    if lk is LabelKind.INST and kind in (PathKind.CW, PathKind.OW):
        return record(RULE_INST_WRITE, (input_label, TAINT))
    if lk is LabelKind.SEAL and kind in (PathKind.OR, PathKind.OW):
        if compatible(annotation.gate, input_label.attrs, fds):
            return record(RULE_SEAL_CONSUME, (ASYNC,))
        if kind is PathKind.OW:
            return record(RULE_SEAL_MISMATCH, (input_label, TAINT))
    return record(RULE_PRESERVE, (input_label,))


def protected(nd: Label, labels: LabelSet, fds: tuple[InjectiveFD, ...] = ()) -> bool:
    """Whether an NDRead's transient nondeterminism is rendered harmless.

    True when the pooled labels carry nothing but that same NDRead, or when
    some rendezvous stream is sealed on a key compatible with the NDRead's
    gate (so the nondeterministic reads are confined to completed
    partitions).
    """
    if nd.kind is not LabelKind.ND_READ:
        raise AnalysisError("protected() takes an NDRead label")
    if all(l == nd for l in labels):
        return True
    return any(
        l.kind is LabelKind.SEAL and compatible(nd.attrs, l.attrs, fds)
        for l in labels
    )


@dataclass(frozen=True)
class Reconciliation:
    pooled: LabelSet
    additions: tuple[tuple[str, Label], ...]
    final: Label

    def describe(self) -> str:
        pool = ", ".join(l.describe() for l in self.pooled)
        lines = [f"reconcile[{pool}]"]
        for reason, label in self.additions:
            lines.append(f"{reason} => add {label.describe()}")
        lines.append(f"merge => {self.final.describe()}")
        return "; ".join(lines)


def reconcile(
    labels: LabelSet,
    replicated: bool,
    fds: tuple[InjectiveFD, ...] = (),
) -> Label:
    """Resolve a pooled label set to the single merged output label."""
    return reconcile_detailed(labels, replicated, fds).final


def reconcile_detailed(
    labels: LabelSet,
    replicated: bool,
    fds: tuple[InjectiveFD, ...] = (),
) -> Reconciliation:
    if not labels:
        raise AnalysisError("reconciliation over an empty label set")
    pool = tuple(labels)
    additions: list[tuple[str, Label]] = []
    if any(l.kind is LabelKind.TAINT for l in pool):
        added = DIVERGE if replicated else RUN
        additions.append(("Taint in labels", added))
    seen_nd: set[Label] = set()
    for l in pool:
        if l.kind is LabelKind.ND_READ and l not in seen_nd:
            seen_nd.add(l)
            if not protected(l, pool, fds):
                added = INST if replicated else RUN
                additions.append((f"{l.describe()} unprotected", added))
    merged = pool + tuple(label for _, label in additions)
    survivors = [l for l in merged if not l.internal]
    if not survivors:
        raise AnalysisError(
            "all labels were internal after reconciliation; "
            "inference must preserve at least one stream label"
        )
    top = max(l.severity for l in survivors)
    final = sorted((l for l in survivors if l.severity == top), key=Label.sort_key)[0]
    return Reconciliation(pooled=pool, additions=tuple(additions), final=final)


def anomaly_class(label: Label) -> str:
    """Anomaly class a label admits: none, run, inst, or diverge."""
    return {
        LabelKind.SEAL: "none",
        LabelKind.ASYNC: "none",
        LabelKind.RUN: "run",
        LabelKind.INST: "inst",
        LabelKind.DIVERGE: "diverge",
    }[label.kind]


ANOMALY_ORDER = {"none": 0, "run": 1, "inst": 2, "diverge": 3}


# ---------------------------------------------------------------------------
# Whole-dataflow analysis


@dataclass(frozen=True)
class ComponentDerivation:
    component: str
    output_port: str
    replicated: bool
    inferences: tuple[PathInference, ...]
    reconciliation: Reconciliation
    assigned: tuple[str, ...]  # downstream stream names, or Comp.port sinks

    def describe(self) -> str:
        head = f"{self.component}{' [rep]' if self.replicated else ''} -> {self.output_port}"
        lines = [head]
        for inf in self.inferences:
            lines.append("  " + inf.describe())
        lines.append("  " + self.reconciliation.describe())
        return "\n".join(lines)


@dataclass
class AnalysisReport:
    stream_labels: dict[str, Label] = field(default_factory=dict)
    sink_labels: dict[str, Label] = field(default_factory=dict)
    dataflow_label: Label | None = None
    derivations: list[ComponentDerivation] = field(default_factory=list)
    unlabeled: list[str] = field(default_factory=list)
    collapsed: LogicalDataflow | None = None

    @property
    def severity(self) -> int:
        return self.dataflow_label.severity if self.dataflow_label else 0

    def render_trace(self) -> str:
        lines = [
            "rule key: (1) NDRead from unordered order-sensitive read, "
            "(2) Taint from unordered state write, (3) Taint from "
            "cross-instance input to state, (4) Taint from incompatible "
            "seal on state write, (s) compatible seal consumed to Async, "
            "(p) label preserved",
        ]
        for deriv in self.derivations:
            lines.append(deriv.describe())
        trees = self.render_proof_trees()
        if trees:
            lines.append("")
            lines.append(trees)
        return "\n".join(lines)

    def _derivation_for(self, assigned: str) -> ComponentDerivation | None:
        for deriv in self.derivations:
            if assigned in deriv.assigned:
                return deriv
        return None

    def render_proof_tree(self, sink: str) -> str:
        """Nested premise tree for one sink: each line shows an input
        stream label, the annotation it met, the rule applied, and the
        derived labels; component merge lines carry the reconciled label."""
        lines: list[str] = []

        def merge_line(deriv: ComponentDerivation) -> str:
            rep = " [rep]" if deriv.replicated else ""
            extra = "; ".join(
                f"{reason} => {label.describe()}"
                for reason, label in deriv.reconciliation.additions
            )
            tail = f" ({extra})" if extra else ""
            return (
                f"{deriv.component}.{deriv.output_port}{rep} merge => "
                f"{deriv.reconciliation.final.describe()}{tail}"
            )

        def walk(deriv: ComponentDerivation, prefix: str):
            for i, inf in enumerate(deriv.inferences):
                last = i == len(deriv.inferences) - 1
                branch = "`- " if last else "|- "
                follow = "   " if last else "|  "
                lines.append(prefix + branch + inf.describe())
                upstream = self._derivation_for(inf.stream)
                if upstream is not None:
                    lines.append(prefix + follow + "`- " + merge_line(upstream))
                    walk(upstream, prefix + follow + "   ")

        label = self.sink_labels.get(sink)
        if label is None:
            return f"{sink}: unlabeled"
        lines.append(f"{sink}: {label.describe()}")
        deriv = self._derivation_for(sink)
        if deriv is not None:
            lines.append("`- " + merge_line(deriv))
            walk(deriv, "   ")
        return "\n".join(lines)

    def render_proof_trees(self) -> str:
        return "\n\n".join(
            self.render_proof_tree(sink) for sink in sorted(self.sink_labels)
        )

    def to_dict(self) -> dict:
        def label_str(label: Label) -> str:
            return label.describe()

        return {
            "streams": {k: label_str(v) for k, v in sorted(self.stream_labels.items())},
            "sinks": {k: label_str(v) for k, v in sorted(self.sink_labels.items())},
            "dataflow_label": label_str(self.dataflow_label) if self.dataflow_label else None,
            "severity": self.severity,
            "unlabeled": sorted(self.unlabeled),
            "derivations": [
                {
                    "component": d.component,
                    "output": d.output_port,
                    "replicated": d.replicated,
                    "paths": [
                        {
                            "stream": i.stream,
                            "input": i.input_label.describe(),
                            "annotation": i.annotation.describe(),
                            "rule": i.rule,
                            "derived": [l.describe() for l in i.produced],
                        }
                        for i in d.inferences
                    ],
                    "reconciliation": {
                        "pooled": [l.describe() for l in d.reconciliation.pooled],
                        "additions": [
                            {"reason": reason, "label": l.describe()}
                            for reason, l in d.reconciliation.additions
                        ],
                        "final": d.reconciliation.final.describe(),
                    },
                    "assigned": list(d.assigned),
                }
                for d in self.derivations
            ],
        }


def source_label(stream) -> Label:
    if stream.seal:
        return Label.seal(stream.seal)
    return ASYNC


def analyze(
    flow: LogicalDataflow,
    fds: tuple[InjectiveFD, ...] = (),
    ordering_overrides: frozenset[str] = frozenset(),
) -> AnalysisReport:
    """Derive a final label for every stream of the dataflow.

    Cycles are collapsed first.  Source streams default to Async unless
    annotated with a seal.  Output interfaces are processed as soon as
    every stream feeding them is labeled, pooling all path inferences for
    the interface and reconciling them with the component's replication
    flag.  Streams left unlabeled (disconnected subgraphs) are reported,
    not failed.

    `ordering_overrides` is the planner's what-if hook: components named
    there are assumed to receive sequenced deliveries, so their
    order-sensitivity rules are suppressed and their outputs are at least
    Run (the sequencer's order still varies across runs).
    """
    fds = tuple(fds)
    collapsed = collapse_cycles(flow)
    report = AnalysisReport(collapsed=collapsed)
    labels = report.stream_labels

    for stream in collapsed.sources:
        labels[stream.name] = source_label(stream)

    outputs: list[tuple[str, str]] = []
    for comp in collapsed.sorted_components():
        for port in comp.output_ports:
            outputs.append((comp.name, port))
    done: set[tuple[str, str]] = set()

    progress = True
    while progress:
        progress = False
        for comp_name, port in outputs:
            if (comp_name, port) in done:
                continue
            comp = collapsed.component(comp_name)
            fed: list[tuple[PathAnnotation, tuple]] = []
            ready = True
            for ann in comp.paths_into(port):
                feeding = collapsed.streams_into(comp_name, ann.from_port)
                if not feeding:
                    continue
                if any(s.name not in labels for s in feeding):
                    ready = False
                    break
                fed.append((ann, feeding))
            if not ready or not fed:
                continue
            ordered = comp_name in ordering_overrides
            inferences: list[PathInference] = []
            pooled: list[Label] = []
            for ann, feeding in fed:
                for stream in feeding:
                    inf = infer_path_detailed(
                        labels[stream.name], ann, fds, stream.name, ordered=ordered
                    )
                    inferences.append(inf)
                    pooled.extend(inf.produced)
            rec = reconcile_detailed(tuple(pooled), comp.replicated, fds)
            if ordered and rec.final.severity < RUN.severity:
                rec = Reconciliation(
                    pooled=rec.pooled,
                    additions=rec.additions
                    + (("sequencer order varies across runs", RUN),),
                    final=RUN,
                )
            assigned: list[str] = []
            outgoing = collapsed.streams_out_of(comp_name, port)
            for stream in outgoing:
                labels[stream.name] = rec.final
                assigned.append(stream.name)
            if not outgoing:
                sink_name = f"{comp_name}.{port}"
                report.sink_labels[sink_name] = rec.final
                assigned.append(sink_name)
            report.derivations.append(
                ComponentDerivation(
                    component=comp_name,
                    output_port=port,
                    replicated=comp.replicated,
                    inferences=tuple(inferences),
                    reconciliation=rec,
                    assigned=tuple(assigned),
                )
            )
            done.add((comp_name, port))
            progress = True

    for stream in collapsed.sink_streams:
        if stream.name in labels:
            report.sink_labels[stream.name] = labels[stream.name]

    report.unlabeled = sorted(
        s.name for s in collapsed.streams if s.name not in labels
    )

    if report.sink_labels:
        top = max(l.severity for l in report.sink_labels.values())
        report.dataflow_label = sorted(
            (l for l in report.sink_labels.values() if l.severity == top),
            key=Label.sort_key,
        )[0]
    return report
