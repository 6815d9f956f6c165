"""Report assembly shared by the CLI and the HTTP service.

Every command produces a Report envelope: a versioned, JSON-serializable
dictionary plus a text rendering.  Exit status is a pure function of the
report content: 0 when every sink is at worst asynchronous (and, for
simulation commands, observations stayed within the plan's guarantees),
2 when an anomaly label or a contradicted guarantee is present, 1 for
configuration or input errors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

from .analysis import ANOMALY_ORDER, AnalysisReport, analyze, anomaly_class
from .config import (
    ConfigDocument,
    ConfigError,
    build_dataflow,
    build_fds,
    build_fixture,
    fixture_names,
    parse_config,
)
from .model import LogicalDataflow, validate
from .planning import (
    CoordinationPlan,
    plan_ordering,
    plan_sealing,
    synthesize,
    verify_plan,
)
from .sim import (
    SimulationError,
    classify_anomalies,
    count_deliverable_events,
    instantiate,
)
from .sim.engine import DEFAULT_EXHAUSTIVE_BOUND, DEFAULT_SAMPLES

SCHEMA_VERSION = 1

ASYNC_SEVERITY = 2


@dataclass
class SimulationRecord:
    fixture: str
    mode: str
    raw: dict | None = None
    planned: dict | None = None
    protocols: dict = field(default_factory=dict)
    contradictions: list[str] = field(default_factory=list)
    error: str | None = None


@dataclass
class Report:
    command: str
    errors: list[str] = field(default_factory=list)
    violations: list[str] = field(default_factory=list)
    analysis: AnalysisReport | None = None
    plan: CoordinationPlan | None = None
    plan_problems: list[str] = field(default_factory=list)
    simulations: list[SimulationRecord] = field(default_factory=list)

    @property
    def exit_status(self) -> int:
        # Input defects (unparseable or invalid configurations, missing
        # fixtures, progress violations while simulating) exit 1; verified
        # contradictions between observations and guarantees exit 2.
        if self.errors or self.violations:
            return 1
        if any(s.error for s in self.simulations):
            return 1
        bad_label = (
            self.analysis is not None
            and self.analysis.dataflow_label is not None
            and self.analysis.severity > ASYNC_SEVERITY
        )
        contradicted = any(s.contradictions for s in self.simulations)
        if self.command == "analyze":
            return 2 if bad_label else 0
        if self.command == "plan":
            return 2 if self.plan_problems else 0
        if self.command == "simulate":
            return 2 if contradicted else 0
        if self.command == "check":
            return 2 if (contradicted or self.plan_problems) else 0
        return 0

    def to_dict(self) -> dict:
        out: dict = {
            "schema": SCHEMA_VERSION,
            "command": self.command,
            "exit_status": self.exit_status,
        }
        if self.errors:
            out["errors"] = list(self.errors)
        if self.violations:
            out["violations"] = list(self.violations)
        if self.analysis is not None:
            out["analysis"] = self.analysis.to_dict()
        if self.plan is not None:
            out["plan"] = self.plan.to_dict()
        if self.plan_problems:
            out["plan_problems"] = list(self.plan_problems)
        if self.simulations:
            out["simulations"] = [
                {
                    "fixture": s.fixture,
                    "mode": s.mode,
                    **({"raw": s.raw} if s.raw is not None else {}),
                    **({"planned": s.planned} if s.planned is not None else {}),
                    **({"protocols": s.protocols} if s.protocols else {}),
                    **(
                        {"contradictions": s.contradictions}
                        if s.contradictions
                        else {}
                    ),
                    **({"error": s.error} if s.error else {}),
                }
                for s in self.simulations
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    def render_text(self) -> str:
        lines: list[str] = []
        for err in self.errors:
            lines.append(f"error: {err}")
        for violation in self.violations:
            lines.append(f"violation: {violation}")
        if self.analysis is not None:
            lines.append("stream labels:")
            for name, label in sorted(self.analysis.stream_labels.items()):
                lines.append(f"  {name}: {label.describe()}")
            if self.analysis.sink_labels:
                lines.append("sinks:")
                for name, label in sorted(self.analysis.sink_labels.items()):
                    lines.append(f"  {name}: {label.describe()}")
            if self.analysis.dataflow_label is not None:
                lines.append(
                    f"dataflow label: {self.analysis.dataflow_label.describe()}"
                )
            for name in self.analysis.unlabeled:
                lines.append(f"unlabeled stream: {name}")
            lines.append("")
            lines.append(self.analysis.render_trace())
        if self.plan is not None:
            lines.append("")
            lines.append("coordination plan:")
            for entry in self.plan.entries:
                detail = ""
                if entry.sealing is not None:
                    key = ",".join(sorted(entry.sealing.key))
                    detail = f" key={{{key}}} on {', '.join(entry.sealing.sealed_streams)}"
                if entry.ordering is not None:
                    detail = f" scope={{{', '.join(entry.ordering.scope)}}}"
                lines.append(
                    f"  {entry.component}: {entry.strategy}{detail} "
                    f"(residual anomaly class: {entry.residual})"
                )
        for problem in self.plan_problems:
            lines.append(f"plan problem: {problem}")
        for sim in self.simulations:
            lines.append("")
            lines.append(f"fixture {sim.fixture} ({sim.mode}):")
            if sim.error:
                lines.append(f"  error: {sim.error}")
                continue
            for title, payload in (("uncoordinated", sim.raw), ("with plan", sim.planned)):
                if payload is None:
                    continue
                lines.append(
                    f"  {title}: {payload['distinct_output_sets_across_runs']} distinct "
                    f"output set(s) over {payload['schedules']} schedule(s), "
                    f"instance disagreement={payload['instance_disagreement']}, "
                    f"divergence={payload['final_state_divergence']}, "
                    f"coordination messages={payload['coordination_messages']}"
                )
            for name, proto in sorted(sim.protocols.items()):
                lines.append(f"  protocol {name}: {json.dumps(proto, sort_keys=True)}")
            for contradiction in sim.contradictions:
                lines.append(f"  contradiction: {contradiction}")
        return "\n".join(lines) + "\n"


@dataclass
class LoadedConfig:
    doc: ConfigDocument
    flow: LogicalDataflow
    fds: tuple


def _load(text: str) -> tuple[LoadedConfig | None, Report]:
    report = Report(command="load")
    try:
        doc = parse_config(text)
        flow = build_dataflow(doc)
        fds = build_fds(doc)
    except ConfigError as exc:
        report.errors.append(str(exc))
        return None, report
    report.violations = validate(flow, fds)
    return LoadedConfig(doc=doc, flow=flow, fds=fds), report


def run_analyze(text: str) -> Report:
    loaded, report = _load(text)
    report.command = "analyze"
    if loaded is None or report.violations:
        return report
    report.analysis = analyze(loaded.flow, loaded.fds)
    return report


def _synthesize(loaded: LoadedConfig, report: Report) -> CoordinationPlan:
    report.analysis = analyze(loaded.flow, loaded.fds)
    plan = synthesize(loaded.flow, report.analysis, loaded.fds)
    report.plan = plan
    report.plan_problems = verify_plan(
        loaded.flow, report.analysis, plan, loaded.fds
    )
    return plan


def run_plan(text: str) -> Report:
    loaded, report = _load(text)
    report.command = "plan"
    if loaded is None or report.violations:
        return report
    _synthesize(loaded, report)
    return report


def _resolve_protocols(plan: CoordinationPlan, physical) -> dict:
    protocols: dict = {}
    for entry in plan.coordinated():
        if entry.strategy == "sealing" and entry.sealing is not None:
            exact: dict = {}
            default = None
            for stream in entry.sealing.sealed_streams:
                mapping, fallback = physical.partition_producers(
                    stream, entry.sealing.key
                )
                exact.update(mapping)
                if fallback is not None:
                    default = fallback
            if exact:
                spec = plan_sealing(entry.component, entry.sealing.key, exact)
                protocols[entry.component] = spec.to_dict()
            else:
                protocols[entry.component] = {
                    "component": entry.component,
                    "key": sorted(entry.sealing.key),
                    "voting": len(default or ()) > 1,
                    "partitions": "resolved per partition at run time",
                }
        elif entry.strategy == "ordering" and entry.ordering is not None:
            protocols[entry.component] = plan_ordering(
                entry.component, entry.ordering.scope
            ).to_dict()
    return protocols


def _plan_bound(plan: CoordinationPlan) -> str:
    worst = "none"
    for entry in plan.entries:
        if ANOMALY_ORDER[entry.residual] > ANOMALY_ORDER[worst]:
            worst = entry.residual
    return worst


def _uncoordinated_class(loaded: LoadedConfig) -> str:
    """Static anomaly bound for a run with no coordination at all.

    Seal annotations promise partition-at-a-time processing that only the
    synthesized protocol delivers, so for the raw run they are stripped
    before deriving the bound.
    """
    stripped = LogicalDataflow(
        components=loaded.flow.components,
        streams=tuple(replace(s, seal=None) for s in loaded.flow.streams),
    )
    report = analyze(stripped, loaded.fds)
    if report.dataflow_label is None:
        return "diverge"
    return anomaly_class(report.dataflow_label)


def _simulate_fixture(
    loaded: LoadedConfig,
    fixture_name: str,
    plan: CoordinationPlan,
    static_class: str,
    bound: int,
    samples: int,
    seed: int,
    include_raw: bool = True,
) -> SimulationRecord:
    record = SimulationRecord(fixture=fixture_name, mode="exhaustive")
    try:
        fixture = build_fixture(loaded.doc, fixture_name)
        physical = instantiate(loaded.flow, fixture)
        events = count_deliverable_events(physical, None)
        mode = "exhaustive" if events <= bound else "sample"
        record.mode = mode
        kwargs = {"mode": mode, "bound": bound, "samples": samples, "seed": seed}
        if include_raw:
            raw = classify_anomalies(physical, None, **kwargs)
            record.raw = raw.to_dict()
            if ANOMALY_ORDER[raw.observed_class()] > ANOMALY_ORDER[static_class]:
                record.contradictions.append(
                    f"observed {raw.observed_class()} without coordination "
                    f"exceeds the static bound {static_class}"
                )
        planned_events = count_deliverable_events(physical, plan)
        planned_mode = "exhaustive" if planned_events <= bound else "sample"
        planned = classify_anomalies(
            physical,
            plan,
            mode=planned_mode,
            bound=bound,
            samples=samples,
            seed=seed,
        )
        record.planned = planned.to_dict()
        allowed = _plan_bound(plan)
        if ANOMALY_ORDER[planned.observed_class()] > ANOMALY_ORDER[allowed]:
            record.contradictions.append(
                f"observed {planned.observed_class()} under the plan exceeds "
                f"its guarantee of {allowed}"
            )
        # Each component must individually stay inside its residual class:
        # a sealed component's outputs may not vary at all, an ordered one
        # may vary across runs but never across replicas.
        for entry in plan.entries:
            observed = planned.per_component.get(entry.component)
            if observed is None:
                continue
            got = observed.observed_class()
            if ANOMALY_ORDER[got] > ANOMALY_ORDER[entry.residual]:
                record.contradictions.append(
                    f"{entry.component}: observed {got} under the plan "
                    f"exceeds its residual class {entry.residual}"
                )
        record.protocols = _resolve_protocols(plan, physical)
    except (SimulationError, ConfigError) as exc:
        record.error = str(exc)
    return record


def run_simulate(
    text: str,
    fixture: str | None = None,
    bound: int = DEFAULT_EXHAUSTIVE_BOUND,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> Report:
    loaded, report = _load(text)
    report.command = "simulate"
    if loaded is None or report.violations:
        return report
    plan = _synthesize(loaded, report)
    names = [fixture] if fixture else fixture_names(loaded.doc)
    if not names:
        report.errors.append("the configuration declares no fixtures")
        return report
    static_class = _uncoordinated_class(loaded)
    for name in names:
        report.simulations.append(
            _simulate_fixture(loaded, name, plan, static_class, bound, samples, seed)
        )
    return report


def run_check(
    text: str,
    fixture: str | None = None,
    bound: int = DEFAULT_EXHAUSTIVE_BOUND,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> Report:
    report = run_simulate(text, fixture, bound, samples, seed)
    report.command = "check"
    return report


RUNNERS = {
    "analyze": run_analyze,
    "plan": run_plan,
    "simulate": run_simulate,
    "check": run_check,
}
