"""Deterministic interleaving execution.

A run drains a finite message batch through the physical dataflow.  At
every step the scheduler picks one nonempty channel and delivers its head
message, so a schedule is exactly the sequence of channel picks;
exhaustive mode enumerates every causally valid pick sequence once, and
sample mode draws seeded random walks.  Coordination plans change the
delivery machinery: sealing buffers partition records at the consumer
until per-producer completeness plus a unanimous vote, then processes the
partition atomically; ordering interposes a sequencer that fixes one
global delivery order per run for all replicas of the flagged component.
Coordination cost counts seal votes and partition releases, and one
round-trip per sequenced message.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from ..model import LogicalDataflow, StreamSpec
from ..planning import CoordinationPlan
from .physical import (
    ChannelId,
    Message,
    PhysicalInstance,
    SimulationError,
    canonical,
    instance_id,
)
from .runtimes import RuntimeContext, runtime_for

Schedule = tuple[ChannelId, ...]

DEFAULT_EXHAUSTIVE_BOUND = 10
DEFAULT_SAMPLES = 1000


def _producer_index(producer: str) -> int:
    if "#" in producer:
        return int(producer.rsplit("#", 1)[1])
    if "/ext" in producer:
        return int(producer.rsplit("/ext", 1)[1])
    raise SimulationError(f"cannot parse producer id {producer!r}")


def _project(record: tuple, key: frozenset[str], context: str) -> tuple:
    values = dict(record)
    missing = sorted(set(key) - set(values))
    if missing:
        raise SimulationError(
            f"{context}: message lacks seal key attributes {{{','.join(missing)}}}"
        )
    return tuple(sorted((k, values[k]) for k in key))


@dataclass(frozen=True)
class _SealConfig:
    key: frozenset[str]
    streams: frozenset[str]
    required: dict[tuple, tuple[str, ...]]
    default_required: tuple[str, ...] | None


@dataclass(frozen=True)
class _SealRec:
    buffered: dict = field(default_factory=dict)   # partition -> tuple[Message]
    votes: dict = field(default_factory=dict)      # partition -> frozenset[str]
    released: frozenset = frozenset()
    pending: dict = field(default_factory=dict)    # partition -> tuple[Message]


class _RunContext:
    """Immutable run configuration shared by every branch of a walk."""

    def __init__(self, physical: PhysicalInstance, plan: CoordinationPlan | None):
        self.physical = physical
        self.flow: LogicalDataflow = physical.flow
        self.streams = {s.name: s for s in self.flow.streams}
        self.outgoing: dict[tuple[str, str], tuple[StreamSpec, ...]] = {}
        for comp in self.flow.sorted_components():
            for port in comp.output_ports:
                self.outgoing[(comp.name, port)] = self.flow.streams_out_of(comp.name, port)
        self.runtimes = {}
        for comp in self.flow.sorted_components():
            params = dict(physical.fixture.params.get(comp.name, {}))
            self.runtimes[comp.name] = (runtime_for(comp.name, params), params)
        self.output_ports = {
            comp.name: comp.output_ports for comp in self.flow.components
        }
        self.ordered: dict[str, frozenset[str]] = {}
        self.sealed: dict[str, _SealConfig] = {}
        if plan is not None:
            for entry in plan.entries:
                if entry.strategy == "ordering" and entry.ordering is not None:
                    self.ordered[entry.component] = frozenset(entry.ordering.scope)
                elif entry.strategy == "sealing" and entry.sealing is not None:
                    required: dict[tuple, tuple[str, ...]] = {}
                    default: tuple[str, ...] | None = None
                    for stream in entry.sealing.sealed_streams:
                        exact, fallback = physical.partition_producers(
                            stream, entry.sealing.key
                        )
                        required.update(exact)
                        if fallback is not None:
                            default = fallback
                    self.sealed[entry.component] = _SealConfig(
                        key=entry.sealing.key,
                        streams=frozenset(entry.sealing.sealed_streams),
                        required=required,
                        default_required=default,
                    )

    def runtime_ctx(self, comp: str, idx: int, port: str, from_self: bool) -> RuntimeContext:
        runtime, params = self.runtimes[comp]
        return RuntimeContext(
            component=comp,
            index=idx,
            count=self.physical.multiplicity[comp],
            params=params,
            output_ports=self.output_ports[comp],
            port=port,
            from_self_stream=from_self,
        )


class _RunState:
    """Forkable run state: every container value is replaced, never
    mutated, so forks are shallow dict copies."""

    __slots__ = ("channels", "states", "emitted", "sinks", "seal", "coord", "delivered")

    def __init__(self):
        self.channels: dict[ChannelId, tuple[tuple[Message, ...], int]] = {}
        self.states: dict[str, object] = {}
        self.emitted: dict[tuple[str, str], frozenset] = {}
        self.sinks: dict[str, frozenset] = {}
        self.seal: dict[str, _SealRec] = {}
        self.coord = 0
        self.delivered = 0

    def fork(self) -> "_RunState":
        child = _RunState.__new__(_RunState)
        child.channels = self.channels.copy()
        child.states = self.states.copy()
        child.emitted = self.emitted.copy()
        child.sinks = self.sinks.copy()
        child.seal = self.seal.copy()
        child.coord = self.coord
        child.delivered = self.delivered
        return child

    def append(self, cid: ChannelId, message: Message):
        msgs, pos = self.channels.get(cid, ((), 0))
        self.channels[cid] = (msgs + (message,), pos)

    def deliverable(self) -> list[ChannelId]:
        return sorted(
            cid for cid, (msgs, pos) in self.channels.items() if pos < len(msgs)
        )


def _seq_consumer(component: str) -> str:
    return f"__seq__/{component}"


def _initial_state(ctx: _RunContext) -> _RunState:
    st = _RunState()
    for comp in ctx.flow.sorted_components():
        runtime, params = ctx.runtimes[comp.name]
        for inst in ctx.physical.instances(comp.name):
            st.states[inst] = runtime.initial_state(params)
        if comp.name in ctx.sealed:
            for inst in ctx.physical.instances(comp.name):
                st.seal[inst] = _SealRec()
    for src in ctx.physical.fixture.messages:
        stream = ctx.streams.get(src.stream)
        if stream is None:
            raise SimulationError(f"fixture message on unknown stream {src.stream!r}")
        message = Message(
            stream=src.stream,
            producer=f"{src.stream}/ext{src.producer}",
            payload=canonical(src.payload) if src.payload is not None else None,
            punctuation=canonical(src.punctuation) if src.punctuation is not None else None,
        )
        _route(ctx, st, stream, message, src.producer)
    return st


def _route(ctx: _RunContext, st: _RunState, stream: StreamSpec, message: Message,
           producer_index: int, emitter: str | None = None):
    """Send a message down a stream, honoring sink recording, sequencer
    interposition, and physical fan-out."""
    if stream.consumer is None:
        mark = message.payload if message.payload is not None else ("punct",) + message.punctuation
        st.sinks[stream.name] = st.sinks.get(stream.name, frozenset()) | {mark}
        return
    consumer_comp = stream.consumer.component
    if consumer_comp in ctx.ordered and stream.name in ctx.ordered[consumer_comp]:
        cid = (stream.name, message.producer, _seq_consumer(consumer_comp))
        st.append(cid, message)
        return
    targets = ctx.physical.consumer_targets(stream, message, producer_index)
    if emitter is not None and stream.producer is not None \
            and stream.producer.component == consumer_comp:
        targets = [t for t in targets if t != emitter]
    for target in targets:
        st.append((stream.name, message.producer, target), message)


def _record_emission(st: _RunState, inst: str, port: str, mark: tuple):
    key = (inst, port)
    st.emitted[key] = st.emitted.get(key, frozenset()) | {mark}


def _emit(ctx: _RunContext, st: _RunState, comp: str, idx: int, emission):
    inst = instance_id(comp, idx)
    if emission.payload is not None:
        mark = canonical(emission.payload)
        message_kwargs = {"payload": mark}
    else:
        mark = ("punct",) + canonical(emission.punctuation)
        message_kwargs = {"punctuation": canonical(emission.punctuation)}
    _record_emission(st, inst, emission.port, mark)
    outgoing = ctx.outgoing.get((comp, emission.port), ())
    if not outgoing:
        sink = f"{comp}.{emission.port}"
        st.sinks[sink] = st.sinks.get(sink, frozenset()) | {mark}
        return
    for stream in outgoing:
        message = Message(stream=stream.name, producer=inst, **message_kwargs)
        _route(ctx, st, stream, message, idx, emitter=inst)


def _run_message(ctx: _RunContext, st: _RunState, comp: str, idx: int, message: Message):
    inst = instance_id(comp, idx)
    stream = ctx.streams[message.stream]
    from_self = (
        stream.producer is not None and stream.producer.component == comp
    )
    rctx = ctx.runtime_ctx(comp, idx, stream.consumer.port, from_self)
    runtime, _ = ctx.runtimes[comp]
    new_state, emissions = runtime.handle(st.states[inst], message, rctx)
    st.states[inst] = new_state
    for emission in emissions:
        _emit(ctx, st, comp, idx, emission)


def _seal_required(cfg: _SealConfig, partition: tuple) -> tuple[str, ...] | None:
    if partition in cfg.required:
        return cfg.required[partition]
    return cfg.default_required


def _maybe_release(ctx: _RunContext, st: _RunState, comp: str, idx: int, partition: tuple):
    inst = instance_id(comp, idx)
    cfg = ctx.sealed[comp]
    rec = st.seal[inst]
    if partition in rec.released:
        return
    required = _seal_required(cfg, partition)
    if required is None or not set(required) <= rec.votes.get(partition, frozenset()):
        return
    st.coord += 1  # the release itself
    records = tuple(sorted(rec.buffered.get(partition, ()), key=lambda m: m.payload))
    pending = tuple(sorted(rec.pending.get(partition, ()), key=lambda m: m.payload))
    buffered = {p: v for p, v in rec.buffered.items() if p != partition}
    waiting = {p: v for p, v in rec.pending.items() if p != partition}
    st.seal[inst] = replace(
        rec,
        buffered=buffered,
        pending=waiting,
        released=rec.released | {partition},
    )
    for message in records:
        _run_message(ctx, st, comp, idx, message)
    runtime, _ = ctx.runtimes[comp]
    rctx = ctx.runtime_ctx(comp, idx, "", False)
    new_state, emissions = runtime.on_release(st.states[inst], partition, rctx)
    st.states[inst] = new_state
    for emission in emissions:
        _emit(ctx, st, comp, idx, emission)
    for message in pending:
        _run_message(ctx, st, comp, idx, message)


def _seal_deliver(ctx: _RunContext, st: _RunState, comp: str, idx: int, message: Message):
    inst = instance_id(comp, idx)
    cfg = ctx.sealed[comp]
    rec = st.seal[inst]
    if message.stream in cfg.streams:
        if message.is_punctuation:
            partition = _project(message.punctuation, cfg.key, f"{comp} punctuation")
            st.coord += 1  # a seal vote
            votes = dict(rec.votes)
            votes[partition] = votes.get(partition, frozenset()) | {message.producer}
            st.seal[inst] = replace(rec, votes=votes)
            _maybe_release(ctx, st, comp, idx, partition)
            return
        partition = _project(message.payload, cfg.key, f"{comp} record")
        if partition in rec.released:
            raise SimulationError(
                f"{comp}: record for partition {partition!r} arrived after "
                "the partition was sealed and released"
            )
        buffered = dict(rec.buffered)
        buffered[partition] = buffered.get(partition, ()) + (message,)
        st.seal[inst] = replace(rec, buffered=buffered)
        return
    # A message on a non-sealed stream into a sealed component must name
    # the partition it concerns; it is served once that partition is
    # complete.
    if message.is_punctuation:
        _run_message(ctx, st, comp, idx, message)
        return
    partition = _project(
        message.payload, cfg.key, f"{comp} non-sealed input"
    )
    if partition in rec.released:
        _run_message(ctx, st, comp, idx, message)
        return
    pending = dict(rec.pending)
    pending[partition] = pending.get(partition, ()) + (message,)
    st.seal[inst] = replace(rec, pending=pending)


def _deliver(ctx: _RunContext, st: _RunState, cid: ChannelId):
    msgs, pos = st.channels[cid]
    message = msgs[pos]
    st.channels[cid] = (msgs, pos + 1)
    st.delivered += 1
    consumer = cid[2]
    if consumer.startswith("__seq__/"):
        # Sequencer intake: the arrival order is the scheduling choice.
        # The message is stamped into the global order and handed to every
        # replica in the same step; replicas therefore process sequenced
        # messages in identical relative order within a run, while the
        # order itself still varies across runs.
        comp = consumer.split("/", 1)[1]
        st.coord += 1  # one sequencer round-trip per message
        stream = ctx.streams[message.stream]
        targets = ctx.physical.consumer_targets(
            stream, message, _producer_index(message.producer)
        )
        if stream.producer is not None and stream.producer.component == comp:
            targets = [t for t in targets if t != message.producer]
        for target in sorted(targets):
            tcomp, idx_str = target.rsplit("#", 1)
            _run_message(ctx, st, tcomp, int(idx_str), message)
        return
    comp, idx_str = consumer.rsplit("#", 1)
    idx = int(idx_str)
    if comp in ctx.sealed:
        _seal_deliver(ctx, st, comp, idx, message)
        return
    _run_message(ctx, st, comp, idx, message)


@dataclass
class ExecutionResult:
    schedule: Schedule
    sinks: dict[str, frozenset]
    emitted: dict[tuple[str, str], frozenset]
    states: dict[str, object]
    coordination_messages: int
    deliveries: int

    def signature(self) -> tuple:
        # Sink sets can mix payload records and punctuation markers, so the
        # canonical order is by repr rather than direct comparison.
        return tuple(
            (name, tuple(sorted(values, key=repr)))
            for name, values in sorted(self.sinks.items())
        )

    def to_dict(self) -> dict:
        return {
            "sinks": {
                name: [list(v) if isinstance(v, tuple) else v for v in sorted(values)]
                for name, values in sorted(self.sinks.items())
            },
            "coordination_messages": self.coordination_messages,
            "deliveries": self.deliveries,
        }


def _finalize(ctx: _RunContext, st: _RunState, schedule: Schedule) -> ExecutionResult:
    for inst, rec in sorted(st.seal.items()):
        stuck = sorted(rec.buffered) + sorted(rec.pending)
        if stuck:
            names = "; ".join(
                ",".join(f"{k}={v}" for k, v in partition) for partition in stuck
            )
            raise SimulationError(
                f"stuck partition at {inst}: [{names}] never released "
                "(the fixture lacks a punctuation for it)"
            )
    fingerprints = {}
    for comp in ctx.flow.sorted_components():
        runtime, _ = ctx.runtimes[comp.name]
        for inst in ctx.physical.instances(comp.name):
            fingerprints[inst] = runtime.fingerprint(st.states[inst])
    return ExecutionResult(
        schedule=schedule,
        sinks=dict(st.sinks),
        emitted=dict(st.emitted),
        states=fingerprints,
        coordination_messages=st.coord,
        deliveries=st.delivered,
    )


def _probe_deliveries(ctx: _RunContext) -> int:
    st = _initial_state(ctx)
    while True:
        choices = st.deliverable()
        if not choices:
            return st.delivered
        _deliver(ctx, st, choices[0])


def count_deliverable_events(
    physical: PhysicalInstance, plan: CoordinationPlan | None = None
) -> int:
    """Deliveries needed to drain the fixture (measured on one run)."""
    return _probe_deliveries(_RunContext(physical, plan))


def _explore(ctx: _RunContext, st: _RunState, prefix: tuple, bound: int):
    choices = st.deliverable()
    if not choices:
        yield _finalize(ctx, st, prefix)
        return
    if len(prefix) >= bound:
        raise SimulationError(
            f"exhaustive enumeration exceeded the bound of {bound} "
            "deliverable events; raise the bound or use sampling"
        )
    for cid in choices:
        child = st.fork()
        _deliver(ctx, child, cid)
        yield from _explore(ctx, child, prefix + (cid,), bound)


def _sample_run(ctx: _RunContext, rng: random.Random) -> ExecutionResult:
    st = _initial_state(ctx)
    prefix: list[ChannelId] = []
    while True:
        choices = st.deliverable()
        if not choices:
            return _finalize(ctx, st, tuple(prefix))
        cid = choices[rng.randrange(len(choices))]
        prefix.append(cid)
        _deliver(ctx, st, cid)


def _results(
    physical: PhysicalInstance,
    plan: CoordinationPlan | None,
    mode: str,
    bound: int,
    samples: int,
    seed: int,
):
    ctx = _RunContext(physical, plan)
    if mode == "exhaustive":
        total = _probe_deliveries(ctx)
        if total > bound:
            raise SimulationError(
                f"fixture needs {total} deliverable events, above the "
                f"exhaustive bound of {bound}; raise --exhaustive-bound "
                "or use sampling"
            )
        yield from _explore(ctx, _initial_state(ctx), (), bound)
    elif mode == "sample":
        rng = random.Random(seed)
        for _ in range(samples):
            yield _sample_run(ctx, rng)
    else:
        raise SimulationError(f"unknown schedule mode {mode!r}")


def enumerate_schedules(
    physical: PhysicalInstance,
    mode: str = "exhaustive",
    bound: int = DEFAULT_EXHAUSTIVE_BOUND,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
    plan: CoordinationPlan | None = None,
):
    """Yield delivery schedules: every causally valid FIFO interleaving
    exactly once in exhaustive mode, or seeded random walks in sample
    mode."""
    for result in _results(physical, plan, mode, bound, samples, seed):
        yield result.schedule


def execute(
    physical: PhysicalInstance,
    schedule: Schedule,
    plan: CoordinationPlan | None = None,
) -> ExecutionResult:
    """Replay one schedule deterministically."""
    ctx = _RunContext(physical, plan)
    st = _initial_state(ctx)
    for step, cid in enumerate(schedule):
        if cid not in st.deliverable():
            raise SimulationError(
                f"schedule step {step}: channel {cid!r} has no deliverable message"
            )
        _deliver(ctx, st, cid)
    if st.deliverable():
        raise SimulationError("schedule ended with undelivered messages")
    return _finalize(ctx, st, schedule)


@dataclass
class ComponentObservation:
    """Per-component empirical summary across the explored schedules."""

    component: str
    distinct_outputs_across_runs: int = 0
    instance_disagreement: bool = False
    final_state_divergence: bool = False

    def observed_class(self) -> str:
        if self.final_state_divergence:
            return "diverge"
        if self.instance_disagreement:
            return "inst"
        if self.distinct_outputs_across_runs >= 2:
            return "run"
        return "none"

    def to_dict(self) -> dict:
        return {
            "distinct_outputs_across_runs": self.distinct_outputs_across_runs,
            "instance_disagreement": self.instance_disagreement,
            "final_state_divergence": self.final_state_divergence,
            "observed": self.observed_class(),
        }


@dataclass
class AnomalyReport:
    mode: str
    schedules: int
    distinct_output_sets_across_runs: int
    instance_disagreement: bool
    final_state_divergence: bool
    coordination_messages: int
    per_component: dict[str, ComponentObservation] = field(default_factory=dict)

    @property
    def run_flagged(self) -> bool:
        return self.distinct_output_sets_across_runs >= 2

    @property
    def inst_flagged(self) -> bool:
        return self.instance_disagreement

    @property
    def diverge_flagged(self) -> bool:
        return self.final_state_divergence

    def observed_class(self) -> str:
        if self.diverge_flagged:
            return "diverge"
        if self.inst_flagged:
            return "inst"
        if self.run_flagged:
            return "run"
        return "none"

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "schedules": self.schedules,
            "distinct_output_sets_across_runs": self.distinct_output_sets_across_runs,
            "instance_disagreement": self.instance_disagreement,
            "final_state_divergence": self.final_state_divergence,
            "coordination_messages": self.coordination_messages,
            "observed": self.observed_class(),
            "components": {
                name: obs.to_dict()
                for name, obs in sorted(self.per_component.items())
            },
        }


def classify_anomalies(
    physical: PhysicalInstance,
    plan: CoordinationPlan | None = None,
    mode: str = "exhaustive",
    bound: int = DEFAULT_EXHAUSTIVE_BOUND,
    samples: int = DEFAULT_SAMPLES,
    seed: int = 0,
) -> AnomalyReport:
    """Empirically classify anomalies across schedules.

    Cross-run nondeterminism is flagged when two schedules yield different
    sink output sets; cross-instance nondeterminism when replicas of a
    replicated component emit different output sets within one schedule;
    divergence when replica states differ after all deliveries.
    """
    components = [comp.name for comp in physical.flow.sorted_components()]
    replicated = {
        name
        for name in components
        if physical.flow.component(name).replicated
        and physical.multiplicity[name] > 1
    }
    signatures: set = set()
    observations = {name: ComponentObservation(name) for name in components}
    comp_signatures: dict[str, set] = {name: set() for name in components}
    coordination = 0
    count = 0
    for result in _results(physical, plan, mode, bound, samples, seed):
        count += 1
        signatures.add(result.signature())
        coordination = max(coordination, result.coordination_messages)
        for name in components:
            instances = physical.instances(name)
            per_instance = []
            for inst in instances:
                ports = sorted(port for (i, port) in result.emitted if i == inst)
                per_instance.append(
                    tuple(
                        (port, tuple(sorted(result.emitted[(inst, port)], key=repr)))
                        for port in ports
                    )
                )
            comp_signatures[name].add(tuple(per_instance))
            if name in replicated:
                obs = observations[name]
                ports = {port for inst, port in result.emitted if inst in instances}
                for port in ports:
                    sets = {
                        result.emitted.get((inst, port), frozenset())
                        for inst in instances
                    }
                    if len(sets) > 1:
                        obs.instance_disagreement = True
                states = {result.states[inst] for inst in instances}
                if len(states) > 1:
                    obs.final_state_divergence = True
    for name in components:
        observations[name].distinct_outputs_across_runs = len(comp_signatures[name])
    return AnomalyReport(
        mode=mode,
        schedules=count,
        distinct_output_sets_across_runs=len(signatures),
        instance_disagreement=any(
            o.instance_disagreement for o in observations.values()
        ),
        final_state_divergence=any(
            o.final_state_divergence for o in observations.values()
        ),
        coordination_messages=coordination,
        per_component=observations,
    )
