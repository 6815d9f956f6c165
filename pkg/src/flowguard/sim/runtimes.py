"""Deterministic component state machines used by the fixtures.

A runtime is a pure transition function: identical input sequences yield
identical states and emissions.  States are treated as immutable values;
transitions return fresh state objects so the scheduler can fork runs
cheaply.  The reporting runtime evaluates one of four continuous queries
over click streams and, except for the threshold query, answers requests
early from whatever state has arrived, which is what exposes message
races.
"""

from __future__ import annotations

from dataclasses import dataclass

from .physical import Message, SimulationError, canonical


@dataclass(frozen=True)
class Emission:
    port: str
    payload: tuple | None = None
    punctuation: tuple | None = None


@dataclass(frozen=True)
class RuntimeContext:
    component: str
    index: int
    count: int
    params: dict
    output_ports: tuple[str, ...]
    port: str = ""  # input port the message arrived on
    # True when the message arrived on a stream the component sends to its
    # own siblings (gossip); used to stop propagation loops after one hop.
    from_self_stream: bool = False


class ComponentRuntime:
    """Base runtime: absorbs everything, emits nothing."""

    default_port = None

    def initial_state(self, params: dict):
        return ()

    def handle(self, state, message: Message, ctx: RuntimeContext):
        return state, []

    def on_release(self, state, partition: tuple, ctx: RuntimeContext):
        """Called by the sealing protocol once a partition is complete and
        its buffered records have been delivered."""
        return state, []

    def fingerprint(self, state):
        return state

    def emit_port(self, ctx: RuntimeContext) -> str:
        port = ctx.params.get("emit_port", self.default_port)
        if port is None:
            if len(ctx.output_ports) == 1:
                return ctx.output_ports[0]
            raise SimulationError(
                f"{ctx.component}: ambiguous output port; set params.emit_port"
            )
        return port


class SplitterRuntime(ComponentRuntime):
    """Stateless tweet splitter: one word record per whitespace token,
    tagged with the tweet's batch.  Punctuations pass through."""

    default_port = "words"

    def handle(self, state, message, ctx):
        port = self.emit_port(ctx)
        if message.is_punctuation:
            return state, [Emission(port, punctuation=message.punctuation)]
        record = dict(message.payload)
        out = [
            Emission(port, payload=canonical({"word": word, "batch": record["batch"]}))
            for word in str(record.get("text", "")).split()
        ]
        return state, out


class CountRuntime(ComponentRuntime):
    """Per (word, batch) counter.  Emits the counts of a batch when that
    batch's punctuation arrives; under sealing the release hook does the
    same once the partition is unanimously complete."""

    default_port = "counts"

    def _emit_batch(self, counts: dict, batch, port: str) -> list[Emission]:
        out = []
        for (word, b), count in sorted(counts.items()):
            if b != batch:
                continue
            payload = canonical({"word": word, "batch": b, "count": count})
            out.append(Emission(port, payload=payload))
        return out

    def handle(self, state, message, ctx):
        port = self.emit_port(ctx)
        counts = dict(state)
        if message.is_punctuation:
            batch = dict(message.punctuation).get("batch")
            return state, self._emit_batch(counts, batch, port)
        record = dict(message.payload)
        key = (record["word"], record["batch"])
        counts[key] = counts.get(key, 0) + 1
        return tuple(sorted(counts.items())), []

    def on_release(self, state, partition, ctx):
        batch = dict(partition).get("batch")
        return state, self._emit_batch(dict(state), batch, self.emit_port(ctx))


class CommitRuntime(ComponentRuntime):
    """Backing-store writer: records each (word, batch) count and forwards
    the committed record."""

    default_port = "db"

    def handle(self, state, message, ctx):
        if message.is_punctuation:
            return state, []
        store = dict(state)
        record = dict(message.payload)
        store[(record["word"], record["batch"])] = record["count"]
        return tuple(sorted(store.items())), [
            Emission(self.emit_port(ctx), payload=message.payload)
        ]


QUERY_GROUPS = {
    "thresh": ("id",),
    "poor": ("id",),
    "window": ("window", "id"),
    "campaign": ("campaign", "id"),
}


class ReportRuntime(ComponentRuntime):
    """Continuous click-log query server.

    Clicks arrive on the click port and are counted per query group.  The
    threshold query emits an id the moment its count exceeds the
    threshold, so its output set is insensitive to click order.  The other
    queries return the groups whose counts are below the threshold and
    answer each request immediately against whatever clicks have arrived.
    """

    default_port = "response"

    def _query(self, ctx) -> str:
        query = ctx.params.get("query", "thresh")
        if query not in QUERY_GROUPS:
            raise SimulationError(f"{ctx.component}: unknown query {query!r}")
        return query

    def handle(self, state, message, ctx):
        query = self._query(ctx)
        threshold = ctx.params.get("threshold", 100)
        port = self.emit_port(ctx)
        request_port = ctx.params.get("request_port", "request")
        if message.is_punctuation:
            return state, []
        record = dict(message.payload)
        counts = dict(state)
        if ctx.port != request_port:
            groups = QUERY_GROUPS[query]
            key = tuple((g, record[g]) for g in groups)
            before = counts.get(key, 0)
            counts[key] = before + 1
            out = []
            if query == "thresh" and before <= threshold < counts[key]:
                out.append(Emission(port, payload=canonical({"id": record["id"]})))
            return tuple(sorted(counts.items())), out
        answer = self._answer(counts, record, query, threshold)
        payload = canonical({"request": canonical(record), "answer": answer})
        return state, [Emission(port, payload=payload)]

    def _answer(self, counts: dict, request: dict, query: str, threshold: int) -> tuple:
        groups = QUERY_GROUPS[query]
        rows = []
        for key, count in sorted(counts.items()):
            values = dict(key)
            if any(g in request and request[g] != values[g] for g in groups):
                continue
            if query == "thresh":
                if count > threshold:
                    rows.append(key)
            elif count < threshold:
                rows.append(key)
        return tuple(rows)


class CacheRuntime(ComponentRuntime):
    """Query-answer cache.  Stores the latest answer per request and
    forwards it; answers learned from sibling caches are stored but not
    re-forwarded, so gossip propagates exactly one hop."""

    default_port = "response"

    def handle(self, state, message, ctx):
        if message.is_punctuation:
            return state, []
        record = dict(message.payload)
        request = record.get("request", canonical(record))
        store = dict(state)
        store[request] = record.get("answer", canonical(record))
        new_state = tuple(sorted(store.items()))
        if ctx.from_self_stream:
            return new_state, []
        return new_state, [Emission(self.emit_port(ctx), payload=message.payload)]


class RelayRuntime(ComponentRuntime):
    """Stateless forwarder (ad servers and other pass-through stages)."""

    def handle(self, state, message, ctx):
        port = self.emit_port(ctx)
        if message.is_punctuation:
            return state, [Emission(port, punctuation=message.punctuation)]
        return state, [Emission(port, payload=message.payload)]


RUNTIMES: dict[str, ComponentRuntime] = {
    "splitter": SplitterRuntime(),
    "count": CountRuntime(),
    "commit": CommitRuntime(),
    "report": ReportRuntime(),
    "cache": CacheRuntime(),
    "relay": RelayRuntime(),
    "adserver": RelayRuntime(),
    "absorb": ComponentRuntime(),
}


def runtime_for(component: str, params: dict) -> ComponentRuntime:
    name = params.get("runtime", component.lower())
    runtime = RUNTIMES.get(name)
    if runtime is None:
        raise SimulationError(
            f"no runtime registered for component {component!r} "
            f"(looked up {name!r}); set params.runtime"
        )
    return runtime
