"""Physical instantiation of logical dataflows.

A fixture binds components to instance counts, names the external
producers of each source stream, and supplies the finite message batch a
run executes over.  Streams become channels between instance pairs; a
replicated stream fans identical contents out to every consumer instance,
a partitioned stream routes each record by a stable hash of its partition
attributes, and punctuations are always broadcast (they close a partition
for every consumer).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

from ..model import LogicalDataflow, StreamSpec


class SimulationError(Exception):
    pass


def canonical(mapping) -> tuple:
    """Stable tuple form of a record: attribute/value pairs sorted by name."""
    if mapping is None:
        return ()
    if isinstance(mapping, tuple):
        return mapping
    return tuple(sorted(mapping.items()))


def stable_hash(value) -> int:
    """Platform-independent hash used for partition routing.

    CRC-32 of the canonical repr; Python's builtin hash is salted per
    process and would make runs irreproducible.
    """
    return zlib.crc32(repr(value).encode("utf-8"))


@dataclass(frozen=True)
class Message:
    """One message on a stream instance.  Punctuation messages carry only
    the seal-key attribute values of the partition they close."""

    stream: str
    producer: str
    payload: tuple | None = None
    punctuation: tuple | None = None

    def __post_init__(self):
        if (self.payload is None) == (self.punctuation is None):
            raise ValueError("a message carries either a payload or a punctuation")

    @property
    def is_punctuation(self) -> bool:
        return self.punctuation is not None

    def describe(self) -> str:
        if self.is_punctuation:
            body = "punct " + ",".join(f"{k}={v}" for k, v in self.punctuation)
        else:
            body = ",".join(f"{k}={v}" for k, v in self.payload)
        return f"{self.stream}[{body}]"


@dataclass(frozen=True)
class SourceMessage:
    stream: str
    producer: int = 0
    payload: tuple | None = None
    punctuation: tuple | None = None


@dataclass(frozen=True)
class Routing:
    mode: str = "single"  # "single" | "replicate" | "partition" | "pair"
    partition_by: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mode not in ("single", "replicate", "partition", "pair"):
            raise ValueError(f"unknown routing mode {self.mode!r}")


@dataclass
class FixtureSpec:
    name: str = "default"
    multiplicity: dict[str, int] = field(default_factory=dict)
    producers: dict[str, int] = field(default_factory=dict)
    routing: dict[str, Routing] = field(default_factory=dict)
    params: dict[str, dict] = field(default_factory=dict)
    messages: tuple[SourceMessage, ...] = ()


# Channel identity: (stream, producer instance id, consumer instance id).
ChannelId = tuple[str, str, str]


def instance_id(component: str, index: int) -> str:
    return f"{component}#{index}"


def external_producer_id(stream: str, index: int) -> str:
    return f"{stream}/ext{index}"


@dataclass
class PhysicalInstance:
    flow: LogicalDataflow
    fixture: FixtureSpec
    multiplicity: dict[str, int]
    routing: dict[str, Routing]
    source_channels: dict[ChannelId, tuple[Message, ...]]

    def instances(self, component: str) -> list[str]:
        return [instance_id(component, i) for i in range(self.multiplicity[component])]

    def all_instances(self) -> list[str]:
        out = []
        for comp in self.flow.sorted_components():
            out.extend(self.instances(comp.name))
        return out

    def consumer_targets(self, stream: StreamSpec, message: Message, producer_index: int) -> list[str]:
        """Consumer instance ids a message is delivered to."""
        if stream.consumer is None:
            return []
        comp = stream.consumer.component
        count = self.multiplicity[comp]
        routing = self.routing.get(stream.name, Routing())
        if routing.mode == "pair":
            if producer_index >= count:
                raise SimulationError(
                    f"stream {stream.name}: pair routing needs matching producer "
                    f"and consumer counts (producer index {producer_index}, "
                    f"{count} consumer instances)"
                )
            return [instance_id(comp, producer_index)]
        if message.is_punctuation:
            return [instance_id(comp, i) for i in range(count)]
        if routing.mode == "replicate":
            return [instance_id(comp, i) for i in range(count)]
        if routing.mode == "partition":
            key = tuple(
                v for k, v in message.payload if k in routing.partition_by
            ) if routing.partition_by else message.payload
            return [instance_id(comp, stable_hash(key) % count)]
        if count == 1:
            return [instance_id(comp, 0)]
        return [instance_id(comp, stable_hash(message.payload) % count)]

    def producer_instances(self, stream: StreamSpec) -> list[str]:
        """All instance ids that can produce on a stream."""
        if stream.producer is None:
            count = self.fixture.producers.get(stream.name, 1)
            return [external_producer_id(stream.name, i) for i in range(count)]
        comp = stream.producer.component
        return self.instances(comp)

    def partition_producers(self, stream_name: str, key: frozenset[str]):
        """Resolve which producers contribute to each partition of a stream.

        For source streams the fixture batch is scanned, so topologies
        where each partition is mastered at a single producer resolve to
        singleton producer sets.  For internal streams the contribution
        cannot be known statically; every producer instance is required.
        Returns (exact mapping, default producer set or None).
        """
        stream = self.flow.stream(stream_name)
        if stream.is_source:
            mapping: dict[tuple, set[str]] = {}
            for src in self.fixture.messages:
                if src.stream != stream_name:
                    continue
                record = src.payload if src.payload is not None else src.punctuation
                values = dict(record)
                if not set(key) <= set(values):
                    continue
                partition = tuple(sorted((k, values[k]) for k in key))
                mapping.setdefault(partition, set()).add(
                    external_producer_id(stream_name, src.producer)
                )
            return (
                {p: tuple(sorted(s)) for p, s in sorted(mapping.items())},
                None,
            )
        return {}, tuple(sorted(self.producer_instances(stream)))


def instantiate(flow: LogicalDataflow, fixture: FixtureSpec) -> PhysicalInstance:
    """Build channels for a fixture and preload the source message batch."""
    multiplicity = {c.name: 1 for c in flow.components}
    for name, count in fixture.multiplicity.items():
        if name not in multiplicity:
            raise SimulationError(f"fixture names unknown component {name!r}")
        if count < 1:
            raise SimulationError(f"multiplicity for {name} must be >= 1")
        multiplicity[name] = count

    routing: dict[str, Routing] = {}
    for stream in flow.streams:
        if stream.name in fixture.routing:
            routing[stream.name] = fixture.routing[stream.name]
        elif stream.replicated:
            routing[stream.name] = Routing(mode="replicate")

    # A replicated stream promises identical contents to every consumer
    # instance; a partitioned (multi-instance, non-replicated) producer
    # cannot keep that promise.
    for stream in flow.streams:
        if routing.get(stream.name, Routing()).mode != "replicate":
            continue
        if stream.producer is None:
            continue
        producer = flow.component(stream.producer.component)
        if multiplicity[producer.name] > 1 and not producer.replicated:
            raise SimulationError(
                f"stream {stream.name} is replicated but its producer "
                f"{producer.name} runs {multiplicity[producer.name]} "
                "partitioned instances; mark the component replicated or "
                "drop the multiplicity"
            )

    physical = PhysicalInstance(
        flow=flow,
        fixture=fixture,
        multiplicity=multiplicity,
        routing=routing,
        source_channels={},
    )

    channels: dict[ChannelId, list[Message]] = {}
    stream_map = {s.name: s for s in flow.streams}
    for src in fixture.messages:
        stream = stream_map.get(src.stream)
        if stream is None:
            raise SimulationError(f"fixture message on unknown stream {src.stream!r}")
        if not stream.is_source:
            raise SimulationError(
                f"fixture messages must enter on source streams, not {src.stream!r}"
            )
        producer_count = fixture.producers.get(src.stream, 1)
        if not 0 <= src.producer < producer_count:
            raise SimulationError(
                f"fixture message producer {src.producer} out of range for "
                f"stream {src.stream} ({producer_count} producers)"
            )
        message = Message(
            stream=src.stream,
            producer=external_producer_id(src.stream, src.producer),
            payload=canonical(src.payload) if src.payload is not None else None,
            punctuation=canonical(src.punctuation) if src.punctuation is not None else None,
        )
        for target in physical.consumer_targets(stream, message, src.producer):
            cid = (src.stream, message.producer, target)
            channels.setdefault(cid, []).append(message)

    physical.source_channels = {cid: tuple(msgs) for cid, msgs in sorted(channels.items())}
    return physical
