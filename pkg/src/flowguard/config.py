"""Configuration ingestion and canonical serialization.

The accepted format is a YAML subset.  Top-level entries are component
specifications (a mapping with an ``annotation`` list and an optional
``Rep`` flag) or named annotation variants (a bare annotation mapping,
used for swappable query paths).  Reserved top-level sections extend the
per-component annotations with wiring and simulator inputs:

``streams``
    Edges: ``{name, from: Comp.port, to: Comp.port, schema, seal, rep}``.
    Omitting ``from`` makes a source; omitting ``to`` a sink.
``fds``
    Declared injective dependencies: ``{from: [...], to: [...], via}``.
``queries``
    Mapping component name to a variant whose annotation it adopts.
``fixtures``
    Simulator inputs: instance multiplicities, external producer counts,
    per-stream routing, runtime parameters, and the message batch.

Component-only documents (annotation lists with no reserved sections)
are accepted as-is and resolve to a dataflow with empty wiring.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .lineage import WILDCARD, InjectiveFD
from .model import (
    ComponentSpec,
    Interface,
    LogicalDataflow,
    PathAnnotation,
    PathKind,
    StreamSpec,
)
from .sim.physical import FixtureSpec, Routing, SourceMessage

RESERVED_SECTIONS = ("streams", "fds", "queries", "fixtures")
VALID_LABELS = ("CR", "CW", "OR", "OW")


class ConfigError(Exception):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


def _walk_positions(node, path, positions):
    positions[path] = (node.start_mark.line + 1, node.start_mark.column + 1)
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = key_node.value
            _walk_positions(value_node, path + (key,), positions)
    elif isinstance(node, yaml.SequenceNode):
        for idx, child in enumerate(node.value):
            _walk_positions(child, path + (idx,), positions)


@dataclass
class ConfigDocument:
    components: dict[str, dict] = field(default_factory=dict)
    variants: dict[str, list[dict]] = field(default_factory=dict)
    queries: dict[str, str] = field(default_factory=dict)
    streams: list[dict] = field(default_factory=list)
    fds: list[dict] = field(default_factory=list)
    fixtures: dict[str, dict] = field(default_factory=dict)
    positions: dict = field(default_factory=dict, compare=False, repr=False)

    def position(self, *path):
        return self.positions.get(tuple(path), (None, None))

    def to_dict(self) -> dict:
        """Canonical plain form: parse, serialize, parse is a fixpoint of
        this value."""
        out: dict = {}
        for name in sorted(self.components):
            entry = self.components[name]
            item: dict = {}
            if entry.get("rep"):
                item["Rep"] = True
            item["annotation"] = [dict(a) for a in entry["annotation"]]
            out[name] = item
        for name in sorted(self.variants):
            anns = [dict(a) for a in self.variants[name]]
            out[name] = anns[0] if len(anns) == 1 else anns
        if self.queries:
            out["queries"] = dict(sorted(self.queries.items()))
        if self.streams:
            out["streams"] = [dict(s) for s in self.streams]
        if self.fds:
            out["fds"] = [dict(f) for f in self.fds]
        if self.fixtures:
            out["fixtures"] = {
                name: self.fixtures[name] for name in sorted(self.fixtures)
            }
        return out


def _require_mapping(value, what, doc_pos):
    if not isinstance(value, dict):
        line, col = doc_pos
        raise ConfigError(f"{what} must be a mapping", line, col)
    return value


def _normalize_annotation(raw, positions, path) -> dict:
    line, col = positions.get(path, (None, None))
    if not isinstance(raw, dict):
        raise ConfigError("annotation must be a mapping with from/to/label", line, col)
    missing = [k for k in ("from", "to", "label") if k not in raw]
    if missing:
        raise ConfigError(
            f"annotation lacks required keys: {', '.join(missing)}", line, col
        )
    label = raw["label"]
    if label not in VALID_LABELS:
        lline, lcol = positions.get(path + ("label",), (line, col))
        raise ConfigError(
            f"unknown label {label!r}; expected one of {', '.join(VALID_LABELS)}",
            lline,
            lcol,
        )
    out = {"from": str(raw["from"]), "to": str(raw["to"]), "label": label}
    has_subscript = "subscript" in raw
    if label in ("OR", "OW"):
        if not has_subscript:
            raise ConfigError(
                f"{label} annotation requires a subscript (attribute list or \"*\")",
                line,
                col,
            )
        subscript = raw["subscript"]
        if subscript == "*":
            out["subscript"] = "*"
        elif isinstance(subscript, list) and subscript and all(
            isinstance(a, str) and a for a in subscript
        ):
            out["subscript"] = sorted(subscript)
        else:
            sline, scol = positions.get(path + ("subscript",), (line, col))
            raise ConfigError(
                "subscript must be a nonempty list of attribute names or \"*\"",
                sline,
                scol,
            )
    elif has_subscript:
        raise ConfigError(f"{label} annotation must not carry a subscript", line, col)
    unknown = sorted(set(raw) - {"from", "to", "label", "subscript"})
    if unknown:
        raise ConfigError(
            f"unknown annotation keys: {', '.join(unknown)}", line, col
        )
    return out


def _looks_like_annotation(value) -> bool:
    if isinstance(value, dict):
        return {"from", "to", "label"} <= set(value)
    if isinstance(value, list) and value:
        return all(isinstance(v, dict) and {"from", "to", "label"} <= set(v) for v in value)
    return False


def parse_config(text: str) -> ConfigDocument:
    """Parse a configuration document.

    Component-only documents (no reserved sections) are accepted; wiring
    then comes from elsewhere or validation reports the gaps.  Errors
    carry line and column where the source position is known.
    """
    loader = yaml.SafeLoader(text)
    try:
        node = loader.get_single_node()
        data = loader.construct_document(node) if node is not None else None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        line = mark.line + 1 if mark else None
        col = mark.column + 1 if mark else None
        raise ConfigError(f"invalid YAML: {exc.problem or exc}", line, col) from exc
    finally:
        loader.dispose()

    positions: dict = {}
    if node is not None:
        _walk_positions(node, (), positions)

    doc = ConfigDocument(positions=positions)
    if data is None:
        return doc
    if not isinstance(data, dict):
        raise ConfigError("the document root must be a mapping", *positions.get((), (1, 1)))

    for key, value in data.items():
        path = (key,)
        line, col = positions.get(path, (None, None))
        if key == "streams":
            if not isinstance(value, list):
                raise ConfigError("streams must be a sequence", line, col)
            doc.streams = [
                _normalize_stream(entry, positions, path + (i,))
                for i, entry in enumerate(value)
            ]
        elif key == "fds":
            if not isinstance(value, list):
                raise ConfigError("fds must be a sequence", line, col)
            doc.fds = [
                _normalize_fd(entry, positions, path + (i,))
                for i, entry in enumerate(value)
            ]
        elif key == "queries":
            mapping = _require_mapping(value, "queries", (line, col))
            doc.queries = {str(k): str(v) for k, v in mapping.items()}
        elif key == "fixtures":
            mapping = _require_mapping(value, "fixtures", (line, col))
            doc.fixtures = {
                str(name): _normalize_fixture(entry, positions, path + (name,))
                for name, entry in mapping.items()
            }
        elif isinstance(value, dict) and "annotation" in value:
            annotations = value["annotation"]
            if isinstance(annotations, dict):
                annotations = [annotations]
                ann_paths = [path + ("annotation",)]
            elif isinstance(annotations, list):
                ann_paths = [path + ("annotation", i) for i in range(len(annotations))]
            else:
                raise ConfigError(
                    f"{key}: annotation must be a mapping or a sequence", line, col
                )
            unknown = sorted(set(value) - {"annotation", "Rep"})
            if unknown:
                raise ConfigError(
                    f"{key}: unknown component keys: {', '.join(unknown)}", line, col
                )
            rep = value.get("Rep", False)
            if not isinstance(rep, bool):
                raise ConfigError(f"{key}: Rep must be a boolean", line, col)
            doc.components[str(key)] = {
                "rep": rep,
                "annotation": [
                    _normalize_annotation(a, positions, p)
                    for a, p in zip(annotations, ann_paths)
                ],
            }
        elif _looks_like_annotation(value):
            entries = value if isinstance(value, list) else [value]
            paths = (
                [path + (i,) for i in range(len(value))]
                if isinstance(value, list)
                else [path]
            )
            doc.variants[str(key)] = [
                _normalize_annotation(a, positions, p) for a, p in zip(entries, paths)
            ]
        else:
            raise ConfigError(
                f"cannot interpret top-level entry {key!r}: expected a component "
                "(mapping with an annotation list), an annotation variant, or one "
                f"of the sections {', '.join(RESERVED_SECTIONS)}",
                line,
                col,
            )
    return doc


def _normalize_stream(raw, positions, path) -> dict:
    line, col = positions.get(path, (None, None))
    if not isinstance(raw, dict) or "name" not in raw:
        raise ConfigError("stream entry must be a mapping with a name", line, col)
    out: dict = {"name": str(raw["name"])}
    for endpoint in ("from", "to"):
        if endpoint in raw:
            value = str(raw[endpoint])
            if "." not in value:
                eline, ecol = positions.get(path + (endpoint,), (line, col))
                raise ConfigError(
                    f"stream {out['name']}: {endpoint} must be Component.port",
                    eline,
                    ecol,
                )
            out[endpoint] = value
    for attr_list in ("schema", "seal"):
        if attr_list in raw:
            value = raw[attr_list]
            if not isinstance(value, list) or not all(isinstance(a, str) for a in value):
                aline, acol = positions.get(path + (attr_list,), (line, col))
                raise ConfigError(
                    f"stream {out['name']}: {attr_list} must be a list of attributes",
                    aline,
                    acol,
                )
            out[attr_list] = sorted(value)
    if raw.get("rep"):
        out["rep"] = True
    unknown = sorted(set(raw) - {"name", "from", "to", "schema", "seal", "rep"})
    if unknown:
        raise ConfigError(
            f"stream {out['name']}: unknown keys: {', '.join(unknown)}", line, col
        )
    return out


def _normalize_fd(raw, positions, path) -> dict:
    line, col = positions.get(path, (None, None))
    if not isinstance(raw, dict) or "from" not in raw or "to" not in raw:
        raise ConfigError("fd entry must map from/to attribute lists", line, col)
    def attr_list(key):
        value = raw[key]
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, list) or not value:
            raise ConfigError(f"fd {key} must be a nonempty attribute list", line, col)
        return sorted(str(a) for a in value)
    out = {"from": attr_list("from"), "to": attr_list("to")}
    via = raw.get("via", "declared")
    if via not in ("declared", "identity"):
        raise ConfigError("fd via must be declared or identity", line, col)
    if via != "declared":
        out["via"] = via
    unknown = sorted(set(raw) - {"from", "to", "via"})
    if unknown:
        raise ConfigError(f"fd entry has unknown keys: {', '.join(unknown)}", line, col)
    return out


def _normalize_fixture(raw, positions, path) -> dict:
    line, col = positions.get(path, (None, None))
    raw = _require_mapping(raw, "fixture", (line, col))
    out: dict = {}
    for section in ("multiplicity", "producers"):
        if section in raw:
            mapping = _require_mapping(raw[section], section, (line, col))
            out[section] = {
                str(k): int(v) for k, v in sorted(mapping.items())
            }
    if "routing" in raw:
        routing = _require_mapping(raw["routing"], "routing", (line, col))
        normalized = {}
        for stream, spec in sorted(routing.items()):
            spec = _require_mapping(spec, f"routing for {stream}", (line, col))
            entry: dict = {}
            if spec.get("replicate"):
                entry["replicate"] = True
            if spec.get("pair"):
                entry["pair"] = True
            if "partition_by" in spec:
                entry["partition_by"] = sorted(str(a) for a in spec["partition_by"])
            unknown = sorted(set(spec) - {"replicate", "pair", "partition_by"})
            if unknown or len(entry) != 1:
                raise ConfigError(
                    f"routing for {stream} must set exactly one of replicate, "
                    "pair, partition_by",
                    line,
                    col,
                )
            normalized[str(stream)] = entry
        out["routing"] = normalized
    if "params" in raw:
        params = _require_mapping(raw["params"], "params", (line, col))
        out["params"] = {
            str(comp): dict(_require_mapping(p, f"params for {comp}", (line, col)))
            for comp, p in sorted(params.items())
        }
    messages = raw.get("messages", [])
    if not isinstance(messages, list):
        raise ConfigError("fixture messages must be a sequence", line, col)
    normalized_messages = []
    for i, entry in enumerate(messages):
        mline, mcol = positions.get(path + ("messages", i), (line, col))
        entry = _require_mapping(entry, "message", (mline, mcol))
        if "stream" not in entry:
            raise ConfigError("message lacks a stream", mline, mcol)
        has_payload = "payload" in entry
        has_punct = "punctuation" in entry
        if has_payload == has_punct:
            raise ConfigError(
                "message carries exactly one of payload or punctuation", mline, mcol
            )
        msg: dict = {"stream": str(entry["stream"])}
        if entry.get("producer", 0):
            msg["producer"] = int(entry["producer"])
        body_key = "payload" if has_payload else "punctuation"
        body = _require_mapping(entry[body_key], body_key, (mline, mcol))
        msg[body_key] = {str(k): body[k] for k in sorted(body)}
        unknown = sorted(set(entry) - {"stream", "producer", "payload", "punctuation"})
        if unknown:
            raise ConfigError(
                f"message has unknown keys: {', '.join(unknown)}", mline, mcol
            )
        normalized_messages.append(msg)
    if normalized_messages:
        out["messages"] = normalized_messages
    unknown = sorted(
        set(raw) - {"multiplicity", "producers", "routing", "params", "messages"}
    )
    if unknown:
        raise ConfigError(f"fixture has unknown keys: {', '.join(unknown)}", line, col)
    return out


def serialize_config(doc: ConfigDocument) -> str:
    """Canonical YAML rendering; parsing it back yields an equal document."""
    return yaml.safe_dump(doc.to_dict(), sort_keys=False, default_flow_style=False)


# ---------------------------------------------------------------------------
# Conversion to the analysis model


def _gate_from_subscript(subscript):
    if subscript == "*":
        return WILDCARD
    return frozenset(subscript)


def _annotation_from_dict(raw: dict) -> PathAnnotation:
    kind = PathKind(raw["label"])
    gate = None
    if kind in (PathKind.OR, PathKind.OW):
        gate = _gate_from_subscript(raw["subscript"])
    return PathAnnotation(
        from_port=raw["from"], to_port=raw["to"], kind=kind, gate=gate
    )


def build_dataflow(doc: ConfigDocument) -> LogicalDataflow:
    """Resolve the document into a logical dataflow.

    Raises ConfigError on dangling references (unknown components, variant
    names, or endpoint ports).
    """
    specs: dict[str, list[PathAnnotation]] = {}
    replicated: dict[str, bool] = {}
    for name, entry in doc.components.items():
        specs[name] = [_annotation_from_dict(a) for a in entry["annotation"]]
        replicated[name] = bool(entry.get("rep"))

    for comp_name, variant_name in sorted(doc.queries.items()):
        line, col = doc.position("queries")
        if comp_name not in specs:
            raise ConfigError(
                f"queries: unknown component {comp_name!r}", line, col
            )
        if variant_name not in doc.variants:
            raise ConfigError(
                f"queries: unknown variant {variant_name!r} for {comp_name}",
                line,
                col,
            )
        for ann in doc.variants[variant_name]:
            specs[comp_name].append(_annotation_from_dict(ann))

    components = tuple(
        ComponentSpec(
            name=name,
            paths=tuple(dict.fromkeys(specs[name])),
            replicated=replicated[name],
        )
        for name in sorted(specs)
    )

    port_dirs: dict[str, tuple[set, set]] = {}
    for comp in components:
        port_dirs[comp.name] = (set(comp.input_ports), set(comp.output_ports))

    streams = []
    for idx, raw in enumerate(doc.streams):
        name = raw["name"]
        def endpoint(key: str, direction: str):
            if key not in raw:
                return None
            comp_name, port = raw[key].split(".", 1)
            if comp_name not in port_dirs:
                line, col = doc.position("streams", idx, key)
                raise ConfigError(
                    f"stream {name}: unknown component {comp_name!r}", line, col
                )
            inputs, outputs = port_dirs[comp_name]
            known = outputs if direction == "output" else inputs
            if port not in known:
                line, col = doc.position("streams", idx, key)
                raise ConfigError(
                    f"stream {name}: component {comp_name} has no "
                    f"{direction} port {port!r}",
                    line,
                    col,
                )
            return Interface(comp_name, port, direction)
        streams.append(
            StreamSpec(
                name=name,
                producer=endpoint("from", "output"),
                consumer=endpoint("to", "input"),
                schema=frozenset(raw.get("schema", ())),
                seal=frozenset(raw["seal"]) if "seal" in raw else None,
                replicated=bool(raw.get("rep")),
            )
        )
    return LogicalDataflow(components=components, streams=tuple(streams))


def build_fds(doc: ConfigDocument) -> tuple[InjectiveFD, ...]:
    return tuple(
        InjectiveFD(
            determinant=frozenset(raw["from"]),
            dependent=frozenset(raw["to"]),
            via=raw.get("via", "declared"),
        )
        for raw in doc.fds
    )


def build_fixture(doc: ConfigDocument, name: str = "default") -> FixtureSpec:
    if name not in doc.fixtures:
        raise ConfigError(f"no fixture named {name!r} in the configuration")
    raw = doc.fixtures[name]
    routing = {}
    for stream, spec in raw.get("routing", {}).items():
        if spec.get("replicate"):
            routing[stream] = Routing(mode="replicate")
        elif spec.get("pair"):
            routing[stream] = Routing(mode="pair")
        else:
            routing[stream] = Routing(
                mode="partition", partition_by=tuple(spec["partition_by"])
            )
    messages = tuple(
        SourceMessage(
            stream=m["stream"],
            producer=m.get("producer", 0),
            payload=tuple(sorted(m["payload"].items())) if "payload" in m else None,
            punctuation=tuple(sorted(m["punctuation"].items()))
            if "punctuation" in m
            else None,
        )
        for m in raw.get("messages", ())
    )
    return FixtureSpec(
        name=name,
        multiplicity=dict(raw.get("multiplicity", {})),
        producers=dict(raw.get("producers", {})),
        routing=routing,
        params=raw.get("params", {}),
        messages=messages,
    )


def fixture_names(doc: ConfigDocument) -> list[str]:
    return sorted(doc.fixtures)
