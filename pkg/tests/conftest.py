from __future__ import annotations

from pathlib import Path

import pytest

from flowguard.model import (
    ComponentSpec,
    Interface,
    LogicalDataflow,
    PathAnnotation,
    PathKind,
    StreamSpec,
)

FIXTURE_DIR = Path(__file__).resolve().parents[1] / "src" / "flowguard" / "fixtures"
DATA_DIR = Path(__file__).resolve().parent / "data"


def fixture_path(name: str) -> Path:
    return FIXTURE_DIR / name


def fixture_text(name: str) -> str:
    return fixture_path(name).read_text(encoding="utf-8")


def data_text(name: str) -> str:
    return (DATA_DIR / name).read_text(encoding="utf-8")


def iface(component: str, port: str, direction: str) -> Interface:
    return Interface(component, port, direction)


def wordcount_flow(seal: frozenset[str] | None = None) -> LogicalDataflow:
    splitter = ComponentSpec(
        "Splitter", (PathAnnotation("tweets", "words", PathKind.CR),)
    )
    count = ComponentSpec(
        "Count",
        (PathAnnotation("words", "counts", PathKind.OW, frozenset({"word", "batch"})),),
    )
    commit = ComponentSpec("Commit", (PathAnnotation("counts", "db", PathKind.CW),))
    streams = (
        StreamSpec(
            "tweets",
            None,
            iface("Splitter", "tweets", "input"),
            frozenset({"batch", "text"}),
            seal=seal,
        ),
        StreamSpec(
            "words",
            iface("Splitter", "words", "output"),
            iface("Count", "words", "input"),
            frozenset({"batch", "word"}),
        ),
        StreamSpec(
            "counts",
            iface("Count", "counts", "output"),
            iface("Commit", "counts", "input"),
            frozenset({"batch", "count", "word"}),
        ),
    )
    return LogicalDataflow((splitter, count, commit), streams)


def ad_flow(
    query_kind: PathKind,
    query_gate,
    seal: frozenset[str] | None = None,
    gossip: bool = True,
) -> LogicalDataflow:
    report = ComponentSpec(
        "Report",
        (
            PathAnnotation("click", "response", PathKind.CW),
            PathAnnotation("request", "response", query_kind, query_gate),
        ),
        replicated=True,
    )
    cache = ComponentSpec(
        "Cache",
        (
            PathAnnotation("request", "response", PathKind.CR),
            PathAnnotation("response", "response", PathKind.CW),
            PathAnnotation("request", "request", PathKind.CR),
        ),
        replicated=True,
    )
    schema = frozenset({"id", "campaign", "window"})
    streams = [
        StreamSpec(
            "c", None, iface("Report", "click", "input"), schema, seal=seal,
            replicated=True,
        ),
        StreamSpec(
            "q", None, iface("Report", "request", "input"), schema, replicated=True
        ),
        StreamSpec(
            "response",
            iface("Report", "response", "output"),
            iface("Cache", "response", "input"),
        ),
        StreamSpec("r", iface("Cache", "response", "output"), None),
    ]
    if gossip:
        streams.insert(
            3,
            StreamSpec(
                "gossip",
                iface("Cache", "response", "output"),
                iface("Cache", "response", "input"),
            ),
        )
    return LogicalDataflow((report, cache), tuple(streams))


@pytest.fixture
def wordcount():
    return wordcount_flow()


@pytest.fixture
def wordcount_sealed():
    return wordcount_flow(seal=frozenset({"batch"}))
