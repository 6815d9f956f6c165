"""Injective functional dependencies and partition/seal compatibility.

A stream sealed on a key set licenses partition-at-a-time processing by a
non-confluent component only when the key injectively determines some part
of the component's partitioning gate.  Injectivity is decided by a sound
but incomplete chase: identity edges plus explicitly declared injective
dependencies, closed under transitivity.  No function analysis is done.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable


class _Wildcard:
    """Sentinel gate meaning every record is its own partition."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "WILDCARD"


WILDCARD = _Wildcard()

# A gate or seal key: a frozenset of attribute names, or WILDCARD for gates.
AttrSet = frozenset


def attrs(names: Iterable[str]) -> frozenset[str]:
    return frozenset(names)


@dataclass(frozen=True)
class InjectiveFD:
    """A directed edge asserting that `determinant` injectively determines
    `dependent`.  `via` records provenance: "identity" for equal-valued
    attribute chains (projections), "declared" for user-supplied facts."""

    determinant: frozenset[str]
    dependent: frozenset[str]
    via: str = "declared"

    def __post_init__(self):
        if not self.determinant or not self.dependent:
            raise ValueError("injective FD endpoints must be nonempty attribute sets")
        if self.via not in ("identity", "declared"):
            raise ValueError(f"unknown FD provenance {self.via!r}")


@dataclass(frozen=True)
class QueryDescriptor:
    """Minimal description of a query statement, enough to derive the
    partition subscript for its non-confluent annotation."""

    kind: str  # "aggregation" | "antijoin" | "other"
    grouping: frozenset[str] = frozenset()
    theta: frozenset[str] = frozenset()

    def __post_init__(self):
        if self.kind == "aggregation" and not self.grouping:
            raise ValueError("aggregation descriptor requires grouping columns")
        if self.kind == "antijoin" and not self.theta:
            raise ValueError("antijoin descriptor requires theta columns")
        if self.kind not in ("aggregation", "antijoin", "other"):
            raise ValueError(f"unknown query kind {self.kind!r}")


def injective_fd(fds: Iterable[InjectiveFD], a: Iterable[str], b: Iterable[str]) -> bool:
    """True iff attribute set `a` injectively determines attribute set `b`.

    Reachability over the declared edge set, with every set related to
    itself (the identity function is injective).  Sound and incomplete:
    only exact-set edge hops are followed.
    """
    start = frozenset(a)
    goal = frozenset(b)
    if start == goal:
        return True
    edges: dict[frozenset[str], set[frozenset[str]]] = {}
    for fd in fds:
        edges.setdefault(fd.determinant, set()).add(fd.dependent)
    seen = {start}
    frontier = [start]
    while frontier:
        node = frontier.pop()
        for nxt in edges.get(node, ()):
            if nxt == goal:
                return True
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


def _nonempty_subsets(s: frozenset[str]):
    items = sorted(s)
    for size in range(1, len(items) + 1):
        for combo in combinations(items, size):
            yield frozenset(combo)


def compatible(partition, seal: Iterable[str], fds: Iterable[InjectiveFD] = ()) -> bool:
    """True iff a stream sealed on `seal` matches the partitioning `partition`.

    Holds when some nonempty subset of the partition gate is injectively
    determined by the whole seal key.  A WILDCARD partition (each record its
    own partition) is compatible with no finite seal.
    """
    if partition is WILDCARD:
        return False
    gate = frozenset(partition)
    if not gate:
        return False
    fds = tuple(fds)
    return any(injective_fd(fds, seal, attr) for attr in _nonempty_subsets(gate))


def derive_subscript(query: QueryDescriptor):
    """Partition subscript for a query: grouping columns for aggregations,
    theta columns for antijoins, WILDCARD otherwise."""
    if query.kind == "aggregation":
        return query.grouping
    if query.kind == "antijoin":
        return query.theta
    return WILDCARD
