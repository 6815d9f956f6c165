from __future__ import annotations

import itertools
import random

from conftest import ad_flow

from generators import random_flow, sealed_sources, without_seal

from flowguard.analysis import analyze, infer_path, reconcile
from flowguard.lineage import WILDCARD, InjectiveFD, compatible, injective_fd
from flowguard.model import (
    ASYNC,
    LABEL_SEVERITY,
    Label,
    LabelKind,
    PathAnnotation,
    PathKind,
    collapse_cycles,
    has_cycles,
)

ATTRS = ("a", "b", "c", "d")


def random_fds(rng: random.Random, count: int) -> tuple[InjectiveFD, ...]:
    out = []
    for _ in range(count):
        det = frozenset(rng.sample(ATTRS, rng.randint(1, 2)))
        dep = frozenset(rng.sample(ATTRS, rng.randint(1, 2)))
        out.append(InjectiveFD(det, dep))
    return tuple(out)


def random_attr_set(rng: random.Random) -> frozenset[str]:
    return frozenset(rng.sample(ATTRS, rng.randint(1, 3)))


class TestLatticeProperties:
    def test_severity_total_order(self):
        kinds = list(LabelKind)
        for a, b in itertools.product(kinds, kinds):
            sa, sb = LABEL_SEVERITY[a], LABEL_SEVERITY[b]
            assert sa < sb or sa > sb or sa == sb
        externals = [k for k in kinds if k not in (LabelKind.ND_READ, LabelKind.TAINT)]
        severities = [LABEL_SEVERITY[k] for k in externals]
        assert len(set(severities)) == len(severities)

    def test_max_severity_selection_deterministic(self):
        rng = random.Random(11)
        pool = [
            ASYNC,
            Label.seal({"a"}),
            Label.seal({"b"}),
            Label(LabelKind.RUN),
            Label(LabelKind.TAINT),
            Label.nd_read({"a"}),
        ]
        externals = [l for l in pool if not l.internal]
        for _ in range(200):
            labels = (rng.choice(externals),) + tuple(
                rng.choice(pool) for _ in range(rng.randint(0, 4))
            )
            expected = reconcile(labels, replicated=False)
            for perm in itertools.permutations(labels):
                assert reconcile(perm, replicated=False) == expected


class TestCollapseProperties:
    def test_idempotent_on_random_cyclic_graphs(self):
        rng = random.Random(23)
        for _ in range(200):
            flow = random_flow(rng, back_edges=rng.randint(0, 2))
            once = collapse_cycles(flow)
            assert not has_cycles(once)
            assert collapse_cycles(once) == once


class TestFDProperties:
    def test_reflexive(self):
        rng = random.Random(5)
        for _ in range(100):
            s = random_attr_set(rng)
            assert injective_fd((), s, s)

    def test_transitive(self):
        rng = random.Random(7)
        for _ in range(300):
            fds = random_fds(rng, rng.randint(0, 5))
            sets = [random_attr_set(rng) for _ in range(3)]
            a, b, c = sets
            if injective_fd(fds, a, b) and injective_fd(fds, b, c):
                assert injective_fd(fds, a, c)

    def test_monotone_in_edges(self):
        rng = random.Random(9)
        for _ in range(300):
            fds = random_fds(rng, rng.randint(0, 4))
            extra = fds + random_fds(rng, rng.randint(1, 3))
            a, b = random_attr_set(rng), random_attr_set(rng)
            if injective_fd(fds, a, b):
                assert injective_fd(extra, a, b)

    def test_compatible_monotone_in_partition(self):
        rng = random.Random(13)
        for _ in range(300):
            fds = random_fds(rng, rng.randint(0, 4))
            partition = random_attr_set(rng)
            seal = random_attr_set(rng)
            grown = partition | random_attr_set(rng)
            if compatible(partition, seal, fds):
                assert compatible(grown, seal, fds)


class TestInferenceProperties:
    def test_inference_never_derives_new_seals(self):
        rng = random.Random(17)
        labels = [
            ASYNC,
            Label(LabelKind.RUN),
            Label(LabelKind.INST),
            Label(LabelKind.DIVERGE),
            Label.seal({"a"}),
            Label.seal({"b", "c"}),
        ]
        for _ in range(500):
            label = rng.choice(labels)
            kind = rng.choice(list(PathKind))
            gate = None
            if kind in (PathKind.OR, PathKind.OW):
                gate = WILDCARD if rng.random() < 0.2 else random_attr_set(rng)
            produced = infer_path(label, PathAnnotation("i", "o", kind, gate))
            for derived in produced:
                if derived != label:
                    assert derived.kind is not LabelKind.SEAL

    def test_analyze_monotone_under_seal_removal(self):
        rng = random.Random(19)
        checked = 0
        while checked < 300:
            flow = random_flow(rng)
            sealed = sealed_sources(flow)
            if not sealed:
                continue
            checked += 1
            victim = rng.choice(sealed)
            before = analyze(flow)
            after = analyze(without_seal(flow, victim))
            for name, label in before.stream_labels.items():
                assert after.stream_labels[name].severity >= label.severity, (
                    name,
                    label.describe(),
                    after.stream_labels[name].describe(),
                )

    def test_all_confluent_flows_stay_at_or_below_async(self):
        rng = random.Random(29)
        for _ in range(300):
            flow = random_flow(rng, confluent_only=True)
            report = analyze(flow)
            for label in report.stream_labels.values():
                assert label.severity <= 2

    def test_final_labels_never_internal(self):
        rng = random.Random(31)
        for _ in range(300):
            report = analyze(random_flow(rng))
            for label in report.stream_labels.values():
                assert not label.internal
            for label in report.sink_labels.values():
                assert not label.internal

    def test_campaign_protection_requires_compatible_seal(self):
        compatible_flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}), seal=frozenset({"campaign"})
        )
        incompatible_flow = ad_flow(
            PathKind.OR, frozenset({"id"}), seal=frozenset({"campaign"})
        )
        assert analyze(compatible_flow).dataflow_label.severity == 2
        assert analyze(incompatible_flow).dataflow_label.severity == 5
