from __future__ import annotations

import itertools

import pytest

from conftest import ad_flow, iface, wordcount_flow

from flowguard.analysis import analyze
from flowguard.model import (
    ComponentSpec,
    LogicalDataflow,
    PathAnnotation,
    PathKind,
    StreamSpec,
)
from flowguard.planning import synthesize
from flowguard.sim import (
    FixtureSpec,
    Message,
    Routing,
    SimulationError,
    SourceMessage,
    classify_anomalies,
    count_deliverable_events,
    enumerate_schedules,
    execute,
    instantiate,
)


def drain_flow(inputs: int) -> LogicalDataflow:
    comp = ComponentSpec(
        "Drain",
        tuple(PathAnnotation(f"in{i}", "out", PathKind.CW) for i in range(inputs)),
    )
    streams = tuple(
        StreamSpec(f"s{i}", None, iface("Drain", f"in{i}", "input"))
        for i in range(inputs)
    )
    return LogicalDataflow((comp,), streams)


def drain_fixture(inputs: int) -> FixtureSpec:
    return FixtureSpec(
        params={"Drain": {"runtime": "absorb"}},
        messages=tuple(
            SourceMessage(f"s{i}", payload=(("n", i),)) for i in range(inputs)
        ),
    )


def poor_fixture(clicks: int) -> FixtureSpec:
    payloads = [
        (("campaign", "A"), ("id", "x")),
        (("campaign", "A"), ("id", "x")),
        (("campaign", "B"), ("id", "y")),
        (("campaign", "B"), ("id", "y")),
    ]
    return FixtureSpec(
        multiplicity={"Report": 2, "Cache": 2},
        producers={"c": 1, "q": 1},
        routing={"response": Routing(mode="pair")},
        params={"Report": {"query": "poor", "threshold": 2}},
        messages=tuple(
            SourceMessage("c", payload=p) for p in payloads[:clicks]
        )
        + (SourceMessage("q", payload=()),),
    )


def campaign_fixture() -> FixtureSpec:
    return FixtureSpec(
        producers={"c": 2, "q": 1},
        params={"Report": {"query": "campaign", "threshold": 100}},
        messages=(
            SourceMessage("c", 0, payload=(("campaign", "A"), ("id", "x"))),
            SourceMessage("c", 0, payload=(("campaign", "B"), ("id", "y"))),
            SourceMessage("c", 1, payload=(("campaign", "A"), ("id", "x"))),
            SourceMessage("c", 0, punctuation=(("campaign", "A"),)),
            SourceMessage("c", 1, punctuation=(("campaign", "A"),)),
            SourceMessage("c", 0, punctuation=(("campaign", "B"),)),
            SourceMessage("c", 1, punctuation=(("campaign", "B"),)),
            SourceMessage("q", payload=(("campaign", "A"),)),
        ),
    )


class TestInstantiate:
    def test_replicated_fanout_channels(self):
        flow = ad_flow(PathKind.OR, frozenset({"id"}), gossip=False)
        fixture = FixtureSpec(
            multiplicity={"Report": 2, "Cache": 2},
            producers={"c": 2},
            routing={"response": Routing(mode="pair")},
            messages=(
                SourceMessage("c", 0, payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("c", 1, payload=(("campaign", "A"), ("id", "y"))),
            ),
        )
        physical = instantiate(flow, fixture)
        for replica in ("Report#0", "Report#1"):
            channels = [
                cid for cid in physical.source_channels if cid[2] == replica
            ]
            assert len(channels) == 2  # one per ad server

    def test_unit_multiplicity_is_isomorphic(self):
        flow = wordcount_flow()
        physical = instantiate(flow, FixtureSpec(
            messages=(SourceMessage("tweets", payload=(("batch", 1), ("text", "a"))),)
        ))
        assert physical.multiplicity == {"Splitter": 1, "Count": 1, "Commit": 1}
        assert list(physical.source_channels) == [
            ("tweets", "tweets/ext0", "Splitter#0")
        ]

    def test_hash_partitioning_sends_each_word_to_one_count(self):
        flow = wordcount_flow()
        fixture = FixtureSpec(
            multiplicity={"Splitter": 3, "Count": 3},
            routing={
                "tweets": Routing(mode="partition", partition_by=("batch",)),
                "words": Routing(mode="partition", partition_by=("word",)),
            },
            messages=(),
        )
        physical = instantiate(flow, fixture)
        words = flow.stream("words")
        for word in ("a", "b", "c", "d"):
            targets = {
                physical.consumer_targets(
                    words,
                    Message("words", f"Splitter#{i}", payload=(("batch", b), ("word", word))),
                    i,
                )[0]
                for i in range(3)
                for b in (1, 2)
            }
            assert len(targets) == 1  # same instance regardless of producer

    def test_punctuations_broadcast_on_partitioned_streams(self):
        flow = wordcount_flow()
        fixture = FixtureSpec(
            multiplicity={"Count": 3},
            routing={"words": Routing(mode="partition", partition_by=("word",))},
        )
        physical = instantiate(flow, fixture)
        targets = physical.consumer_targets(
            flow.stream("words"),
            Message("words", "Splitter#0", punctuation=(("batch", 1),)),
            0,
        )
        assert targets == ["Count#0", "Count#1", "Count#2"]

    def test_replicated_stream_from_partitioned_producer_rejected(self):
        base = wordcount_flow()
        streams = list(base.streams)
        streams[1] = StreamSpec(
            "words", streams[1].producer, streams[1].consumer,
            streams[1].schema, replicated=True,
        )
        flow = LogicalDataflow(base.components, tuple(streams))
        with pytest.raises(SimulationError) as err:
            instantiate(flow, FixtureSpec(multiplicity={"Splitter": 3}))
        assert "replicated" in str(err.value)


class TestSchedules:
    def test_two_independent_channels_two_schedules(self):
        physical = instantiate(drain_flow(2), drain_fixture(2))
        schedules = list(enumerate_schedules(physical))
        assert len(schedules) == 2

    def test_three_independent_channels_six_schedules(self):
        # Oracle: distinct interleavings of three single-message channels.
        expected = len(set(itertools.permutations(["s0", "s1", "s2"])))
        physical = instantiate(drain_flow(3), drain_fixture(3))
        schedules = list(enumerate_schedules(physical))
        assert len(schedules) == expected == 6
        assert len(set(schedules)) == 6

    def test_exhaustive_bound_enforced(self):
        physical = instantiate(drain_flow(3), drain_fixture(3))
        with pytest.raises(SimulationError) as err:
            list(enumerate_schedules(physical, bound=2))
        assert "bound" in str(err.value)

    def test_sampling_is_deterministic(self):
        physical = instantiate(drain_flow(3), drain_fixture(3))
        first = list(enumerate_schedules(physical, mode="sample", samples=100, seed=7))
        second = list(enumerate_schedules(physical, mode="sample", samples=100, seed=7))
        assert first == second
        other = list(enumerate_schedules(physical, mode="sample", samples=100, seed=8))
        assert first != other


class TestExecute:
    def test_replay_matches_enumeration(self):
        physical = instantiate(drain_flow(2), drain_fixture(2))
        for schedule in enumerate_schedules(physical):
            result = execute(physical, schedule)
            assert result.deliveries == 2

    def test_execute_is_deterministic(self):
        flow = ad_flow(PathKind.OR, frozenset({"id"}), gossip=False)
        physical = instantiate(flow, poor_fixture(clicks=2))
        schedule = next(iter(enumerate_schedules(physical, bound=12)))
        first = execute(physical, schedule)
        second = execute(physical, schedule)
        assert first.sinks == second.sinks
        assert first.states == second.states
        assert first.coordination_messages == second.coordination_messages

    def test_invalid_schedule_rejected(self):
        physical = instantiate(drain_flow(2), drain_fixture(2))
        with pytest.raises(SimulationError):
            execute(physical, (("s0", "s0/ext0", "Drain#0"),) * 2)

    def test_sealed_partition_released_only_after_all_votes(self):
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        report = analyze(flow)
        plan = synthesize(flow, report)
        physical = instantiate(flow, campaign_fixture())
        # Deliver everything except the second producer's seal for A last:
        # the response to the request for campaign A must not exist until
        # that vote arrives.
        ordered = [
            ("c", "c/ext0", "Report#0"),  # click A
            ("c", "c/ext0", "Report#0"),  # click B
            ("c", "c/ext1", "Report#0"),  # click A
            ("c", "c/ext0", "Report#0"),  # seal A from producer 0
            ("q", "q/ext0", "Report#0"),  # request for A, buffered
            ("c", "c/ext0", "Report#0"),  # seal B from producer 0
            ("c", "c/ext1", "Report#0"),  # seal A from producer 1: releases A
            ("c", "c/ext1", "Report#0"),  # seal B from producer 1: releases B
            ("response", "Report#0", "Cache#0"),
        ]
        result = execute(physical, tuple(ordered), plan)
        (answer,) = result.sinks["r"]
        assert dict(answer)["answer"] == (
            (("campaign", "A"), ("id", "x")),
        )
        # 4 votes + 2 releases
        assert result.coordination_messages == 6

    def test_punctuation_missing_key_attributes_rejected(self):
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        plan = synthesize(flow, analyze(flow))
        fixture = FixtureSpec(
            producers={"c": 1},
            params={"Report": {"query": "campaign", "threshold": 100}},
            messages=(
                SourceMessage("c", payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("c", punctuation=(("window", "w1"),)),
            ),
        )
        physical = instantiate(flow, fixture)
        with pytest.raises(SimulationError) as err:
            list(enumerate_schedules(physical, plan=plan))
        assert "seal key attributes" in str(err.value)

    def test_request_must_identify_a_partition_under_sealing(self):
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        plan = synthesize(flow, analyze(flow))
        fixture = FixtureSpec(
            producers={"c": 1, "q": 1},
            params={"Report": {"query": "campaign", "threshold": 100}},
            messages=(
                SourceMessage("c", payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("c", punctuation=(("campaign", "A"),)),
                SourceMessage("q", payload=()),  # no campaign named
            ),
        )
        physical = instantiate(flow, fixture)
        with pytest.raises(SimulationError) as err:
            list(enumerate_schedules(physical, plan=plan))
        assert "lacks seal key attributes" in str(err.value)

    def test_record_after_own_seal_rejected(self):
        # A producer that punctuates a partition and then emits another
        # record for it breaks the punctuation guarantee.
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        plan = synthesize(flow, analyze(flow))
        fixture = FixtureSpec(
            producers={"c": 1},
            params={"Report": {"query": "campaign", "threshold": 100}},
            messages=(
                SourceMessage("c", punctuation=(("campaign", "A"),)),
                SourceMessage("c", payload=(("campaign", "A"), ("id", "x"))),
            ),
        )
        physical = instantiate(flow, fixture)
        with pytest.raises(SimulationError) as err:
            list(enumerate_schedules(physical, plan=plan))
        assert "after the partition was sealed" in str(err.value)

    def test_stuck_partition_raises(self):
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        plan = synthesize(flow, analyze(flow))
        fixture = FixtureSpec(
            producers={"c": 1, "q": 1},
            params={"Report": {"query": "campaign", "threshold": 100}},
            messages=(
                SourceMessage("c", payload=(("campaign", "A"), ("id", "x"))),
                # no punctuation for campaign A
            ),
        )
        physical = instantiate(flow, fixture)
        with pytest.raises(SimulationError) as err:
            list(enumerate_schedules(physical, plan=plan))
        assert "stuck partition" in str(err.value)


class TestClassify:
    def test_poor_race_flags_inst_and_diverge(self):
        flow = ad_flow(PathKind.OR, frozenset({"id"}), gossip=False)
        physical = instantiate(flow, poor_fixture(clicks=2))
        report = classify_anomalies(physical, None, mode="exhaustive", bound=8)
        assert report.distinct_output_sets_across_runs >= 2
        assert report.instance_disagreement
        assert report.final_state_divergence
        assert report.observed_class() == "diverge"

    def test_thresh_confluent_no_flags(self):
        flow = ad_flow(PathKind.CR, None, gossip=False)
        fixture = FixtureSpec(
            producers={"c": 2},
            params={"Report": {"query": "thresh", "threshold": 1}},
            messages=tuple(
                SourceMessage("c", p, payload=(("campaign", "A"), ("id", "x")))
                for p in (0, 1, 0, 1)
            ),
        )
        physical = instantiate(flow, fixture)
        report = classify_anomalies(physical, None, mode="exhaustive", bound=10)
        assert report.distinct_output_sets_across_runs == 1
        assert not report.instance_disagreement
        assert not report.final_state_divergence

    def test_campaign_sealed_plan_no_flags(self):
        flow = ad_flow(
            PathKind.OR, frozenset({"id", "campaign"}),
            seal=frozenset({"campaign"}), gossip=False,
        )
        plan = synthesize(flow, analyze(flow))
        assert plan.entry("Report").strategy == "sealing"
        physical = instantiate(flow, campaign_fixture())
        report = classify_anomalies(physical, plan, mode="exhaustive", bound=10)
        assert report.distinct_output_sets_across_runs == 1
        assert report.observed_class() == "none"

    def test_event_count_probe(self):
        physical = instantiate(drain_flow(3), drain_fixture(3))
        assert count_deliverable_events(physical) == 3

    def test_mixed_plan_verified_per_component(self):
        # Two independent aggregators in one flow: one gets sealing, the
        # other ordering.  The sealed side must be schedule-invariant even
        # though the ordered side is allowed to vary across runs.
        sealed_comp = ComponentSpec(
            "Sealed",
            (
                PathAnnotation("click", "out", PathKind.CW),
                PathAnnotation(
                    "request", "out", PathKind.OR, frozenset({"campaign", "id"})
                ),
            ),
        )
        racy = ComponentSpec(
            "Racy",
            (
                PathAnnotation("click", "out", PathKind.CW),
                PathAnnotation("request", "out", PathKind.OR, frozenset({"id"})),
            ),
        )
        schema = frozenset({"campaign", "id"})
        flow = LogicalDataflow(
            (sealed_comp, racy),
            (
                StreamSpec("sc", None, iface("Sealed", "click", "input"), schema,
                           seal=frozenset({"campaign"})),
                StreamSpec("sq", None, iface("Sealed", "request", "input"), schema),
                StreamSpec("rc", None, iface("Racy", "click", "input"), schema),
                StreamSpec("rq", None, iface("Racy", "request", "input"), schema),
            ),
        )
        report = analyze(flow)
        plan = synthesize(flow, report)
        assert plan.entry("Sealed").strategy == "sealing"
        assert plan.entry("Racy").strategy == "ordering"
        fixture = FixtureSpec(
            params={
                "Sealed": {"runtime": "report", "query": "campaign", "threshold": 100},
                "Racy": {"runtime": "report", "query": "poor", "threshold": 2,
                         "request_port": "request"},
            },
            messages=(
                SourceMessage("sc", payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("sc", punctuation=(("campaign", "A"),)),
                SourceMessage("sq", payload=(("campaign", "A"),)),
                SourceMessage("rc", payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("rc", payload=(("campaign", "A"), ("id", "x"))),
                SourceMessage("rq", payload=()),
            ),
        )
        physical = instantiate(flow, fixture)
        observed = classify_anomalies(physical, plan, mode="exhaustive", bound=8)
        sealed_obs = observed.per_component["Sealed"]
        assert sealed_obs.distinct_outputs_across_runs == 1
        assert sealed_obs.observed_class() == "none"
        racy_obs = observed.per_component["Racy"]
        assert racy_obs.distinct_outputs_across_runs >= 2
        assert racy_obs.observed_class() == "run"

    def test_sealed_pipeline_output_is_schedule_invariant(self):
        # Punctuations forwarded through the stateless splitter vote for
        # the batch at every counter; with the sealing plan the committed
        # counts are identical under every interleaving.
        flow = wordcount_flow(seal=frozenset({"batch"}))
        plan = synthesize(flow, analyze(flow))
        assert plan.entry("Count").strategy == "sealing"
        fixture = FixtureSpec(
            multiplicity={"Count": 2},
            routing={"words": Routing(mode="partition", partition_by=("word",))},
            messages=(
                SourceMessage("tweets", payload=(("batch", 1), ("text", "a b"))),
                SourceMessage("tweets", payload=(("batch", 1), ("text", "a"))),
                SourceMessage("tweets", punctuation=(("batch", 1),)),
            ),
        )
        physical = instantiate(flow, fixture)
        events = count_deliverable_events(physical, plan)
        report = classify_anomalies(physical, plan, mode="exhaustive", bound=events)
        assert report.distinct_output_sets_across_runs == 1
        assert report.schedules > 1
        schedule = next(iter(enumerate_schedules(physical, plan=plan, bound=events)))
        result = execute(physical, schedule, plan)
        assert result.sinks["Commit.db"] == {
            (("batch", 1), ("count", 2), ("word", "a")),
            (("batch", 1), ("count", 1), ("word", "b")),
        }
