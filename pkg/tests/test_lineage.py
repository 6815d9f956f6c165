from __future__ import annotations

import pytest

from flowguard.lineage import (
    WILDCARD,
    InjectiveFD,
    QueryDescriptor,
    compatible,
    derive_subscript,
    injective_fd,
)


def fd(src, dst, via="declared"):
    return InjectiveFD(frozenset(src), frozenset(dst), via)


class TestInjectiveFD:
    def test_reflexive_on_equal_sets(self):
        assert injective_fd((), {"a", "b"}, {"a", "b"})
        assert injective_fd((), {"x"}, {"x"})

    def test_projection_is_not_injective(self):
        # Seeing every (a, b) pair does not bound the a values alone.
        assert not injective_fd((), {"a", "b"}, {"a"})

    def test_identity_chain_through_projections(self):
        # A column carried unchanged through a stack of projections stays
        # injectively determined by its origin.
        chain = (
            fd({"R.a"}, {"T2.a"}, via="identity"),
            fd({"T2.a"}, {"T1.a"}, via="identity"),
            fd({"T1.a"}, {"S.a"}, via="identity"),
        )
        assert injective_fd(chain, {"R.a"}, {"S.a"})
        assert not injective_fd(chain, {"S.a"}, {"R.a"})

    def test_declared_facts_do_not_generalize(self):
        # company determines its ticker symbol injectively; nothing links
        # company to its headquarters city.
        facts = (fd({"company"}, {"symbol"}),)
        assert injective_fd(facts, {"company"}, {"symbol"})
        assert not injective_fd(facts, {"company"}, {"city"})

    def test_transitive(self):
        facts = (fd({"a"}, {"b"}), fd({"b"}, {"c"}))
        assert injective_fd(facts, {"a"}, {"c"})

    def test_monotone_in_edge_set(self):
        base = (fd({"a"}, {"b"}),)
        more = base + (fd({"b"}, {"c"}), fd({"x"}, {"y"}))
        assert injective_fd(base, {"a"}, {"b"})
        assert injective_fd(more, {"a"}, {"b"})

    def test_rejects_empty_endpoint(self):
        with pytest.raises(ValueError):
            InjectiveFD(frozenset(), frozenset({"a"}))


class TestCompatible:
    def test_partition_superset_of_seal_key(self):
        assert compatible({"id", "window"}, {"window"})
        assert compatible({"id", "campaign"}, {"campaign"})

    def test_disjoint_without_facts(self):
        assert not compatible({"id"}, {"campaign"})

    def test_identity_on_equal_sets(self):
        assert compatible({"g"}, {"g"})
        assert compatible({"a", "b"}, {"a", "b"})

    def test_wildcard_partition_never_compatible(self):
        assert not compatible(WILDCARD, {"campaign"})

    def test_declared_fact_bridges_names(self):
        facts = (fd({"campaign"}, {"cid"}),)
        assert compatible({"cid", "id"}, {"campaign"}, facts)

    def test_monotone_in_partition(self):
        facts = (fd({"k"}, {"g"}),)
        assert compatible({"g"}, {"k"}, facts)
        assert compatible({"g", "extra"}, {"k"}, facts)


class TestDeriveSubscript:
    def test_aggregation_uses_grouping_columns(self):
        q = QueryDescriptor("aggregation", grouping=frozenset({"window", "id"}))
        assert derive_subscript(q) == {"window", "id"}

    def test_antijoin_uses_theta_columns(self):
        q = QueryDescriptor("antijoin", theta=frozenset({"x"}))
        assert derive_subscript(q) == {"x"}

    def test_other_statements_get_wildcard(self):
        assert derive_subscript(QueryDescriptor("other")) is WILDCARD

    def test_descriptor_invariants(self):
        with pytest.raises(ValueError):
            QueryDescriptor("aggregation")
        with pytest.raises(ValueError):
            QueryDescriptor("antijoin")
