# ABOUTME: Tests for local and global criteria, kernels, composition and order audits.
# ABOUTME: Values are exact Fractions wherever the criterion allows it.

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from selforg_sim.criteria import (
    CRITERIA,
    CompositeCriterion,
    GlobalCriterion,
    GlobalValue,
    NotIndependent,
    UnknownCriterion,
    audit_order,
    check_independence,
    compose_monotonic,
    ker_d,
    ker_t,
    resolve_criterion,
)
from selforg_sim.criteria.base import QueryNotStarted, mean, scalar_leq
from selforg_sim.criteria.library import (
    PROXIMITY,
    DimensionMismatch,
    LeaderValue,
    LengthMismatch,
    OrderResult,
    exact_sqrt,
    gamma_proximity,
    gamma_query,
    leader_leq,
    leader_order,
    pastry_f,
    routing_score,
    shared_prefix,
    to_digits,
    torus_distance,
)
from selforg_sim.lsa import lsa_configuration
from selforg_sim.model import Configuration
from selforg_sim.protocols.query import QueryNodeState


def make_pair(a="0", b="1/2"):
    return lsa_configuration({1: (Fraction(a),), 2: (Fraction(b),)}, {1: [2], 2: [1]})


class TestDistances:
    def test_torus_wraps(self):
        assert torus_distance((Fraction(0),), (Fraction(9, 10),)) == Fraction(1, 10)

    def test_torus_two_dimensions(self):
        a = (Fraction(0), Fraction(0))
        b = (Fraction(3, 10), Fraction(4, 10))
        assert torus_distance(a, b) == Fraction(1, 2)

    def test_torus_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            torus_distance((0,), (0, 0))

    def test_exact_sqrt(self):
        assert exact_sqrt(Fraction(1, 4)) == Fraction(1, 2)
        assert isinstance(exact_sqrt(Fraction(2)), float)


class TestProximity:
    def test_pair_value(self):
        assert gamma_proximity(make_pair(), 1, 2) == Fraction(2, 3)

    def test_departed_neighbor_scores_zero(self):
        c = lsa_configuration({1: (Fraction(0),)}, {1: [5]})
        assert gamma_proximity(c, 1, 5) == 0
        assert PROXIMITY.aggregate_node(c, 1) == 0

    def test_node_without_neighbors_scores_zero(self):
        c = lsa_configuration({1: (Fraction(0),)}, {})
        assert PROXIMITY.aggregate_node(c, 1) == 0

    def test_global_total(self):
        gc = GlobalCriterion(PROXIMITY)
        value = gc.evaluate(make_pair())
        assert value.domain == frozenset({1, 2})
        assert gc.total(value) == Fraction(4, 3)

    def test_closer_is_better(self):
        gc = GlobalCriterion(PROXIMITY)
        far = gc.evaluate(make_pair("0", "1/2"))
        near = gc.evaluate(make_pair("0", "1/10"))
        assert gc.precedes(far, near)
        assert not gc.precedes(near, far)

    def test_comparison_uses_common_domain(self):
        gc = GlobalCriterion(PROXIMITY)
        value = gc.evaluate(make_pair())
        assert gc.leq(value.restrict(frozenset({1})), value)
        assert gc.leq(value, value.restrict(frozenset({1})))


class TestPastryDigits:
    def test_to_digits(self):
        assert to_digits(5, 1, 4) == "0101"
        assert to_digits(255, 2, 4) == "3333"

    def test_shared_prefix(self):
        assert shared_prefix("0123", "0132") == 2
        with pytest.raises(LengthMismatch):
            shared_prefix("01", "012")

    def test_prefix_fitness(self):
        assert pastry_f(2, 3, "0123", "0132") == 1
        assert pastry_f(2, 2, "0123", "0132") == 0
        assert pastry_f(4, 0, "0123", "0132") == 0

    def test_routing_score(self):
        assert routing_score(0, Fraction(1)) == 0
        assert routing_score(1, Fraction(0)) == 1
        assert routing_score(1, Fraction(1, 2)) == 1
        assert routing_score(1, Fraction(4)) == Fraction(1, 4)


class TestLeaderOrder:
    def test_smaller_trust_is_better(self):
        a = LeaderValue(frozenset({1, 2, 3}), 1)
        b = LeaderValue(frozenset({1}), 0)
        assert leader_leq(a, b)
        assert leader_order(a, b) is OrderResult.LE

    def test_newer_date_is_better(self):
        a = LeaderValue(frozenset({1}), 0)
        b = LeaderValue(frozenset({2}), 1)
        assert leader_leq(a, b)
        assert not leader_leq(b, a)
        assert leader_order(b, a) is OrderResult.GT

    def test_audit_reports_reflexive(self):
        values = [LeaderValue(frozenset({1, 2}), 0), LeaderValue(frozenset({1}), 0), LeaderValue(frozenset({2}), 1)]
        audit = audit_order(values, leader_leq)
        assert audit.reflexive


class TestQueryCriterion:
    def test_not_started(self):
        c = Configuration(nodes={1: QueryNodeState()})
        with pytest.raises(QueryNotStarted):
            gamma_query(c, 1)

    def test_partial_reply(self):
        state = QueryNodeState(qid=1, target=frozenset({1, 2, 3}), replied=frozenset({1}))
        assert gamma_query(Configuration(nodes={1: state}), 1) == Fraction(1, 3)

    def test_failed_targets_are_excused(self):
        state = QueryNodeState(
            qid=1,
            target=frozenset({1, 2, 3}),
            replied=frozenset({1, 2}),
            no_response_but_failed=frozenset({3}),
        )
        assert gamma_query(Configuration(nodes={1: state}), 1) == 1


class TestKernels:
    def test_topological_kernel(self):
        g1 = {1: frozenset({2}), 2: frozenset({1})}
        g2 = {1: frozenset({2}), 2: frozenset({1, 3}), 3: frozenset({2})}
        assert ker_t(g1, g2) == frozenset({1})

    def test_data_kernel(self):
        c1 = Configuration(nodes={1: None, 2: None}, data={1: frozenset({"a"}), 2: frozenset({"b"})})
        c2 = Configuration(nodes={1: None}, data={1: frozenset({"a", "c"})})
        assert ker_d(c1, c2) == frozenset({"a"})


class TestComposition:
    def test_disjoint_footprints_are_independent(self):
        routing = GlobalCriterion(CRITERIA["pastry-routing"])
        leaf = GlobalCriterion(CRITERIA["pastry-leaf"])
        assert check_independence(routing, leaf)

    def test_criterion_is_not_independent_of_itself(self):
        gc = GlobalCriterion(PROXIMITY)
        with pytest.raises(NotIndependent):
            compose_monotonic([gc, gc])

    def test_resolve_composite(self):
        gc = resolve_criterion(["pastry-routing", "pastry-leaf"], "Pastry")
        assert isinstance(gc, CompositeCriterion)
        assert gc.name == "pastry-routing+pastry-leaf"

    def test_resolve_single(self):
        assert isinstance(resolve_criterion("proximity", "LSA"), GlobalCriterion)

    def test_resolve_rejects_wrong_protocol(self):
        with pytest.raises(UnknownCriterion):
            resolve_criterion("can", "LSA")

    def test_resolve_rejects_unknown_name(self):
        with pytest.raises(UnknownCriterion):
            resolve_criterion("latency")

    def test_composite_needs_one_strict_part(self):
        gc = compose_monotonic([GlobalCriterion(PROXIMITY), GlobalCriterion(CRITERIA["query"])])

        def value(a, b):
            return (GlobalValue(frozenset({1}), {1: a}), GlobalValue(frozenset({1}), {1: b}))

        x = value(Fraction(1, 2), Fraction(1, 2))
        assert gc.precedes(x, value(Fraction(2, 3), Fraction(1, 2)))
        assert not gc.precedes(x, value(Fraction(2, 3), Fraction(1, 3)))
        assert not gc.precedes(x, x)


class TestOrderLaws:
    def test_mean_of_nothing(self):
        assert mean([]) == 0

    @given(st.lists(st.fractions(min_value=0, max_value=10), max_size=8))
    def test_scalar_order_is_total(self, values):
        audit = audit_order(values, scalar_leq)
        assert audit.reflexive
        assert audit.antisymmetric
        assert audit.transitive
        assert audit.total
