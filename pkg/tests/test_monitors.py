# ABOUTME: Tests for the trace monitors and the self-organization classifier.
# ABOUTME: Traces are small hand-built LSA runs whose values can be worked out exactly.

from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from selforg_sim.criteria import GlobalCriterion
from selforg_sim.criteria.library import PROXIMITY
from selforg_sim.lsa import LsaModel, lsa_configuration, replace_action
from selforg_sim.model import Action, ActionKind, Trace, disconnect, internal
from selforg_sim.monitors import (
    CompositeVerdict,
    EnumerationUnavailable,
    OrgClass,
    PropertyName,
    PropertyResult,
    Status,
    Verdict,
    check_boundary_monotonicity,
    check_kernel_preservation,
    check_liveness,
    check_safety,
    check_weak_liveness,
    classify,
    hierarchy_consistent,
    is_globally_stable,
    is_p_stable,
    with_result,
)

GC = GlobalCriterion(PROXIMITY)
ORDER = (PropertyName.SAFETY, PropertyName.WEAK_LIVENESS, PropertyName.LIVENESS, PropertyName.KERNEL_PRESERVATION)


def make_model():
    return LsaModel(PROXIMITY, activation="ascending")


def make_config(views, extra=None):
    positions = {1: (Fraction(0),), 2: (Fraction(1, 2),), 3: (Fraction(1, 10),)}
    positions.update(extra or {})
    return lsa_configuration({p: positions[p] for p in views}, views)


def unsettled():
    """Node 1 would swap neighbor 2 for the closer node 3."""
    return make_config({1: [2], 2: [3], 3: [1]})


def settled():
    return make_config({1: [3], 2: [3], 3: [1]})


def idle(p=1):
    return internal(p, op="idle")


def make_trace(initial, actions):
    return Trace.replay(initial, actions, make_model())


def lossy_trace():
    """Node 4 loses its closest neighbor 5; node 1 then gains less than that."""
    views = {1: [2], 2: [3], 3: [1], 4: [5, 2], 5: [2]}
    extra = {4: (Fraction(1, 5),), 5: (Fraction(1, 5),)}
    return make_trace(make_config(views, extra), [idle(), disconnect(5), replace_action(1, 2, 3)])


class TestStability:
    def test_node_with_better_candidate(self):
        assert not is_p_stable(unsettled(), 1, PROXIMITY, make_model())
        assert is_p_stable(unsettled(), 2, PROXIMITY, make_model())

    def test_globally_stable(self):
        assert not is_globally_stable(unsettled(), GC, make_model())
        assert is_globally_stable(settled(), GC, make_model())

    def test_needs_model(self):
        with pytest.raises(EnumerationUnavailable):
            is_globally_stable(settled(), GC, None)


class TestProperties:
    def test_improving_step_is_safe(self):
        t = make_trace(unsettled(), [replace_action(1, 2, 3)])
        assert check_safety(t, GC).status is Status.HOLDS

    def test_worsening_step_violates_safety(self):
        t = make_trace(settled(), [replace_action(1, 3, 2)])
        result = check_safety(t, GC)
        assert result.status is Status.VIOLATED
        assert result.witness["fragment"] == 0
        assert result.witness["begin_index"] == 0
        assert result.witness["end_index"] == 1

    def test_own_improvement_leaves_liveness_pending(self):
        views = {1: [2], 2: [3], 3: [1], 4: [2]}
        t = make_trace(make_config(views, {4: (Fraction(1, 5),)}), [replace_action(1, 2, 3)])
        assert check_weak_liveness(t, GC).status is Status.HOLDS
        result = check_liveness(t, GC)
        assert result.status is Status.PENDING
        assert result.witness == {"unsatisfied_fragments": [0], "unsatisfied_count": 1, "horizon": 1}

    def test_own_stable_begin_discharges_the_fragment(self):
        joiner = Action(ActionKind.CONNECT, 4, {"position": ["0"], "neighbors": [3]})
        t = make_trace(unsettled(), [idle(1), disconnect(2), idle(3), joiner])
        result = check_liveness(t, GC)
        assert result.status is Status.PENDING
        assert result.witness["unsatisfied_fragments"] == [2]

    def test_liveness_pending_when_churn_loses_more_than_is_regained(self):
        t = lossy_trace()
        assert check_weak_liveness(t, GC).status is Status.HOLDS
        result = check_liveness(t, GC)
        assert result.status is Status.PENDING
        assert result.witness == {"unsatisfied_fragments": [0, 1], "unsatisfied_count": 2, "horizon": 3}

    def test_tiny_exact_gain_counts(self):
        near = Fraction(1, 2) - Fraction(1, 10**15)
        views = {1: [2], 2: [3], 3: [1], 4: [2], 5: [1]}
        extra = {3: (near,), 4: (Fraction(1, 5),), 5: (Fraction(9, 10),)}
        t = make_trace(make_config(views, extra), [idle(), disconnect(5), replace_action(1, 2, 3)])
        assert check_liveness(t, GC).witness["unsatisfied_fragments"] == [1]

    def test_weak_liveness_pending_without_progress(self):
        t = make_trace(unsettled(), [idle(2)])
        assert check_weak_liveness(t, GC).status is Status.PENDING

    def test_liveness_needs_model(self):
        t = Trace.replay(settled(), [internal(1)])
        with pytest.raises(EnumerationUnavailable):
            check_liveness(t, GC)


class TestKernelPreservation:
    def setup_method(self):
        pair = make_config({1: [2], 2: [1]})
        self.trace = make_trace(pair, [idle(), disconnect(2), idle()])

    def test_empty_kernel_holds_vacuously(self):
        result = check_kernel_preservation(self.trace, GC)
        assert result.status is Status.HOLDS
        assert result.witness == {"empty_kernel_boundaries": [0]}

    def test_empty_kernel_fails_under_kernel_based_demon(self):
        result = check_kernel_preservation(self.trace, GC, demon_class="KernelBased")
        assert result.status is Status.VIOLATED
        assert result.witness == {"boundary": 0, "reason": "empty kernel"}

    def test_departure_drops_boundary_value(self):
        assert check_boundary_monotonicity(self.trace, GC).status is Status.VIOLATED


class TestClassify:
    def test_settling_run_is_strong(self):
        verdict = classify(make_trace(unsettled(), [replace_action(1, 2, 3)]), GC)
        assert verdict.org_class is OrgClass.STRONG
        assert verdict.pending == ()
        assert verdict.criterion == "proximity"

    def test_unsafe_run_is_none(self):
        verdict = classify(make_trace(settled(), [replace_action(1, 3, 2)]), GC)
        assert verdict.org_class is OrgClass.NONE

    def test_pending_liveness_is_weak(self):
        verdict = classify(lossy_trace(), GC)
        assert verdict.org_class is OrgClass.WEAK
        assert verdict.pending == ("Liveness",)
        assert hierarchy_consistent(verdict)

    def test_kernel_based_empty_kernel_is_self(self):
        t = make_trace(make_config({1: [2], 2: [1]}), [idle(), disconnect(2), idle()])
        assert classify(t, GC).org_class is OrgClass.STRONG
        assert classify(t, GC, demon_class="KernelBased").org_class is OrgClass.SELF

    def test_boundary_result_is_an_extra(self):
        t = make_trace(make_config({1: [2], 2: [1]}), [idle(), disconnect(2), idle()])
        verdict = classify(t, GC)
        assert verdict.result(PropertyName.BOUNDARY_MONOTONICITY).status is Status.VIOLATED
        assert [r.property for r in verdict.results] == [
            PropertyName.SAFETY,
            PropertyName.WEAK_LIVENESS,
            PropertyName.LIVENESS,
            PropertyName.KERNEL_PRESERVATION,
        ]


class TestVerdicts:
    def make_verdict(self, org_class, liveness=Status.HOLDS):
        results = (
            PropertyResult(PropertyName.SAFETY, Status.HOLDS),
            PropertyResult(PropertyName.WEAK_LIVENESS, Status.HOLDS),
            PropertyResult(PropertyName.LIVENESS, liveness),
            PropertyResult(PropertyName.KERNEL_PRESERVATION, Status.HOLDS),
        )
        return Verdict(org_class, results, "proximity")

    def test_skipped_level_is_inconsistent(self):
        assert not hierarchy_consistent(self.make_verdict(OrgClass.STRONG, Status.PENDING))
        assert hierarchy_consistent(self.make_verdict(OrgClass.WEAK, Status.PENDING))

    def test_composite_takes_weakest_part(self):
        v = CompositeVerdict(self.make_verdict(OrgClass.STRONG), {"a": self.make_verdict(OrgClass.WEAK)})
        assert v.org_class is OrgClass.WEAK
        assert v.to_dict()["class"] == "Weak"

    def test_rank_order(self):
        ranks = [k.rank for k in (OrgClass.NONE, OrgClass.WEAK, OrgClass.SELF, OrgClass.STRONG)]
        assert ranks == [0, 1, 2, 3]

    def test_missing_result(self):
        with pytest.raises(KeyError):
            self.make_verdict(OrgClass.STRONG).result(PropertyName.BOUNDARY_MONOTONICITY)

    def test_with_result_recomputes_class(self):
        verdict = self.make_verdict(OrgClass.STRONG)
        demoted = with_result(verdict, PropertyResult(PropertyName.LIVENESS, Status.PENDING, {"reason": "x"}))
        assert demoted.org_class is OrgClass.WEAK
        assert demoted.pending == ("Liveness",)
        assert demoted.result(PropertyName.LIVENESS).witness == {"reason": "x"}
        assert verdict.org_class is OrgClass.STRONG

    @given(st.lists(st.sampled_from(list(Status)), min_size=4, max_size=4))
    def test_recomputed_verdicts_are_consistent(self, statuses):
        verdict = self.make_verdict(OrgClass.STRONG)
        for name, status in zip(ORDER, statuses):
            verdict = with_result(verdict, PropertyResult(name, status))
        assert hierarchy_consistent(verdict)
        if all(s is Status.HOLDS for s in statuses):
            assert verdict.org_class is OrgClass.STRONG

