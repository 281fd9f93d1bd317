# ABOUTME: Tests for churn schedule generation, schedule files and schedule checks.
# ABOUTME: Also covers the online adversarial demon and the churn rate measure.

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selforg_sim.demons import (
    AdversarialDemon,
    ChurnEvent,
    ChurnSchedule,
    DemonClass,
    DemonError,
    DemonSpec,
    InfeasibleSpec,
    check_schedule,
    choose_kernel,
    churn_rate,
    generate_schedule,
    keeps_kernel,
    read_schedule,
    validate_schedule,
    write_schedule,
)
from selforg_sim.model import ActionKind, Configuration, Trace, apply_action, connect, disconnect, internal


def make_spec(demon_class=DemonClass.ARBITRARY, **kwargs):
    values = {"rng_seed": 1, "horizon": 100, "spacing": 5}
    values.update(kwargs)
    return DemonSpec(demon_class, **values)


def make_config(n=3):
    return Configuration(nodes={p: None for p in range(1, n + 1)})


def make_graph_config(n=3):
    nodes = {p: None for p in range(1, n + 1)}
    return Configuration(nodes=nodes, graph={p: frozenset(q for q in nodes if q != p) for p in nodes})


class TestDemonSpec:
    def test_bounded_needs_bound(self):
        with pytest.raises(InfeasibleSpec):
            DemonSpec(DemonClass.BOUNDED)

    def test_kernel_based_needs_size(self):
        with pytest.raises(InfeasibleSpec):
            DemonSpec(DemonClass.KERNEL_BASED, kernel_min_size=0)

    def test_class_from_string(self):
        assert DemonSpec("Finite").demon_class is DemonClass.FINITE

    def test_zero_spacing(self):
        with pytest.raises(InfeasibleSpec):
            make_spec(spacing=0)


class TestGenerateSchedule:
    def test_bounded_count(self):
        s = generate_schedule(make_spec(DemonClass.BOUNDED, bound=3), 5)
        assert len(s) == 3
        assert s.bound == 3
        assert all(e.index <= 50 for e in s.events)

    def test_bounded_zero_is_empty(self):
        assert len(generate_schedule(make_spec(DemonClass.BOUNDED, bound=0), 5)) == 0

    def test_same_seed_same_schedule(self):
        spec = make_spec(DemonClass.ARBITRARY)
        assert generate_schedule(spec, 6) == generate_schedule(spec, 6)

    def test_different_seed_differs(self):
        a = generate_schedule(make_spec(rng_seed=1), 6)
        b = generate_schedule(make_spec(rng_seed=2), 6)
        assert a != b

    def test_arbitrary_fills_every_slot(self):
        s = generate_schedule(make_spec(DemonClass.ARBITRARY), 6)
        assert [e.index for e in s.events] == list(range(5, 101, 5))

    def test_kernel_larger_than_population(self):
        with pytest.raises(InfeasibleSpec):
            generate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=6), 5)

    def test_kernel_based_protects_enough(self):
        s = generate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=2), 5)
        for e in s.events:
            assert len(e.protected) >= 2
            if e.kind is ActionKind.DISCONNECT:
                assert e.target not in e.protected

    def test_kernel_is_fixed_for_the_run(self):
        s = generate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=2, horizon=500), 6)
        assert len(s) > 0
        assert len({e.protected for e in s.events}) == 1

    def test_kernel_starts_with_never_disconnect(self):
        s = generate_schedule(
            make_spec(DemonClass.KERNEL_BASED, kernel_min_size=3, horizon=500), 6, never_disconnect=frozenset({5})
        )
        assert all(5 in e.protected for e in s.events)

    def test_adversarial_schedule_is_empty(self):
        assert generate_schedule(make_spec(DemonClass.ADVERSARIAL), 4).events == ()

    def test_empty_population(self):
        with pytest.raises(InfeasibleSpec):
            generate_schedule(make_spec(), 0)

    def test_never_disconnect(self):
        s = generate_schedule(make_spec(horizon=500), 4, never_disconnect=frozenset({1}))
        assert not any(e.kind is ActionKind.DISCONNECT and e.target == 1 for e in s.events)

    @settings(max_examples=50)
    @given(
        st.sampled_from([DemonClass.BOUNDED, DemonClass.FINITE, DemonClass.KERNEL_BASED, DemonClass.ARBITRARY]),
        st.integers(min_value=0, max_value=1000),
        st.integers(min_value=2, max_value=10),
    )
    def test_generated_schedules_pass_their_own_check(self, demon_class, seed, nodes):
        spec = make_spec(demon_class, rng_seed=seed, bound=4, kernel_min_size=2)
        s = generate_schedule(spec, nodes)
        assert check_schedule(spec, s, nodes) == []


class TestCheckSchedule:
    def test_class_mismatch(self):
        s = ChurnSchedule(DemonClass.FINITE)
        problems = check_schedule(make_spec(DemonClass.ARBITRARY), s)
        assert problems == ["schedule is for a Finite demon, expected Arbitrary"]

    def test_bound_exceeded(self):
        events = (ChurnEvent(5, ActionKind.CONNECT, 4), ChurnEvent(10, ActionKind.CONNECT, 5))
        s = ChurnSchedule(DemonClass.BOUNDED, events, 1)
        problems = check_schedule(make_spec(DemonClass.BOUNDED, bound=1), s)
        assert any("exceed the bound" in p for p in problems)

    def test_out_of_order_and_late(self):
        events = (ChurnEvent(200, ActionKind.CONNECT, 4), ChurnEvent(5, ActionKind.CONNECT, 5))
        problems = check_schedule(make_spec(), ChurnSchedule(DemonClass.ARBITRARY, events))
        assert "churn events are not in index order" in problems
        assert any("after the horizon" in p for p in problems)

    def test_disconnect_of_inactive_node(self):
        events = (ChurnEvent(5, ActionKind.DISCONNECT, 9),)
        problems = check_schedule(make_spec(), ChurnSchedule(DemonClass.ARBITRARY, events), 3)
        assert problems == ["event at 5 disconnects node 9, which is not active"]

    def test_protected_disconnect(self):
        events = (ChurnEvent(5, ActionKind.DISCONNECT, 1, (1, 2)),)
        spec = make_spec(DemonClass.KERNEL_BASED, kernel_min_size=2)
        problems = check_schedule(spec, ChurnSchedule(DemonClass.KERNEL_BASED, events), 3)
        assert problems == ["event at 5 disconnects protected node 1"]


class TestScheduleFiles:
    def test_round_trip(self, tmp_path):
        s = generate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=2), 5)
        path = tmp_path / "schedule.jsonl"
        write_schedule(s, path)
        assert read_schedule(path) == s

    def test_missing_header(self, tmp_path):
        path = tmp_path / "schedule.jsonl"
        path.write_text('{"type": "churn", "index": 5, "kind": "Connect", "target": 4}\n')
        with pytest.raises(DemonError, match="header"):
            read_schedule(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(DemonError):
            read_schedule(tmp_path / "missing.jsonl")


class TestTraceChecks:
    def test_churn_rate(self):
        trace = Trace.replay(make_config(), [connect(4)])
        assert churn_rate(trace) == 0.25

    def test_churn_rate_of_empty_trace(self):
        assert churn_rate(Trace(make_config())) == 0.0

    def test_bounded_trace_over_budget(self):
        trace = Trace.replay(make_config(), [connect(4), internal(1), disconnect(4)])
        assert not validate_schedule(make_spec(DemonClass.BOUNDED, bound=1), ChurnSchedule(DemonClass.BOUNDED), trace)
        assert validate_schedule(make_spec(DemonClass.BOUNDED, bound=2), ChurnSchedule(DemonClass.BOUNDED), trace)


class TestKernel:
    def test_choose_kernel_prefers_never_disconnect(self):
        kernel = choose_kernel(3, 6, frozenset({4, 9}), random.Random(1))
        assert len(kernel) == 3
        assert 4 in kernel
        assert 9 not in kernel
        assert list(kernel) == sorted(kernel)

    def test_choose_kernel_is_seeded(self):
        assert choose_kernel(2, 8, frozenset(), random.Random(3)) == choose_kernel(2, 8, frozenset(), random.Random(3))

    def test_isolated_joiner_keeps_kernel(self):
        c = make_graph_config()
        assert keeps_kernel(c, apply_action(c, connect(4)), (1, 2, 3))

    def test_departure_changes_neighbors(self):
        c = make_graph_config()
        after = apply_action(c, disconnect(3))
        assert not keeps_kernel(c, after, (1, 2))
        assert not keeps_kernel(c, after, (3,))

    def test_small_kernel_breaks_promise(self):
        trace = Trace.replay(make_graph_config(), [internal(1), disconnect(3), internal(1)])
        spec = make_spec(DemonClass.KERNEL_BASED, kernel_min_size=1)
        assert not validate_schedule(spec, ChurnSchedule(DemonClass.KERNEL_BASED), trace)

    def test_kernel_of_required_size_keeps_promise(self):
        trace = Trace.replay(make_graph_config(), [internal(1), connect(4), internal(1)])
        s = ChurnSchedule(DemonClass.KERNEL_BASED)
        assert validate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=3), s, trace)
        assert not validate_schedule(make_spec(DemonClass.KERNEL_BASED, kernel_min_size=4), s, trace)


class TestAdversarialDemon:
    def test_intercepts_only_stabilizing_blocks(self):
        demon = AdversarialDemon(stable=lambda c: c.time >= 1, perturb=lambda c, fresh, prev: [connect(fresh)])
        c = make_config()
        assert demon.intercept(c.evolve(time=-5), [internal(1)], 0, 9) is None
        injected = demon.intercept(c, [internal(1)], 3, 9)
        assert [a.actor for a in injected] == [9]
        assert demon.last_injected == 9
        assert demon.schedule.events == (ChurnEvent(3, ActionKind.CONNECT, 9),)

    def test_quiescent_stable_configuration_is_recorded(self):
        demon = AdversarialDemon(stable=lambda c: True, perturb=lambda c, fresh, prev: [])
        assert demon.on_quiescent(make_config(), 0, 9) is None
        assert demon.stable_reached
