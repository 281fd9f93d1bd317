# ABOUTME: Tests for eventual leader election: trust merging, query rounds and held-back responses.
# ABOUTME: Messages are delivered one at a time so every intermediate state can be checked.

import random
from dataclasses import replace

import pytest

from selforg_sim.model import Action, ActionKind, SimulationError, apply_action
from selforg_sim.protocols.leader import (
    LeaderModel,
    LeaderNodeState,
    leader_configuration,
    leader_on_receive_trust,
    leader_query_leader,
)

UNIVERSE = frozenset({1, 2, 3})


def deliver(c, model, src, dst):
    body = c.head(src, dst)["body"]
    return apply_action(c, Action(ActionKind.IO, dst, {"from": src, "message": body}), model)


def start_round(c, model, p):
    event = next(e for e in model.local_events(c) if e.actor == p)
    for a in event.build(c):
        c = apply_action(c, a, model)
    return c


def run_rounds(c, model, steps, seed):
    rng = random.Random(seed)
    for _ in range(steps):
        event = rng.choice(model.ready_events(c))
        for a in event.build(c):
            c = apply_action(c, a, model)
    return c


class TestTrustMerge:
    def test_newer_date_wins(self):
        state = LeaderNodeState(frozenset({1, 2}), date=0)
        merged = leader_on_receive_trust(state, frozenset({3}), 2, UNIVERSE)
        assert merged.trust == frozenset({3})
        assert merged.date == 2

    def test_older_date_ignored(self):
        state = LeaderNodeState(frozenset({1, 2}), date=3)
        assert leader_on_receive_trust(state, frozenset({3}), 1, UNIVERSE) == state

    def test_equal_dates_intersect(self):
        state = LeaderNodeState(frozenset({1, 2}), date=1)
        assert leader_on_receive_trust(state, frozenset({2, 3}), 1, UNIVERSE).trust == frozenset({2})

    def test_empty_intersection_opens_new_epoch(self):
        state = LeaderNodeState(frozenset({2}), date=0)
        merged = leader_on_receive_trust(state, frozenset({3}), 0, UNIVERSE)
        assert merged.trust == UNIVERSE
        assert merged.date == 1


class TestLeaderQuery:
    def test_untouched_trust_elects_self(self):
        assert leader_query_leader(LeaderNodeState(UNIVERSE), 2, UNIVERSE) == 2

    def test_smallest_trusted(self):
        assert leader_query_leader(LeaderNodeState(frozenset({3, 2})), 1, UNIVERSE) == 2


class TestStableSet:
    def test_default_is_smallest_ids(self):
        model = LeaderModel(2, UNIVERSE)
        assert model.stable == frozenset({1, 2})
        assert model.protected_ids() == frozenset({1, 2})

    def test_size_must_match_alpha(self):
        with pytest.raises(SimulationError):
            LeaderModel(2, UNIVERSE, frozenset({1}))


class TestRounds:
    def test_round_queries_every_node_including_self(self):
        model = LeaderModel(1, UNIVERSE)
        c = start_round(leader_configuration(3, UNIVERSE), model, 1)
        assert c.nodes[1].responders == ()
        for dst in (1, 2, 3):
            assert c.head(1, dst)["body"] == {"type": "query", "round": 1}

    def test_stable_response_completes_round(self):
        model = LeaderModel(1, UNIVERSE, frozenset({2}))
        c = start_round(leader_configuration(3, UNIVERSE), model, 1)
        c = deliver(c, model, 1, 2)
        assert c.head(2, 1)["body"] == {"type": "response", "round": 1}
        c = deliver(c, model, 2, 1)
        assert not c.nodes[1].querying
        assert c.nodes[1].trust == frozenset({2})
        assert model.leader(c, 1) == 2
        assert c.head(1, 2)["body"] == {"type": "trust", "trust": [2], "date": 0}

    def test_other_responses_wait_for_the_stable_set(self):
        model = LeaderModel(1, UNIVERSE, frozenset({2}))
        c = start_round(leader_configuration(3, UNIVERSE), model, 1)
        c = deliver(c, model, 1, 1)
        c = deliver(c, model, 1, 3)
        assert model.deliverable(c) == [(1, 2)]
        c = deliver(c, model, 1, 2)
        c = deliver(c, model, 2, 1)
        assert (3, 1) in model.deliverable(c)
        assert c.nodes[1].trust == frozenset({2})

    def test_stale_response_ignored(self):
        model = LeaderModel(3, UNIVERSE)
        c = start_round(leader_configuration(3, UNIVERSE), model, 1)
        c = c.with_state(1, replace(c.nodes[1], round=2))
        c = deliver(c, model, 1, 2)
        c = deliver(c, model, 2, 1)
        assert c.nodes[1].responders == ()

    def test_querying_node_starts_no_round(self):
        model = LeaderModel(2, UNIVERSE)
        c = start_round(leader_configuration(3, UNIVERSE), model, 1)
        assert [e.actor for e in model.local_events(c)] == [2, 3]

    @pytest.mark.parametrize("seed", range(5))
    def test_every_node_settles_on_the_stable_leader(self, seed):
        universe = frozenset(range(1, 6))
        model = LeaderModel(2, universe, frozenset({3, 4}))
        c = run_rounds(leader_configuration(4, universe), model, 600, seed)
        assert {model.leader(c, p) for p in c.nodes} == {3}
        assert all(c.nodes[p].trust == frozenset({3, 4}) for p in c.nodes)


class TestState:
    def test_round_trip(self):
        state = LeaderNodeState(frozenset({1, 3}), 2, 4, (1, 3))
        assert LeaderModel(1, UNIVERSE).state_from_dict(state.to_dict()) == state

    def test_fresh_node_trusts_universe(self):
        assert LeaderModel(1, UNIVERSE).initial_state(4, {}).trust == UNIVERSE
