# ABOUTME: Local self-organizing algorithm: nodes swap a neighbor for a better two-hop candidate.
# ABOUTME: Includes the protocol model, round runner and the perturbation used by the adversarial demo.

import logging
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from fractions import Fraction
from typing import Any

import networkx as nx

from selforg_sim.criteria.base import LocalCriterion
from selforg_sim.criteria.library import PROXIMITY
from selforg_sim.model import (
    Action,
    ActionKind,
    Configuration,
    MalformedPayload,
    NodeId,
    ProtocolModel,
    ReadyEvent,
    apply_action,
    internal,
    parse_fraction,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LsaNodeState:
    position: tuple[Fraction, ...]

    def to_dict(self) -> dict:
        return {"position": [f"{x.numerator}/{x.denominator}" for x in self.position]}

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LsaNodeState":
        return cls(tuple(parse_fraction(x) for x in raw["position"]))


def lsa_candidates(c: Configuration, p: NodeId, crit: LocalCriterion = PROXIMITY) -> list[tuple[Any, NodeId, NodeId]]:
    """Every improving replacement (gain, q, r): drop neighbor q for q's neighbor r."""
    if p not in c.nodes:
        return []
    view = c.neighbors(p)
    found = []
    for q in sorted(view):
        if q not in c.nodes:
            continue
        gq = crit.eval(c, p, q)
        for r in sorted(c.neighbors(q)):
            if r == p or r in view or r not in c.nodes:
                continue
            gr = crit.eval(c, p, r)
            if gr > gq:
                found.append((gr - gq, q, r))
    return found


def lsa_rule_R(c: Configuration, p: NodeId, crit: LocalCriterion = PROXIMITY) -> tuple[NodeId, NodeId] | None:
    """The replacement node p would make: largest gain, then lowest q, then lowest r."""
    found = lsa_candidates(c, p, crit)
    if not found:
        return None
    _gain, q, r = min(found, key=lambda item: (-item[0], item[1], item[2]))
    return q, r


def replace_action(p: NodeId, q: NodeId, r: NodeId) -> Action:
    return internal(p, op="lsa_replace", drop=q, add=r)


class LsaModel(ProtocolModel):
    """LSA as a transition system over directed neighbor views."""

    name = "LSA"

    def __init__(self, criterion: LocalCriterion = PROXIMITY, activation: str = "random", dimensions: int = 1):
        self.criterion = criterion
        self.activation = activation
        self.dimensions = dimensions

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> LsaNodeState:
        position = payload.get("position")
        if position is None:
            raise MalformedPayload(f"Connect of LSA node {node} needs a position")
        return LsaNodeState(tuple(parse_fraction(x) for x in position))

    def state_from_dict(self, raw: Mapping[str, Any]) -> LsaNodeState:
        return LsaNodeState.from_dict(raw)

    def on_connect(self, c: Configuration, a: Action) -> Configuration:
        view = frozenset(int(q) for q in a.payload.get("neighbors", ()))
        if not view and a.payload.get("bootstrap") is not None:
            view = frozenset({int(a.payload["bootstrap"])})
        return c.with_state(a.actor, c.nodes[a.actor], view - {a.actor})

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        if a.payload.get("op") != "lsa_replace":
            return c
        q, r = int(a.payload["drop"]), int(a.payload["add"])
        view = c.neighbors(a.actor)
        if q not in view or r in view or r == a.actor:
            raise MalformedPayload(f"Replacement {q}->{r} does not fit the view of node {a.actor}")
        return c.with_state(a.actor, c.nodes[a.actor], (view - {q}) | {r})

    def local_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        for p in sorted(c.nodes):
            choice = lsa_rule_R(c, p, self.criterion)
            if choice is None:
                continue
            action = replace_action(p, *choice)
            events.append(ReadyEvent(("local", p), p, lambda _c, a=action: [a]))
            if self.activation == "ascending":
                break
        return events

    def enabled_by_actor(self, c: Configuration) -> dict[NodeId, list[Action]]:
        grouped = {}
        for p in sorted(c.nodes):
            actions = [replace_action(p, q, r) for _gain, q, r in lsa_candidates(c, p, self.criterion)]
            if actions:
                grouped[p] = actions
        return grouped

    def connect_payload(self, c: Configuration, node: NodeId, rng: random.Random) -> dict:
        payload = {"position": [str(x) for x in random_position(rng, self.dimensions)]}
        active = sorted(c.active)
        if active:
            payload["neighbors"] = [rng.choice(active)]
        return payload

    def perturbation(self, c: Configuration, fresh: NodeId, previous: NodeId | None) -> list[Action]:
        return lsa_perturbation(c, fresh, previous)


def random_position(rng: random.Random, dimensions: int = 1, grid: int = 1000) -> tuple[Fraction, ...]:
    return tuple(Fraction(rng.randrange(grid), grid) for _ in range(dimensions))


def run_lsa_round(
    c: Configuration,
    crit: LocalCriterion = PROXIMITY,
    order: Sequence[NodeId] | None = None,
    rng: random.Random | None = None,
    model: LsaModel | None = None,
) -> tuple[Configuration, list[Action]]:
    """Activate each active node once, applying rule R where it fires.

    Nodes run in ascending id order unless an explicit order or an rng (for a
    seeded random order) is given.
    """
    model = model or LsaModel(crit)
    if order is None:
        order = sorted(c.nodes)
        if rng is not None:
            rng.shuffle(order)
    applied = []
    for p in order:
        choice = lsa_rule_R(c, p, crit)
        if choice is None:
            continue
        action = replace_action(p, *choice)
        c = apply_action(c, action, model)
        applied.append(action)
    return c, applied


def lsa_perturbation(c: Configuration, fresh: NodeId, previous: NodeId | None) -> list[Action]:
    """Churn that keeps LSA from settling.

    A fresh node joins viewing some b, placed on top of a neighbor r of b that b
    does not coincide with, so the fresh node always wants to swap b for r. The
    previously injected node then leaves.
    """
    for b in sorted(c.nodes):
        pos_b = c.nodes[b].position
        for r in sorted(c.neighbors(b) & c.active - {b}):
            pos_r = c.nodes[r].position
            if pos_r == pos_b:
                continue
            actions = [
                Action(
                    ActionKind.CONNECT,
                    fresh,
                    {"neighbors": [b], "position": [f"{x.numerator}/{x.denominator}" for x in pos_r]},
                )
            ]
            if previous is not None and previous in c.nodes and previous not in (b, r):
                actions.append(Action(ActionKind.DISCONNECT, previous, {}))
            return actions
    return []


def lsa_configuration(
    positions: Mapping[NodeId, Sequence[Fraction]], views: Mapping[NodeId, Sequence[NodeId]]
) -> Configuration:
    nodes = {p: LsaNodeState(tuple(Fraction(x) for x in positions[p])) for p in sorted(positions)}
    graph = {p: frozenset(views.get(p, ())) for p in nodes}
    return Configuration(nodes=nodes, graph=graph, data={p: frozenset() for p in nodes})


def ring_configuration(n: int, positions: Sequence[Sequence[Fraction]] | None = None, rng=None) -> Configuration:
    """n nodes on a ring, each viewing its two ring neighbors."""
    if positions is None:
        rng = rng or random.Random(0)
        positions = [random_position(rng) for _ in range(n)]
    ids = list(range(1, n + 1))
    views = {p: [q for q in {ids[(i - 1) % n], ids[(i + 1) % n]} if q != p] for i, p in enumerate(ids)}
    return lsa_configuration(dict(zip(ids, positions)), views)


def random_configuration(n: int, degree: int, rng: random.Random, dimensions: int = 1) -> Configuration:
    """A seeded small-world topology with random positions."""
    seed = rng.randrange(2**31)
    if n > degree >= 2:
        g = nx.connected_watts_strogatz_graph(n, degree, 0.3, seed=seed)
    else:
        g = nx.complete_graph(n)
    g = nx.relabel_nodes(g, {i: i + 1 for i in range(n)})
    positions = {p: random_position(rng, dimensions) for p in sorted(g.nodes)}
    views = {p: sorted(g.neighbors(p)) for p in sorted(g.nodes)}
    return lsa_configuration(positions, views)
