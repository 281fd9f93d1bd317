# ABOUTME: Eventual leader election by repeated alpha-response query rounds and trust broadcasts.
# ABOUTME: Each node keeps a trusted set and an epoch date; leader() is the smallest trusted id.

import logging
from collections.abc import Mapping
from dataclasses import dataclass, replace
from typing import Any

from selforg_sim.model import Action, Configuration, NodeId, ProtocolModel, ReadyEvent, SimulationError, internal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LeaderNodeState:
    trust: frozenset
    date: int = 0
    round: int = 0
    responders: tuple[NodeId, ...] | None = None

    @property
    def querying(self) -> bool:
        return self.responders is not None

    def to_dict(self) -> dict:
        return {
            "trust": sorted(self.trust),
            "date": self.date,
            "round": self.round,
            "responders": None if self.responders is None else list(self.responders),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "LeaderNodeState":
        responders = raw.get("responders")
        return cls(
            frozenset(raw["trust"]),
            int(raw["date"]),
            int(raw.get("round", 0)),
            None if responders is None else tuple(responders),
        )


def leader_on_receive_trust(state: LeaderNodeState, trust: frozenset, date: int, universe: frozenset) -> LeaderNodeState:
    """Merge a broadcast (trust, date) into the local state.

    A newer date is adopted, an equal date intersects, and an empty
    intersection opens a new epoch trusting everyone.
    """
    if date > state.date:
        return replace(state, trust=frozenset(trust), date=date)
    if date < state.date:
        return state
    merged = state.trust & frozenset(trust)
    if not merged:
        return replace(state, trust=universe, date=state.date + 1)
    return replace(state, trust=merged)


def leader_query_leader(state: LeaderNodeState, self_id: NodeId, universe: frozenset) -> NodeId:
    if not state.trust or state.trust == universe:
        return self_id
    return min(state.trust)


class LeaderModel(ProtocolModel):
    """Leader election over reliable broadcast with asynchronous delivery.

    A round broadcasts a query to every node, the querying node included, waits
    for alpha responses, then intersects its trust with the responders and
    broadcasts the result.

    stable is the set of alpha nodes that never leave and whose responses are
    eventually the first ones a querying node gets. The scheduler holds back a
    response from any other node while a stable node has yet to answer the
    same round.
    """

    name = "Leader"

    def __init__(self, alpha: int, universe: frozenset, stable: frozenset | None = None):
        self.alpha = alpha
        self.universe = frozenset(universe)
        self.stable = frozenset(stable) if stable is not None else frozenset(sorted(self.universe)[:alpha])
        if len(self.stable) != alpha:
            raise SimulationError(f"The stable set must hold alpha={alpha} nodes, got {sorted(self.stable)}")

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> LeaderNodeState:
        return LeaderNodeState(self.universe)

    def state_from_dict(self, raw: Mapping[str, Any]) -> LeaderNodeState:
        return LeaderNodeState.from_dict(raw)

    def protected_ids(self) -> frozenset:
        return self.stable

    def leader(self, c: Configuration, p: NodeId) -> NodeId:
        return leader_query_leader(c.nodes[p], p, self.universe)

    def deliverable(self, c: Configuration) -> list[tuple[NodeId, NodeId]]:
        return [(src, dst) for src, dst in c.deliverable() if not self._held_back(c, src, dst)]

    def _held_back(self, c: Configuration, src: NodeId, dst: NodeId) -> bool:
        if src in self.stable:
            return False
        body = c.head(src, dst)["body"]
        if body["type"] != "response":
            return False
        state = c.nodes[dst]
        if not state.querying or body["round"] != state.round:
            return False
        return bool((self.stable & c.active) - set(state.responders))

    def _broadcast(self, c: Configuration, src: NodeId, body: dict, include_self: bool = False) -> Configuration:
        for dst in sorted(c.nodes):
            if dst != src or include_self:
                c = c.send(src, dst, body)
        return c

    def local_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        for p in sorted(c.nodes):
            state = c.nodes[p]
            if state.querying:
                continue
            action = internal(p, op="leader_query", round=state.round + 1)
            events.append(ReadyEvent(("local", p), p, lambda _c, a=action: [a]))
        return events

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        if a.payload.get("op") != "leader_query":
            return c
        p = a.actor
        rnd = int(a.payload["round"])
        c = c.with_state(p, replace(c.nodes[p], round=rnd, responders=()))
        return self._broadcast(c, p, {"type": "query", "round": rnd}, include_self=True)

    def on_message(self, c: Configuration, p: NodeId, src: NodeId, body: Mapping[str, Any]) -> Configuration:
        kind = body["type"]
        if kind == "query":
            return c.send(p, src, {"type": "response", "round": body["round"]})
        state = c.nodes[p]
        if kind == "response":
            if not state.querying or body["round"] != state.round or src in state.responders:
                return c
            c = c.with_state(p, replace(state, responders=state.responders + (src,)))
            return self._complete_if_ready(c, p)
        if kind == "trust":
            merged = leader_on_receive_trust(state, frozenset(body["trust"]), int(body["date"]), self.universe)
            return c.with_state(p, merged)
        return c

    def _complete_if_ready(self, c: Configuration, p: NodeId) -> Configuration:
        state = c.nodes[p]
        if len(state.responders) < self.alpha:
            return c
        trust = state.trust & frozenset(state.responders)
        date = state.date
        if not trust:
            trust, date = self.universe, date + 1
        c = c.with_state(p, replace(state, trust=trust, date=date, responders=None))
        return self._broadcast(c, p, {"type": "trust", "trust": sorted(trust), "date": date})


def leader_configuration(n: int, universe: frozenset) -> Configuration:
    ids = list(range(1, n + 1))
    return Configuration(
        nodes={p: LeaderNodeState(frozenset(universe)) for p in ids},
        graph={p: frozenset(q for q in ids if q != p) for p in ids},
        data={p: frozenset() for p in ids},
    )
