# ABOUTME: One-shot query: a depth-first traversal collecting matching data from reachable nodes.
# ABOUTME: A perfect failure detector tells nodes about departed neighbors after a fixed delay.

import fnmatch
import logging
from collections.abc import Mapping
from dataclasses import dataclass, replace
from typing import Any

import networkx as nx

from selforg_sim.model import Action, Configuration, NodeId, ProtocolModel, ReadyEvent, Trace, internal

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuerySpec:
    pattern: str = "*"
    qid: int = 1


@dataclass(frozen=True)
class QueryNodeState:
    qid: int = 0
    pattern: str = ""
    target: frozenset = frozenset()
    replied: frozenset = frozenset()
    no_response_but_failed: frozenset = frozenset()
    values: frozenset = frozenset()
    parent: NodeId | None = None
    pending: tuple[NodeId, ...] = ()
    waiting_on: NodeId | None = None
    querying: frozenset = frozenset()
    visited: frozenset = frozenset()
    done: bool = False
    orphaned: bool = False

    @property
    def started(self) -> bool:
        return self.qid > 0

    @property
    def searching(self) -> bool:
        """Still exploring its neighbors on behalf of a live parent."""
        return self.started and not self.done and not self.orphaned

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "pattern": self.pattern,
            "target": sorted(self.target),
            "replied": sorted(self.replied),
            "no_response_but_failed": sorted(self.no_response_but_failed),
            "values": sorted(self.values),
            "parent": self.parent,
            "pending": list(self.pending),
            "waiting_on": self.waiting_on,
            "querying": sorted(self.querying),
            "visited": sorted(self.visited),
            "done": self.done,
            "orphaned": self.orphaned,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "QueryNodeState":
        return cls(
            qid=int(raw.get("qid", 0)),
            pattern=raw.get("pattern", ""),
            target=frozenset(raw.get("target", ())),
            replied=frozenset(raw.get("replied", ())),
            no_response_but_failed=frozenset(raw.get("no_response_but_failed", ())),
            values=frozenset(raw.get("values", ())),
            parent=raw.get("parent"),
            pending=tuple(raw.get("pending", ())),
            waiting_on=raw.get("waiting_on"),
            querying=frozenset(raw.get("querying", ())),
            visited=frozenset(raw.get("visited", ())),
            done=bool(raw.get("done", False)),
            orphaned=bool(raw.get("orphaned", False)),
        )


def matching(c: Configuration, p: NodeId, pattern: str) -> frozenset:
    return frozenset(item for item in c.data.get(p, ()) if fnmatch.fnmatchcase(item, pattern))


def query_start(c: Configuration, initiator: NodeId, spec: QuerySpec) -> list[Action]:
    return [internal(initiator, op="query_start", pattern=spec.pattern, qid=spec.qid)]


def query_result(c: Configuration, initiator: NodeId) -> frozenset | None:
    """The values collected by a finished query, or None while it runs."""
    state = c.nodes.get(initiator)
    if state is None or not state.done:
        return None
    return state.values


class QueryModel(ProtocolModel):
    """A single query traversing the neighbor graph depth-first.

    Querying and visited sets travel with the messages so a node never queries
    a node already in the traversal; such neighbors count as replied.

    target, replied and no_response_but_failed only grow once a node has the
    query, and so does values. A node asked again after it finished, or after
    its parent departed, explores once more for the new asker and answers with
    everything it holds. A node asked while it is still exploring for another
    parent answers busy, and the asker tries it again later.
    """

    name = "OneShotQuery"

    def __init__(self, initiator: NodeId = 1, spec: QuerySpec | None = None, detection_delay: int = 1):
        self.initiator = initiator
        self.spec = spec or QuerySpec()
        self.detection_delay = detection_delay

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> QueryNodeState:
        return QueryNodeState()

    def state_from_dict(self, raw: Mapping[str, Any]) -> QueryNodeState:
        return QueryNodeState.from_dict(raw)

    def protected_ids(self) -> frozenset:
        return frozenset({self.initiator})

    def on_connect(self, c: Configuration, a: Action) -> Configuration:
        bootstrap = a.payload.get("bootstrap")
        if bootstrap is None:
            return c
        return c.with_state(a.actor, c.nodes[a.actor], frozenset({int(bootstrap)}))

    def on_disconnect(self, c: Configuration, a: Action, viewers: frozenset) -> Configuration:
        for p in sorted(viewers):
            c = c.send(a.actor, p, {"type": "crash", "node": a.actor}, delay=self.detection_delay)
        return c

    def local_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        init = c.nodes.get(self.initiator)
        if init is not None and not init.started:
            actions = query_start(c, self.initiator, self.spec)
            events.append(ReadyEvent(("local", self.initiator, 0), self.initiator, lambda _c, a=actions: list(a)))
        for p in sorted(c.nodes):
            state = c.nodes[p]
            if state.searching and state.waiting_on is None:
                action = internal(p, op="query_next")
                events.append(ReadyEvent(("local", p, 1), p, lambda _c, a=action: [a]))
        return events

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        op = a.payload.get("op")
        if op == "query_start":
            p = a.actor
            state = QueryNodeState(
                qid=int(a.payload["qid"]),
                pattern=a.payload["pattern"],
                target=c.neighbors(p) | {p},
                replied=frozenset({p}),
                values=matching(c, p, a.payload["pattern"]),
                pending=tuple(sorted(c.neighbors(p) - {p})),
                querying=frozenset({p}),
            )
            return c.with_state(p, state)
        if op == "query_next":
            return self._advance(c, a.actor)
        return c

    def _advance(self, c: Configuration, p: NodeId) -> Configuration:
        """Query the next unvisited neighbor, or report back when none is left."""
        state = c.nodes[p]
        pending = list(state.pending)
        replied = state.replied
        while pending:
            n = pending.pop(0)
            if n in state.querying or n in state.visited:
                replied |= {n}
                continue
            body = {
                "type": "query",
                "qid": state.qid,
                "pattern": state.pattern,
                "querying": sorted(state.querying),
                "visited": sorted(state.visited),
            }
            c = c.with_state(p, replace(state, pending=tuple(pending), replied=replied, waiting_on=n))
            return c.send(p, n, body)
        visited = state.visited | {p}
        c = c.with_state(p, replace(state, pending=(), replied=replied, visited=visited, done=True))
        if state.parent is not None:
            body = {"type": "reply", "qid": state.qid, "values": sorted(state.values), "visited": sorted(visited)}
            c = c.send(p, state.parent, body)
        else:
            logger.info(f"Query {state.qid} finished at node {p} with {len(state.values)} values")
        return c

    def on_message(self, c: Configuration, p: NodeId, src: NodeId, body: Mapping[str, Any]) -> Configuration:
        kind = body["type"]
        state = c.nodes[p]
        if kind == "query":
            if state.qid != body["qid"]:
                return c.with_state(p, self._first_query(c, p, src, body))
            if state.searching:
                busy = {"type": "reply", "qid": state.qid, "busy": True, "values": [], "visited": []}
                return c.send(p, src, busy)
            return c.with_state(p, self._explore_again(c, p, state, src, body))
        if kind == "reply":
            if state.qid != body["qid"] or state.waiting_on != src or not state.searching:
                return c
            if body.get("busy"):
                return c.with_state(p, replace(state, waiting_on=None, pending=state.pending + (src,)))
            updated = replace(
                state,
                values=state.values | frozenset(body["values"]),
                visited=state.visited | frozenset(body["visited"]),
                replied=state.replied | ({src} & state.target),
                waiting_on=None,
            )
            return c.with_state(p, updated)
        if kind == "abort":
            if state.qid != body["qid"] or state.parent != src or not state.searching:
                return c
            return self._orphan(c, p)
        if kind == "crash":
            return self._on_crash(c, p, int(body["node"]))
        return c

    def _first_query(self, c: Configuration, p: NodeId, src: NodeId, body: Mapping[str, Any]) -> QueryNodeState:
        return QueryNodeState(
            qid=int(body["qid"]),
            pattern=body["pattern"],
            target=c.neighbors(p) | {p},
            replied=frozenset({p}),
            values=matching(c, p, body["pattern"]),
            parent=src,
            pending=tuple(sorted(c.neighbors(p) - {p})),
            querying=frozenset(body["querying"]) | {p},
            visited=frozenset(body["visited"]),
        )

    def _explore_again(
        self, c: Configuration, p: NodeId, state: QueryNodeState, src: NodeId, body: Mapping[str, Any]
    ) -> QueryNodeState:
        logger.debug(f"Node {p} explores again for node {src}", extra={"node": p})
        return replace(
            state,
            parent=src,
            pending=tuple(sorted(c.neighbors(p) - {p})),
            waiting_on=None,
            querying=frozenset(body["querying"]) | {p},
            visited=frozenset(body["visited"]),
            done=False,
            orphaned=False,
        )

    def _orphan(self, c: Configuration, p: NodeId) -> Configuration:
        """Stop exploring for a departed parent and pass the abort down to the child being waited on."""
        state = c.nodes[p]
        child = state.waiting_on
        c = c.with_state(p, replace(state, parent=None, pending=(), waiting_on=None, orphaned=True))
        if child is not None:
            c = c.send(p, child, {"type": "abort", "qid": state.qid})
        return c

    def _on_crash(self, c: Configuration, p: NodeId, failed: NodeId) -> Configuration:
        state = c.nodes[p]
        view = c.neighbors(p) - {failed}
        if not state.started:
            return c.with_state(p, state, view)
        updated = replace(
            state,
            pending=tuple(n for n in state.pending if n != failed),
            waiting_on=None if state.waiting_on == failed else state.waiting_on,
        )
        if failed in state.target and failed not in state.replied:
            updated = replace(updated, no_response_but_failed=state.no_response_but_failed | {failed})
        c = c.with_state(p, updated, view)
        if failed == state.parent and state.searching:
            c = self._orphan(c, p)
        return c


def query_configuration(graph: nx.Graph, data: Mapping[NodeId, frozenset]) -> Configuration:
    nodes = sorted(graph.nodes)
    return Configuration(
        nodes={p: QueryNodeState() for p in nodes},
        graph={p: frozenset(graph.neighbors(p)) for p in nodes},
        data={p: frozenset(data.get(p, ())) for p in nodes},
    )


def reachable_values(t: Trace, initiator: NodeId, pattern: str, start: int, end: int) -> frozenset:
    """Matching values of every node linked to the initiator throughout configurations start..end."""
    configs = [t.configuration(k) for k in range(start, end + 1)]
    stable_nodes = frozenset.intersection(*(c.active for c in configs))
    g = nx.Graph()
    g.add_nodes_from(stable_nodes)
    for p in stable_nodes:
        for q in configs[0].neighbors(p) & stable_nodes:
            if all(q in c.neighbors(p) and p in c.neighbors(q) for c in configs):
                g.add_edge(p, q)
    if initiator not in g:
        return frozenset()
    component = nx.node_connected_component(g, initiator)
    return frozenset().union(*(matching(configs[0], p, pattern) for p in component))
