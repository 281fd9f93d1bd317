# ABOUTME: Pastry overlay: prefix routing tables, leaf sets and proximity neighborhoods under churn.
# ABOUTME: Join, adoption and per-table repair run as action blocks; periodic maintenance refills slots.

import logging
import random
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, replace
from typing import Any

from selforg_sim.criteria.library import digit_value, pastry_f, shared_prefix, to_digits
from selforg_sim.model import (
    Action,
    ActionKind,
    Configuration,
    MalformedPayload,
    NodeId,
    ProtocolModel,
    ReadyEvent,
    internal,
)

logger = logging.getLogger(__name__)

GRID = 1000


@dataclass(frozen=True)
class PastryNodeState:
    key: int
    coord: tuple[int, int]
    b: int = 2
    digits: int = 16
    leaf_size: int = 8
    neighborhood_size: int = 8
    routing: tuple[tuple[NodeId | None, ...], ...] = ()
    leaf_set: frozenset = frozenset()
    neighborhood: frozenset = frozenset()
    joined: bool = False
    bootstrap: NodeId | None = None

    @property
    def id_digits(self) -> str:
        return to_digits(self.key, self.b, self.digits)

    @property
    def ring(self) -> int:
        return (1 << self.b) ** self.digits

    def routing_entries(self) -> frozenset:
        return frozenset(e for row in self.routing for e in row if e is not None)

    def references(self) -> frozenset:
        return self.routing_entries() | self.leaf_set | self.neighborhood

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "coord": list(self.coord),
            "b": self.b,
            "digits": self.digits,
            "leaf_size": self.leaf_size,
            "neighborhood_size": self.neighborhood_size,
            "routing": [list(row) for row in self.routing],
            "leaf_set": sorted(self.leaf_set),
            "neighborhood": sorted(self.neighborhood),
            "joined": self.joined,
            "bootstrap": self.bootstrap,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "PastryNodeState":
        return cls(
            key=int(raw["key"]),
            coord=tuple(raw["coord"]),
            b=int(raw["b"]),
            digits=int(raw["digits"]),
            leaf_size=int(raw["leaf_size"]),
            neighborhood_size=int(raw["neighborhood_size"]),
            routing=tuple(tuple(row) for row in raw.get("routing", ())),
            leaf_set=frozenset(raw.get("leaf_set", ())),
            neighborhood=frozenset(raw.get("neighborhood", ())),
            joined=bool(raw.get("joined", False)),
            bootstrap=raw.get("bootstrap"),
        )


def empty_routing(state: PastryNodeState) -> tuple[tuple[None, ...], ...]:
    return tuple(tuple(None for _ in range(1 << state.b)) for _ in range(state.digits))


def proximity(a: PastryNodeState, b: PastryNodeState) -> int:
    return abs(a.coord[0] - b.coord[0]) + abs(a.coord[1] - b.coord[1])


def ring_distance(a: int, b: int, ring: int) -> int:
    d = (a - b) % ring
    return min(d, ring - d)


def closest_on_ring(key: int, candidates: Mapping[NodeId, int], half: int, ring: int) -> frozenset:
    """The half nearest successors and half nearest predecessors of key.

    With at most 2 * half candidates, all of them.
    """
    ids = sorted(candidates)
    if len(ids) <= 2 * half:
        return frozenset(ids)
    succ = sorted(ids, key=lambda q: ((candidates[q] - key) % ring, q))[:half]
    pred = sorted(ids, key=lambda q: ((key - candidates[q]) % ring, q))[:half]
    return frozenset(succ) | frozenset(pred)


def closest_by_proximity(origin: PastryNodeState, candidates: Mapping[NodeId, PastryNodeState], size: int) -> frozenset:
    ranked = sorted(candidates, key=lambda q: (proximity(origin, candidates[q]), q))
    return frozenset(ranked[:size])


def routing_slot(p: PastryNodeState, q: PastryNodeState) -> tuple[int, int] | None:
    """The (row, column) where q belongs in p's routing table; None for equal keys."""
    dp, dq = p.id_digits, q.id_digits
    row = shared_prefix(dp, dq)
    if row == len(dp):
        return None
    return row, digit_value(dq[row])


def _joined(c: Configuration, exclude: Iterable[NodeId] = ()) -> dict[NodeId, PastryNodeState]:
    skip = set(exclude)
    return {p: s for p, s in c.nodes.items() if s.joined and p not in skip}


def _best_for_slot(
    p: PastryNodeState, row: int, col: int, candidates: Mapping[NodeId, PastryNodeState]
) -> NodeId | None:
    fits = [q for q, s in candidates.items() if pastry_f(row, col, p.id_digits, s.id_digits)]
    return min(fits, key=lambda q: (proximity(p, candidates[q]), q), default=None)


def build_routing(p: PastryNodeState, candidates: Mapping[NodeId, PastryNodeState]) -> tuple:
    own = p.id_digits
    rows = []
    for row in range(p.digits):
        entries = []
        for col in range(1 << p.b):
            entries.append(None if col == digit_value(own[row]) else _best_for_slot(p, row, col, candidates))
        rows.append(tuple(entries))
    return tuple(rows)


def pastry_route(c: Configuration, start: NodeId, key: int, exclude: Iterable[NodeId] = ()) -> list[NodeId]:
    """Route toward key: each hop goes to the known node with the longest shared prefix, then the closest key."""
    nodes = _joined(c, exclude)
    if start not in nodes:
        raise MalformedPayload(f"Route start {start} is not a joined Pastry node")
    sample = nodes[start]
    target = to_digits(key, sample.b, sample.digits)

    def rank(q: NodeId) -> tuple:
        s = nodes[q]
        return (-shared_prefix(s.id_digits, target), ring_distance(s.key, key, s.ring), q)

    path = [start]
    current = start
    for _ in range(len(nodes)):
        known = [q for q in nodes[current].references() if q in nodes] + [current]
        best = min(known, key=rank)
        if best == current:
            break
        current = best
        path.append(current)
    return path


def pastry_join(c: Configuration, new: NodeId, bootstrap: NodeId | None) -> list[Action]:
    """Install tables for a new node from what the route toward its key knows, then notify referenced nodes."""
    x = c.nodes[new]
    others = _joined(c, exclude=[new])
    half = x.leaf_size // 2
    if not others:
        return [internal(new, op="pastry_install", routing=[list(r) for r in empty_routing(x)], leaf=[], neighborhood=[], path=[])]
    start = bootstrap if bootstrap in others else min(others)
    path = pastry_route(c, start, x.key, exclude=[new])

    pool = set(path)
    for y in path:
        pool |= others[y].references()
    pool = {q for q in pool if q in others}
    leaf = closest_on_ring(x.key, {q: others[q].key for q in pool}, half, x.ring)
    for q in leaf:
        pool |= {r for r in others[q].leaf_set if r in others}
    candidates = {q: others[q] for q in pool}
    leaf = closest_on_ring(x.key, {q: s.key for q, s in candidates.items()}, half, x.ring)
    routing = build_routing(x, candidates)
    neighborhood = closest_by_proximity(x, candidates, x.neighborhood_size)

    actions = [
        internal(
            new,
            op="pastry_install",
            routing=[list(r) for r in routing],
            leaf=sorted(leaf),
            neighborhood=sorted(neighborhood),
            path=path,
        )
    ]
    referenced = set(path) | {e for r in routing for e in r if e is not None} | leaf | neighborhood
    for y in sorted(referenced):
        actions.append(Action(ActionKind.IO, y, {"op": "pastry_adopt", "node": new}))
    return actions


def adopt(c: Configuration, y: NodeId, x: NodeId) -> PastryNodeState:
    """y's tables after considering x; every slot keeps its entry unless x is strictly better."""
    sy, sx = c.nodes[y], c.nodes[x]
    routing = [list(row) for row in sy.routing]
    slot = routing_slot(sy, sx)
    if slot is not None:
        row, col = slot
        current = routing[row][col]
        if current is None or current not in c.nodes or proximity(sy, sx) < proximity(sy, c.nodes[current]):
            routing[row][col] = x
    live_leaf = {q: c.nodes[q].key for q in sy.leaf_set if q in c.nodes}
    live_leaf[x] = sx.key
    leaf = closest_on_ring(sy.key, live_leaf, sy.leaf_size // 2, sy.ring)
    live_near = {q: c.nodes[q] for q in sy.neighborhood if q in c.nodes}
    live_near[x] = sx
    neighborhood = closest_by_proximity(sy, live_near, sy.neighborhood_size)
    return replace(sy, routing=tuple(tuple(r) for r in routing), leaf_set=leaf, neighborhood=neighborhood)


def find_slot_candidate(c: Configuration, p: NodeId, row: int, col: int) -> NodeId | None:
    """Search peers for a live node fitting slot (row, col) of p's table.

    Peers in row `row` are asked first, then rows further down, then leaf and
    neighborhood members.
    """
    sp = c.nodes[p]
    nodes = _joined(c, exclude=[p])

    def offered(peers: Iterable[NodeId]) -> dict[NodeId, PastryNodeState]:
        found = {}
        for e in peers:
            if e not in nodes:
                continue
            found[e] = nodes[e]
            if row < len(nodes[e].routing):
                q = nodes[e].routing[row][col]
                if q is not None and q in nodes:
                    found[q] = nodes[q]
        return found

    for r in range(row, sp.digits):
        best = _best_for_slot(sp, row, col, offered(e for e in sp.routing[r] if e is not None))
        if best is not None:
            return best
    return _best_for_slot(sp, row, col, offered(sorted(sp.leaf_set | sp.neighborhood)))


def repair_routing(c: Configuration, p: NodeId, row: int, col: int) -> Action:
    entry = find_slot_candidate(c, p, row, col)
    payload = {"op": "pastry_set_slot", "row": row, "col": col, "entry": entry}
    if entry is None:
        payload["flag"] = "no-candidate"
    return Action(ActionKind.INTERNAL, p, payload)


def repair_leaf(c: Configuration, p: NodeId, failed: NodeId) -> Action | None:
    """Rebuild p's leaf set from its live members and their leaf sets."""
    sp = c.nodes[p]
    if failed not in sp.leaf_set:
        return None
    live = [q for q in sp.leaf_set if q in c.nodes and c.nodes[q].joined]
    pool = set(live)
    for q in live:
        pool |= {r for r in c.nodes[q].leaf_set if r in c.nodes and c.nodes[r].joined}
    if not live:
        pool = {q for q in sp.references() if q in c.nodes and c.nodes[q].joined}
    pool.discard(p)
    leaf = closest_on_ring(sp.key, {q: c.nodes[q].key for q in pool}, sp.leaf_size // 2, sp.ring)
    added = sorted(leaf - sp.leaf_set)
    payload = {"op": "pastry_set_leaf", "leaf": sorted(leaf), "failed": failed, "replacement": added[0] if added else None}
    if not added and len(leaf) < sp.leaf_size:
        payload["flag"] = "no-replacement"
    return Action(ActionKind.INTERNAL, p, payload)


def repair_neighbor(c: Configuration, p: NodeId, failed: NodeId) -> Action | None:
    sp = c.nodes[p]
    if failed not in sp.neighborhood:
        return None
    live = [q for q in sp.neighborhood if q in c.nodes and c.nodes[q].joined]
    pool = set(live)
    for q in live:
        pool |= {r for r in c.nodes[q].neighborhood if r in c.nodes and c.nodes[r].joined}
    pool.discard(p)
    neighborhood = closest_by_proximity(sp, {q: c.nodes[q] for q in pool}, sp.neighborhood_size)
    return Action(ActionKind.INTERNAL, p, {"op": "pastry_set_neighborhood", "neighborhood": sorted(neighborhood), "failed": failed})


def pastry_repair(c: Configuration, p: NodeId, failed: NodeId) -> list[Action]:
    """Every repair p runs after noticing that `failed` left."""
    sp = c.nodes[p]
    actions = [
        repair_routing(c, p, row, col)
        for row, entries in enumerate(sp.routing)
        for col, entry in enumerate(entries)
        if entry == failed
    ]
    for extra in (repair_leaf(c, p, failed), repair_neighbor(c, p, failed)):
        if extra is not None:
            actions.append(extra)
    return actions


class PastryModel(ProtocolModel):
    """Pastry routing state under churn, with periodic refill of empty routing slots."""

    name = "Pastry"
    churn_requires_quiescence = True

    def __init__(
        self,
        b: int = 2,
        digits: int = 16,
        leaf_size: int = 8,
        neighborhood_size: int = 8,
        maintenance_period: int = 50,
    ):
        if not 1 <= b <= 4:
            raise ValueError("b must be between 1 and 4")
        if leaf_size % 2:
            raise ValueError("leaf_size must be even")
        self.b = b
        self.digits = digits
        self.leaf_size = leaf_size
        self.neighborhood_size = neighborhood_size
        self.maintenance_period = maintenance_period

    @property
    def ring(self) -> int:
        return (1 << self.b) ** self.digits

    def _blank(self, key: int, coord, bootstrap=None) -> PastryNodeState:
        state = PastryNodeState(
            key, tuple(coord), self.b, self.digits, self.leaf_size, self.neighborhood_size, bootstrap=bootstrap
        )
        return replace(state, routing=empty_routing(state))

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> PastryNodeState:
        if "key" not in payload or "coord" not in payload:
            raise MalformedPayload(f"Connect of Pastry node {node} needs a key and coordinates")
        bootstrap = payload.get("bootstrap")
        return self._blank(int(payload["key"]), payload["coord"], None if bootstrap is None else int(bootstrap))

    def state_from_dict(self, raw: Mapping[str, Any]) -> PastryNodeState:
        return PastryNodeState.from_dict(raw)

    def connect_payload(self, c: Configuration, node: NodeId, rng: random.Random) -> dict:
        keys = {s.key for s in c.nodes.values()}
        coords = {tuple(s.coord) for s in c.nodes.values()}
        key = rng.randrange(self.ring)
        while key in keys:
            key = rng.randrange(self.ring)
        coord = (rng.randrange(GRID), rng.randrange(GRID))
        while coord in coords:
            coord = (rng.randrange(GRID), rng.randrange(GRID))
        joined = sorted(p for p, s in c.nodes.items() if s.joined)
        return {"key": key, "coord": list(coord), "bootstrap": rng.choice(joined) if joined else None}

    def local_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        for p in sorted(c.nodes):
            state = c.nodes[p]
            if not state.joined:
                events.append(ReadyEvent(("join", p, 0), p, lambda cfg, p=p: pastry_join(cfg, p, cfg.nodes[p].bootstrap)))
                continue
            for x in sorted(state.references() - c.active):
                events.append(ReadyEvent(("repair", p, x), p, lambda cfg, p=p, x=x: pastry_repair(cfg, p, x)))
        return events

    def maintenance_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        for p in sorted(c.nodes):
            state = c.nodes[p]
            if not state.joined:
                continue
            own = state.id_digits
            for row, entries in enumerate(state.routing):
                for col, entry in enumerate(entries):
                    if entry is not None or col == digit_value(own[row]):
                        continue
                    found = find_slot_candidate(c, p, row, col)
                    if found is not None:
                        action = internal(p, op="pastry_set_slot", row=row, col=col, entry=found)
                        events.append(ReadyEvent(("maintain", p, row * 16 + col), p, lambda _c, a=action: [a]))
        return events

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        op = a.payload.get("op")
        state = c.nodes[a.actor]
        if op == "pastry_install":
            routing = tuple(tuple(row) for row in a.payload["routing"])
            updated = replace(
                state,
                routing=routing,
                leaf_set=frozenset(a.payload["leaf"]),
                neighborhood=frozenset(a.payload["neighborhood"]),
                joined=True,
            )
        elif op == "pastry_adopt":
            x = int(a.payload["node"])
            if x not in c.nodes:
                return c
            updated = adopt(c, a.actor, x)
        elif op == "pastry_set_slot":
            row, col = int(a.payload["row"]), int(a.payload["col"])
            routing = [list(r) for r in state.routing]
            routing[row][col] = a.payload.get("entry")
            updated = replace(state, routing=tuple(tuple(r) for r in routing))
        elif op == "pastry_set_leaf":
            updated = replace(state, leaf_set=frozenset(a.payload["leaf"]))
        elif op == "pastry_set_neighborhood":
            updated = replace(state, neighborhood=frozenset(a.payload["neighborhood"]))
        else:
            return c
        return c.with_state(a.actor, updated, updated.references())


def pastry_configuration(n: int, model: PastryModel | None = None, rng: random.Random | None = None) -> Configuration:
    """n joined nodes whose tables are built from full knowledge of the system."""
    model = model or PastryModel()
    rng = rng or random.Random(0)
    if n > model.ring:
        raise ValueError(f"{n} nodes do not fit a ring of {model.ring} keys")
    keys = rng.sample(range(model.ring), n)
    cells = rng.sample(range(GRID * GRID), n)
    ids = list(range(1, n + 1))
    blank = {p: model._blank(k, divmod(cell, GRID)) for p, k, cell in zip(ids, keys, cells)}
    nodes = {}
    for p in ids:
        others = {q: blank[q] for q in ids if q != p}
        state = blank[p]
        nodes[p] = replace(
            state,
            routing=build_routing(state, others),
            leaf_set=closest_on_ring(state.key, {q: s.key for q, s in others.items()}, model.leaf_size // 2, model.ring),
            neighborhood=closest_by_proximity(state, others, model.neighborhood_size),
            joined=True,
        )
    return Configuration(
        nodes=nodes,
        graph={p: nodes[p].references() for p in ids},
        data={p: frozenset() for p in ids},
    )


def leaf_sets_correct(c: Configuration) -> bool:
    nodes = _joined(c)
    for p, s in nodes.items():
        others = {q: t.key for q, t in nodes.items() if q != p}
        if s.leaf_set != closest_on_ring(s.key, others, s.leaf_size // 2, s.ring):
            return False
    return True


def routing_prefix_sound(c: Configuration) -> bool:
    for p, s in _joined(c).items():
        for row, entries in enumerate(s.routing):
            for col, entry in enumerate(entries):
                if entry is None or entry not in c.nodes:
                    continue
                if not pastry_f(row, col, s.id_digits, c.nodes[entry].id_digits):
                    return False
    return True
