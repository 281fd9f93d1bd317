# ABOUTME: CAN overlay: the unit d-torus split into zones owned by nodes, with join and leave repair.
# ABOUTME: Zones are tuples of half-open Fraction boxes; neighbors are nodes whose zones abut.

import logging
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Any

from selforg_sim.model import (
    Action,
    ActionKind,
    Configuration,
    MalformedPayload,
    NodeId,
    ProtocolModel,
    ReadyEvent,
    SimulationError,
    apply_action,
    internal,
    parse_fraction,
)

logger = logging.getLogger(__name__)

Interval = tuple[Fraction, Fraction]
Box = tuple[Interval, ...]
Zone = tuple[Box, ...]


class EmptySystem(SimulationError):
    """Raised when a CAN operation needs a joined node and none exists."""


def full_box(d: int) -> Box:
    return tuple((Fraction(0), Fraction(1)) for _ in range(d))


def box_volume(box: Box) -> Fraction:
    v = Fraction(1)
    for lo, hi in box:
        v *= hi - lo
    return v


def zone_volume(zone: Zone) -> Fraction:
    return sum((box_volume(b) for b in zone), Fraction(0))


def box_contains(box: Box, point: Sequence[Fraction]) -> bool:
    return all(lo <= x < hi for (lo, hi), x in zip(box, point))


def zone_contains(zone: Zone, point: Sequence[Fraction]) -> bool:
    return any(box_contains(b, point) for b in zone)


def _overlap(a: Interval, b: Interval) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def _touch(a: Interval, b: Interval) -> bool:
    return a[1] == b[0] or b[1] == a[0] or (a[1] == 1 and b[0] == 0) or (b[1] == 1 and a[0] == 0)


def boxes_abut(a: Box, b: Box) -> bool:
    """Boxes share a (d-1)-dimensional face on the torus."""
    for k in range(len(a)):
        if _touch(a[k], b[k]) and not _overlap(a[k], b[k]):
            if all(_overlap(a[m], b[m]) for m in range(len(a)) if m != k):
                return True
    return False


def zones_abut(z1: Zone, z2: Zone) -> bool:
    return any(boxes_abut(a, b) for a in z1 for b in z2)


def split_box(box: Box, point: Sequence[Fraction]) -> tuple[Box, Box]:
    """Halve a box along its longest side (lowest dimension on ties).

    Returns (half containing point, other half).
    """
    k = max(range(len(box)), key=lambda i: (box[i][1] - box[i][0], -i))
    lo, hi = box[k]
    mid = (lo + hi) / 2
    lower = box[:k] + ((lo, mid),) + box[k + 1 :]
    upper = box[:k] + ((mid, hi),) + box[k + 1 :]
    return (lower, upper) if point[k] < mid else (upper, lower)


def box_union(a: Box, b: Box) -> Box | None:
    """The box a and b form together, if they differ only in one adjacent dimension."""
    differing = [k for k in range(len(a)) if a[k] != b[k]]
    if len(differing) != 1:
        return None
    k = differing[0]
    if a[k][1] == b[k][0]:
        return a[:k] + ((a[k][0], b[k][1]),) + a[k + 1 :]
    if b[k][1] == a[k][0]:
        return a[:k] + ((b[k][0], a[k][1]),) + a[k + 1 :]
    return None


def _axis_gap(x: Fraction, interval: Interval) -> Fraction:
    lo, hi = interval
    if lo <= x < hi:
        return Fraction(0)
    d1, d2 = abs(x - lo) % 1, abs(x - hi) % 1
    return min(d1, 1 - d1, d2, 1 - d2)


def zone_gap(zone: Zone, point: Sequence[Fraction]) -> Fraction:
    """Squared torus distance from a point to the nearest box of a zone."""
    return min(sum((_axis_gap(x, iv) ** 2 for x, iv in zip(point, box)), Fraction(0)) for box in zone)


def encode_zone(zone: Zone) -> list:
    return [[[str(lo), str(hi)] for lo, hi in box] for box in zone]


def decode_zone(raw: Sequence) -> Zone:
    return tuple(tuple((parse_fraction(lo), parse_fraction(hi)) for lo, hi in box) for box in raw)


@dataclass(frozen=True)
class CanNodeState:
    point: tuple[Fraction, ...]
    zone: Zone = ()
    neighbors: tuple[tuple[NodeId, Zone], ...] = ()
    joined: bool = False
    bootstrap: NodeId | None = None

    @property
    def neighbor_ids(self) -> frozenset:
        return frozenset(q for q, _ in self.neighbors)

    def to_dict(self) -> dict:
        return {
            "point": [str(x) for x in self.point],
            "zone": encode_zone(self.zone),
            "neighbors": [[q, encode_zone(z)] for q, z in self.neighbors],
            "joined": self.joined,
            "bootstrap": self.bootstrap,
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "CanNodeState":
        return cls(
            tuple(parse_fraction(x) for x in raw["point"]),
            decode_zone(raw.get("zone", ())),
            tuple((int(q), decode_zone(z)) for q, z in raw.get("neighbors", ())),
            bool(raw.get("joined", False)),
            raw.get("bootstrap"),
        )


def _joined_zones(c: Configuration) -> dict[NodeId, Zone]:
    return {p: s.zone for p, s in c.nodes.items() if s.joined}


def _entries(zones: Mapping[NodeId, Zone], p: NodeId, pool) -> list:
    found = [q for q in sorted(set(pool)) if q != p and q in zones and zones_abut(zones[p], zones[q])]
    return [[q, encode_zone(zones[q])] for q in found]


def _current_entries(state: CanNodeState) -> list:
    return [[q, encode_zone(z)] for q, z in state.neighbors]


def can_route(c: Configuration, start: NodeId, point: Sequence[Fraction]) -> list[NodeId]:
    """Greedy route from start toward the zone containing point.

    Each hop moves to the neighbor whose zone is closest to the point; if no
    neighbor is closer, the route jumps to the owner directly.
    """
    zones = _joined_zones(c)
    if start not in zones:
        raise EmptySystem(f"Route start {start} is not a joined CAN node")
    path = [start]
    current = start
    for _ in range(len(zones)):
        if zone_contains(zones[current], point):
            return path
        gap = zone_gap(zones[current], point)
        options = [q for q in sorted(c.nodes[current].neighbor_ids) if q in zones]
        best = min(options, key=lambda q: (zone_gap(zones[q], point), q), default=None)
        if best is None or zone_gap(zones[best], point) >= gap:
            break
        current = best
        path.append(current)
    if not zone_contains(zones[current], point):
        owner = next((q for q in sorted(zones) if zone_contains(zones[q], point)), None)
        if owner is None:
            raise EmptySystem(f"No CAN zone contains point {point}")
        path.append(owner)
    return path


def can_join(c: Configuration, new: NodeId, bootstrap: NodeId | None, point: Sequence[Fraction]) -> list[Action]:
    """Actions that split the owner's zone and hand the new node the half containing its point."""
    zones = {p: z for p, z in _joined_zones(c).items() if p != new}
    d = len(point)
    if not zones:
        return [Action(ActionKind.IO, new, {"op": "can_assign", "zone": encode_zone((full_box(d),)), "neighbors": [], "route": [new]})]
    start = bootstrap if bootstrap in zones else min(zones)
    path = can_route(c, start, point)
    owner = path[-1]
    box = next(b for b in zones[owner] if box_contains(b, point))
    mine, rest = split_box(box, point)
    zones[owner] = tuple(b for b in zones[owner] if b != box) + (rest,)
    zones[new] = (mine,)
    owner_old = c.nodes[owner].neighbor_ids
    pool = owner_old | {owner, new}

    actions = [
        internal(owner, op="can_update", zone=encode_zone(zones[owner]), neighbors=_entries(zones, owner, pool)),
        Action(
            ActionKind.IO,
            new,
            {"op": "can_assign", "zone": encode_zone(zones[new]), "neighbors": _entries(zones, new, pool), "route": path},
        ),
    ]
    for r in sorted(owner_old):
        if r not in zones:
            continue
        entries = _entries(zones, r, c.nodes[r].neighbor_ids | {owner, new})
        if entries != _current_entries(c.nodes[r]):
            actions.append(Action(ActionKind.IO, r, {"op": "can_neighbors", "neighbors": entries, "from": owner}))
    return actions


def departed_zone(c: Configuration, departed: NodeId) -> Zone | None:
    for p in sorted(c.nodes):
        for q, z in c.nodes[p].neighbors:
            if q == departed:
                return z
    return None


def can_leave_repair(c: Configuration, departed: NodeId) -> list[Action]:
    """Actions that hand a departed node's zone to a neighbor.

    The smallest neighbor whose zone forms a box with it merges (lowest id on
    ties); otherwise the smallest neighbor takes the zone over as an extra box.
    """
    zones = _joined_zones(c)
    lost = departed_zone(c, departed)
    listing = sorted(p for p in zones if departed in c.nodes[p].neighbor_ids)
    if lost is None or not listing:
        return []
    merged = None
    mode = "merge"
    if len(lost) == 1:
        unions = {q: box_union(zones[q][0], lost[0]) for q in listing if len(zones[q]) == 1}
        mergeable = [q for q, u in unions.items() if u is not None]
        if mergeable:
            taker = min(mergeable, key=lambda q: (zone_volume(zones[q]), q))
            merged = (unions[taker],)
    if merged is None:
        mode = "takeover"
        taker = min(listing, key=lambda q: (zone_volume(zones[q]), q))
        merged = zones[taker] + lost
    zones[taker] = merged
    taker_pool = (c.nodes[taker].neighbor_ids | frozenset(listing)) - {departed}
    actions = [
        internal(
            taker,
            op="can_update",
            zone=encode_zone(merged),
            neighbors=_entries(zones, taker, taker_pool),
            departed=departed,
            mode=mode,
        )
    ]
    affected = (frozenset(listing) | c.nodes[taker].neighbor_ids) - {taker, departed}
    for r in sorted(affected):
        if r not in zones:
            continue
        pool = (c.nodes[r].neighbor_ids | {taker}) - {departed}
        entries = _entries(zones, r, pool)
        if entries != _current_entries(c.nodes[r]):
            actions.append(
                Action(ActionKind.IO, r, {"op": "can_neighbors", "neighbors": entries, "from": taker, "departed": departed})
            )
    logger.debug(f"Zone of departed node {departed} handed to node {taker}")
    return actions


class CanModel(ProtocolModel):
    """CAN overlay maintenance under churn.

    A Connect carries the whole insertion: the owner splits and every abutting
    node updates in the same step. A departure is repaired afterwards by one
    atomic block per departed node.
    """

    name = "CAN"
    churn_requires_quiescence = True

    def __init__(self, dimensions: int = 2, grid: int = 1024):
        self.dimensions = dimensions
        self.grid = grid

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> CanNodeState:
        point = payload.get("point")
        if point is None or len(point) != self.dimensions:
            raise MalformedPayload(f"Connect of CAN node {node} needs a {self.dimensions}-dimensional point")
        bootstrap = payload.get("bootstrap")
        return CanNodeState(tuple(parse_fraction(x) for x in point), bootstrap=None if bootstrap is None else int(bootstrap))

    def state_from_dict(self, raw: Mapping[str, Any]) -> CanNodeState:
        return CanNodeState.from_dict(raw)

    def connect_payload(self, c: Configuration, node: NodeId, rng: random.Random) -> dict:
        point = [str(Fraction(rng.randrange(self.grid), self.grid)) for _ in range(self.dimensions)]
        joined = sorted(p for p, s in c.nodes.items() if s.joined)
        return {"point": point, "bootstrap": rng.choice(joined) if joined else None}

    def on_connect(self, c: Configuration, a: Action) -> Configuration:
        state = c.nodes[a.actor]
        for step in can_join(c, a.actor, state.bootstrap, state.point):
            c = self.on_action(c, step)
        return c

    def local_events(self, c: Configuration) -> list[ReadyEvent]:
        events = []
        referenced = {q for s in c.nodes.values() for q in s.neighbor_ids}
        for x in sorted(referenced - c.active):
            events.append(ReadyEvent(("repair", x), x, lambda cfg, x=x: can_leave_repair(cfg, x)))
        return events

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        op = a.payload.get("op")
        state = c.nodes[a.actor]
        if op in ("can_assign", "can_update"):
            neighbors = tuple((int(q), decode_zone(z)) for q, z in a.payload["neighbors"])
            updated = replace(state, zone=decode_zone(a.payload["zone"]), neighbors=neighbors, joined=True)
        elif op == "can_neighbors":
            neighbors = tuple((int(q), decode_zone(z)) for q, z in a.payload["neighbors"])
            updated = replace(state, neighbors=neighbors)
        else:
            return c
        return c.with_state(a.actor, updated, updated.neighbor_ids)


def can_configuration(n: int, dimensions: int = 2, rng: random.Random | None = None) -> Configuration:
    """A joined CAN of n nodes built by sequential joins at seeded random points."""
    rng = rng or random.Random(0)
    model = CanModel(dimensions)
    c = Configuration()
    for p in range(1, n + 1):
        payload = model.connect_payload(c, p, rng)
        c = apply_action(c, Action(ActionKind.CONNECT, p, payload), model)
    return c.evolve(time=0)


def zones_partition_torus(c: Configuration) -> bool:
    """Joined zones cover the torus exactly once."""
    boxes = [b for s in c.nodes.values() if s.joined for b in s.zone]
    if sum((box_volume(b) for b in boxes), Fraction(0)) != 1:
        return False
    for i, a in enumerate(boxes):
        for b in boxes[i + 1 :]:
            if all(_overlap(x, y) for x, y in zip(a, b)):
                return False
    return True


def brute_force_neighbors(c: Configuration) -> dict[NodeId, frozenset]:
    zones = _joined_zones(c)
    return {p: frozenset(q for q in zones if q != p and zones_abut(zones[p], zones[q])) for p in zones}
