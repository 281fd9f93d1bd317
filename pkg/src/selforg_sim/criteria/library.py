# ABOUTME: Concrete criteria for the case-study protocols and the registry that names them.
# ABOUTME: Covers proximity (LSA), CAN, Pastry routing/leaf/neighborhood, leader election and query.

import math
from enum import Enum
from fractions import Fraction
from typing import Any, NamedTuple

from selforg_sim.criteria.base import (
    CriterionError,
    DimensionMismatch,
    GlobalCriterion,
    LengthMismatch,
    LocalCriterion,
    MissingPosition,
    QueryNotStarted,
    Score,
    compose_monotonic,
)
from selforg_sim.model import Configuration, NodeId

DIGITS = "0123456789abcdef"


def _point(c: Configuration, p: NodeId, attr: str) -> tuple:
    state = c.nodes.get(p)
    value = getattr(state, attr, None)
    if value is None:
        raise MissingPosition(f"Node {p} has no {attr}")
    return tuple(value)


def exact_sqrt(x: Fraction) -> Score:
    """Square root of a non-negative Fraction, exact when it is rational."""
    num, den = x.numerator, x.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return math.sqrt(x)


def torus_distance(a: tuple, b: tuple) -> Score:
    """Euclidean distance between two points of the unit torus."""
    if len(a) != len(b):
        raise DimensionMismatch(f"Points of dimension {len(a)} and {len(b)}")
    total = Fraction(0)
    for x, y in zip(a, b):
        delta = abs(Fraction(x) - Fraction(y)) % 1
        delta = min(delta, 1 - delta)
        total += delta * delta
    return exact_sqrt(total)


def gamma_can(c: Configuration, p: NodeId, q: NodeId, d: int | None = None) -> Score:
    """1 / (1 + torus distance between the points of p and q); 0 for inactive q."""
    if q not in c.nodes:
        return Fraction(0)
    a, b = _point(c, p, "point"), _point(c, q, "point")
    if d is not None and (len(a) != d or len(b) != d):
        raise DimensionMismatch(f"Expected {d}-dimensional points, got {len(a)} and {len(b)}")
    return 1 / (1 + torus_distance(a, b))


def can_slot_scores(c: Configuration, p: NodeId) -> list[Score]:
    """One slot per face of the zone, filled by the best-scoring neighbors; empty slots score 0."""
    state = c.nodes[p]
    slots = 2 * len(state.point)
    scores = sorted((gamma_can(c, p, q) for q, _zone in state.neighbors), reverse=True)[:slots]
    return scores + [Fraction(0)] * (slots - len(scores))


def l1_distance(a: tuple, b: tuple) -> Any:
    if len(a) != len(b):
        raise DimensionMismatch(f"Points of dimension {len(a)} and {len(b)}")
    return sum((abs(Fraction(x) - Fraction(y)) for x, y in zip(a, b)), Fraction(0))


def gamma_proximity(c: Configuration, p: NodeId, q: NodeId) -> Score:
    """1 / (1 + L1 distance between positions); 0 for inactive q."""
    if q not in c.nodes:
        return Fraction(0)
    return 1 / (1 + l1_distance(_point(c, p, "position"), _point(c, q, "position")))


def to_digits(key: int, b: int, length: int) -> str:
    """Render a ring key as `length` digits in base 2**b."""
    base = 1 << b
    out = []
    for _ in range(length):
        key, digit = divmod(key, base)
        out.append(DIGITS[digit])
    return "".join(reversed(out))


def digit_value(d: str | int) -> int:
    return d if isinstance(d, int) else DIGITS.index(d.lower())


def shared_prefix(p: str, q: str) -> int:
    if len(p) != len(q):
        raise LengthMismatch(f"Identifiers {p!r} and {q!r} differ in length")
    n = 0
    while n < len(p) and p[n] == q[n]:
        n += 1
    return n


def pastry_f(i: int, j: str | int, p: str, q: str) -> int:
    """1 when q shares the first i digits of p and has digit j at position i."""
    if len(p) != len(q):
        raise LengthMismatch(f"Identifiers {p!r} and {q!r} differ in length")
    if not 0 <= i < len(p):
        return 0
    return int(p[:i] == q[:i] and digit_value(q[i]) == digit_value(j))


def clamp_unit(x: Score) -> Score:
    if x > 1:
        return Fraction(1)
    if x < 0:
        return Fraction(0)
    return x


def routing_score(f: int, dist: Score) -> Score:
    if f == 0:
        return Fraction(0)
    if dist == 0:
        return Fraction(1)
    return clamp_unit(Fraction(f) / dist if not isinstance(dist, float) else f / dist)


def proximity_distance(c: Configuration, p: NodeId, q: NodeId) -> Score:
    return l1_distance(_point(c, p, "coord"), _point(c, q, "coord"))


def node_digits(state: Any) -> str:
    return to_digits(state.key, state.b, state.digits)


def circular_distance(a: int, b: int, ring: int) -> int:
    d = abs(a - b) % ring
    return min(d, ring - d)


def gamma_pastry_routing(c: Configuration, p: NodeId, q: NodeId, slot: tuple[int, int] | None = None) -> Score:
    """Prefix fitness of q in slot (row, column) of p's table over proximity distance."""
    if q not in c.nodes:
        return Fraction(0)
    sp, sq = c.nodes[p], c.nodes[q]
    if slot is None:
        slot = next(
            ((i, j) for i, row in enumerate(sp.routing) for j, entry in enumerate(row) if entry == q),
            None,
        )
        if slot is None:
            return Fraction(0)
    f = pastry_f(slot[0], slot[1], node_digits(sp), node_digits(sq))
    return routing_score(f, proximity_distance(c, p, q))


def pastry_routing_slots(c: Configuration, p: NodeId) -> list[Score]:
    state = c.nodes[p]
    own = node_digits(state)
    scores = []
    for i, row in enumerate(state.routing):
        for j, entry in enumerate(row):
            if j == digit_value(own[i]):
                continue
            scores.append(Fraction(0) if entry is None else gamma_pastry_routing(c, p, entry, (i, j)))
    return scores


def gamma_pastry_neighbor(c: Configuration, p: NodeId, q: NodeId) -> Score:
    if q not in c.nodes:
        return Fraction(0)
    return 1 / (1 + proximity_distance(c, p, q))


def gamma_pastry_leaf(c: Configuration, p: NodeId, q: NodeId) -> Score:
    if q not in c.nodes:
        return Fraction(0)
    sp, sq = c.nodes[p], c.nodes[q]
    ring = (1 << sp.b) ** sp.digits
    return Fraction(1, 1 + circular_distance(sp.key, sq.key, ring))


def _padded(c: Configuration, p: NodeId, members: frozenset, size: int, score) -> list[Score]:
    scores = [score(c, p, q) for q in sorted(members)]
    return scores + [Fraction(0)] * max(0, size - len(scores))


def pastry_leaf_slots(c: Configuration, p: NodeId) -> list[Score]:
    state = c.nodes[p]
    return _padded(c, p, state.leaf_set, state.leaf_size, gamma_pastry_leaf)


def pastry_neighbor_slots(c: Configuration, p: NodeId) -> list[Score]:
    state = c.nodes[p]
    return _padded(c, p, state.neighborhood, state.neighborhood_size, gamma_pastry_neighbor)


class LeaderValue(NamedTuple):
    trust: frozenset
    date: int


class OrderResult(str, Enum):
    LE = "LE"
    GT = "GT"
    INCOMPARABLE = "Incomparable"


def gamma_leader(c: Configuration, p: NodeId) -> LeaderValue:
    state = c.nodes[p]
    return LeaderValue(frozenset(state.trust), state.date)


def leader_leq(a: LeaderValue, b: LeaderValue) -> bool:
    """(trust_a, date_a) precedes (trust_b, date_b) when b trusts a subset of a, or a is not newer."""
    return b.trust <= a.trust or a.date <= b.date


def leader_order(a: LeaderValue, b: LeaderValue) -> OrderResult:
    if leader_leq(a, b):
        return OrderResult.LE
    if leader_leq(b, a):
        return OrderResult.GT
    return OrderResult.INCOMPARABLE


def gamma_query(c: Configuration, p: NodeId) -> Fraction:
    """Fraction of p's query targets accounted for, among those not known to have failed."""
    state = c.nodes.get(p)
    if state is None or not state.target:
        raise QueryNotStarted(f"Node {p} has not received the query")
    alive_targets = state.target - state.no_response_but_failed
    if not alive_targets:
        return Fraction(1)
    return Fraction(len(state.replied & alive_targets), len(alive_targets))


def query_node_value(c: Configuration, p: NodeId) -> Fraction:
    try:
        return gamma_query(c, p)
    except QueryNotStarted:
        return Fraction(0)


PROXIMITY = LocalCriterion("proximity", eval=gamma_proximity, footprint=frozenset({"position"}))
CAN = LocalCriterion("can", eval=gamma_can, slot_scores=can_slot_scores, footprint=frozenset({"point", "neighbors"}))
PASTRY_ROUTING = LocalCriterion(
    "pastry-routing", eval=gamma_pastry_routing, slot_scores=pastry_routing_slots, footprint=frozenset({"routing"})
)
PASTRY_LEAF = LocalCriterion(
    "pastry-leaf", eval=gamma_pastry_leaf, slot_scores=pastry_leaf_slots, footprint=frozenset({"leaf_set"})
)
PASTRY_NEIGHBOR = LocalCriterion(
    "pastry-neighbor",
    eval=gamma_pastry_neighbor,
    slot_scores=pastry_neighbor_slots,
    footprint=frozenset({"neighborhood"}),
)
LEADER = LocalCriterion(
    "leader",
    node_value=gamma_leader,
    leq=leader_leq,
    footprint=frozenset({"trust", "date"}),
    scalar=False,
    summarize=lambda v: v.date,
)
QUERY = LocalCriterion(
    "query", node_value=query_node_value, footprint=frozenset({"target", "replied", "no_response_but_failed"})
)

CRITERIA: dict[str, LocalCriterion] = {
    crit.name: crit for crit in (PROXIMITY, CAN, PASTRY_ROUTING, PASTRY_LEAF, PASTRY_NEIGHBOR, LEADER, QUERY)
}

COMPATIBLE: dict[str, frozenset] = {
    "LSA": frozenset({"proximity"}),
    "CAN": frozenset({"can"}),
    "Pastry": frozenset({"pastry-routing", "pastry-leaf", "pastry-neighbor"}),
    "Leader": frozenset({"leader"}),
    "OneShotQuery": frozenset({"query"}),
}


class UnknownCriterion(CriterionError):
    """Raised when a criterion name is not registered or not valid for a protocol."""


def resolve_criterion(names: str | list | tuple, protocol: str | None = None):
    """Build the global criterion for one name, or a composite for several names."""
    if isinstance(names, str):
        names = [names]
    names = list(names)
    if not names:
        raise UnknownCriterion("No criterion named")
    for name in names:
        if name not in CRITERIA:
            raise UnknownCriterion(f"Unknown criterion {name!r}; known: {', '.join(sorted(CRITERIA))}")
        if protocol is not None and name not in COMPATIBLE.get(protocol, frozenset()):
            raise UnknownCriterion(f"Criterion {name!r} does not apply to protocol {protocol}")
    parts = [GlobalCriterion(CRITERIA[name]) for name in names]
    if len(parts) == 1:
        return parts[0]
    return compose_monotonic(parts)


def unassigned_slots(c: Configuration, p: NodeId) -> list[tuple[int, int]]:
    """Routing slots of p that are empty or point at a departed node; each scores 0."""
    state = c.nodes[p]
    own = node_digits(state)
    return [
        (i, j)
        for i, row in enumerate(state.routing)
        for j, entry in enumerate(row)
        if j != digit_value(own[i]) and (entry is None or entry not in c.nodes)
    ]
