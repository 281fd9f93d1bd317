# ABOUTME: Local and global self-organization criteria, kernels and criterion composition.
# ABOUTME: Scalar criteria use exact Fractions; floats are compared with a small tolerance.

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from selforg_sim.model import Configuration, NodeId, SimulationError

logger = logging.getLogger(__name__)

TOLERANCE = 1e-12

Score = Fraction | float


class CriterionError(SimulationError):
    """Base class for criterion evaluation and composition errors."""


class MissingPosition(CriterionError):
    """Raised when a node needed by a criterion has no coordinates."""


class DimensionMismatch(CriterionError):
    """Raised when two coordinates have different dimensions."""


class LengthMismatch(CriterionError):
    """Raised when two identifiers have different digit lengths."""


class QueryNotStarted(CriterionError):
    """Raised when a query criterion is read at a node the query never reached."""


class NotIndependent(CriterionError):
    """Raised when composed criteria share state fields."""


class OrderNotReflexive(CriterionError):
    """Raised when an order audit finds a value that does not precede itself."""


def scalar_leq(a: Score, b: Score) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        return float(a) <= float(b) + TOLERANCE
    return a <= b


def strictly_precedes(leq: Callable[[Any, Any], bool], a: Any, b: Any) -> bool:
    return leq(a, b) and not leq(b, a)


def mean(values: Sequence[Score]) -> Score:
    if not values:
        return Fraction(0)
    return sum(values, Fraction(0)) / len(values)


@dataclass(frozen=True)
class LocalCriterion:
    """A per-node criterion.

    slot_scores returns one score per neighbor slot of p (empty slots score 0);
    node_value overrides that for criteria whose value is not a slot average.
    footprint names the node-state fields the criterion reads.
    """

    name: str
    eval: Callable[[Configuration, NodeId, NodeId], Score] | None = None
    slot_scores: Callable[[Configuration, NodeId], Sequence[Score]] | None = None
    node_value: Callable[[Configuration, NodeId], Any] | None = None
    leq: Callable[[Any, Any], bool] = scalar_leq
    footprint: frozenset = frozenset()
    scalar: bool = True
    summarize: Callable[[Any], Score] | None = None

    def scores(self, c: Configuration, p: NodeId) -> list[Score]:
        if self.slot_scores is not None:
            return list(self.slot_scores(c, p))
        if self.eval is None:
            return []
        return [self.eval(c, p, q) for q in sorted(c.neighbors(p))]

    def aggregate_node(self, c: Configuration, p: NodeId) -> Any:
        """The node's value: the mean of its slot scores, 0 when it has no slots."""
        if self.node_value is not None:
            return self.node_value(c, p)
        return mean(self.scores(c, p))

    def summary(self, value: Any) -> Score:
        return self.summarize(value) if self.summarize else value


def aggregate_node(crit: LocalCriterion, c: Configuration, p: NodeId) -> Any:
    return crit.aggregate_node(c, p)


@dataclass(frozen=True)
class GlobalValue:
    """A global criterion value with the node domain it was computed over."""

    domain: frozenset
    per_node: Mapping[NodeId, Any] = field(default_factory=dict)

    def restrict(self, domain: frozenset) -> "GlobalValue":
        return GlobalValue(frozenset(domain), {p: self.per_node[p] for p in domain})


@dataclass(frozen=True)
class GlobalCriterion:
    """Combines node values: summed for scalar criteria, compared pointwise otherwise."""

    base: LocalCriterion

    @property
    def name(self) -> str:
        return self.base.name

    def evaluate(self, c: Configuration, domain: frozenset | None = None) -> GlobalValue:
        nodes = c.active if domain is None else frozenset(domain) & c.active
        return GlobalValue(nodes, {p: self.base.aggregate_node(c, p) for p in sorted(nodes)})

    def total(self, v: GlobalValue, domain: frozenset | None = None) -> Score:
        nodes = v.domain if domain is None else domain
        return sum((self.base.summary(v.per_node[p]) for p in sorted(nodes)), Fraction(0))

    def leq(self, a: GlobalValue, b: GlobalValue) -> bool:
        """a precedes-or-equals b on their common domain."""
        common = a.domain & b.domain
        if self.base.scalar:
            return scalar_leq(self.total(a, common), self.total(b, common))
        return all(self.base.leq(a.per_node[p], b.per_node[p]) for p in common)

    def precedes(self, a: GlobalValue, b: GlobalValue) -> bool:
        return strictly_precedes(self.leq, a, b)


def aggregate_global(crit: LocalCriterion, c: Configuration) -> GlobalValue:
    return GlobalCriterion(crit).evaluate(c)


def ker_t(g1: Mapping[NodeId, frozenset], g2: Mapping[NodeId, frozenset]) -> frozenset:
    """Nodes present in both graphs with identical neighbor sets."""
    return frozenset(p for p in g1.keys() & g2.keys() if frozenset(g1[p]) == frozenset(g2[p]))


def ker_d(c1: Configuration, c2: Configuration) -> frozenset:
    """Data items present somewhere in both configurations."""
    held1 = frozenset().union(*c1.data.values()) if c1.data else frozenset()
    held2 = frozenset().union(*c2.data.values()) if c2.data else frozenset()
    return held1 & held2


def check_independence(a: GlobalCriterion, b: GlobalCriterion, c: Configuration | None = None) -> bool:
    """Whether two criteria read disjoint node-state fields.

    When c is given, only fields actually present on some active node state count.
    """
    fa, fb = a.base.footprint, b.base.footprint
    if c is not None and c.nodes:
        present = frozenset(
            name for state in c.nodes.values() if state is not None for name in fa | fb if hasattr(state, name)
        )
        if present:
            fa, fb = fa & present, fb & present
    if a.name == b.name:
        return False
    return not (fa & fb)


@dataclass(frozen=True)
class CompositeCriterion:
    """Independent criteria ordered by the monotonic composition rule.

    x strictly precedes y when one part strictly improves and no part regresses.
    """

    parts: tuple[GlobalCriterion, ...]

    @property
    def name(self) -> str:
        return "+".join(p.name for p in self.parts)

    def evaluate(self, c: Configuration, domain: frozenset | None = None) -> tuple[GlobalValue, ...]:
        return tuple(part.evaluate(c, domain) for part in self.parts)

    def leq(self, x: Sequence[GlobalValue], y: Sequence[GlobalValue]) -> bool:
        return all(part.leq(a, b) for part, a, b in zip(self.parts, x, y))

    def precedes(self, x: Sequence[GlobalValue], y: Sequence[GlobalValue]) -> bool:
        return self.leq(x, y) and any(part.precedes(a, b) for part, a, b in zip(self.parts, x, y))

    def total(self, v: Sequence[GlobalValue], domain: frozenset | None = None) -> Score:
        return sum((part.total(x, domain) for part, x in zip(self.parts, v)), Fraction(0))


def compose_monotonic(parts: Sequence[GlobalCriterion], sample: Sequence[Configuration] = ()) -> CompositeCriterion:
    """Compose criteria after checking pairwise independence on the sample configurations."""
    parts = tuple(parts)
    for i, a in enumerate(parts):
        for b in parts[i + 1 :]:
            contexts = list(sample) or [None]
            if not all(check_independence(a, b, c) for c in contexts):
                raise NotIndependent(f"Criteria {a.name} and {b.name} share state fields")
    return CompositeCriterion(parts)


@dataclass(frozen=True)
class OrderAudit:
    reflexive: bool
    antisymmetric: bool
    transitive: bool
    total: bool
    violations: tuple[str, ...] = ()


def audit_order(values: Sequence[Any], leq: Callable[[Any, Any], bool]) -> OrderAudit:
    """Check the order axioms of leq over a finite sample of values.

    Antisymmetry is checked up to equality of the values themselves.
    """
    values = list(values)
    violations: list[str] = []
    reflexive = antisymmetric = transitive = total = True
    for a in values:
        if not leq(a, a):
            reflexive = False
            violations.append(f"not reflexive at {a!r}")
    for a in values:
        for b in values:
            ab, ba = leq(a, b), leq(b, a)
            if ab and ba and a != b:
                antisymmetric = False
                violations.append(f"not antisymmetric: {a!r} and {b!r}")
            if not ab and not ba:
                total = False
            if ab:
                for d in values:
                    if leq(b, d) and not leq(a, d):
                        transitive = False
                        violations.append(f"not transitive: {a!r} <= {b!r} <= {d!r}")
    return OrderAudit(reflexive, antisymmetric, transitive, total, tuple(dict.fromkeys(violations)))
