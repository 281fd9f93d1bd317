# ABOUTME: Trace monitors for safety, weak liveness, liveness and kernel preservation.
# ABOUTME: classify() turns the property results into a self-organization class verdict.

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

import numpy as np

from selforg_sim.criteria.base import TOLERANCE, CompositeCriterion, GlobalCriterion, ker_d, ker_t
from selforg_sim.model import (
    Configuration,
    NodeId,
    ProtocolModel,
    SimulationError,
    Trace,
    apply_action,
    canonical,
    project_data_kernel,
    project_kernel,
)

logger = logging.getLogger(__name__)

WITNESS_LIMIT = 20


class EnumerationUnavailable(SimulationError):
    """Raised when p-stability is asked of a trace without a protocol model."""


class PropertyName(str, Enum):
    SAFETY = "Safety"
    WEAK_LIVENESS = "WeakLiveness"
    LIVENESS = "Liveness"
    KERNEL_PRESERVATION = "KernelPreservation"
    BOUNDARY_MONOTONICITY = "BoundaryMonotonicity"


class Status(str, Enum):
    HOLDS = "Holds"
    VIOLATED = "Violated"
    PENDING = "PendingAtHorizon"


class KernelKind(str, Enum):
    TOPOLOGICAL = "Topological"
    DATA = "Data"


class OrgClass(str, Enum):
    NONE = "None"
    WEAK = "Weak"
    SELF = "Self"
    STRONG = "Strong"

    @property
    def rank(self) -> int:
        return _RANKS[self]


_RANKS = {OrgClass.NONE: 0, OrgClass.WEAK: 1, OrgClass.SELF: 2, OrgClass.STRONG: 3}


@dataclass(frozen=True)
class PropertyResult:
    property: PropertyName
    status: Status
    witness: dict | None = None

    @property
    def holds(self) -> bool:
        return self.status is Status.HOLDS

    def to_dict(self) -> dict:
        return {"property": self.property.value, "status": self.status.value, "witness": self.witness}


@dataclass(frozen=True)
class Verdict:
    org_class: OrgClass
    results: tuple[PropertyResult, ...]
    criterion: str
    pending: tuple[str, ...] = ()
    extras: tuple[PropertyResult, ...] = ()

    def result(self, name: PropertyName) -> PropertyResult:
        for r in self.results + self.extras:
            if r.property is name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "class": self.org_class.value,
            "criterion": self.criterion,
            "pending": list(self.pending),
            "results": [r.to_dict() for r in self.results],
            "extras": [r.to_dict() for r in self.extras],
        }


Criterion = GlobalCriterion | CompositeCriterion


def local_parts(gc: Criterion):
    if isinstance(gc, CompositeCriterion):
        return [part.base for part in gc.parts]
    return [gc.base]


def describe(gc: Criterion, value: Any) -> Any:
    """A JSON-friendly rendering of a global criterion value."""
    if isinstance(gc, CompositeCriterion):
        return [describe(part, v) for part, v in zip(gc.parts, value)]
    if gc.base.scalar:
        return canonical(gc.total(value))
    return {str(p): canonical(v) for p, v in sorted(value.per_node.items())}


def _require_model(model: ProtocolModel | None) -> ProtocolModel:
    if model is None:
        raise EnumerationUnavailable("p-stability needs a protocol model to enumerate enabled actions")
    return model


def _not_worse(parts, c: Configuration, c2: Configuration, p: NodeId) -> bool:
    return all(crit.leq(crit.aggregate_node(c2, p), crit.aggregate_node(c, p)) for crit in parts)


def is_p_stable(c: Configuration, p: NodeId, crit, model: ProtocolModel | None) -> bool:
    """True when no action enabled at p can raise p's criterion value."""
    model = _require_model(model)
    parts = local_parts(crit) if isinstance(crit, (GlobalCriterion, CompositeCriterion)) else [crit]
    return all(_not_worse(parts, c, apply_action(c, a, model), p) for a in model.enabled_actions(c, p))


def is_globally_stable(c: Configuration, gc: Criterion, model: ProtocolModel | None) -> bool:
    """True when every active node is p-stable in c."""
    model = _require_model(model)
    parts = local_parts(gc)
    for p, actions in model.enabled_by_actor(c).items():
        if p not in c.nodes:
            continue
        for a in actions:
            if not _not_worse(parts, c, apply_action(c, a, model), p):
                return False
    return True


class TraceEvaluation:
    """Caches fragment begin/end values and stability checks over one trace."""

    def __init__(self, t: Trace, gc: Criterion, model: ProtocolModel | None = None):
        self.trace = t
        self.gc = gc
        self.model = model if model is not None else t.model
        self.fragments = t.fragments
        self._begin: dict[int, Any] = {}
        self._end: dict[int, Any] = {}
        self._stable: dict[int, bool] = {}

    def begin_value(self, k: int):
        if k not in self._begin:
            self._begin[k] = self.gc.evaluate(self.trace.begin(self.fragments[k]))
        return self._begin[k]

    def end_value(self, k: int):
        if k not in self._end:
            self._end[k] = self.gc.evaluate(self.trace.end(self.fragments[k]))
        return self._end[k]

    def stable_at(self, config_index: int) -> bool:
        if config_index not in self._stable:
            self._stable[config_index] = is_globally_stable(
                self.trace.configuration(config_index), self.gc, self.model
            )
        return self._stable[config_index]

    def begin_stable(self, k: int) -> bool:
        return self.stable_at(self.fragments[k].start)

    def final_stable(self) -> bool:
        return self.stable_at(len(self.trace))

    def last_stable_begin(self) -> int:
        """Index of the last fragment whose begin is all-p-stable, or -1."""
        for k in range(len(self.fragments) - 1, -1, -1):
            if self.begin_stable(k):
                return k
        return -1


def _pending(prop: PropertyName, unsatisfied: Sequence[int], horizon: int) -> PropertyResult:
    witness = {
        "unsatisfied_fragments": list(unsatisfied[:WITNESS_LIMIT]),
        "unsatisfied_count": len(unsatisfied),
        "horizon": horizon,
    }
    return PropertyResult(prop, Status.PENDING, witness)


def check_safety(t: Trace, gc: Criterion, evaluation: TraceEvaluation | None = None) -> PropertyResult:
    """Every static fragment ends no worse than it began."""
    ev = evaluation or TraceEvaluation(t, gc)
    for k, f in enumerate(ev.fragments):
        begin, end = ev.begin_value(k), ev.end_value(k)
        if not gc.leq(begin, end):
            witness = {
                "fragment": k,
                "begin_index": f.start,
                "end_index": f.end,
                "begin_value": describe(gc, begin),
                "end_value": describe(gc, end),
            }
            logger.info(f"Safety violated in fragment {k} (configurations {f.start}..{f.end})")
            return PropertyResult(PropertyName.SAFETY, Status.VIOLATED, witness)
    return PropertyResult(PropertyName.SAFETY, Status.HOLDS)


def check_weak_liveness(
    t: Trace, gc: Criterion, model: ProtocolModel | None = None, evaluation: TraceEvaluation | None = None
) -> PropertyResult:
    """From every fragment on, some fragment strictly improves or starts all-p-stable.

    A finite trace whose last configuration is all-p-stable discharges every fragment.
    """
    ev = evaluation or TraceEvaluation(t, gc, model)
    count = len(ev.fragments)
    if count == 0 or ev.final_stable():
        return PropertyResult(PropertyName.WEAK_LIVENESS, Status.HOLDS)
    last_good = -1
    for j in range(count - 1, -1, -1):
        if gc.precedes(ev.begin_value(j), ev.end_value(j)) or ev.begin_stable(j):
            last_good = j
            break
    unsatisfied = list(range(last_good + 1, count))
    if not unsatisfied:
        return PropertyResult(PropertyName.WEAK_LIVENESS, Status.HOLDS)
    return _pending(PropertyName.WEAK_LIVENESS, unsatisfied, len(t))


def _scalar_improved(ev: TraceEvaluation, candidates: Sequence[int]) -> set[int]:
    """Fragments i with a later fragment end strictly above end(f_i) on their common domain.

    Node lifetimes are contiguous because identifiers are never reused, so each
    node's values over fragment ends form one array. Arrays hold the summaries
    as objects so exact values compare exactly; only float summaries use TOLERANCE.
    """
    gc = ev.gc
    count = len(ev.fragments)
    ends = [ev.end_value(k) for k in range(count)]
    first: dict[NodeId, int] = {}
    values: dict[NodeId, list] = {}
    for k, v in enumerate(ends):
        for p, val in v.per_node.items():
            first.setdefault(p, k)
            values.setdefault(p, []).append(gc.base.summary(val))
    series = {p: np.asarray(vals, dtype=object) for p, vals in values.items()}
    inexact = any(isinstance(x, float) for vals in values.values() for x in vals)
    threshold = TOLERANCE if inexact else 0

    improved = set()
    for i in candidates:
        width = count - i - 1
        if width <= 0:
            continue
        acc = np.zeros(width, dtype=object)
        for p in ends[i].domain:
            arr = series[p]
            offset = i - first[p]
            tail = arr[offset + 1 :]
            acc[: len(tail)] += tail - arr[offset]
        if (acc > threshold).any():
            improved.add(i)
    return improved


def check_liveness(
    t: Trace, gc: Criterion, model: ProtocolModel | None = None, evaluation: TraceEvaluation | None = None
) -> PropertyResult:
    """From every fragment on, some fragment ends strictly above end(f_i) or starts all-p-stable.

    The search runs over j >= i. A fragment never ends strictly above itself, so
    only later ends are compared; a fragment whose own begin is all-p-stable is
    discharged through last_stable_begin. Improving within f_i counts for weak
    liveness only.
    """
    ev = evaluation or TraceEvaluation(t, gc, model)
    count = len(ev.fragments)
    if count == 0 or ev.final_stable():
        return PropertyResult(PropertyName.LIVENESS, Status.HOLDS)
    candidates = list(range(ev.last_stable_begin() + 1, count))
    if isinstance(gc, GlobalCriterion) and gc.base.scalar:
        improved = _scalar_improved(ev, candidates)
    else:
        improved = {
            i
            for i in candidates
            if any(gc.precedes(ev.end_value(i), ev.end_value(j)) for j in range(i + 1, count))
        }
    unsatisfied = [i for i in candidates if i not in improved]
    if not unsatisfied:
        return PropertyResult(PropertyName.LIVENESS, Status.HOLDS)
    return _pending(PropertyName.LIVENESS, unsatisfied, len(t))


def boundary_kernel(t: Trace, k: int, kind: KernelKind) -> tuple[frozenset, Configuration, Configuration]:
    """The kernel across the boundary after fragment k, with the projected end and begin."""
    end = t.end(t.fragments[k])
    begin = t.begin(t.fragments[k + 1])
    if kind is KernelKind.DATA:
        kernel = ker_d(end, begin)
        return kernel, project_data_kernel(end, kernel), project_data_kernel(begin, kernel)
    kernel = ker_t(end.active_graph(), begin.active_graph())
    return kernel, project_kernel(end, kernel), project_kernel(begin, kernel)


def check_kernel_preservation(
    t: Trace, gc: Criterion, kind: KernelKind = KernelKind.TOPOLOGICAL, demon_class: str | None = None
) -> PropertyResult:
    """The kernel across each churn boundary is no worse after the boundary than before.

    An empty kernel holds vacuously, except under a kernel-based demon.
    """
    kind = KernelKind(kind)
    empty_boundaries = []
    for k in range(len(t.fragments) - 1):
        kernel, before, after = boundary_kernel(t, k, kind)
        if not kernel:
            if demon_class == "KernelBased":
                return PropertyResult(
                    PropertyName.KERNEL_PRESERVATION, Status.VIOLATED, {"boundary": k, "reason": "empty kernel"}
                )
            empty_boundaries.append(k)
            continue
        v_before, v_after = gc.evaluate(before), gc.evaluate(after)
        if not gc.leq(v_before, v_after):
            witness = {
                "boundary": k,
                "kernel": sorted(kernel),
                "before": describe(gc, v_before),
                "after": describe(gc, v_after),
            }
            return PropertyResult(PropertyName.KERNEL_PRESERVATION, Status.VIOLATED, witness)
    witness = {"empty_kernel_boundaries": empty_boundaries[:WITNESS_LIMIT]} if empty_boundaries else None
    return PropertyResult(PropertyName.KERNEL_PRESERVATION, Status.HOLDS, witness)


def check_boundary_monotonicity(t: Trace, gc: Criterion, evaluation: TraceEvaluation | None = None) -> PropertyResult:
    """Whole-configuration values never drop across a churn boundary (on the common domain)."""
    ev = evaluation or TraceEvaluation(t, gc)
    for k in range(len(ev.fragments) - 1):
        before, after = ev.end_value(k), ev.begin_value(k + 1)
        if not gc.leq(before, after):
            witness = {"boundary": k, "before": describe(gc, before), "after": describe(gc, after)}
            return PropertyResult(PropertyName.BOUNDARY_MONOTONICITY, Status.VIOLATED, witness)
    return PropertyResult(PropertyName.BOUNDARY_MONOTONICITY, Status.HOLDS)


def _class_from(results: dict[PropertyName, PropertyResult]) -> OrgClass:
    ok = {name: r.holds for name, r in results.items()}
    if not (ok[PropertyName.SAFETY] and ok[PropertyName.WEAK_LIVENESS]):
        return OrgClass.NONE
    if not ok[PropertyName.LIVENESS]:
        return OrgClass.WEAK
    if not ok[PropertyName.KERNEL_PRESERVATION]:
        return OrgClass.SELF
    return OrgClass.STRONG


def classify(
    t: Trace,
    gc: Criterion,
    model: ProtocolModel | None = None,
    kernel_kind: KernelKind = KernelKind.TOPOLOGICAL,
    demon_class: str | None = None,
) -> Verdict:
    """Classify a trace as strongly, plainly or weakly self-organizing, or none of them.

    Each class carries the obligations of the classes below it, so a verdict never
    skips a level. Pending properties demote the verdict and are listed.
    """
    ev = TraceEvaluation(t, gc, model)
    results = {
        PropertyName.SAFETY: check_safety(t, gc, ev),
        PropertyName.WEAK_LIVENESS: check_weak_liveness(t, gc, model, ev),
        PropertyName.LIVENESS: check_liveness(t, gc, model, ev),
        PropertyName.KERNEL_PRESERVATION: check_kernel_preservation(t, gc, kernel_kind, demon_class),
    }
    org_class = _class_from(results)
    pending = tuple(name.value for name, r in results.items() if r.status is Status.PENDING)
    extras = (check_boundary_monotonicity(t, gc, ev),)
    logger.info(f"Trace of {len(t)} actions, {len(ev.fragments)} fragments classified {org_class.value}")
    return Verdict(org_class, tuple(results.values()), gc.name, pending, extras)


def with_result(verdict: Verdict, result: PropertyResult) -> Verdict:
    """The verdict with one property result replaced and its class recomputed."""
    results = {r.property: r for r in verdict.results}
    results[result.property] = result
    pending = tuple(name.value for name, r in results.items() if r.status is Status.PENDING)
    return replace(verdict, org_class=_class_from(results), results=tuple(results.values()), pending=pending)


@dataclass(frozen=True)
class CompositeVerdict:
    """The composite-criterion verdict plus one verdict per part.

    org_class is the weakest class over the parts and the composite.
    """

    composite: Verdict
    parts: dict[str, Verdict] = field(default_factory=dict)

    @property
    def org_class(self) -> OrgClass:
        verdicts = [self.composite, *self.parts.values()]
        return min((v.org_class for v in verdicts), key=lambda k: k.rank)

    def to_dict(self) -> dict:
        return {
            "class": self.org_class.value,
            "composite": self.composite.to_dict(),
            "parts": {name: v.to_dict() for name, v in self.parts.items()},
        }


def classify_composite(
    t: Trace,
    gc: CompositeCriterion,
    model: ProtocolModel | None = None,
    kernel_kind: KernelKind = KernelKind.TOPOLOGICAL,
    demon_class: str | None = None,
) -> CompositeVerdict:
    """Classify under the composite criterion and under each of its parts."""
    parts = {part.name: classify(t, part, model, kernel_kind, demon_class) for part in gc.parts}
    return CompositeVerdict(classify(t, gc, model, kernel_kind, demon_class), parts)


def hierarchy_consistent(v: Verdict) -> bool:
    """Whether the verdict respects Strong => Self => Weak."""
    r = {res.property: res.holds for res in v.results}
    if v.org_class.rank >= OrgClass.WEAK.rank and not (r[PropertyName.SAFETY] and r[PropertyName.WEAK_LIVENESS]):
        return False
    if v.org_class.rank >= OrgClass.SELF.rank and not r[PropertyName.LIVENESS]:
        return False
    if v.org_class is OrgClass.STRONG and not r[PropertyName.KERNEL_PRESERVATION]:
        return False
    return True
