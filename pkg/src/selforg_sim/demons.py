# ABOUTME: Churn demons: seeded schedule generation, schedule validation and the adversarial demon.
# ABOUTME: Schedules are lists of Connect/Disconnect events keyed by the action index they fire at.

import json
import logging
import random
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from selforg_sim.criteria.base import ker_t
from selforg_sim.model import Action, ActionKind, Configuration, NodeId, SimulationError, Trace, apply_action

logger = logging.getLogger(__name__)


class DemonError(SimulationError):
    """Base class for demon specification and schedule errors."""


class InfeasibleSpec(DemonError):
    """Raised when a demon specification cannot be met from the initial population."""


class DemonClass(str, Enum):
    BOUNDED = "Bounded"
    FINITE = "Finite"
    KERNEL_BASED = "KernelBased"
    ARBITRARY = "Arbitrary"
    ADVERSARIAL = "Adversarial"


@dataclass(frozen=True)
class DemonSpec:
    demon_class: DemonClass
    bound: int | None = None
    kernel_min_size: int | None = None
    rng_seed: int = 0
    horizon: int = 0
    spacing: int = 5

    def __post_init__(self):
        object.__setattr__(self, "demon_class", DemonClass(self.demon_class))
        if self.demon_class is DemonClass.BOUNDED and (self.bound is None or self.bound < 0):
            raise InfeasibleSpec("Bounded demon requires a non-negative bound")
        if self.demon_class is DemonClass.KERNEL_BASED and (self.kernel_min_size is None or self.kernel_min_size < 1):
            raise InfeasibleSpec("KernelBased demon requires kernel_min_size >= 1")
        if self.horizon < 0:
            raise InfeasibleSpec("horizon must be non-negative")
        if self.spacing < 1:
            raise InfeasibleSpec("spacing must be at least 1")

    def to_dict(self) -> dict:
        return {
            "class": self.demon_class.value,
            "bound": self.bound,
            "kernel_min_size": self.kernel_min_size,
            "rng_seed": self.rng_seed,
            "horizon": self.horizon,
            "spacing": self.spacing,
        }


@dataclass(frozen=True)
class ChurnEvent:
    index: int
    kind: ActionKind
    target: NodeId
    protected: tuple[NodeId, ...] = ()

    def to_dict(self) -> dict:
        return {"index": self.index, "kind": self.kind.value, "target": self.target, "protected": list(self.protected)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ChurnEvent":
        return cls(int(raw["index"]), ActionKind(raw["kind"]), int(raw["target"]), tuple(raw.get("protected", ())))


@dataclass(frozen=True)
class ChurnSchedule:
    demon_class: DemonClass
    events: tuple[ChurnEvent, ...] = ()
    bound: int | None = None

    def __len__(self) -> int:
        return len(self.events)


def _slots(spec: DemonSpec, whole_horizon: bool) -> list[int]:
    end = spec.horizon if whole_horizon else spec.horizon // 2
    return list(range(spec.spacing, end + 1, spec.spacing))


def choose_kernel(
    size: int, initial_nodes: int, never_disconnect: frozenset, rng: random.Random
) -> tuple[NodeId, ...]:
    """The fixed kernel of a KernelBased run: nodes that must never disconnect first, then a seeded sample."""
    kept = sorted(p for p in never_disconnect if 1 <= p <= initial_nodes)[:size]
    others = [p for p in range(1, initial_nodes + 1) if p not in kept]
    return tuple(sorted(kept + rng.sample(others, size - len(kept))))


def keeps_kernel(before: Configuration, after: Configuration, kernel: Sequence[NodeId]) -> bool:
    """Whether every kernel node is active on both sides with the same active neighbors."""
    g1, g2 = before.active_graph(), after.active_graph()
    return all(p in g1 and p in g2 and g1[p] == g2[p] for p in kernel)


def generate_schedule(
    spec: DemonSpec,
    initial_nodes: int,
    *,
    never_disconnect: frozenset = frozenset(),
) -> ChurnSchedule:
    """Draw a churn schedule for a demon class from the DemonSpec seed.

    Bounded, Finite and KernelBased churn lands in the first half of the horizon
    so the protocol has room to settle; Arbitrary churn spans the whole horizon.
    The adversarial demon is online and gets an empty offline schedule.

    A KernelBased schedule names one kernel for the whole run on every event.
    The engine skips any event that would change a kernel node's neighbors.
    """
    if initial_nodes < 1:
        raise InfeasibleSpec("The initial configuration needs at least one node")
    if spec.demon_class is DemonClass.KERNEL_BASED and spec.kernel_min_size > initial_nodes:
        raise InfeasibleSpec(
            f"kernel_min_size {spec.kernel_min_size} exceeds the initial population of {initial_nodes}"
        )
    rng = random.Random(spec.rng_seed)
    if spec.demon_class is DemonClass.ADVERSARIAL:
        return ChurnSchedule(spec.demon_class)

    arbitrary = spec.demon_class is DemonClass.ARBITRARY
    slots = _slots(spec, whole_horizon=arbitrary)
    if spec.demon_class is DemonClass.BOUNDED:
        count = min(spec.bound, len(slots))
        bound = spec.bound
    elif spec.demon_class is DemonClass.FINITE:
        bound = rng.randint(1, max(1, len(slots) // 2)) if slots else 0
        count = min(bound, len(slots))
    elif spec.demon_class is DemonClass.KERNEL_BASED:
        count = rng.randint(1, max(1, len(slots) // 2)) if slots else 0
        bound = None
    else:
        count = len(slots)
        bound = None
    indices = sorted(rng.sample(slots, count)) if count else []

    active = list(range(1, initial_nodes + 1))
    next_id = initial_nodes + 1
    floor = spec.kernel_min_size or 1
    protected: tuple[NodeId, ...] = ()
    if spec.demon_class is DemonClass.KERNEL_BASED:
        protected = choose_kernel(spec.kernel_min_size, initial_nodes, never_disconnect, rng)
    events = []
    for index in indices:
        candidates = [p for p in active if p not in protected and p not in never_disconnect]
        if len(active) > floor and candidates and rng.random() < 0.5:
            target = rng.choice(candidates)
            active.remove(target)
            events.append(ChurnEvent(index, ActionKind.DISCONNECT, target, protected))
        else:
            active.append(next_id)
            events.append(ChurnEvent(index, ActionKind.CONNECT, next_id, protected))
            next_id += 1
    logger.debug(f"Generated {len(events)} churn events for a {spec.demon_class.value} demon")
    return ChurnSchedule(spec.demon_class, tuple(events), bound if spec.demon_class is DemonClass.BOUNDED else None)


def validate_schedule(spec: DemonSpec, s: ChurnSchedule, t: Trace) -> bool:
    """Check a produced trace against the demon's promise."""
    dynamic = [a for a in t.actions if a.is_dynamic]
    if spec.demon_class is DemonClass.BOUNDED:
        ok = len(dynamic) <= spec.bound
        if not ok:
            logger.warning(f"Bounded demon allowed {spec.bound} churn actions, trace has {len(dynamic)}")
        return ok
    if spec.demon_class is DemonClass.KERNEL_BASED:
        fragments = t.fragments
        for k in range(len(fragments) - 1):
            end, begin = t.end(fragments[k]), t.begin(fragments[k + 1])
            kernel = ker_t(end.active_graph(), begin.active_graph())
            if len(kernel) < spec.kernel_min_size:
                logger.warning(
                    f"Topological kernel of {len(kernel)} nodes at the boundary after fragment {k}, "
                    f"fewer than {spec.kernel_min_size}"
                )
                return False
        return True
    if spec.demon_class is DemonClass.FINITE:
        logger.info(f"Finite demon produced {len(dynamic)} churn actions")
    return True


def churn_rate(t: Trace) -> float:
    """Mean normalized change of the active set per action."""
    if not t.actions:
        return 0.0
    total = 0.0
    active = set(t.initial.active)
    for a in t.actions:
        if a.kind is ActionKind.CONNECT:
            active.add(a.actor)
            total += 1 / len(active)
        elif a.kind is ActionKind.DISCONNECT:
            total += 1 / len(active)
            active.discard(a.actor)
    return total / len(t.actions)


@dataclass
class AdversarialDemon:
    """An online demon that injects churn whenever the next step would reach stability.

    stable(c) says whether c is all-p-stable; perturb(c, fresh, previous) returns the
    Connect/Disconnect actions to inject, given a fresh identifier and the last
    injected node.
    """

    stable: Callable[[Configuration], bool]
    perturb: Callable[[Configuration, NodeId, NodeId | None], list[Action]]
    model: object = None
    events: list[ChurnEvent] = field(default_factory=list)
    stable_reached: bool = False
    last_injected: NodeId | None = None

    def intercept(self, c: Configuration, block: Sequence[Action], seq: int, fresh: NodeId) -> list[Action] | None:
        nxt = c
        for a in block:
            nxt = apply_action(nxt, a, self.model)
        if not self.stable(nxt):
            return None
        return self._inject(c, seq, fresh)

    def on_quiescent(self, c: Configuration, seq: int, fresh: NodeId) -> list[Action] | None:
        if self.stable(c):
            self.stable_reached = True
        return self._inject(c, seq, fresh)

    def _inject(self, c: Configuration, seq: int, fresh: NodeId) -> list[Action] | None:
        actions = self.perturb(c, fresh, self.last_injected)
        if not actions:
            return None
        for offset, a in enumerate(actions):
            self.events.append(ChurnEvent(seq + offset, a.kind, a.actor))
            if a.kind is ActionKind.CONNECT:
                self.last_injected = a.actor
        return actions

    @property
    def schedule(self) -> ChurnSchedule:
        return ChurnSchedule(DemonClass.ADVERSARIAL, tuple(self.events))


def adversarial_demon(
    stable: Callable[[Configuration], bool],
    perturb: Callable[[Configuration, NodeId, NodeId | None], list[Action]],
    model=None,
) -> AdversarialDemon:
    return AdversarialDemon(stable, perturb, model)


def write_schedule(s: ChurnSchedule, path: Path) -> None:
    """Write a schedule as JSON lines: a header record, then one record per event."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"type": "schedule", "class": s.demon_class.value, "bound": s.bound}, sort_keys=True) + "\n")
        for event in s.events:
            fh.write(json.dumps({"type": "churn", **event.to_dict()}, sort_keys=True) + "\n")


def read_schedule(path: Path) -> ChurnSchedule:
    try:
        lines = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as e:
        raise DemonError(f"{path}: unreadable schedule file: {e}") from e
    if not lines or lines[0].get("type") != "schedule":
        raise DemonError(f"{path}: missing schedule header record")
    header = lines[0]
    events = tuple(ChurnEvent.from_dict(r) for r in lines[1:] if r.get("type") == "churn")
    return ChurnSchedule(DemonClass(header["class"]), events, header.get("bound"))


def check_schedule(spec: DemonSpec, s: ChurnSchedule, initial_nodes: int | None = None) -> list[str]:
    """Problems that keep a schedule file from satisfying a demon specification; empty when it does."""
    problems = []
    if s.demon_class is not spec.demon_class:
        problems.append(f"schedule is for a {s.demon_class.value} demon, expected {spec.demon_class.value}")
    indices = [e.index for e in s.events]
    if indices != sorted(indices):
        problems.append("churn events are not in index order")
    late = [e.index for e in s.events if e.index > spec.horizon]
    if late:
        problems.append(f"{len(late)} churn events fall after the horizon of {spec.horizon}")
    if spec.demon_class is DemonClass.BOUNDED and len(s.events) > spec.bound:
        problems.append(f"{len(s.events)} churn events exceed the bound of {spec.bound}")
    if spec.demon_class is DemonClass.KERNEL_BASED:
        for e in s.events:
            if len(e.protected) < spec.kernel_min_size:
                problems.append(f"event at {e.index} protects {len(e.protected)} nodes, fewer than {spec.kernel_min_size}")
            if e.kind is ActionKind.DISCONNECT and e.target in e.protected:
                problems.append(f"event at {e.index} disconnects protected node {e.target}")
    if initial_nodes is not None:
        active = set(range(1, initial_nodes + 1))
        for e in s.events:
            if e.kind is ActionKind.CONNECT:
                if e.target in active:
                    problems.append(f"event at {e.index} connects node {e.target}, which is already active")
                active.add(e.target)
            elif e.target not in active:
                problems.append(f"event at {e.index} disconnects node {e.target}, which is not active")
            else:
                active.discard(e.target)
    return problems
