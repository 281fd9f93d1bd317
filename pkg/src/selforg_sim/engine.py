# ABOUTME: Deterministic discrete-event engine and scenario runner.
# ABOUTME: Interleaves protocol events with demon churn, then classifies the trace and writes the outputs.

import logging
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import networkx as nx
import prometheus_client

from selforg_sim.config import Scenario
from selforg_sim.criteria.base import CompositeCriterion, audit_order
from selforg_sim.criteria.library import PROXIMITY, LeaderValue, leader_leq, resolve_criterion, unassigned_slots
from selforg_sim.demons import (
    AdversarialDemon,
    ChurnEvent,
    ChurnSchedule,
    DemonClass,
    DemonSpec,
    InfeasibleSpec,
    adversarial_demon,
    churn_rate,
    generate_schedule,
    keeps_kernel,
    validate_schedule,
    write_schedule,
)
from selforg_sim.lsa import LsaModel, random_configuration, random_position, ring_configuration
from selforg_sim.metrics import RunMetrics
from selforg_sim.model import (
    Action,
    ActionKind,
    Configuration,
    NodeId,
    ProtocolModel,
    ReadyEvent,
    Trace,
    apply_action,
    internal,
)
from selforg_sim.monitors import (
    KernelKind,
    PropertyName,
    PropertyResult,
    Status,
    Verdict,
    classify,
    classify_composite,
    is_globally_stable,
    with_result,
)
from selforg_sim.overlays.can import CanModel, can_configuration, zones_partition_torus
from selforg_sim.overlays.pastry import PastryModel, pastry_configuration, routing_prefix_sound
from selforg_sim.protocols.leader import LeaderModel, leader_configuration
from selforg_sim.protocols.query import QueryModel, QuerySpec, query_configuration, reachable_values
from selforg_sim.report import RunReport, emit_report, fragment_summaries
from selforg_sim.tracefile import emit_trace

logger = logging.getLogger(__name__)

ORDER_AUDIT_SAMPLE = 32


def leader_stable_set(s: Scenario) -> frozenset:
    """The alpha leader nodes that never churn: the configured ones, or a draw from the scenario seed."""
    params = s.protocol_params
    if params["stable"] is not None:
        return frozenset(params["stable"])
    return frozenset(random.Random(s.seed).sample(range(1, s.initial_nodes + 1), params["alpha"]))


def protected_nodes(s: Scenario) -> frozenset:
    """Nodes the demon must never disconnect for this scenario."""
    if s.protocol == "OneShotQuery":
        return frozenset({s.protocol_params["initiator"]})
    if s.protocol == "Leader":
        return leader_stable_set(s)
    return frozenset()


def build_model(s: Scenario, schedule: ChurnSchedule | None = None) -> ProtocolModel:
    """The protocol model a scenario describes.

    The leader universe covers every identifier the schedule can introduce, plus
    one that never joins, unless universe_size fixes it.
    """
    params = s.protocol_params
    if s.protocol == "LSA":
        return LsaModel(PROXIMITY, activation=s.activation, dimensions=params["dimensions"])
    if s.protocol == "CAN":
        return CanModel(params["dimensions"])
    if s.protocol == "Pastry":
        return PastryModel(
            b=params["b"],
            digits=params["digits"],
            leaf_size=params["leaf_size"],
            neighborhood_size=params["neighborhood_size"],
            maintenance_period=params["maintenance_period"],
        )
    if s.protocol == "Leader":
        size = params["universe_size"]
        if size is None:
            joins = sum(1 for e in (schedule.events if schedule else ()) if e.kind is ActionKind.CONNECT)
            size = s.initial_nodes + joins + 1
        return LeaderModel(params["alpha"], frozenset(range(1, size + 1)), leader_stable_set(s))
    return QueryModel(
        params["initiator"],
        QuerySpec(params["pattern"]),
        params["detection_delay"],
    )


def build_initial(s: Scenario, model: ProtocolModel, rng: random.Random) -> Configuration:
    """The seeded initial configuration for a scenario."""
    n = s.initial_nodes
    params = s.protocol_params
    if s.protocol == "LSA":
        if params["topology"] == "ring":
            positions = [random_position(rng, params["dimensions"]) for _ in range(n)]
            return ring_configuration(n, positions)
        return random_configuration(n, params["degree"], rng, params["dimensions"])
    if s.protocol == "CAN":
        return can_configuration(n, params["dimensions"], rng)
    if s.protocol == "Pastry":
        return pastry_configuration(n, model, rng)
    if s.protocol == "Leader":
        return leader_configuration(n, model.universe)
    if params["initiator"] > n:
        raise InfeasibleSpec(f"Query initiator {params['initiator']} is outside the initial {n} nodes")
    degree = params["degree"]
    seed = rng.randrange(2**31)
    if n > degree >= 2:
        g = nx.connected_watts_strogatz_graph(n, degree, 0.3, seed=seed)
    else:
        g = nx.complete_graph(n)
    g = nx.relabel_nodes(g, {i: i + 1 for i in range(n)})
    items = params["items_per_node"]
    data = {p: frozenset(f"v{p}-{i}" for i in range(items)) for p in g.nodes}
    return query_configuration(g, data)


@dataclass
class RunResult:
    """What the engine produced: the trace and the churn it actually injected."""

    trace: Trace
    schedule: ChurnSchedule
    skipped: list[ChurnEvent] = field(default_factory=list)
    horizon_exhausted: bool = False


class Simulation:
    """Runs one protocol model against one churn schedule up to a horizon.

    Ready events are picked uniformly with the seeded rng; a picked event's
    actions are applied as one block. Under a model that needs quiescence,
    churn waits until no protocol event is ready and no message is in flight.
    """

    def __init__(
        self,
        model: ProtocolModel,
        initial: Configuration,
        schedule: ChurnSchedule,
        rng: random.Random,
        horizon: int,
        demon: AdversarialDemon | None = None,
        scenario: str = "scenario",
    ):
        self.model = model
        self.schedule = schedule
        self.rng = rng
        self.horizon = horizon
        self.demon = demon
        self.scenario = scenario
        self.trace = Trace(initial, model)
        self.c = initial
        self.pending = deque(sorted(schedule.events, key=lambda e: e.index))
        self.skipped: list[ChurnEvent] = []
        self.protected = model.protected_ids()
        known = set(initial.nodes) | {e.target for e in schedule.events}
        self.next_fresh = max(known, default=0) + 1
        self.last_maintenance = 0

    @property
    def seq(self) -> int:
        return len(self.trace)

    def _apply(self, a: Action) -> bool:
        if self.seq >= self.horizon:
            return False
        a = Action(a.kind, a.actor, a.payload, self.seq)
        self.c = apply_action(self.c, a, self.model)
        self.trace.append(a, self.c)
        logger.debug(
            f"{a.kind.value} by node {a.actor}",
            extra={"scenario": self.scenario, "seq": a.seq, "node": a.actor},
        )
        return True

    def _apply_block(self, block: list[Action]) -> None:
        for a in block:
            if not self._apply(a):
                return

    def _quiescent(self, events: list[ReadyEvent]) -> bool:
        return not events and not self.c.channels

    def _fire_churn(self, event: ChurnEvent) -> None:
        if event.kind is ActionKind.CONNECT:
            if event.target in self.c.nodes:
                self._skip(event, "already active")
                return
            payload = self.model.connect_payload(self.c, event.target, self.rng)
            self._apply_churn(event, Action(ActionKind.CONNECT, event.target, payload))
            return
        if event.target not in self.c.nodes:
            self._skip(event, "not active")
        elif event.target in self.protected or event.target in event.protected:
            self._skip(event, "protected")
        elif len(self.c.nodes) <= 1:
            self._skip(event, "last active node")
        else:
            self._apply_churn(event, Action(ActionKind.DISCONNECT, event.target, {}))

    def _apply_churn(self, event: ChurnEvent, a: Action) -> None:
        if event.protected and not keeps_kernel(self.c, apply_action(self.c, a, self.model), event.protected):
            self._skip(event, "would change the kernel")
            return
        self._apply(a)

    def _skip(self, event: ChurnEvent, reason: str) -> None:
        self.skipped.append(event)
        logger.info(
            f"Skipped {event.kind.value} of node {event.target}: {reason}",
            extra={"scenario": self.scenario, "seq": self.seq, "node": event.target},
        )

    def _fresh_id(self) -> NodeId:
        fresh = self.next_fresh
        self.next_fresh += 1
        return fresh

    def _inject(self, actions: list[Action]) -> None:
        logger.info(
            f"Demon injected {len(actions)} churn actions",
            extra={"scenario": self.scenario, "seq": self.seq},
        )
        self._apply_block(actions)

    def _maintenance_due(self) -> bool:
        period = self.model.maintenance_period
        if period <= 0:
            return False
        return not self.pending or self.seq - self.last_maintenance >= period

    def _idle(self) -> None:
        """Advance time with a no-op so delayed messages become deliverable."""
        self._apply(internal(min(self.c.nodes), op="idle"))

    def step(self) -> bool:
        """Take one scheduling step; False when the run is over before the horizon."""
        if self.pending and self.pending[0].index <= self.seq:
            events = self.model.ready_events(self.c)
            if not self.model.churn_requires_quiescence or self._quiescent(events):
                self._fire_churn(self.pending.popleft())
                return True
        events = self.model.ready_events(self.c)
        if not events and self._maintenance_due():
            events = self.model.maintenance_events(self.c)
            if not events:
                self.last_maintenance = self.seq
        if not events:
            if self.c.channels and self.c.nodes:
                self._idle()
                return True
            if self.demon is not None:
                injected = self.demon.on_quiescent(self.c, self.seq, self._fresh_id())
                if injected:
                    self._inject(injected)
                    return True
            if self.pending:
                self._fire_churn(self.pending.popleft())
                return True
            return False
        event = self.rng.choice(events)
        block = event.build(self.c)
        if self.demon is not None:
            injected = self.demon.intercept(self.c, block, self.seq, self.next_fresh)
            if injected:
                self.next_fresh += 1
                self._inject(injected)
                return True
        self._apply_block(block)
        return True

    def run(self) -> RunResult:
        while self.seq < self.horizon:
            if not self.step():
                break
        exhausted = self.seq >= self.horizon
        schedule = self.demon.schedule if self.demon is not None else self.schedule
        logger.info(
            f"Run stopped after {self.seq} actions, {len(self.trace.fragments)} fragments",
            extra={"scenario": self.scenario},
        )
        return RunResult(self.trace, schedule, self.skipped, exhausted)


def _adversary_for(model: ProtocolModel, gc) -> AdversarialDemon:
    perturb = getattr(model, "perturbation", None)
    if perturb is None:
        raise InfeasibleSpec(f"The adversarial demon has no perturbation for protocol {model.name}")
    return adversarial_demon(lambda c: is_globally_stable(c, gc, model), perturb, model)


def simulate(
    model: ProtocolModel,
    initial: Configuration,
    spec: DemonSpec,
    rng: random.Random,
    gc=None,
    schedule: ChurnSchedule | None = None,
    scenario: str = "scenario",
    horizon: int | None = None,
) -> RunResult:
    """Run a model under a demon. A given schedule replaces the generated one.

    The run horizon defaults to the demon's.
    """
    demon = None
    if spec.demon_class is DemonClass.ADVERSARIAL:
        demon = _adversary_for(model, gc)
        schedule = ChurnSchedule(DemonClass.ADVERSARIAL)
    elif schedule is None:
        schedule = generate_schedule(spec, len(initial.nodes), never_disconnect=model.protected_ids())
    sim = Simulation(model, initial, schedule, rng, spec.horizon if horizon is None else horizon, demon, scenario)
    return sim.run()


def _leader_notes(model: LeaderModel, t: Trace) -> dict[str, Any]:
    final = t.last
    leaders = {p: model.leader(final, p) for p in sorted(final.nodes)}
    sample = []
    for f in t.fragments[-ORDER_AUDIT_SAMPLE // 2 :]:
        for c in (t.begin(f), t.end(f)):
            sample.extend((frozenset(s.trust), s.date) for s in c.nodes.values())
    sample = sorted(set(sample), key=lambda v: (v[1], sorted(v[0])))[:ORDER_AUDIT_SAMPLE]
    audit = audit_order([LeaderValue(*v) for v in sample], leader_leq)
    if not (audit.reflexive and audit.transitive):
        logger.warning(f"Leader order failed its audit: {len(audit.violations)} violations")
    agreed = set(leaders.values())
    return {
        "leaders": leaders,
        "stable": sorted(model.stable),
        "leader_agreement": len(agreed) == 1,
        "leader_in_stable": len(agreed) == 1 and agreed <= model.stable,
        "order_audit": {
            "reflexive": audit.reflexive,
            "antisymmetric": audit.antisymmetric,
            "transitive": audit.transitive,
            "total": audit.total,
            "violations": len(audit.violations),
        },
    }


def query_window(t: Trace, initiator: NodeId) -> tuple[int | None, int | None]:
    """Configuration indices where the initiator started the query and where it finished."""
    start = end = None
    for i, c in enumerate(t.iter_configurations()):
        state = c.nodes.get(initiator)
        if state is None:
            continue
        if start is None and state.started:
            start = i
        if state.started and state.done:
            end = i
            break
    return start, end


def _query_notes(model: QueryModel, t: Trace) -> dict[str, Any]:
    start, end = query_window(t, model.initiator)
    notes: dict[str, Any] = {"query_started": start is not None, "query_completed": end is not None}
    if end is None:
        return notes
    values = t.configuration(end).nodes[model.initiator].values
    expected = reachable_values(t, model.initiator, model.spec.pattern, start, end)
    notes.update(
        {
            "values": sorted(values),
            "missing_values": sorted(expected - values),
            "query_valid": expected <= values,
        }
    )
    return notes


def _run_notes(model: ProtocolModel, t: Trace) -> dict[str, Any]:
    final = t.last
    if isinstance(model, LeaderModel):
        return _leader_notes(model, t)
    if isinstance(model, QueryModel):
        return _query_notes(model, t)
    if isinstance(model, CanModel):
        return {"zones_partition_torus": zones_partition_torus(final)}
    if isinstance(model, PastryModel):
        unassigned = {p: len(unassigned_slots(final, p)) for p in sorted(final.nodes) if final.nodes[p].joined}
        return {
            "routing_prefix_sound": routing_prefix_sound(final),
            "slot_unassigned": sum(unassigned.values()),
        }
    return {}


def build_report(
    name: str,
    result: RunResult,
    gc,
    model: ProtocolModel,
    demon_class: DemonClass,
    kernel_kind: KernelKind = KernelKind.TOPOLOGICAL,
    promise_kept: bool = True,
) -> RunReport:
    """Classify a finished run and gather its per-fragment figures.

    A run whose trace breaks its demon's promise is reported with no class.
    """
    t = result.trace
    parts: dict[str, Verdict] = {}
    if isinstance(gc, CompositeCriterion):
        composite = classify_composite(t, gc, model, kernel_kind, demon_class.value)
        verdict, parts = composite.composite, composite.parts
    else:
        verdict = classify(t, gc, model, kernel_kind, demon_class.value)
    notes = _run_notes(model, t)
    if isinstance(model, LeaderModel) and not notes["leader_agreement"]:
        witness = {"leaders": {str(p): leader for p, leader in notes["leaders"].items()}, "horizon": len(t)}
        verdict = with_result(verdict, PropertyResult(PropertyName.LIVENESS, Status.PENDING, witness))
    if result.horizon_exhausted and verdict.pending:
        notes["horizon_exhausted"] = True
    if result.skipped:
        notes["skipped_churn"] = [e.to_dict() for e in result.skipped]
    if not promise_kept:
        notes["demon_promise_kept"] = False
    return RunReport(
        scenario=name,
        verdict=verdict,
        fragments=fragment_summaries(t, gc, kernel_kind),
        churn_rate=churn_rate(t),
        churn_events=sum(1 for a in t.actions if a.is_dynamic),
        events=len(t),
        part_verdicts=parts,
        notes=notes,
        demon_promise_kept=promise_kept,
    )


def run_scenario(s: Scenario, out_dir: Path | None = None, fmt: str = "both") -> RunReport:
    """Run a scenario end to end: simulate, classify and, given out_dir, write every output file."""
    spec = s.demon_spec()
    rng = random.Random(s.seed)
    gc = resolve_criterion(list(s.criterion), s.protocol)
    schedule = None
    if spec.demon_class is not DemonClass.ADVERSARIAL:
        schedule = generate_schedule(spec, s.initial_nodes, never_disconnect=protected_nodes(s))
    model = build_model(s, schedule)
    initial = build_initial(s, model, rng)
    logger.info(
        f"Running {s.protocol} under a {spec.demon_class.value} demon for up to {s.horizon} actions",
        extra={"scenario": s.name, "seed": s.seed},
    )
    result = simulate(model, initial, spec, rng, gc, schedule, s.name, s.horizon)
    kept = validate_schedule(spec, result.schedule, result.trace)
    if not kept:
        logger.error(
            f"Trace breaks the {spec.demon_class.value} demon's promise, the verdict is void",
            extra={"scenario": s.name},
        )

    report = build_report(s.name, result, gc, model, spec.demon_class, KernelKind(s.kernel), kept)
    logger.info(
        f"Verdict {report.org_class.value} over {report.fragment_count} fragments",
        extra={"scenario": s.name, "seed": s.seed},
    )
    if out_dir is None:
        return report

    out_dir = Path(out_dir)
    report.trace_path = emit_trace(result.trace, out_dir / "trace.jsonl", s.snapshot_interval, s.to_dict())
    write_schedule(result.schedule, out_dir / "schedule.jsonl")
    if fmt == "both":
        emit_report(report, out_dir, "both")
    elif fmt == "records":
        emit_report(report, out_dir / "report.jsonl", "records")
    else:
        emit_report(report, out_dir / "summary.csv", "csv-summary")
    metrics = RunMetrics(registry=prometheus_client.CollectorRegistry())
    metrics.record(s.name, report)
    metrics.write(out_dir / "metrics.prom")
    return report


DIVERGENCE_POSITIONS = tuple((Fraction(i),) for i in range(4))


@dataclass
class DivergenceDemo:
    """The adversarial run next to the same protocol without churn."""

    trace: Trace
    verdict: Verdict
    stable_configurations: int
    converged_without_churn: bool
    churn_events: int

    @property
    def witness(self) -> dict | None:
        return self.verdict.result(PropertyName.LIVENESS).witness

    @property
    def diverged(self) -> bool:
        safety = self.verdict.result(PropertyName.SAFETY).status is Status.HOLDS
        liveness = self.verdict.result(PropertyName.LIVENESS).status is Status.PENDING
        return safety and liveness and self.stable_configurations == 0


def run_divergence_demo(horizon: int = 10_000, seed: int = 0, out_dir: Path | None = None) -> DivergenceDemo:
    """Run LSA on a four-node ring under the adversarial demon, then again with no churn.

    Under the adversary no configuration of the trace is stable at every node,
    although every static fragment is safe; without churn the same start converges.
    """
    gc = resolve_criterion("proximity", "LSA")
    model = LsaModel(PROXIMITY, activation="ascending")
    initial = ring_configuration(4, DIVERGENCE_POSITIONS)

    spec = DemonSpec(DemonClass.ADVERSARIAL, rng_seed=seed, horizon=horizon)
    result = simulate(model, initial, spec, random.Random(seed), gc, scenario="demo-divergence")
    t = result.trace
    verdict = classify(t, gc, model)
    stable = sum(1 for c in t.iter_configurations() if is_globally_stable(c, gc, model))

    calm = simulate(
        model,
        initial,
        DemonSpec(DemonClass.BOUNDED, bound=0, rng_seed=seed, horizon=horizon),
        random.Random(seed),
        gc,
        scenario="demo-divergence-calm",
    )
    converged = is_globally_stable(calm.trace.last, gc, model)

    if out_dir is not None:
        emit_trace(t, Path(out_dir) / "trace.jsonl", 100)
        write_schedule(result.schedule, Path(out_dir) / "schedule.jsonl")
    logger.info(
        f"Adversarial run: {len(t)} actions, {stable} stable configurations, liveness "
        f"{verdict.result(PropertyName.LIVENESS).status.value}",
        extra={"scenario": "demo-divergence", "seed": seed},
    )
    return DivergenceDemo(t, verdict, stable, converged, sum(1 for a in t.actions if a.is_dynamic))
