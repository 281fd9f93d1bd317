# ABOUTME: Core execution model: configurations, actions, traces and static fragments.
# ABOUTME: Protocol models, demons and monitors all read and write these value types.

import dataclasses
import hashlib
import json
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Any, Callable

logger = logging.getLogger(__name__)

NodeId = int


class SimulationError(Exception):
    """Base class for errors raised while applying actions or building traces."""


class UnknownActor(SimulationError):
    """Raised when an action names a node that is not active."""


class MalformedPayload(SimulationError):
    """Raised when an action payload is inconsistent with the configuration."""


class NodeNotActive(SimulationError):
    """Raised when a projection or lookup names a node outside the active set."""


class ActionKind(str, Enum):
    INTERNAL = "Internal"
    IO = "IO"
    DATA_WRITE = "DataWrite"
    CONNECT = "Connect"
    DISCONNECT = "Disconnect"


DYNAMIC_KINDS = frozenset({ActionKind.CONNECT, ActionKind.DISCONNECT})


def canonical(value: Any) -> Any:
    """Convert a value into plain JSON-compatible data with a stable ordering."""
    if isinstance(value, Fraction):
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (frozenset, set)):
        return sorted((canonical(v) for v in value), key=_sort_key)
    if isinstance(value, (list, tuple)):
        return [canonical(v) for v in value]
    if isinstance(value, Mapping):
        return {str(k): canonical(v) for k, v in value.items()}
    if hasattr(value, "to_dict"):
        return canonical(value.to_dict())
    return value


def _sort_key(value: Any) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (0, value, "")
    return (1, 0, json.dumps(value, sort_keys=True))


def canonical_json(value: Any) -> str:
    return json.dumps(canonical(value), sort_keys=True, separators=(",", ":"))


def parse_fraction(raw: Any) -> Fraction:
    """Parse a Fraction from "n/d", an int, or a decimal string."""
    if isinstance(raw, Fraction):
        return raw
    if isinstance(raw, float):
        return Fraction(raw).limit_denominator(1 << 30)
    return Fraction(raw)


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    actor: NodeId
    payload: Mapping[str, Any] = field(default_factory=dict)
    seq: int = 0

    @property
    def is_dynamic(self) -> bool:
        return self.kind in DYNAMIC_KINDS

    def to_dict(self) -> dict:
        return {
            "seq": self.seq,
            "kind": self.kind.value,
            "actor": self.actor,
            "payload": canonical(self.payload),
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "Action":
        try:
            kind = ActionKind(raw["kind"])
        except (KeyError, ValueError) as e:
            raise MalformedPayload(f"Unknown action kind in record: {raw.get('kind')!r}") from e
        return cls(kind, int(raw["actor"]), dict(raw.get("payload") or {}), int(raw.get("seq", 0)))


def connect(node: NodeId, **payload: Any) -> Action:
    return Action(ActionKind.CONNECT, node, payload)


def disconnect(node: NodeId, **payload: Any) -> Action:
    return Action(ActionKind.DISCONNECT, node, payload)


def internal(node: NodeId, **payload: Any) -> Action:
    return Action(ActionKind.INTERNAL, node, payload)


@dataclass(frozen=True)
class Configuration:
    """A global state: per-node protocol state, the neighbor-view graph, data and channels.

    Channel entries map an ordered (src, dst) pair to a FIFO tuple of messages,
    each stored as canonical JSON text of {"due": int, "body": {...}}.
    """

    time: int = 0
    nodes: Mapping[NodeId, Any] = field(default_factory=dict)
    graph: Mapping[NodeId, frozenset] = field(default_factory=dict)
    data: Mapping[NodeId, frozenset] = field(default_factory=dict)
    channels: Mapping[tuple[NodeId, NodeId], tuple[str, ...]] = field(default_factory=dict)

    @property
    def active(self) -> frozenset:
        return frozenset(self.nodes)

    def state(self, p: NodeId) -> Any:
        try:
            return self.nodes[p]
        except KeyError:
            raise NodeNotActive(f"Node {p} is not active at time {self.time}") from None

    def neighbors(self, p: NodeId) -> frozenset:
        return self.graph.get(p, frozenset())

    def active_graph(self) -> dict[NodeId, frozenset]:
        """The neighbor graph restricted to active nodes on both ends."""
        active = self.active
        return {p: frozenset(self.graph.get(p, frozenset()) & active) for p in active}

    def evolve(self, **changes: Any) -> "Configuration":
        return dataclasses.replace(self, **changes)

    def with_state(self, p: NodeId, state: Any, neighbors: frozenset | None = None) -> "Configuration":
        nodes = dict(self.nodes)
        nodes[p] = state
        if neighbors is None:
            return self.evolve(nodes=nodes)
        graph = dict(self.graph)
        graph[p] = frozenset(neighbors)
        return self.evolve(nodes=nodes, graph=graph)

    def send(self, src: NodeId, dst: NodeId, body: Mapping[str, Any], delay: int = 0) -> "Configuration":
        """Append a message to the (src, dst) channel, deliverable from time + delay.

        A message to a node that is not active is dropped.
        """
        if dst not in self.nodes:
            return self
        channels = dict(self.channels)
        message = canonical_json({"due": self.time + delay, "body": body})
        channels[(src, dst)] = channels.get((src, dst), ()) + (message,)
        return self.evolve(channels=channels)

    def head(self, src: NodeId, dst: NodeId) -> dict | None:
        queue = self.channels.get((src, dst))
        if not queue:
            return None
        return json.loads(queue[0])

    def pop(self, src: NodeId, dst: NodeId) -> tuple[dict, "Configuration"]:
        queue = self.channels.get((src, dst))
        if not queue:
            raise MalformedPayload(f"No message in flight from {src} to {dst}")
        channels = dict(self.channels)
        if len(queue) == 1:
            del channels[(src, dst)]
        else:
            channels[(src, dst)] = queue[1:]
        return json.loads(queue[0]), self.evolve(channels=channels)

    def deliverable(self) -> list[tuple[NodeId, NodeId]]:
        """Channel pairs whose head message is due and whose receiver is active."""
        ready = []
        for (src, dst), queue in sorted(self.channels.items()):
            if dst in self.nodes and queue and json.loads(queue[0])["due"] <= self.time:
                ready.append((src, dst))
        return ready

    def to_dict(self) -> dict:
        return {
            "time": self.time,
            "nodes": {str(p): canonical(self.nodes[p]) for p in sorted(self.nodes)},
            "graph": {str(p): sorted(self.graph[p]) for p in sorted(self.graph)},
            "data": {str(p): sorted(self.data[p]) for p in sorted(self.data)},
            "channels": {
                f"{src}->{dst}": [json.loads(m) for m in queue]
                for (src, dst), queue in sorted(self.channels.items())
            },
        }

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], state_from_dict: Callable[[Mapping], Any] | None = None) -> "Configuration":
        decode = state_from_dict or (lambda d: d)
        channels = {}
        for key, messages in (raw.get("channels") or {}).items():
            src, dst = (int(part) for part in key.split("->"))
            channels[(src, dst)] = tuple(canonical_json(m) for m in messages)
        return cls(
            time=int(raw.get("time", 0)),
            nodes={int(p): (None if s is None else decode(s)) for p, s in (raw.get("nodes") or {}).items()},
            graph={int(p): frozenset(v) for p, v in (raw.get("graph") or {}).items()},
            data={int(p): frozenset(v) for p, v in (raw.get("data") or {}).items()},
            channels=channels,
        )

    def state_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()


class ProtocolModel:
    """Base class for protocol transition systems driven by the engine.

    Subclasses override the hooks they need; the defaults describe a protocol
    with no local actions whose only events are channel deliveries.
    """

    name = "base"
    churn_requires_quiescence = False
    maintenance_period = 0

    def initial_state(self, node: NodeId, payload: Mapping[str, Any]) -> Any:
        return None

    def state_from_dict(self, raw: Mapping[str, Any]) -> Any:
        return raw

    def transition(self, c: Configuration, a: Action) -> Configuration:
        """Apply the protocol effect of a non-dynamic action (generic effects already applied)."""
        if a.kind is ActionKind.IO and "message" in a.payload:
            src = int(a.payload["from"])
            message, c = c.pop(src, a.actor)
            if canonical(message["body"]) != canonical(a.payload["message"]):
                raise MalformedPayload(f"Delivery to {a.actor} does not match channel head from {src}")
            return self.on_message(c, a.actor, src, message["body"])
        return self.on_action(c, a)

    def on_message(self, c: Configuration, p: NodeId, src: NodeId, body: Mapping[str, Any]) -> Configuration:
        return c

    def on_action(self, c: Configuration, a: Action) -> Configuration:
        return c

    def on_connect(self, c: Configuration, a: Action) -> Configuration:
        return c

    def on_disconnect(self, c: Configuration, a: Action, viewers: frozenset) -> Configuration:
        return c

    def local_events(self, c: Configuration) -> list["ReadyEvent"]:
        return []

    def maintenance_events(self, c: Configuration) -> list["ReadyEvent"]:
        return []

    def deliverable(self, c: Configuration) -> list[tuple[NodeId, NodeId]]:
        """Channel pairs the scheduler may deliver from."""
        return c.deliverable()

    def ready_events(self, c: Configuration) -> list["ReadyEvent"]:
        events = [_delivery_event(c, src, dst) for src, dst in self.deliverable(c)]
        events.extend(self.local_events(c))
        return sorted(events, key=lambda e: e.key)

    def enabled_by_actor(self, c: Configuration) -> dict[NodeId, list[Action]]:
        """Every enabled action in c, grouped by the node that takes it."""
        grouped: dict[NodeId, list[Action]] = {}
        for event in self.ready_events(c) + self.maintenance_events(c):
            for a in event.build(c):
                grouped.setdefault(a.actor, []).append(a)
        return grouped

    def enabled_actions(self, c: Configuration, p: NodeId) -> list[Action]:
        return self.enabled_by_actor(c).get(p, [])

    def connect_payload(self, c: Configuration, node: NodeId, rng) -> dict:
        active = sorted(c.active)
        return {"bootstrap": rng.choice(active)} if active else {}

    def protected_ids(self) -> frozenset:
        return frozenset()


@dataclass(frozen=True)
class ReadyEvent:
    """A schedulable event: a single action or a contiguous block built at pick time."""

    key: tuple
    actor: NodeId
    build: Callable[[Configuration], list[Action]]


def _delivery_event(c: Configuration, src: NodeId, dst: NodeId) -> ReadyEvent:
    def build(cfg: Configuration) -> list[Action]:
        head = cfg.head(src, dst)
        return [Action(ActionKind.IO, dst, {"from": src, "message": head["body"]})]

    return ReadyEvent(("deliver", src, dst), dst, build)


def apply_action(c: Configuration, a: Action, model: ProtocolModel | None = None) -> Configuration:
    """Apply one action to c and return the successor configuration.

    Connect activates a node with an empty neighbor set. Disconnect removes the
    node, its data and every channel addressed to it; neighbors keep their views.
    """
    if a.kind is ActionKind.CONNECT:
        if a.actor in c.nodes:
            raise MalformedPayload(f"Connect of node {a.actor}, which is already active")
        state = model.initial_state(a.actor, a.payload) if model else None
        nodes = dict(c.nodes)
        nodes[a.actor] = state
        graph = dict(c.graph)
        graph[a.actor] = frozenset()
        data = dict(c.data)
        data[a.actor] = frozenset(a.payload.get("data", ()))
        nxt = c.evolve(time=c.time + 1, nodes=nodes, graph=graph, data=data)
        return model.on_connect(nxt, a) if model else nxt

    if a.actor not in c.nodes:
        raise UnknownActor(f"{a.kind.value} action by node {a.actor}, which is not active")

    if a.kind is ActionKind.DISCONNECT:
        nodes = {p: s for p, s in c.nodes.items() if p != a.actor}
        graph = {p: v for p, v in c.graph.items() if p != a.actor}
        data = {p: v for p, v in c.data.items() if p != a.actor}
        channels = {k: q for k, q in c.channels.items() if k[1] != a.actor}
        viewers = frozenset(p for p, view in graph.items() if a.actor in view)
        nxt = c.evolve(time=c.time + 1, nodes=nodes, graph=graph, data=data, channels=channels)
        return model.on_disconnect(nxt, a, viewers) if model else nxt

    if a.kind is ActionKind.DATA_WRITE:
        items = a.payload.get("items")
        if items is None:
            raise MalformedPayload("DataWrite payload requires 'items'")
        data = dict(c.data)
        data[a.actor] = c.data.get(a.actor, frozenset()) | frozenset(items)
        return c.evolve(time=c.time + 1, data=data)

    if model is None:
        if a.payload.get("op", "noop") != "noop":
            raise MalformedPayload(f"Action op {a.payload['op']!r} needs a protocol model")
        return c.evolve(time=c.time + 1)
    return model.transition(c, a).evolve(time=c.time + 1)


@dataclass(frozen=True)
class Fragment:
    """A maximal span of the trace free of Connect and Disconnect actions.

    start and end are configuration indices; the actions inside are start..end-1.
    """

    index: int
    start: int
    end: int

    @property
    def action_range(self) -> range:
        return range(self.start, self.end)


def fragment_spans(actions: Sequence[Action]) -> list[Fragment]:
    """Split an action sequence into static fragments.

    Every configuration reached by a dynamic action opens a fragment, possibly
    with no actions. The initial configuration opens one unless the first action
    is dynamic.
    """
    spans: list[Fragment] = []
    start = 0 if not actions or not actions[0].is_dynamic else None
    for i, action in enumerate(actions):
        if action.is_dynamic:
            if start is not None:
                spans.append(Fragment(len(spans), start, i))
            start = i + 1
    if start is not None:
        spans.append(Fragment(len(spans), start, len(actions)))
    return spans


class Trace:
    """An execution: the initial configuration and the actions applied to it.

    Configurations are kept at checkpoints (fragment boundaries, every
    checkpoint_interval actions, and the last one) and replayed on demand.
    """

    def __init__(
        self,
        initial: Configuration,
        model: ProtocolModel | None = None,
        checkpoint_interval: int = 64,
    ):
        self.model = model
        self.actions: list[Action] = []
        self.checkpoint_interval = max(1, checkpoint_interval)
        self._stored: dict[int, Configuration] = {0: initial}
        self._last = initial
        self._fragments: list[Fragment] | None = None

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def initial(self) -> Configuration:
        return self._stored[0]

    @property
    def last(self) -> Configuration:
        return self._last

    def append(self, action: Action, post: Configuration) -> None:
        n = len(self.actions)
        if action.is_dynamic:
            self._stored[n] = self._last
            self._stored[n + 1] = post
        elif (n + 1) % self.checkpoint_interval == 0:
            self._stored[n + 1] = post
        self.actions.append(action)
        self._last = post
        self._fragments = None

    def configuration(self, i: int) -> Configuration:
        if i < 0:
            i += len(self.actions) + 1
        if not 0 <= i <= len(self.actions):
            raise IndexError(f"Configuration index {i} outside trace of {len(self.actions)} actions")
        if i == len(self.actions):
            return self._last
        if i in self._stored:
            return self._stored[i]
        base = max(k for k in self._stored if k <= i)
        c = self._stored[base]
        for k in range(base, i):
            c = apply_action(c, self.actions[k], self.model)
        return c

    @property
    def configurations(self) -> "ConfigurationView":
        return ConfigurationView(self)

    def iter_configurations(self):
        """Yield every configuration in order with a single forward replay."""
        c = self._stored[0]
        yield c
        for k, action in enumerate(self.actions):
            stored = self._stored.get(k + 1)
            if stored is None and k + 1 == len(self.actions):
                stored = self._last
            c = stored if stored is not None else apply_action(c, action, self.model)
            yield c

    @property
    def fragments(self) -> list[Fragment]:
        if self._fragments is None:
            self._fragments = fragment_spans(self.actions)
        return self._fragments

    def begin(self, f: Fragment) -> Configuration:
        return self.configuration(f.start)

    def end(self, f: Fragment) -> Configuration:
        return self.configuration(f.end)

    @classmethod
    def replay(cls, initial: Configuration, actions: Sequence[Action], model: ProtocolModel | None = None) -> "Trace":
        trace = cls(initial, model)
        c = initial
        for action in actions:
            c = apply_action(c, action, model)
            trace.append(action, c)
        return trace


class ConfigurationView(Sequence):
    def __init__(self, trace: Trace):
        self._trace = trace

    def __len__(self) -> int:
        return len(self._trace) + 1

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self._trace.configuration(k) for k in range(*i.indices(len(self)))]
        return self._trace.configuration(i)


def segment_fragments(t: Trace) -> list[Fragment]:
    return t.fragments


def project_kernel(c: Configuration, k: frozenset) -> Configuration:
    """Restrict c to the node set k: states, views, data and channels inside k."""
    missing = set(k) - set(c.nodes)
    if missing:
        raise NodeNotActive(f"Kernel nodes not active: {sorted(missing)}")
    k = frozenset(k)
    return c.evolve(
        nodes={p: c.nodes[p] for p in sorted(k)},
        graph={p: frozenset(c.graph.get(p, frozenset()) & k) for p in sorted(k)},
        data={p: c.data.get(p, frozenset()) for p in sorted(k)},
        channels={pair: q for pair, q in c.channels.items() if pair[0] in k and pair[1] in k},
    )


def project_data_kernel(c: Configuration, items: frozenset) -> Configuration:
    """Restrict c to the nodes holding any of the given data items, keeping only those items."""
    holders = frozenset(p for p in c.nodes if c.data.get(p, frozenset()) & items)
    projected = project_kernel(c, holders)
    return projected.evolve(data={p: projected.data[p] & items for p in projected.data})


def move_node(c: Configuration, old: NodeId, new: NodeId, payload: Mapping[str, Any] | None = None) -> list[Action]:
    """A node move: Disconnect under the old identity, then Connect under a fresh one."""
    if old not in c.nodes:
        raise UnknownActor(f"Cannot move node {old}, which is not active")
    if old == new or new in c.nodes:
        raise MalformedPayload("A moved node must take a fresh identifier")
    body = dict(payload or {})
    body["moved_from"] = old
    return [disconnect(old), Action(ActionKind.CONNECT, new, body)]
