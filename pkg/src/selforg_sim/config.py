# ABOUTME: Scenario file loading and validation for selforg-sim.
# ABOUTME: Parses scenario YAML into a validated Scenario dataclass with strict key checks.

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from selforg_sim.criteria.library import COMPATIBLE, CRITERIA
from selforg_sim.demons import DemonClass, DemonSpec, InfeasibleSpec


class ConfigError(Exception):
    """Raised when configuration is invalid."""
    pass


class SchemaError(ConfigError):
    """Raised when a scenario does not match the scenario schema."""
    pass


PROTOCOLS = ("LSA", "CAN", "Pastry", "Leader", "OneShotQuery")

MAX_NODES = 64
MAX_HORIZON = 100_000

TOP_LEVEL_REQUIRED = ("protocol", "demon", "criterion", "initial_nodes", "horizon", "seed")
TOP_LEVEL_OPTIONAL = ("protocol_params", "snapshot_interval", "activation", "kernel", "name")
KERNELS = ("Topological", "Data")
DEMON_KEYS = ("class", "bound", "kernel_min_size", "seed", "horizon", "spacing")

# Defaults per protocol; None means "derived at build time".
PROTOCOL_DEFAULTS: dict[str, dict[str, Any]] = {
    "LSA": {"topology": "random", "degree": 4, "dimensions": 1},
    "CAN": {"dimensions": 2},
    "Pastry": {"b": 2, "leaf_size": 8, "neighborhood_size": 8, "digits": 16, "maintenance_period": 50},
    "Leader": {"alpha": 1, "universe_size": None, "stable": None},
    "OneShotQuery": {"initiator": 1, "pattern": "*", "items_per_node": 2, "detection_delay": 1, "degree": 4},
}


def _require_int(path: str, value: Any, low: int | None = None, high: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{path} must be an integer, got {value!r}")
    if low is not None and value < low:
        raise SchemaError(f"{path} must be at least {low}, got {value}")
    if high is not None and value > high:
        raise SchemaError(f"{path} must be at most {high}, got {value}")
    return value


def _reject_unknown(path: str, raw: dict, allowed) -> None:
    for key in raw:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise SchemaError(f"Unknown key: {where}")


def _check_protocol_params(protocol: str, params: dict, initial_nodes: int) -> None:
    path = "protocol_params"
    if protocol == "LSA":
        if params["topology"] not in ("ring", "random"):
            raise SchemaError(f"{path}.topology must be 'ring' or 'random', got {params['topology']!r}")
        _require_int(f"{path}.degree", params["degree"], 1)
        _require_int(f"{path}.dimensions", params["dimensions"], 1, 4)
    elif protocol == "CAN":
        _require_int(f"{path}.dimensions", params["dimensions"], 1, 4)
    elif protocol == "Pastry":
        _require_int(f"{path}.b", params["b"], 1, 4)
        _require_int(f"{path}.digits", params["digits"], 1, 32)
        leaf = _require_int(f"{path}.leaf_size", params["leaf_size"], 2)
        if leaf % 2:
            raise SchemaError(f"{path}.leaf_size must be even, got {leaf}")
        _require_int(f"{path}.neighborhood_size", params["neighborhood_size"], 1)
        _require_int(f"{path}.maintenance_period", params["maintenance_period"], 0)
    elif protocol == "Leader":
        alpha = _require_int(f"{path}.alpha", params["alpha"], 1, min(5, initial_nodes))
        if params["universe_size"] is not None:
            _require_int(f"{path}.universe_size", params["universe_size"], initial_nodes + 1)
        stable = params["stable"]
        if stable is not None:
            if not isinstance(stable, list):
                raise SchemaError(f"{path}.stable must be a list of node ids")
            ids = {_require_int(f"{path}.stable[{i}]", p, 1, initial_nodes) for i, p in enumerate(stable)}
            if len(ids) != alpha or len(stable) != alpha:
                raise SchemaError(f"{path}.stable must name {alpha} distinct initial nodes, got {stable!r}")
    elif protocol == "OneShotQuery":
        _require_int(f"{path}.initiator", params["initiator"], 1)
        if not isinstance(params["pattern"], str):
            raise SchemaError(f"{path}.pattern must be a string")
        _require_int(f"{path}.items_per_node", params["items_per_node"], 0)
        _require_int(f"{path}.detection_delay", params["detection_delay"], 0)
        _require_int(f"{path}.degree", params["degree"], 1)


@dataclass(frozen=True)
class DemonConfig:
    """The demon block of a scenario; seed and horizon fall back to the scenario's."""
    demon_class: str
    bound: int | None = None
    kernel_min_size: int | None = None
    seed: int | None = None
    horizon: int | None = None
    spacing: int = 5

    def to_dict(self) -> dict:
        return {
            "class": self.demon_class,
            "bound": self.bound,
            "kernel_min_size": self.kernel_min_size,
            "seed": self.seed,
            "horizon": self.horizon,
            "spacing": self.spacing,
        }


@dataclass(frozen=True)
class Scenario:
    """A validated scenario: protocol, demon, criterion and run limits."""
    protocol: str
    demon: DemonConfig
    criterion: tuple[str, ...]
    initial_nodes: int
    horizon: int
    seed: int
    protocol_params: dict = field(default_factory=dict)
    snapshot_interval: int = 100
    activation: str = "ascending"
    kernel: str = "Topological"
    name: str = "scenario"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise SchemaError(f"protocol must be one of {', '.join(PROTOCOLS)}, got {self.protocol!r}")
        _reject_unknown("protocol_params", self.protocol_params, PROTOCOL_DEFAULTS[self.protocol])
        object.__setattr__(self, "protocol_params", {**PROTOCOL_DEFAULTS[self.protocol], **self.protocol_params})
        _require_int("initial_nodes", self.initial_nodes, 1, MAX_NODES)
        _require_int("horizon", self.horizon, 0, MAX_HORIZON)
        _require_int("seed", self.seed, 0, 2**64 - 1)
        _require_int("snapshot_interval", self.snapshot_interval, 1)
        if self.activation not in ("ascending", "random"):
            raise SchemaError(f"activation must be 'ascending' or 'random', got {self.activation!r}")
        if self.kernel not in KERNELS:
            raise SchemaError(f"kernel must be one of {', '.join(KERNELS)}, got {self.kernel!r}")
        if not self.criterion:
            raise SchemaError("criterion must name at least one criterion")
        for name in self.criterion:
            if name not in CRITERIA:
                raise SchemaError(f"criterion: unknown criterion {name!r}")
            if name not in COMPATIBLE[self.protocol]:
                raise SchemaError(f"criterion: {name!r} does not apply to protocol {self.protocol}")
        try:
            DemonClass(self.demon.demon_class)
        except ValueError:
            known = ", ".join(k.value for k in DemonClass)
            raise SchemaError(f"demon.class must be one of {known}, got {self.demon.demon_class!r}") from None
        try:
            self.demon_spec()
        except InfeasibleSpec as e:
            raise SchemaError(f"demon: {e}") from e
        _check_protocol_params(self.protocol, self.protocol_params, self.initial_nodes)

    def demon_spec(self) -> DemonSpec:
        """The DemonSpec for this scenario; raises InfeasibleSpec for an unusable demon block."""
        d = self.demon
        return DemonSpec(
            DemonClass(d.demon_class),
            bound=d.bound,
            kernel_min_size=d.kernel_min_size,
            rng_seed=self.seed if d.seed is None else d.seed,
            horizon=self.horizon if d.horizon is None else d.horizon,
            spacing=d.spacing,
        )

    def with_overrides(
        self, seed: int | None = None, horizon: int | None = None, snapshot_interval: int | None = None
    ) -> "Scenario":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if horizon is not None:
            changes["horizon"] = horizon
        if snapshot_interval is not None:
            changes["snapshot_interval"] = snapshot_interval
        return dataclasses.replace(self, **changes) if changes else self

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "protocol": self.protocol,
            "demon": self.demon.to_dict(),
            "criterion": list(self.criterion),
            "initial_nodes": self.initial_nodes,
            "horizon": self.horizon,
            "seed": self.seed,
            "protocol_params": dict(self.protocol_params),
            "snapshot_interval": self.snapshot_interval,
            "activation": self.activation,
            "kernel": self.kernel,
        }


def _parse_demon(raw: Any) -> DemonConfig:
    if not isinstance(raw, dict):
        raise SchemaError("demon must be a mapping")
    _reject_unknown("demon", raw, DEMON_KEYS)
    if "class" not in raw:
        raise SchemaError("Missing required config field: demon.class")
    values = {}
    for key in ("bound", "kernel_min_size", "seed", "horizon", "spacing"):
        if raw.get(key) is not None:
            values[key] = _require_int(f"demon.{key}", raw[key], 0)
    return DemonConfig(demon_class=str(raw["class"]), **values)


def scenario_from_dict(raw: Any) -> Scenario:
    """Validate a parsed scenario mapping and build the Scenario."""
    if not isinstance(raw, dict):
        raise SchemaError("Scenario file must contain a YAML mapping")

    _reject_unknown("", raw, TOP_LEVEL_REQUIRED + TOP_LEVEL_OPTIONAL)
    for key in TOP_LEVEL_REQUIRED:
        if key not in raw:
            raise SchemaError(f"Missing required config field: {key}")

    protocol = raw["protocol"]
    if protocol not in PROTOCOLS:
        raise SchemaError(f"protocol must be one of {', '.join(PROTOCOLS)}, got {protocol!r}")

    params_raw = raw.get("protocol_params") or {}
    if not isinstance(params_raw, dict):
        raise SchemaError("protocol_params must be a mapping")

    criterion = raw["criterion"]
    if isinstance(criterion, str):
        criterion = [criterion]
    if not isinstance(criterion, list) or not all(isinstance(n, str) for n in criterion):
        raise SchemaError("criterion must be a name or a list of names")

    return Scenario(
        protocol=protocol,
        demon=_parse_demon(raw["demon"]),
        criterion=tuple(criterion),
        initial_nodes=raw["initial_nodes"],
        horizon=raw["horizon"],
        seed=raw["seed"],
        protocol_params=dict(params_raw),
        snapshot_interval=raw.get("snapshot_interval", 100),
        activation=raw.get("activation", "ascending"),
        kernel=raw.get("kernel", "Topological"),
        name=str(raw.get("name", "scenario")),
    )


def load_scenario(path: Path) -> Scenario:
    """Load and validate a scenario from a YAML file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Scenario file not found: {path}")

    with open(path) as f:
        try:
            raw = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in scenario file: {e}")

    scenario = scenario_from_dict(raw)
    if "name" not in raw:
        scenario = dataclasses.replace(scenario, name=path.stem)
    return scenario
