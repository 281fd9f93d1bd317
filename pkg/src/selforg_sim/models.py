# ABOUTME: Builds protocol models from a protocol name and a flat parameter mapping.
# ABOUTME: Trace headers store the same mapping so replay rebuilds the identical model.

from collections.abc import Mapping
from typing import Any

from selforg_sim.criteria.library import CRITERIA
from selforg_sim.lsa import LsaModel
from selforg_sim.model import ProtocolModel, SimulationError
from selforg_sim.overlays.can import CanModel
from selforg_sim.overlays.pastry import PastryModel
from selforg_sim.protocols.leader import LeaderModel
from selforg_sim.protocols.query import QueryModel, QuerySpec


class UnknownProtocol(SimulationError):
    """Raised when a trace or scenario names a protocol with no model."""


def model_params(model: ProtocolModel) -> dict[str, Any]:
    """The constructor parameters of a model, as plain JSON data."""
    if isinstance(model, LsaModel):
        return {"criterion": model.criterion.name, "activation": model.activation, "dimensions": model.dimensions}
    if isinstance(model, CanModel):
        return {"dimensions": model.dimensions, "grid": model.grid}
    if isinstance(model, PastryModel):
        return {
            "b": model.b,
            "digits": model.digits,
            "leaf_size": model.leaf_size,
            "neighborhood_size": model.neighborhood_size,
            "maintenance_period": model.maintenance_period,
        }
    if isinstance(model, LeaderModel):
        return {"alpha": model.alpha, "universe": sorted(model.universe), "stable": sorted(model.stable)}
    if isinstance(model, QueryModel):
        return {
            "initiator": model.initiator,
            "pattern": model.spec.pattern,
            "qid": model.spec.qid,
            "detection_delay": model.detection_delay,
        }
    raise UnknownProtocol(f"No parameters known for model {type(model).__name__}")


def build_protocol_model(protocol: str, params: Mapping[str, Any]) -> ProtocolModel:
    if protocol == "LSA":
        return LsaModel(
            CRITERIA[params.get("criterion", "proximity")],
            activation=params.get("activation", "ascending"),
            dimensions=int(params.get("dimensions", 1)),
        )
    if protocol == "CAN":
        return CanModel(int(params.get("dimensions", 2)), int(params.get("grid", 1024)))
    if protocol == "Pastry":
        return PastryModel(
            b=int(params.get("b", 2)),
            digits=int(params.get("digits", 16)),
            leaf_size=int(params.get("leaf_size", 8)),
            neighborhood_size=int(params.get("neighborhood_size", 8)),
            maintenance_period=int(params.get("maintenance_period", 50)),
        )
    if protocol == "Leader":
        return LeaderModel(
            int(params.get("alpha", 1)),
            frozenset(int(p) for p in params["universe"]),
            frozenset(int(p) for p in params["stable"]) if "stable" in params else None,
        )
    if protocol == "OneShotQuery":
        return QueryModel(
            int(params.get("initiator", 1)),
            QuerySpec(str(params.get("pattern", "*")), int(params.get("qid", 1))),
            int(params.get("detection_delay", 1)),
        )
    raise UnknownProtocol(f"Unknown protocol {protocol!r}")
