# ABOUTME: Criterion package: generic criterion machinery plus the protocol case-study criteria.
# ABOUTME: Re-exports the names used by monitors, the engine and the CLI.

from selforg_sim.criteria.base import (
    TOLERANCE,
    CompositeCriterion,
    CriterionError,
    GlobalCriterion,
    GlobalValue,
    LocalCriterion,
    NotIndependent,
    aggregate_global,
    aggregate_node,
    audit_order,
    check_independence,
    compose_monotonic,
    ker_d,
    ker_t,
)
from selforg_sim.criteria.library import CRITERIA, COMPATIBLE, UnknownCriterion, resolve_criterion

__all__ = [
    "CRITERIA",
    "COMPATIBLE",
    "TOLERANCE",
    "CompositeCriterion",
    "CriterionError",
    "GlobalCriterion",
    "GlobalValue",
    "LocalCriterion",
    "NotIndependent",
    "UnknownCriterion",
    "aggregate_global",
    "aggregate_node",
    "audit_order",
    "check_independence",
    "compose_monotonic",
    "ker_d",
    "ker_t",
    "resolve_criterion",
]
