"""Dsl2data: protocol parsing, calibration, planning, and execution."""

from insightenv.dsl.calibration import CalibrationReport, calibrate
from insightenv.dsl.engine import DslEngine, EngineResponse
from insightenv.dsl.planner import PlanError, QueryPlan, plan
from insightenv.dsl.protocol import (
    DslQuery,
    FilterCondition,
    FilterNode,
    OrderSpec,
    SchemaError,
    parse_query,
    serialize_query,
)

__all__ = [
    "CalibrationReport",
    "DslEngine",
    "DslQuery",
    "EngineResponse",
    "FilterCondition",
    "FilterNode",
    "OrderSpec",
    "PlanError",
    "QueryPlan",
    "SchemaError",
    "calibrate",
    "parse_query",
    "plan",
    "serialize_query",
]
