"""Dsl2data request protocol: parsing, validation, serialization.

Wire format is JSON with properties metric, ds, dimension, filter, orderBy,
limit, compare, save_data_path. Filters nest via relation/conditions;
leaf conditions carry columnEName/queryRule/params.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import PurePosixPath

QUERY_RULES = ("in", "eq", "neq", "gt", "lt", "between")
ORDER_TYPES = ("asc", "desc")
COMPARE_MODES = ("wow", "yoy")

# params arity per rule; None means "one or more".
_ARITY = {"in": None, "eq": 1, "neq": 1, "gt": 1, "lt": 1, "between": 2}

_TOP_LEVEL_KEYS = {
    "metric", "ds", "dimension", "filter", "orderBy", "limit", "compare",
    "save_data_path",
}


class SchemaError(ValueError):
    """Request violates the protocol schema; message names the property."""


@dataclass(frozen=True)
class FilterCondition:
    column: str
    rule: str
    params: tuple


@dataclass(frozen=True)
class FilterNode:
    relation: str  # "and" | "or"
    conditions: tuple  # FilterCondition or nested FilterNode


@dataclass(frozen=True)
class OrderSpec:
    column: str
    order_type: str  # "asc" | "desc"


@dataclass(frozen=True)
class DslQuery:
    metric: tuple[str, ...]
    ds: tuple[str, str]
    dimension: tuple[str, ...] = ()
    filter: FilterNode | None = None
    order_by: tuple[OrderSpec, ...] = ()
    limit: int = 100
    compare: tuple[str, ...] = ()
    save_data_path: str | None = None


def _require_str_list(value, name: str, allow_empty: bool) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise SchemaError(f"property '{name}' must be a list")
    if not allow_empty and not value:
        raise SchemaError(f"property '{name}' must be non-empty")
    for item in value:
        if not isinstance(item, str) or not item:
            raise SchemaError(f"property '{name}' entries must be non-empty strings")
    return tuple(value)


def _parse_ds(value) -> tuple[str, str]:
    if not isinstance(value, list) or len(value) != 2:
        raise SchemaError("property 'ds' must be a pair of date-stamps")
    for item in value:
        if not isinstance(item, str):
            raise SchemaError("property 'ds' entries must be strings")
        try:
            datetime.strptime(item, "%Y%m%d")
        except ValueError:
            raise SchemaError(f"property 'ds' entry {item!r} is not YYYYMMDD") from None
    if value[0] > value[1]:
        raise SchemaError("property 'ds' start must not exceed end")
    return (value[0], value[1])


def _is_scalar(v) -> bool:
    return isinstance(v, (str, int, float)) and not isinstance(v, bool)


def _parse_condition(entry) -> FilterCondition:
    if not isinstance(entry, dict):
        raise SchemaError("filter conditions must be objects")
    unknown = set(entry) - {"columnEName", "queryRule", "params"}
    if unknown:
        raise SchemaError(f"unknown filter condition property {sorted(unknown)[0]!r}")
    column = entry.get("columnEName")
    if not isinstance(column, str) or not column:
        raise SchemaError("filter condition property 'columnEName' must be a non-empty string")
    rule = entry.get("queryRule")
    if rule not in QUERY_RULES:
        raise SchemaError(f"filter condition property 'queryRule' must be one of {QUERY_RULES}")
    params = entry.get("params")
    if not isinstance(params, list) or not all(_is_scalar(p) for p in params):
        raise SchemaError("filter condition property 'params' must be a list of scalars")
    arity = _ARITY[rule]
    if arity is None:
        if len(params) < 1:
            raise SchemaError("filter rule 'in' requires at least one param")
    elif len(params) != arity:
        raise SchemaError(f"filter rule {rule!r} requires exactly {arity} param(s)")
    return FilterCondition(column=column, rule=rule, params=tuple(params))


def _parse_filter(entry) -> FilterNode:
    if not isinstance(entry, dict):
        raise SchemaError("property 'filter' must be an object")
    unknown = set(entry) - {"relation", "conditions"}
    if unknown:
        raise SchemaError(f"unknown filter property {sorted(unknown)[0]!r}")
    relation = entry.get("relation")
    if relation not in ("and", "or"):
        raise SchemaError("filter property 'relation' must be 'and' or 'or'")
    raw = entry.get("conditions")
    if not isinstance(raw, list) or not raw:
        raise SchemaError("filter property 'conditions' must be a non-empty list")
    children = []
    for item in raw:
        if isinstance(item, dict) and ("relation" in item or "conditions" in item):
            children.append(_parse_filter(item))
        else:
            children.append(_parse_condition(item))
    return FilterNode(relation=relation, conditions=tuple(children))


def _parse_order_by(value) -> tuple[OrderSpec, ...]:
    if not isinstance(value, list):
        raise SchemaError("property 'orderBy' must be a list")
    out = []
    for entry in value:
        if not isinstance(entry, dict):
            raise SchemaError("orderBy entries must be objects")
        unknown = set(entry) - {"columnEName", "orderType"}
        if unknown:
            raise SchemaError(f"unknown orderBy property {sorted(unknown)[0]!r}")
        column = entry.get("columnEName")
        if not isinstance(column, str) or not column:
            raise SchemaError("orderBy property 'columnEName' must be a non-empty string")
        order_type = entry.get("orderType")
        if order_type not in ORDER_TYPES:
            raise SchemaError(f"orderBy property 'orderType' must be one of {ORDER_TYPES}")
        out.append(OrderSpec(column=column, order_type=order_type))
    return tuple(out)


def _parse_save_path(value) -> str:
    if not isinstance(value, str) or not value:
        raise SchemaError("property 'save_data_path' must be a non-empty string")
    p = PurePosixPath(value)
    if p.is_absolute() or ".." in p.parts:
        raise SchemaError("property 'save_data_path' must be a relative path without '..'")
    return value


def parse_payload(payload: dict) -> DslQuery:
    """Validate an already-deserialized request object."""
    if not isinstance(payload, dict):
        raise SchemaError("request must be an object")
    unknown = set(payload) - _TOP_LEVEL_KEYS
    if unknown:
        raise SchemaError(f"unknown property {sorted(unknown)[0]!r}")
    if "metric" not in payload:
        raise SchemaError("missing required property 'metric'")
    if "ds" not in payload:
        raise SchemaError("missing required property 'ds'")
    metric = _require_str_list(payload["metric"], "metric", allow_empty=False)
    ds = _parse_ds(payload["ds"])
    dimension = _require_str_list(payload.get("dimension", []), "dimension", allow_empty=True)
    filt = _parse_filter(payload["filter"]) if payload.get("filter") is not None else None
    order_by = _parse_order_by(payload.get("orderBy", []))
    limit = payload.get("limit", 100)
    if isinstance(limit, bool) or not isinstance(limit, int) or limit < 1:
        raise SchemaError("property 'limit' must be a positive integer")
    compare_raw = payload.get("compare", [])
    if not isinstance(compare_raw, list):
        raise SchemaError("property 'compare' must be a list")
    for mode in compare_raw:
        if mode not in COMPARE_MODES:
            raise SchemaError(f"property 'compare' entries must be one of {COMPARE_MODES}")
    save_path = (_parse_save_path(payload["save_data_path"])
                 if payload.get("save_data_path") is not None else None)
    return DslQuery(
        metric=metric,
        ds=ds,
        dimension=dimension,
        filter=filt,
        order_by=order_by,
        limit=limit,
        compare=tuple(compare_raw),
        save_data_path=save_path,
    )


def parse_query(text: str) -> DslQuery:
    """Parse serialized request text; raises SchemaError on any violation."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"request is not valid JSON: {exc.msg}") from exc
    return parse_payload(payload)


def _filter_to_wire(node: FilterNode) -> dict:
    conditions = []
    for child in node.conditions:
        if isinstance(child, FilterNode):
            conditions.append(_filter_to_wire(child))
        else:
            conditions.append({
                "columnEName": child.column,
                "queryRule": child.rule,
                "params": list(child.params),
            })
    return {"relation": node.relation, "conditions": conditions}


def serialize_query(query: DslQuery) -> dict:
    """Wire-form object; omit optional properties left at their defaults."""
    out: dict = {"metric": list(query.metric), "ds": list(query.ds)}
    if query.dimension:
        out["dimension"] = list(query.dimension)
    if query.filter is not None:
        out["filter"] = _filter_to_wire(query.filter)
    if query.order_by:
        out["orderBy"] = [
            {"columnEName": o.column, "orderType": o.order_type} for o in query.order_by
        ]
    out["limit"] = query.limit
    if query.compare:
        out["compare"] = list(query.compare)
    if query.save_data_path is not None:
        out["save_data_path"] = query.save_data_path
    return out


def query_to_json(query: DslQuery) -> str:
    """Canonical serialized text (stable key order), used for cache keys."""
    return json.dumps(serialize_query(query), sort_keys=True, separators=(",", ":"))
