"""Query planning: ADS/DWS routing and SQL synthesis for calibrated queries.

ADS pre-aggregates serve queries whose metrics are all ads_available and
whose dimensions live on the calendar or shop dimensions; brand-grain
queries narrow further to the brand rollup. Everything else compiles to a
single-fact DWS query joined through the dimension tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

from insightenv.catalog import Catalog, GrainClass, MetricDef
from insightenv.dsl.protocol import DslQuery, FilterNode, query_to_json

ROUTE_ADS = "ADS"
ROUTE_DWS = "DWS"

_BRAND_COLUMNS = {"brandId", "brandName"}


class PlanError(ValueError):
    """Calibrated query has no physical mounting."""


@dataclass(frozen=True)
class QueryPlan:
    route: str
    tables: tuple[str, ...]
    sql_text: str
    cache_key: str
    params: tuple


def _filter_columns(node: FilterNode | None) -> list[str]:
    if node is None:
        return []
    out = []
    for child in node.conditions:
        if isinstance(child, FilterNode):
            out.extend(_filter_columns(child))
        else:
            out.append(child.column)
    return out


def _ads_eligible(metrics: list[MetricDef], dim_tables: set[str]) -> bool:
    return all(m.ads_available for m in metrics) and dim_tables <= {"dim_date", "dim_shop"}


def _agg_expr(catalog: Catalog, name: str, fact_alias: str, ads: bool) -> str:
    m = catalog.metric(name)
    if m.aggregation.kind == "ratio":
        num = _agg_expr(catalog, m.aggregation.numerator, fact_alias, ads)
        den = _agg_expr(catalog, m.aggregation.denominator, fact_alias, ads)
        return f"{num} / {den}"
    if m.aggregation.kind == "count_distinct":
        if ads:
            raise PlanError(f"metric {name!r} has no pre-aggregated mounting")
        return f"COUNT(DISTINCT {fact_alias}.{m.column})"
    return f"SUM({fact_alias}.{m.column})"


class _SqlBuilder:
    def __init__(self, catalog: Catalog, query: DslQuery):
        self.catalog = catalog
        self.query = query
        self.params: list = []

    def dimension_ref(self, name: str) -> str:
        raise NotImplementedError

    def select_sql(self) -> str:
        q = self.query
        select = [f"{self.dimension_ref(d)} AS {d}" for d in q.dimension]
        select += [f"{self.metric_expr(m)} AS {m}" for m in q.metric]
        lines = [f"SELECT {', '.join(select)}", self.from_sql()]
        where = [self.ds_clause()]
        if q.filter is not None:
            where.append(self.filter_clause(q.filter))
        lines.append("WHERE " + " AND ".join(where))
        if q.dimension:
            lines.append("GROUP BY " + ", ".join(q.dimension))
        order = self.order_clause()
        if order:
            lines.append("ORDER BY " + order)
        lines.append(f"LIMIT {q.limit}")
        return "\n".join(lines)

    def order_clause(self) -> str:
        q = self.query
        if q.order_by:
            return ", ".join(f"{o.column} {o.order_type.upper()}" for o in q.order_by)
        parts = []
        if q.dimension:
            parts.append(f"{q.dimension[0]} ASC")
        if q.metric:
            parts.append(f"{q.metric[0]} DESC")
        return ", ".join(parts)

    def filter_clause(self, node: FilterNode) -> str:
        pieces = []
        for child in node.conditions:
            if isinstance(child, FilterNode):
                pieces.append(self.filter_clause(child))
            else:
                ref = self.dimension_ref(child.column)
                if child.rule == "in":
                    marks = ", ".join("?" for _ in child.params)
                    pieces.append(f"{ref} IN ({marks})")
                    self.params.extend(child.params)
                elif child.rule == "between":
                    pieces.append(f"{ref} BETWEEN ? AND ?")
                    self.params.extend(child.params)
                else:
                    op = {"eq": "=", "neq": "!=", "gt": ">", "lt": "<"}[child.rule]
                    pieces.append(f"{ref} {op} ?")
                    self.params.append(child.params[0])
        joiner = f" {node.relation.upper()} "
        return "(" + joiner.join(pieces) + ")"


class _DwsBuilder(_SqlBuilder):
    def __init__(self, catalog: Catalog, query: DslQuery, fact_table: str, dim_tables: set[str]):
        super().__init__(catalog, query)
        self.fact_table = fact_table
        self.dim_tables = dim_tables

    def dimension_ref(self, name: str) -> str:
        d = self.catalog.dimension(name)
        alias = {"dim_date": "d", "dim_shop": "s", "dim_usr": "u"}.get(d.source_table, "f")
        return f"{alias}.{d.physical_column}"

    def metric_expr(self, name: str) -> str:
        return _agg_expr(self.catalog, name, "f", ads=False)

    def from_sql(self) -> str:
        lines = [f"FROM {self.fact_table} f", "JOIN dim_date d ON f.ds = d.ds"]
        if "dim_shop" in self.dim_tables:
            lines.append("JOIN dim_shop s ON f.shop_id = s.shop_id")
        if "dim_usr" in self.dim_tables:
            lines.append("JOIN dim_usr u ON f.user_id = u.user_id")
        return "\n".join(lines)

    def ds_clause(self) -> str:
        self.params.extend(self.query.ds)
        return "f.ds BETWEEN ? AND ?"

    def tables(self) -> tuple[str, ...]:
        out = [self.fact_table, "dim_date"]
        out += sorted(t for t in self.dim_tables if t in ("dim_shop", "dim_usr"))
        return tuple(dict.fromkeys(out))


class _AdsBuilder(_SqlBuilder):
    def __init__(self, catalog: Catalog, query: DslQuery, ads_table: str, dim_tables: set[str]):
        super().__init__(catalog, query)
        self.ads_table = ads_table
        self.dim_tables = dim_tables

    def dimension_ref(self, name: str) -> str:
        d = self.catalog.dimension(name)
        if d.source_table == "dim_date":
            return f"d.{d.physical_column}"
        if self.ads_table == "ads_brand":
            if name == "brandId":
                return "a.brand_id"
            return f"b.{d.physical_column}"
        return f"s.{d.physical_column}"

    def metric_expr(self, name: str) -> str:
        return _agg_expr(self.catalog, name, "a", ads=True)

    def from_sql(self) -> str:
        lines = [f"FROM {self.ads_table} a"]
        if "dim_date" in self.dim_tables:
            lines.append("JOIN dim_date d ON a.ds = d.ds")
        if self.ads_table == "ads_brand":
            if any(c == "brandName" for c in self._shop_columns()):
                lines.append(
                    "JOIN (SELECT DISTINCT brand_id, brand_name FROM dim_shop) b"
                    " ON a.brand_id = b.brand_id")
        elif "dim_shop" in self.dim_tables:
            lines.append("JOIN dim_shop s ON a.shop_id = s.shop_id")
        return "\n".join(lines)

    def _shop_columns(self) -> list[str]:
        cols = [d for d in self.query.dimension] + _filter_columns(self.query.filter)
        return [c for c in cols
                if c in self.catalog.dimensions
                and self.catalog.dimension(c).source_table == "dim_shop"]

    def ds_clause(self) -> str:
        self.params.extend(self.query.ds)
        return "a.ds BETWEEN ? AND ?"

    def tables(self) -> tuple[str, ...]:
        out = [self.ads_table]
        if "dim_date" in self.dim_tables:
            out.append("dim_date")
        if self.ads_table == "ads_shop" and "dim_shop" in self.dim_tables:
            out.append("dim_shop")
        if self.ads_table == "ads_brand" and "brandName" in self._shop_columns():
            out.append("dim_shop")
        return tuple(out)


def plan(query: DslQuery, catalog: Catalog, force_route: str | None = None) -> QueryPlan:
    """Choose a route and synthesize SQL for a violation-free query."""
    metrics = []
    for name in query.metric:
        if name not in catalog.metrics:
            raise PlanError(f"metric {name!r} is not calibrated")
        metrics.append(catalog.metric(name))
    dim_names = list(query.dimension) + _filter_columns(query.filter)
    dim_tables = set()
    shop_level_columns = []
    for name in dim_names:
        if name not in catalog.dimensions:
            raise PlanError(f"dimension {name!r} is not calibrated")
        d = catalog.dimension(name)
        dim_tables.add(d.source_table)
        if d.source_table == "dim_shop":
            shop_level_columns.append(name)
    for spec in query.order_by:
        if spec.column not in query.metric and spec.column not in query.dimension:
            raise PlanError(f"orderBy column {spec.column!r} is not in the result")

    ads_ok = _ads_eligible(metrics, dim_tables)
    if force_route == ROUTE_ADS and not ads_ok:
        raise PlanError("query is not servable from pre-aggregates")
    use_ads = ads_ok if force_route is None else force_route == ROUTE_ADS

    if use_ads:
        brand_grain = (bool(shop_level_columns)
                       and set(shop_level_columns) <= _BRAND_COLUMNS)
        builder = _AdsBuilder(
            catalog, query, "ads_brand" if brand_grain else "ads_shop", dim_tables)
        route = ROUTE_ADS
    else:
        fact_tables = {catalog.fact_table_of(m.canonical_name) for m in metrics}
        if len(fact_tables) > 1:
            raise PlanError(
                "metrics span multiple fact tables "
                f"({', '.join(sorted(fact_tables))}) and have no shared mounting "
                "at this dimensionality")
        order_attr_tables = {
            catalog.dimension(n).source_table for n in dim_names
            if catalog.dimension(n).grain_class == GrainClass.ATTRIBUTE
            and catalog.dimension(n).source_table.startswith("dws_")
        }
        fact = next(iter(fact_tables))
        if order_attr_tables - {fact}:
            raise PlanError(
                f"attribute dimensions live on {sorted(order_attr_tables)} "
                f"but the metrics mount on {fact}")
        builder = _DwsBuilder(catalog, query, fact, dim_tables)
        route = ROUTE_DWS

    sql = builder.select_sql()
    # save_data_path is an output directive; it must not split the cache.
    material = f"{route}:{query_to_json(replace(query, save_data_path=None))}"
    cache_key = hashlib.sha256(material.encode("utf-8")).hexdigest()
    return QueryPlan(
        route=route,
        tables=builder.tables(),
        sql_text=sql,
        cache_key=cache_key,
        params=tuple(builder.params),
    )
