"""Query calibration: resolve raw tokens against the semantic catalog.

Correctable tokens are rewritten and reported as notices; unresolvable names
and incompatible metric/dimension pairs become violations that block
execution downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from insightenv.catalog import Catalog, NameKind, ResolveStatus, Violation, ViolationKind
from insightenv.dsl.protocol import DslQuery, FilterCondition, FilterNode, OrderSpec


@dataclass(frozen=True)
class CalibrationReport:
    corrected_dsl: DslQuery
    notices: tuple[str, ...]
    violations: tuple[Violation, ...]

    @property
    def executable(self) -> bool:
        return not self.violations


class _Session:
    def __init__(self, catalog: Catalog):
        self.catalog = catalog
        self.notices: list[str] = []
        self.violations: list[Violation] = []
        self._seen_corrections: set[tuple[str, str]] = set()

    def resolve(self, token: str, kind: NameKind, unknown_kind: ViolationKind) -> str | None:
        res = self.catalog.resolve_name(token, kind)
        if res.status == ResolveStatus.UNKNOWN:
            self.violations.append(Violation(unknown_kind, token))
            return None
        if res.status == ResolveStatus.CORRECTED:
            key = (token, res.canonical_name)
            if key not in self._seen_corrections:
                self._seen_corrections.add(key)
                self.notices.append(res.note)
        return res.canonical_name


def _calibrate_filter(node: FilterNode, session: _Session) -> FilterNode:
    children = []
    for child in node.conditions:
        if isinstance(child, FilterNode):
            children.append(_calibrate_filter(child, session))
        else:
            canonical = session.resolve(
                child.column, NameKind.FILTER_COLUMN, ViolationKind.UNKNOWN_DIMENSION)
            children.append(
                child if canonical is None else FilterCondition(
                    column=canonical, rule=child.rule, params=child.params))
    return FilterNode(relation=node.relation, conditions=tuple(children))


def _filter_columns(node: FilterNode) -> list[str]:
    out = []
    for child in node.conditions:
        if isinstance(child, FilterNode):
            out.extend(_filter_columns(child))
        else:
            out.append(child.column)
    return out


def calibrate(query: DslQuery, catalog: Catalog) -> tuple[DslQuery, CalibrationReport]:
    """Rewrite a parsed query onto canonical names.

    Returns the corrected query and a report. A report with violations means
    the query must not be executed.
    """
    session = _Session(catalog)

    metrics = []
    for token in query.metric:
        canonical = session.resolve(token, NameKind.METRIC, ViolationKind.UNKNOWN_METRIC)
        metrics.append(canonical if canonical is not None else token)
    dimensions = []
    for token in query.dimension:
        canonical = session.resolve(token, NameKind.DIMENSION, ViolationKind.UNKNOWN_DIMENSION)
        dimensions.append(canonical if canonical is not None else token)
    filt = _calibrate_filter(query.filter, session) if query.filter is not None else None

    order_by = []
    for spec in query.order_by:
        resolved = catalog.resolve_name(spec.column, NameKind.METRIC)
        if resolved.status == ResolveStatus.UNKNOWN:
            resolved = catalog.resolve_name(spec.column, NameKind.DIMENSION)
        if resolved.status == ResolveStatus.UNKNOWN:
            session.violations.append(
                Violation(ViolationKind.UNKNOWN_DIMENSION, f"orderBy: {spec.column}"))
            order_by.append(spec)
            continue
        if resolved.status == ResolveStatus.CORRECTED:
            key = (spec.column, resolved.canonical_name)
            if key not in session._seen_corrections:
                session._seen_corrections.add(key)
                session.notices.append(resolved.note)
        if resolved.canonical_name not in metrics and resolved.canonical_name not in dimensions:
            session.violations.append(Violation(
                ViolationKind.UNKNOWN_DIMENSION,
                f"orderBy: {spec.column} is not among the selected columns"))
        order_by.append(OrderSpec(column=resolved.canonical_name, order_type=spec.order_type))

    # Pair compatibility runs over resolved names; filter columns behave as
    # dimensions for this purpose.
    known_metrics = [m for m in metrics if m in catalog.metrics]
    dim_like = [d for d in dimensions if d in catalog.dimensions]
    if filt is not None:
        dim_like += [c for c in _filter_columns(filt) if c in catalog.dimensions]
    for violation in catalog.check_compatibility(known_metrics, dim_like):
        if violation.kind == ViolationKind.INCOMPATIBLE_PAIR:
            if violation not in session.violations:
                session.violations.append(violation)

    corrected = replace(
        query,
        metric=tuple(metrics),
        dimension=tuple(dimensions),
        filter=filt,
        order_by=tuple(order_by),
    )
    report = CalibrationReport(
        corrected_dsl=corrected,
        notices=tuple(session.notices),
        violations=tuple(session.violations),
    )
    return corrected, report
