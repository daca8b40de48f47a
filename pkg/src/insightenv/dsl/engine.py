"""Query engine facade: parse, calibrate, plan, execute, package.

Every request produces a feedback package with two channels: the calibration
report (corrected query plus notices) and the execution results (data path
plus preview). Failures never escape as exceptions; they surface as package
status Error or Timeout.
"""

from __future__ import annotations

import csv
import sqlite3
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

from insightenv.catalog import Catalog, Violation, ViolationKind
from insightenv.dsl.calibration import CalibrationReport, calibrate
from insightenv.dsl.planner import PlanError, QueryPlan, plan
from insightenv.dsl.protocol import DslQuery, SchemaError, parse_query, serialize_query
from insightenv.warehouse import WarehouseHandle

STATUS_SUCCESS = "Success"
STATUS_ERROR = "Error"
STATUS_TIMEOUT = "Timeout"

DEFAULT_TIMEOUT_SECONDS = 60.0
PREVIEW_CAP = 10

_COMPARE_OFFSETS = {"wow": 7, "yoy": 365}
_PROGRESS_EVERY_OPS = 1000
_INTERNAL_ROW_CAP = 10_000_000


class _BudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class _CachedResult:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


@dataclass
class EngineResponse:
    """Feedback package plus structured detail for reward scoring."""

    package: dict
    status: str
    query: DslQuery | None = None
    corrected: DslQuery | None = None
    report: CalibrationReport | None = None
    plan: QueryPlan | None = None
    columns: tuple[str, ...] = ()
    rows: tuple[tuple, ...] = ()
    schema_error: str | None = None
    error: str | None = None
    from_cache: bool = False

    @property
    def preview(self) -> list:
        return self.package["execution_results"]["preview"]


def _violation_text(v: Violation) -> str:
    label = {
        ViolationKind.UNKNOWN_METRIC: "unknown metric",
        ViolationKind.UNKNOWN_DIMENSION: "unknown dimension",
        ViolationKind.INCOMPATIBLE_PAIR: "incompatible pair",
    }[v.kind]
    return f"Violation: {label} '{v.detail}'."


def _shift_ds(ds: tuple[str, str], days: int) -> tuple[str, str]:
    out = []
    for stamp in ds:
        d = datetime.strptime(stamp, "%Y%m%d") - timedelta(days=days)
        out.append(d.strftime("%Y%m%d"))
    return (out[0], out[1])


class DslEngine:
    """Executes Dsl2data requests against one warehouse snapshot.

    Safe for concurrent callers: the result cache is lock-guarded and each
    request opens its own read-only connection.
    """

    def __init__(
        self,
        catalog: Catalog,
        warehouse: WarehouseHandle,
        workspace: str | Path = ".",
        timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS,
        default_export: bool = True,
    ):
        self.catalog = catalog
        self.warehouse = warehouse
        self.workspace = Path(workspace)
        self.timeout_seconds = timeout_seconds
        self.default_export = default_export
        self._cache: dict[str, _CachedResult] = {}
        self._lock = threading.Lock()

    # -- public entry points --------------------------------------------------

    def run_text(self, payload: str, force_route: str | None = None) -> EngineResponse:
        """Full pipeline from serialized request text."""
        try:
            query = parse_query(payload)
        except SchemaError as exc:
            package = _package(None, [f"Schema error: {exc}"], None, [], STATUS_ERROR)
            return EngineResponse(package=package, status=STATUS_ERROR, schema_error=str(exc))
        return self.run_query(query, force_route=force_route)

    def run_query(self, query: DslQuery, force_route: str | None = None) -> EngineResponse:
        corrected, report = calibrate(query, self.catalog)
        notices = list(report.notices)
        if report.violations:
            notices += [_violation_text(v) for v in report.violations]
            package = _package(corrected, notices, None, [], STATUS_ERROR)
            return EngineResponse(
                package=package, status=STATUS_ERROR, query=query,
                corrected=corrected, report=report,
                error="calibration violations")
        try:
            the_plan = plan(corrected, self.catalog, force_route=force_route)
        except PlanError as exc:
            notices.append(f"Plan error: {exc}")
            package = _package(corrected, notices, None, [], STATUS_ERROR)
            return EngineResponse(
                package=package, status=STATUS_ERROR, query=query,
                corrected=corrected, report=report, error=str(exc))

        from_cache = False
        with self._lock:
            cached = self._cache.get(the_plan.cache_key)
        if cached is not None:
            columns, rows = cached.columns, cached.rows
            from_cache = True
        else:
            deadline = time.monotonic() + self.timeout_seconds
            try:
                columns, rows = self._execute(corrected, the_plan, deadline, force_route)
            except _BudgetExceeded:
                package = _package(corrected, notices, None, [], STATUS_TIMEOUT)
                return EngineResponse(
                    package=package, status=STATUS_TIMEOUT, query=query,
                    corrected=corrected, report=report, plan=the_plan,
                    error="time budget exhausted")
            except sqlite3.Error as exc:
                notices.append(f"Execution error: {exc}")
                package = _package(corrected, notices, None, [], STATUS_ERROR)
                return EngineResponse(
                    package=package, status=STATUS_ERROR, query=query,
                    corrected=corrected, report=report, plan=the_plan, error=str(exc))
            with self._lock:
                self._cache.setdefault(the_plan.cache_key, _CachedResult(columns, rows))

        data_path = self._export(corrected, the_plan, columns, rows)
        preview = [dict(zip(columns, row)) for row in rows[:min(corrected.limit, PREVIEW_CAP)]]
        package = _package(corrected, notices, data_path, preview, STATUS_SUCCESS)
        return EngineResponse(
            package=package, status=STATUS_SUCCESS, query=query,
            corrected=corrected, report=report, plan=the_plan,
            columns=columns, rows=rows, from_cache=from_cache)

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()

    # -- execution -------------------------------------------------------------

    def _execute(
        self, query: DslQuery, the_plan: QueryPlan, deadline: float,
        force_route: str | None,
    ) -> tuple[tuple[str, ...], tuple[tuple, ...]]:
        conn = self.warehouse.connect()
        try:
            def guard():
                return 1 if time.monotonic() > deadline else 0

            conn.set_progress_handler(guard, _PROGRESS_EVERY_OPS)
            if time.monotonic() > deadline:
                raise _BudgetExceeded()
            try:
                cursor = conn.execute(the_plan.sql_text, the_plan.params)
                columns = tuple(d[0] for d in cursor.description)
                rows = [tuple(r) for r in cursor.fetchall()]
            except sqlite3.OperationalError as exc:
                if "interrupted" in str(exc) and time.monotonic() > deadline:
                    raise _BudgetExceeded() from None
                raise
            if not query.compare:
                return columns, tuple(rows)
            return self._merge_compare(conn, query, columns, rows, deadline, force_route)
        finally:
            conn.close()

    def _merge_compare(
        self, conn: sqlite3.Connection, query: DslQuery,
        columns: tuple[str, ...], rows: list[tuple], deadline: float,
        force_route: str | None,
    ) -> tuple[tuple[str, ...], tuple[tuple, ...]]:
        n_dims = len(query.dimension)
        metric_pos = {m: columns.index(m) for m in query.metric}
        out_columns = list(columns)
        extra_per_row: list[list] = [[] for _ in rows]
        for mode in query.compare:
            prev_query = replace(
                query,
                ds=_shift_ds(query.ds, _COMPARE_OFFSETS[mode]),
                compare=(),
                order_by=(),
                limit=_INTERNAL_ROW_CAP,
                save_data_path=None,
            )
            prev_plan = plan(prev_query, self.catalog, force_route=force_route)
            try:
                cursor = conn.execute(prev_plan.sql_text, prev_plan.params)
                prev_rows = cursor.fetchall()
            except sqlite3.OperationalError as exc:
                if "interrupted" in str(exc) and time.monotonic() > deadline:
                    raise _BudgetExceeded() from None
                raise
            prev_map = {tuple(r[:n_dims]): r for r in prev_rows}
            for metric in query.metric:
                out_columns.append(f"{metric}_{mode}")
                out_columns.append(f"{metric}_{mode}_pct")
            for i, row in enumerate(rows):
                prev = prev_map.get(tuple(row[:n_dims]))
                for metric in query.metric:
                    pos = metric_pos[metric]
                    cur_v = row[pos]
                    prev_v = prev[pos] if prev is not None else None
                    if cur_v is None or prev_v is None:
                        extra_per_row[i] += [None, None]
                        continue
                    delta = cur_v - prev_v
                    pct = (delta / prev_v * 100.0) if prev_v != 0 else None
                    extra_per_row[i] += [delta, pct]
        merged = tuple(tuple(row) + tuple(extra) for row, extra in zip(rows, extra_per_row))
        return tuple(out_columns), merged

    # -- output ----------------------------------------------------------------

    def _export(
        self, query: DslQuery, the_plan: QueryPlan,
        columns: tuple[str, ...], rows: tuple[tuple, ...],
    ) -> str | None:
        if query.save_data_path is not None:
            rel = query.save_data_path
        elif self.default_export:
            rel = f"data/dsl/{the_plan.cache_key[:12]}.csv"
        else:
            return None
        dest = self.workspace / rel
        dest.parent.mkdir(parents=True, exist_ok=True)
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            writer.writerows(rows)
        return rel


def _package(
    corrected: DslQuery | None, notices: list[str],
    data_path: str | None, preview: list, status: str,
) -> dict:
    return {
        "calibration_report": {
            "corrected_dsl": serialize_query(corrected) if corrected is not None else None,
            "notices": list(notices),
        },
        "execution_results": {
            "data_path": data_path,
            "preview": preview,
        },
        "status": status,
    }
