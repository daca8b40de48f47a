"""Semantic catalog: canonical metrics, dimensions, aliases, compatibility.

The catalog is the authority on names. Every query token is resolved against
it during calibration, and it arbitrates boundary violations: unknown names
and metric/dimension pairs declared incompatible.

Catalog files are YAML with three sections: ``metrics``, ``dimensions`` and
``rules`` (aliases + incompatibilities). See ``data/default_catalog.yaml``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import yaml


class Theme(str, Enum):
    TRAFFIC = "Traffic"
    TRANSACTION = "Transaction"
    INTERACTION = "Interaction"
    MARKETING = "Marketing"
    MERCHANT = "Merchant"


class Grain(str, Enum):
    SHOP = "shop"
    BRAND = "brand"
    DISTRICT = "district"
    CITY = "city"


class GrainClass(str, Enum):
    TEMPORAL = "temporal"
    ENTITY = "entity"
    ATTRIBUTE = "attribute"


class NameKind(str, Enum):
    METRIC = "metric"
    DIMENSION = "dimension"
    FILTER_COLUMN = "filter_column"


class ResolveStatus(str, Enum):
    EXACT = "exact"
    CORRECTED = "corrected"
    UNKNOWN = "unknown"


class ViolationKind(str, Enum):
    UNKNOWN_METRIC = "unknown_metric"
    UNKNOWN_DIMENSION = "unknown_dimension"
    INCOMPATIBLE_PAIR = "incompatible_pair"


class CatalogError(Exception):
    """Base class for catalog validation failures."""


class CatalogParseError(CatalogError):
    """Catalog file is unreadable or structurally malformed."""


class DuplicateNameError(CatalogError):
    """A canonical name or alias is declared more than once."""


class DanglingReferenceError(CatalogError):
    """An alias, ratio, or incompatibility references a missing entry."""


_RATIO_RE = re.compile(r"^ratio\(\s*(\w+)\s*,\s*(\w+)\s*\)$")


@dataclass(frozen=True)
class Aggregation:
    """How a metric aggregates: sum, count_distinct, or a ratio of two."""

    kind: str  # "sum" | "count_distinct" | "ratio"
    numerator: str | None = None
    denominator: str | None = None

    @classmethod
    def parse(cls, text: str) -> "Aggregation":
        text = text.strip()
        if text in ("sum", "count_distinct"):
            return cls(kind=text)
        m = _RATIO_RE.match(text)
        if m:
            return cls(kind="ratio", numerator=m.group(1), denominator=m.group(2))
        raise CatalogParseError(f"unsupported aggregation {text!r}")

    def __str__(self) -> str:
        if self.kind == "ratio":
            return f"ratio({self.numerator}, {self.denominator})"
        return self.kind


@dataclass(frozen=True)
class MetricDef:
    canonical_name: str
    display_name: str
    theme: Theme
    aggregation: Aggregation
    source_column: str | None  # "table.column"; None for ratio metrics
    grains: frozenset[Grain]
    ads_available: bool

    @property
    def is_ratio(self) -> bool:
        return self.aggregation.kind == "ratio"

    @property
    def source_table(self) -> str | None:
        if self.source_column is None:
            return None
        return self.source_column.split(".", 1)[0]

    @property
    def column(self) -> str | None:
        if self.source_column is None:
            return None
        return self.source_column.split(".", 1)[1]


def snake_case(name: str) -> str:
    """Physical-column form of a canonical name (isWeek -> is_week)."""
    s = re.sub(r"([A-Z]+)([A-Z][a-z])", r"\1_\2", name)
    s = re.sub(r"([a-z0-9])([A-Z])", r"\1_\2", s)
    return s.lower()


@dataclass(frozen=True)
class DimensionDef:
    canonical_name: str
    display_name: str
    source_table: str
    grain_class: GrainClass
    enum_values: tuple[str, ...] | None = None

    @property
    def physical_column(self) -> str:
        return snake_case(self.canonical_name)


@dataclass(frozen=True)
class AliasRule:
    alias: str
    canonical_name: str
    kind: NameKind


@dataclass(frozen=True)
class Resolution:
    """Outcome of resolving one token against the catalog."""

    canonical_name: str | None
    status: ResolveStatus
    note: str | None = None


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str


# Entity dimensions mapped to the grain they pin a query to.
_ENTITY_GRAIN = {
    "shopId": Grain.SHOP,
    "shopName": Grain.SHOP,
    "brandId": Grain.BRAND,
    "brandName": Grain.BRAND,
    "district": Grain.DISTRICT,
    "city": Grain.CITY,
}


class Catalog:
    """Immutable registry of metrics, dimensions, aliases, and rules.

    Safe for concurrent readers. Canonical lookups are exact first, then
    case-insensitive, then alias-based; the weaker matches report as
    corrections so callers can surface them.
    """

    def __init__(
        self,
        metrics: list[MetricDef],
        dimensions: list[DimensionDef],
        aliases: list[AliasRule],
        incompatible_pairs: set[tuple[str, str]],
    ):
        self.metrics: dict[str, MetricDef] = {}
        self.dimensions: dict[str, DimensionDef] = {}
        for m in metrics:
            if m.canonical_name in self.metrics:
                raise DuplicateNameError(f"duplicate metric {m.canonical_name!r}")
            self.metrics[m.canonical_name] = m
        for d in dimensions:
            if d.canonical_name in self.dimensions or d.canonical_name in self.metrics:
                raise DuplicateNameError(f"duplicate dimension {d.canonical_name!r}")
            self.dimensions[d.canonical_name] = d
        self.aliases: dict[NameKind, dict[str, AliasRule]] = {k: {} for k in NameKind}
        for rule in aliases:
            table = self.aliases[rule.kind]
            key = rule.alias.lower()
            if key in table:
                raise DuplicateNameError(f"duplicate alias {rule.alias!r} for kind {rule.kind.value}")
            table[key] = rule
        self.incompatible_pairs = frozenset(incompatible_pairs)
        self._lower_metrics = {name.lower(): name for name in self.metrics}
        self._lower_dimensions = {name.lower(): name for name in self.dimensions}
        self._validate()

    def _validate(self) -> None:
        for m in self.metrics.values():
            if not m.grains:
                raise CatalogParseError(f"metric {m.canonical_name!r} has empty grains")
            if m.is_ratio:
                for part in (m.aggregation.numerator, m.aggregation.denominator):
                    ref = self.metrics.get(part)
                    if ref is None:
                        raise DanglingReferenceError(
                            f"ratio metric {m.canonical_name!r} references missing metric {part!r}")
                    if ref.is_ratio:
                        raise CatalogParseError(
                            f"ratio metric {m.canonical_name!r} must reference sum/count metrics")
                num = self.metrics[m.aggregation.numerator]
                den = self.metrics[m.aggregation.denominator]
                if num.source_table != den.source_table:
                    raise CatalogParseError(
                        f"ratio metric {m.canonical_name!r} spans fact tables "
                        f"{num.source_table!r} and {den.source_table!r}")
            elif m.source_column is None or "." not in m.source_column:
                raise CatalogParseError(
                    f"metric {m.canonical_name!r} needs a qualified source_column")
        for d in self.dimensions.values():
            if d.enum_values is not None:
                if not d.enum_values:
                    raise CatalogParseError(
                        f"dimension {d.canonical_name!r} has empty enum_values")
                if len(set(d.enum_values)) != len(d.enum_values):
                    raise DuplicateNameError(
                        f"dimension {d.canonical_name!r} has duplicate enum values")
        for table in self.aliases.values():
            for rule in table.values():
                if rule.kind == NameKind.METRIC:
                    exists = rule.canonical_name in self.metrics
                else:
                    exists = rule.canonical_name in self.dimensions
                if not exists:
                    raise DanglingReferenceError(
                        f"alias {rule.alias!r} targets missing name {rule.canonical_name!r}")
                if rule.alias == rule.canonical_name:
                    raise CatalogParseError(f"alias {rule.alias!r} equals its canonical name")
        for metric, dim in self.incompatible_pairs:
            if metric not in self.metrics:
                raise DanglingReferenceError(f"incompatibility references missing metric {metric!r}")
            if dim not in self.dimensions:
                raise DanglingReferenceError(f"incompatibility references missing dimension {dim!r}")

    # -- resolution ---------------------------------------------------------

    def resolve_name(self, token: str, kind: NameKind | str) -> Resolution:
        """Resolve a raw token to its canonical name.

        Exact canonical match -> exact; case-insensitive canonical match or
        alias match -> corrected with a note; anything else -> unknown.
        """
        kind = NameKind(kind)
        canon_space = self._resolution_space(kind)
        if token in canon_space:
            return Resolution(token, ResolveStatus.EXACT)
        lowered = token.lower()
        lower_map = {name.lower(): name for name in canon_space}
        if lowered in lower_map:
            canonical = lower_map[lowered]
            return Resolution(canonical, ResolveStatus.CORRECTED,
                              note=self._note(token, canonical, kind))
        hit = self._alias_lookup(lowered, kind)
        if hit is not None:
            return Resolution(hit, ResolveStatus.CORRECTED,
                              note=self._note(token, hit, kind))
        return Resolution(None, ResolveStatus.UNKNOWN)

    def _resolution_space(self, kind: NameKind) -> dict:
        if kind == NameKind.METRIC:
            return self.metrics
        # Filter columns draw from the dimension namespace.
        return self.dimensions

    def _alias_lookup(self, lowered: str, kind: NameKind) -> str | None:
        rule = self.aliases[kind].get(lowered)
        if rule is not None:
            return rule.canonical_name
        if kind == NameKind.FILTER_COLUMN:
            # Fall back to dimension aliases for filter columns.
            rule = self.aliases[NameKind.DIMENSION].get(lowered)
            if rule is not None:
                return rule.canonical_name
        return None

    def _note(self, token: str, canonical: str, kind: NameKind) -> str:
        if kind == NameKind.METRIC:
            detail = "metric"
        elif kind == NameKind.FILTER_COLUMN:
            detail = "filter column"
        else:
            detail = f"{self.dimensions[canonical].grain_class.value} dimension"
        return f"Input '{token}' aligned to '{canonical}' ({detail})."

    # -- compatibility ------------------------------------------------------

    def check_compatibility(self, metrics: list[str], dimensions: list[str]) -> list[Violation]:
        """Boundary check: unknown names and declared-incompatible pairs."""
        violations: list[Violation] = []
        resolved_metrics: list[str] = []
        resolved_dims: list[str] = []
        for token in metrics:
            res = self.resolve_name(token, NameKind.METRIC)
            if res.canonical_name is None:
                violations.append(Violation(ViolationKind.UNKNOWN_METRIC, token))
            else:
                resolved_metrics.append(res.canonical_name)
        for token in dimensions:
            res = self.resolve_name(token, NameKind.DIMENSION)
            if res.canonical_name is None:
                violations.append(Violation(ViolationKind.UNKNOWN_DIMENSION, token))
            else:
                resolved_dims.append(res.canonical_name)
        for metric in resolved_metrics:
            for dim in resolved_dims:
                if (metric, dim) in self.incompatible_pairs:
                    violations.append(
                        Violation(ViolationKind.INCOMPATIBLE_PAIR, f"{metric} x {dim}"))
        return violations

    # -- helpers ------------------------------------------------------------

    def metric(self, name: str) -> MetricDef:
        return self.metrics[name]

    def dimension(self, name: str) -> DimensionDef:
        return self.dimensions[name]

    def fact_table_of(self, metric_name: str) -> str:
        """Fact table a metric is computed from (numerator's for ratios)."""
        m = self.metrics[metric_name]
        if m.is_ratio:
            return self.fact_table_of(m.aggregation.numerator)
        return m.source_table

    def entity_grain_of(self, dim_name: str) -> Grain | None:
        return _ENTITY_GRAIN.get(dim_name)

    def with_filler(self, n_metrics: int = 200, n_dimensions: int = 100) -> "Catalog":
        """Pad with name-only filler entries for boundary stress tests."""
        themes = list(Theme)
        metrics = list(self.metrics.values())
        dims = list(self.dimensions.values())
        i = 0
        while len(metrics) < n_metrics:
            name = f"fillerMetric{i:03d}"
            if name not in self.metrics:
                metrics.append(MetricDef(
                    canonical_name=name,
                    display_name=f"Filler Metric {i}",
                    theme=themes[i % len(themes)],
                    aggregation=Aggregation("sum"),
                    source_column="dws_trd.net_gmv",
                    grains=frozenset({Grain.SHOP}),
                    ads_available=False,
                ))
            i += 1
        i = 0
        while len(dims) < n_dimensions:
            name = f"fillerDim{i:03d}"
            if name not in self.dimensions:
                dims.append(DimensionDef(
                    canonical_name=name,
                    display_name=f"Filler Dimension {i}",
                    source_table="dim_shop",
                    grain_class=GrainClass.ATTRIBUTE,
                ))
            i += 1
        all_aliases = [r for table in self.aliases.values() for r in table.values()]
        return Catalog(metrics, dims, all_aliases, set(self.incompatible_pairs))


def _require(entry: dict, key: str, context: str):
    if key not in entry:
        raise CatalogParseError(f"{context}: missing field {key!r}")
    return entry[key]


def _build_catalog(doc: dict, origin: str) -> Catalog:
    if not isinstance(doc, dict):
        raise CatalogParseError(f"{origin}: catalog root must be a mapping")
    metrics = []
    for entry in doc.get("metrics", []) or []:
        agg = Aggregation.parse(str(_require(entry, "aggregation", "metric")))
        source = entry.get("source_column")
        if agg.kind != "ratio" and source is None:
            raise CatalogParseError(
                f"metric {entry.get('canonical_name')!r}: missing field 'source_column'")
        try:
            metrics.append(MetricDef(
                canonical_name=_require(entry, "canonical_name", "metric"),
                display_name=_require(entry, "display_name", "metric"),
                theme=Theme(_require(entry, "theme", "metric")),
                aggregation=agg,
                source_column=source,
                grains=frozenset(Grain(g) for g in _require(entry, "grains", "metric")),
                ads_available=bool(_require(entry, "ads_available", "metric")),
            ))
        except ValueError as exc:
            raise CatalogParseError(f"metric {entry.get('canonical_name')!r}: {exc}") from exc
    dimensions = []
    for entry in doc.get("dimensions", []) or []:
        enum_values = entry.get("enum_values")
        try:
            dimensions.append(DimensionDef(
                canonical_name=_require(entry, "canonical_name", "dimension"),
                display_name=_require(entry, "display_name", "dimension"),
                source_table=_require(entry, "source_table", "dimension"),
                grain_class=GrainClass(_require(entry, "grain_class", "dimension")),
                enum_values=tuple(str(v) for v in enum_values) if enum_values is not None else None,
            ))
        except ValueError as exc:
            raise CatalogParseError(f"dimension {entry.get('canonical_name')!r}: {exc}") from exc
    rules = doc.get("rules", {}) or {}
    aliases = []
    for entry in rules.get("aliases", []) or []:
        try:
            aliases.append(AliasRule(
                alias=str(_require(entry, "alias", "alias")),
                canonical_name=str(_require(entry, "canonical_name", "alias")),
                kind=NameKind(_require(entry, "kind", "alias")),
            ))
        except ValueError as exc:
            raise CatalogParseError(f"alias {entry.get('alias')!r}: {exc}") from exc
    pairs = set()
    for pair in rules.get("incompatibilities", []) or []:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise CatalogParseError(f"incompatibility entry {pair!r} must be a [metric, dimension] pair")
        pairs.add((str(pair[0]), str(pair[1])))
    return Catalog(metrics, dimensions, aliases, pairs)


def load_catalog(path: str | Path) -> Catalog:
    """Load and validate a catalog file.

    Raises CatalogParseError (with the YAML line on syntax errors),
    DuplicateNameError, or DanglingReferenceError.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f" at line {mark.line + 1}" if mark is not None else ""
        raise CatalogParseError(f"{path}: parse error{line}: {exc}") from exc
    if doc is None:
        raise CatalogParseError(f"{path}: empty catalog file")
    return _build_catalog(doc, str(path))


def default_catalog_path() -> Path:
    return Path(str(resources.files("insightenv").joinpath("data/default_catalog.yaml")))


def load_default_catalog() -> Catalog:
    """The bundled default catalog (~40 metrics / ~20 dimensions)."""
    return load_catalog(default_catalog_path())
