"""Numeric-literal extraction and grounding checks for free text.

The grounding rule: a written numeral counts as grounded when some previously
observed value rounds to it at the numeral's written precision. Observation
15.23 grounds the claim "15.2"; agent-side arithmetic does not ground.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime

# Signed decimal with optional thousands separators and optional percent sign.
# Guards keep matches out of identifiers, version strings, and longer numbers.
_NUMBER_RE = re.compile(
    r"(?<![\w.])"
    r"[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?"
    r"(?!\w)(?!\.\d)"
)

_YEAR_MIN = 1900
_YEAR_MAX = 2100


@dataclass(frozen=True)
class WrittenNumeral:
    """A numeric literal as it appears in text."""

    value: float
    decimals: int
    is_percent: bool
    raw: str


def _is_date_token(digits: str) -> bool:
    if len(digits) != 8:
        return False
    try:
        datetime.strptime(digits, "%Y%m%d")
    except ValueError:
        return False
    return True


def _is_bare_year(raw: str) -> bool:
    if not raw.isdigit() or len(raw) != 4:
        return False
    return _YEAR_MIN <= int(raw) <= _YEAR_MAX


def extract_written(text: str) -> list[WrittenNumeral]:
    """All numeric literals in order, with their written precision."""
    out: list[WrittenNumeral] = []
    for match in _NUMBER_RE.finditer(text):
        raw = match.group(0)
        is_percent = raw.endswith("%")
        body = raw.rstrip("%").replace(",", "")
        if _is_date_token(body) or _is_bare_year(raw):
            continue
        decimals = len(body.rsplit(".", 1)[1]) if "." in body else 0
        out.append(WrittenNumeral(
            value=float(body),
            decimals=decimals,
            is_percent=is_percent,
            raw=raw,
        ))
    return out


def extract_numerals(text: str) -> list[float]:
    """Normalized numeric values of every literal in the text."""
    return [w.value for w in extract_written(text)]


def is_grounded(numeral: WrittenNumeral, grounding: set[float]) -> bool:
    """True when some grounding value rounds to the numeral as written."""
    target = f"{numeral.value:.{numeral.decimals}f}"
    for g in grounding:
        if f"{g:.{numeral.decimals}f}" == target:
            return True
    return False


def count_grounded(text: str, grounding: set[float]) -> tuple[int, int]:
    """(grounded m, ungrounded n) counts over the text's numerals."""
    m = 0
    n = 0
    for numeral in extract_written(text):
        if is_grounded(numeral, grounding):
            m += 1
        else:
            n += 1
    return m, n


def numerals_from_values(values) -> set[float]:
    """Grounding entries from structured cell values (not free text)."""
    out: set[float] = set()
    for v in values:
        if isinstance(v, bool):
            continue
        if isinstance(v, (int, float)):
            out.add(float(v))
    return out


def token_length(text: str) -> int:
    """Whitespace-delimited token count."""
    return len(text.split())
