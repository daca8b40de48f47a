"""Decidable validation for a small mermaid flowchart subset.

Supported: `graph TD|LR` / `flowchart TD|LR` headers, node lines `ID[label]`
or bare `ID`, and edges `A --> B` with an optional `|label|`, where endpoints
may carry inline labels. Anything else fails validation with a diagnostic;
validation never throws.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

_HEADER_RE = re.compile(r"^(graph|flowchart)\s+(TD|LR)$")
_ID = r"[A-Za-z_][A-Za-z0-9_]*"
_ENDPOINT = rf"({_ID})(?:\[([^\[\]]+)\])?"
_NODE_RE = re.compile(rf"^{_ENDPOINT}$")
_EDGE_RE = re.compile(rf"^{_ENDPOINT}\s*-->\s*(?:\|([^|]*)\|\s*)?{_ENDPOINT}$")


@dataclass(frozen=True)
class GraphNode:
    id: str
    label: str | None = None


@dataclass(frozen=True)
class GraphEdge:
    source: str
    target: str
    label: str | None = None


@dataclass(frozen=True)
class ReasoningGraph:
    source_text: str
    nodes: tuple[GraphNode, ...] = ()
    edges: tuple[GraphEdge, ...] = ()
    parse_ok: bool = False
    diagnostics: tuple[str, ...] = ()


def validate_mermaid(text: str) -> ReasoningGraph:
    """Parse the subset; parse_ok=false plus diagnostics on any deviation."""
    numbered = [(i, ln.strip()) for i, ln in enumerate((text or "").splitlines(), start=1)]
    numbered = [(i, ln) for i, ln in numbered if ln and not ln.startswith("%%")]
    if not numbered:
        return ReasoningGraph(source_text=text or "", diagnostics=("empty graph text",))
    header_lineno, header = numbered[0]
    if not _HEADER_RE.match(header):
        return ReasoningGraph(
            source_text=text,
            diagnostics=(f"line {header_lineno}: bad header, expected "
                         f"'graph TD|LR' or 'flowchart TD|LR', got {header!r}",))

    # node id -> explicit label from the first [label] seen, else None
    nodes: dict[str, str | None] = {}
    edges: list[GraphEdge] = []
    diagnostics: list[str] = []

    def declare(node_id: str, label: str | None):
        if node_id not in nodes:
            nodes[node_id] = label
        elif nodes[node_id] is None and label is not None:
            nodes[node_id] = label

    for lineno, line in numbered[1:]:
        edge = _EDGE_RE.match(line)
        if edge:
            src, src_label, edge_label, dst, dst_label = edge.groups()
            declare(src, src_label)
            declare(dst, dst_label)
            edges.append(GraphEdge(source=src, target=dst, label=edge_label))
            continue
        node = _NODE_RE.match(line)
        if node:
            declare(node.group(1), node.group(2))
            continue
        diagnostics.append(f"line {lineno}: unsupported syntax {line!r}")

    if diagnostics:
        return ReasoningGraph(source_text=text, diagnostics=tuple(diagnostics))
    return ReasoningGraph(
        source_text=text,
        nodes=tuple(GraphNode(id=k, label=v if v is not None else k)
                    for k, v in nodes.items()),
        edges=tuple(edges),
        parse_ok=True,
    )


def empty_graph() -> ReasoningGraph:
    return ReasoningGraph(source_text="", diagnostics=("empty graph text",))
