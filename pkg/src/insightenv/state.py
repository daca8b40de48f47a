"""Analysis state: the quintuple of identity, question, insights,
observations, and reasoning graph, with pure structured updates.

States are immutable values. apply_update folds one structured update into a
state and returns a fresh state; invalid insight-status transitions raise
TransitionError, which the reward layer converts into a schema penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from insightenv.mermaid import ReasoningGraph, empty_graph, validate_mermaid


class InsightStatus(str, Enum):
    NEW = "New"
    UNCHANGED = "Unchanged"
    REINFORCED = "Reinforced"
    REFUTED = "Refuted"


# Statuses whose deltas must carry a fresh proof.
_PROOF_REQUIRED = {InsightStatus.NEW, InsightStatus.REINFORCED, InsightStatus.REFUTED}


class TransitionError(ValueError):
    """Insight delta violates the status-transition rules."""


@dataclass(frozen=True)
class Insight:
    title: str
    status: InsightStatus
    proof: str
    first_seen_step: int
    last_updated_step: int
    status_history: tuple[InsightStatus, ...] = ()

    @property
    def corrected(self) -> bool:
        return InsightStatus.REFUTED in self.status_history


@dataclass(frozen=True)
class ObservationStructure:
    metrics: tuple[str, ...] = ()
    dimensions: tuple[str, ...] = ()
    filters: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObservationEntry:
    type: str  # "CSV" | "TXT"
    description: str
    structure: ObservationStructure
    payload_ref: str
    numerals: frozenset[float] = frozenset()
    index: int = -1  # assigned on append


@dataclass(frozen=True)
class InsightDelta:
    title: str
    status: InsightStatus
    proof: str = ""


@dataclass(frozen=True)
class StateUpdate:
    insight_updates: tuple[InsightDelta, ...] = ()
    observation_appends: tuple[ObservationEntry, ...] = ()
    graph_text: str | None = None


@dataclass(frozen=True)
class AnalysisState:
    id: tuple[tuple[str, str], ...]  # sorted (key, value) pairs
    question: str
    insights: tuple[Insight, ...] = ()
    observations: tuple[ObservationEntry, ...] = ()
    graph: ReasoningGraph = field(default_factory=empty_graph)
    step_index: int = 0

    @property
    def id_map(self) -> dict[str, str]:
        return dict(self.id)

    def insight_titles(self) -> tuple[str, ...]:
        return tuple(i.title for i in self.insights)


def initial_state(entity_id: dict[str, str], question: str) -> AnalysisState:
    return AnalysisState(
        id=tuple(sorted((str(k), str(v)) for k, v in entity_id.items())),
        question=question,
    )


def apply_update(
    state: AnalysisState, update: StateUpdate, at_step: int | None = None,
) -> AnalysisState:
    """Fold one update into the state; pure, raises TransitionError on bad deltas."""
    step = state.step_index + 1 if at_step is None else at_step
    if step < 0:
        raise TransitionError("step index must be non-negative")

    by_title = {i.title: pos for pos, i in enumerate(state.insights)}
    insights = list(state.insights)
    for delta in update.insight_updates:
        if not delta.title.strip():
            raise TransitionError("insight title must be non-empty")
        status = InsightStatus(delta.status)
        if status in _PROOF_REQUIRED and not delta.proof.strip():
            raise TransitionError(
                f"insight {delta.title!r}: status {status.value} requires a proof")
        if status == InsightStatus.NEW:
            if delta.title in by_title:
                raise TransitionError(
                    f"insight {delta.title!r} already exists; status New is only for first appearance")
            by_title[delta.title] = len(insights)
            insights.append(Insight(
                title=delta.title,
                status=status,
                proof=delta.proof,
                first_seen_step=step,
                last_updated_step=step,
                status_history=(status,),
            ))
            continue
        if delta.title not in by_title:
            raise TransitionError(
                f"insight {delta.title!r} does not exist; status {status.value} needs an existing title")
        pos = by_title[delta.title]
        current = insights[pos]
        insights[pos] = replace(
            current,
            status=status,
            proof=delta.proof if status != InsightStatus.UNCHANGED else current.proof,
            last_updated_step=step,
            status_history=current.status_history + (status,),
        )

    observations = list(state.observations)
    for entry in update.observation_appends:
        observations.append(replace(entry, index=len(observations)))

    graph = state.graph
    if update.graph_text is not None:
        graph = validate_mermaid(update.graph_text)

    return AnalysisState(
        id=state.id,
        question=state.question,
        insights=tuple(insights),
        observations=tuple(observations),
        graph=graph,
        step_index=step,
    )


def grounding_index(state: AnalysisState) -> set[float]:
    """Union of numerals over all observations."""
    out: set[float] = set()
    for entry in state.observations:
        out |= entry.numerals
    return out


def incremental_insights(before: AnalysisState, after: AnalysisState) -> tuple[Insight, ...]:
    """Insights the last step added or re-judged (New/Reinforced/Refuted only)."""
    out = []
    for insight in after.insights:
        if insight.last_updated_step != after.step_index:
            continue
        if insight.status == InsightStatus.UNCHANGED:
            continue
        out.append(insight)
    return tuple(out)


def format_state(state: AnalysisState) -> str:
    """Human-readable snapshot in quintuple order: id, q, insights,
    observations, graph."""
    lines = []
    lines.append("[id] " + (", ".join(f"{k}={v}" for k, v in state.id) or "(none)"))
    lines.append(f"[q] {state.question}")
    lines.append(f"[insights] ({len(state.insights)})")
    for i, insight in enumerate(state.insights, start=1):
        lines.append(f"  {i}. {insight.title} | status={insight.status.value} "
                     f"| first_seen={insight.first_seen_step} "
                     f"| last_updated={insight.last_updated_step}")
        lines.append(f"     proof: {insight.proof}")
    lines.append(f"[observations] ({len(state.observations)})")
    for entry in state.observations:
        s = entry.structure
        lines.append(
            f"  {entry.index}. {entry.type} metrics={','.join(s.metrics) or '-'} "
            f"dimensions={','.join(s.dimensions) or '-'} filters={','.join(s.filters) or '-'} "
            f"ref={entry.payload_ref}")
        lines.append(f"     {entry.description}")
        lines.append(
            "     numerals: " + (", ".join(repr(v) for v in sorted(entry.numerals)) or "(none)"))
    lines.append("[graph]" + (" (valid)" if state.graph.parse_ok else " (not rendered)"))
    for ln in state.graph.source_text.splitlines():
        lines.append(f"  {ln}")
    lines.append(f"[step] {state.step_index}")
    return "\n".join(lines) + "\n"
