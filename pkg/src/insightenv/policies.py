"""Scripted policies that drive episodes without a model.

ReplayPolicy replays raw step text from a previous trajectory log.
ExplorerPolicy is a rule-based analyst: take a week-over-week panel reading,
drill the compatible cause dimensions one per step, verify the dominant
segment's share with a script, then commit and reinforce an insight. It
exists to exercise the environment end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

from insightenv.catalog import Catalog
from insightenv.state import AnalysisState, InsightDelta, InsightStatus
from insightenv.steps import Observation, TOOL_DSL2DATA, TOOL_PYTHON, build_step, render_step


class PolicyAdapter(Protocol):
    def next_step(self, state: AnalysisState,
                  last_observation: Observation | None) -> str | None: ...


class ReplayPolicy:
    """Feed back raw_output lines from a steps.jsonl file, verbatim."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._steps = []
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            self._steps.append(record["raw_output"])
        self._cursor = 0

    def next_step(self, state, last_observation):
        if self._cursor >= len(self._steps):
            return None
        raw = self._steps[self._cursor]
        self._cursor += 1
        return raw


# cause dimensions in drill preference order; temporal and id-like
# dimensions are not causes
DRILL_PREFERENCE = ("channel", "ageGroup", "memberLevel", "priceBand",
                    "deliveryType", "paymentMethod", "gender", "district")

_DOMINANT_SHARE = 0.5


def _fmt(value) -> str:
    """Quote a value exactly as the observation carried it."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class _Memory:
    phase: str = "panel"
    drills_left: list[str] = field(default_factory=list)
    drilled: list[str] = field(default_factory=list)
    panel_delta: float | None = None
    segment_dim: str | None = None
    segment_value: str | None = None
    segment_delta: float | None = None
    share_text: str | None = None
    title: str | None = None
    probe_done: bool = False


class ExplorerPolicy:
    """Deterministic drill-down探索 over one metric, window, and entity."""

    def __init__(self, catalog: Catalog, metric: str, window: tuple[str, str],
                 entity: dict[str, str], direction: str = "down",
                 probe: bool = False):
        if direction not in ("down", "up"):
            raise ValueError("direction must be 'down' or 'up'")
        self.catalog = catalog
        self.metric = metric
        self.window = tuple(window)
        self.entity = dict(entity)
        self.direction = direction
        self.probe = probe
        self.memory = _Memory(drills_left=self._candidate_dims())

    # -- catalog-aware planning ------------------------------------------------

    def _candidate_dims(self) -> list[str]:
        out = []
        for dim in DRILL_PREFERENCE:
            if dim in self.entity:
                continue
            if not self.catalog.check_compatibility([self.metric], [dim]):
                out.append(dim)
        return out

    def _entity_conditions(self) -> list[dict]:
        return [{"columnEName": col, "queryRule": "eq", "params": [value]}
                for col, value in sorted(self.entity.items())]

    def _query(self, dimension: list[str] | None = None,
               extra_conditions: list[dict] | None = None,
               metric: str | None = None) -> dict:
        conditions = self._entity_conditions() + (extra_conditions or [])
        payload: dict = {
            "metric": [metric or self.metric],
            "ds": list(self.window),
            "compare": ["wow"],
        }
        if dimension:
            payload["dimension"] = dimension
        if conditions:
            payload["filter"] = {"relation": "and", "conditions": conditions}
        return payload

    # -- observation digestion ---------------------------------------------------

    def _preview(self, obs: Observation | None) -> list[dict]:
        if obs is None or obs.tool != TOOL_DSL2DATA or not obs.success:
            return []
        return obs.body["execution_results"]["preview"]

    def _delta_column(self) -> str:
        return f"{self.metric}_wow"

    def _segment_rows(self, preview: list[dict], dim: str) -> list[tuple[str, float]]:
        rows = []
        for row in preview:
            delta = row.get(self._delta_column())
            if delta is None or dim not in row:
                continue
            rows.append((str(row[dim]), float(delta)))
        return rows

    def _dominant(self, rows: list[tuple[str, float]]) -> tuple[str, float, float] | None:
        total = sum(delta for _, delta in rows)
        if not rows or total == 0:
            return None
        sign = -1.0 if self.direction == "down" else 1.0
        if total * sign <= 0:
            return None
        value, delta = max(rows, key=lambda r: r[1] * sign)
        share = delta / total
        if share >= _DOMINANT_SHARE:
            return value, delta, share
        return None

    # -- step emission -----------------------------------------------------------

    def next_step(self, state: AnalysisState, last_obs: Observation | None) -> str | None:
        mem = self.memory
        if mem.phase == "panel":
            return self._emit_panel()
        if mem.phase == "drill":
            return self._emit_after_observation(state, last_obs)
        if mem.phase == "compute":
            return self._emit_insight(last_obs)
        if mem.phase == "reinforce":
            return self._emit_reinforced(last_obs)
        return self._emit_extra(last_obs)

    def _emit_panel(self) -> str:
        self.memory.phase = "drill"
        entity_text = ", ".join(f"{k} {v}" for k, v in sorted(self.entity.items()))
        step = build_step(
            state_think=(f"No observations yet. The question concerns {self.metric} "
                         f"for {entity_text} in the window {self.window[0]} to "
                         f"{self.window[1]}. A week-over-week panel reading comes first."),
            action_think=f"Query the {self.metric} panel with a wow comparison.",
            tool=TOOL_DSL2DATA,
            arguments=self._query(),
            graph_text=f"graph TD\nQ[Question] --> P[{self.metric} panel]",
        )
        return render_step(step)

    def _emit_after_observation(self, state, last_obs) -> str:
        mem = self.memory
        preview = self._preview(last_obs)
        # did the last drill expose a dominant segment?
        if mem.drilled:
            dim = mem.drilled[-1]
            found = self._dominant(self._segment_rows(preview, dim))
            if found is not None:
                mem.segment_dim = dim
                mem.segment_value, mem.segment_delta, _ = found
                mem.phase = "compute"
                return self._emit_share_script(preview, dim)
        elif preview:
            delta = preview[0].get(self._delta_column())
            mem.panel_delta = float(delta) if delta is not None else None
        if not mem.drills_left:
            mem.phase = "extra"
            return self._emit_extra(last_obs)
        dim = mem.drills_left.pop(0)
        mem.drilled.append(dim)
        observed = ""
        if mem.panel_delta is not None:
            observed = (f"The panel shows a week-over-week change of "
                        f"{_fmt(mem.panel_delta)} in {self.metric}. ")
        step = build_step(
            state_think=(f"{observed}The cause is not yet located; "
                         f"{dim} is the next candidate dimension."),
            action_think=f"Break {self.metric} down by {dim} with the same wow comparison.",
            tool=TOOL_DSL2DATA,
            arguments=self._query(dimension=[dim]),
            graph_text=self._graph(dim),
        )
        return render_step(step)

    def _emit_share_script(self, preview, dim) -> str:
        mem = self.memory
        rows = self._segment_rows(preview, dim)
        pairs = ", ".join(f"({value!r}, {delta!r})" for value, delta in rows)
        code = (
            f"rows = [{pairs}]\n"
            "total = sum(d for _, d in rows)\n"
            f"value, delta = {mem.segment_value!r}, {mem.segment_delta!r}\n"
            "share = round(delta / total, 3)\n"
            "print(f'segment={value} share={share}')\n"
        )
        step = build_step(
            state_think=(f"Within {dim}, the segment {mem.segment_value} moved "
                         f"{_fmt(mem.segment_delta)} week over week, the largest "
                         f"single contribution."),
            action_think=("Materialize the segment's share of the total movement "
                          "before committing an insight."),
            tool=TOOL_PYTHON,
            arguments={"code": code},
            graph_text=self._graph(dim, mem.segment_value),
        )
        return render_step(step)

    def _emit_insight(self, last_obs) -> str:
        mem = self.memory
        share_text = ""
        if (last_obs is not None and last_obs.tool == TOOL_PYTHON
                and last_obs.body.get("stdout")):
            stdout = last_obs.body["stdout"].strip()
            share_text = stdout.split("share=")[-1] if "share=" in stdout else ""
        mem.share_text = share_text
        direction_word = "drop" if self.direction == "down" else "rise"
        mem.title = (f"{self.metric} {direction_word} driven by "
                     f"{mem.segment_dim} {mem.segment_value}")
        proof = (f"{mem.segment_dim}={mem.segment_value} moved "
                 f"{_fmt(mem.segment_delta)} week over week")
        if share_text:
            proof += f", a share of {share_text} of the total movement"
        mem.phase = "reinforce"
        reinforce_query = self._query(extra_conditions=[{
            "columnEName": mem.segment_dim, "queryRule": "eq",
            "params": [mem.segment_value]}])
        step = build_step(
            state_think=(f"The computed share {share_text or '(unavailable)'} confirms "
                         f"{mem.segment_value} dominates the {direction_word}."),
            action_think=(f"Re-read the panel restricted to "
                          f"{mem.segment_dim}={mem.segment_value} to confirm."),
            tool=TOOL_DSL2DATA,
            arguments=reinforce_query,
            insights=(InsightDelta(mem.title, InsightStatus.NEW, proof),),
            graph_text=self._graph(mem.segment_dim, mem.segment_value, insight=True),
        )
        return render_step(step)

    def _emit_reinforced(self, last_obs) -> str:
        mem = self.memory
        preview = self._preview(last_obs)
        quoted = ""
        if preview:
            delta = preview[0].get(self._delta_column())
            if delta is not None:
                quoted = f" at {_fmt(float(delta))} week over week"
        proof = (f"restricted to {mem.segment_dim}={mem.segment_value} the panel "
                 f"reproduces the movement{quoted}")
        mem.phase = "extra"
        step = build_step(
            state_think=(f"The restricted panel matches the segment reading{quoted}; "
                         f"the attribution holds."),
            action_think="Survey one more dimension for secondary movement.",
            tool=TOOL_DSL2DATA,
            arguments=self._next_extra_query(),
            insights=(InsightDelta(mem.title, InsightStatus.REINFORCED, proof),),
        )
        return render_step(step)

    def _next_extra_query(self) -> dict:
        mem = self.memory
        if self.probe and not mem.probe_done:
            mem.probe_done = True
            return {"metric": ["warpFactor"], "ds": list(self.window)}
        if mem.drills_left:
            dim = mem.drills_left.pop(0)
            mem.drilled.append(dim)
            return self._query(dimension=[dim])
        return self._query()

    def _emit_extra(self, last_obs) -> str:
        step = build_step(
            state_think="The main cause is recorded; remaining budget goes to "
                        "secondary checks.",
            action_think="Issue the next routine check.",
            tool=TOOL_DSL2DATA,
            arguments=self._next_extra_query(),
        )
        return render_step(step)

    def _graph(self, dim: str | None = None, segment: str | None = None,
               insight: bool = False) -> str:
        lines = ["graph TD", f"Q[Question] --> P[{self.metric} panel]"]
        for drilled in self.memory.drilled:
            lines.append(f"P --> {drilled}[by {drilled}]")
        if dim and segment:
            lines.append(f"{dim} --> S[{segment}]")
        if insight:
            lines.append("S --> I[dominant cause]")
        return "\n".join(lines)
