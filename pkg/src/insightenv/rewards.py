"""Per-step reward components: format, hallucination, schema, render,
length, and judged discovery gain.

Intermediate components react to the step itself; accumulated components
(lengths, discovery gain) carry forward through the discounted return.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from insightenv.judges import JudgeClient, JudgeError
from insightenv.mermaid import validate_mermaid
from insightenv.numerals import count_grounded, token_length
from insightenv.state import (
    AnalysisState,
    InsightDelta,
    InsightStatus,
    StateUpdate,
    TransitionError,
    apply_update,
    grounding_index,
)
from insightenv.steps import Observation, StepOutput, TOOL_PYTHON

DEFAULT_STATE_BOUNDS = (500, 1000)
DEFAULT_ACTION_BOUNDS = (500, 700)
LENGTH_SCALE = 0.1


@dataclass(frozen=True)
class HallucinationCount:
    n: int  # ungrounded
    m: int  # grounded


@dataclass(frozen=True)
class GainParams:
    eta: float = 0.4
    invalid_penalty: float = -2.0
    base_new: float = 1.0
    base_refuted: float = 0.7
    base_reinforced: float = 0.5
    floor: float = 0.1

    def base(self, status: InsightStatus) -> float:
        return {
            InsightStatus.NEW: self.base_new,
            InsightStatus.REFUTED: self.base_refuted,
            InsightStatus.REINFORCED: self.base_reinforced,
        }.get(status, 0.0)


@dataclass(frozen=True)
class GainDetail:
    title: str
    status: InsightStatus
    valid: bool | None  # None when the judge failed
    hallucinated: int
    contribution: float
    rationale: str


@dataclass(frozen=True)
class RewardBreakdown:
    step_format: float = 0.0
    hallu_state: float = 0.0
    hallu_action: float = 0.0
    schema_insight: float = 0.0
    schema_key_data: float = 0.0
    mermaid_render: float = 0.0
    json_schema: float = 0.0
    script_exec: float = 0.0
    length_state: float = 0.0
    length_action: float = 0.0
    discovery_gain: float = 0.0
    state_counts: HallucinationCount = HallucinationCount(0, 0)
    action_counts: HallucinationCount = HallucinationCount(0, 0)
    gain_details: tuple[GainDetail, ...] = ()
    judge_failed: bool = False

    @property
    def intermediate_total(self) -> float:
        return (self.step_format + self.hallu_state + self.hallu_action
                + self.schema_insight + self.schema_key_data
                + self.mermaid_render + self.json_schema + self.script_exec)

    @property
    def accumulated_total(self) -> float:
        return self.length_state + self.length_action + self.discovery_gain

    @property
    def syntax_failed(self) -> bool:
        return any(v < 0 for v in (self.step_format, self.schema_insight,
                                   self.schema_key_data, self.mermaid_render,
                                   self.json_schema))

    @property
    def has_invalid_insight(self) -> bool:
        return any(d.valid is False for d in self.gain_details)

    def as_dict(self) -> dict:
        return {
            "step_format": self.step_format,
            "hallu_state": self.hallu_state,
            "hallu_action": self.hallu_action,
            "schema_insight": self.schema_insight,
            "schema_key_data": self.schema_key_data,
            "mermaid_render": self.mermaid_render,
            "json_schema": self.json_schema,
            "script_exec": self.script_exec,
            "length_state": self.length_state,
            "length_action": self.length_action,
            "discovery_gain": self.discovery_gain,
            "intermediate_total": self.intermediate_total,
            "accumulated_total": self.accumulated_total,
            "syntax_failed": self.syntax_failed,
            "has_invalid_insight": self.has_invalid_insight,
            "judge_failed": self.judge_failed,
        }


def _clip(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


def hallucination_penalty(text: str, grounding: set[float]) -> tuple[float, HallucinationCount]:
    """clip(0.01 m - 0.1 n, -1.0, 0.1) over the text's numerals."""
    m, n = count_grounded(text, grounding)
    return _clip(0.01 * m - 0.1 * n, -1.0, 0.1), HallucinationCount(n=n, m=m)


def length_reward(length: int, l_min: int, l_max: int, scale: float = LENGTH_SCALE) -> float:
    if l_min >= l_max:
        raise ValueError("l_min must be below l_max")
    return scale * _clip((length - l_min) / (l_max - l_min), 0.0, 1.0)


def insight_hallucinations(candidate: InsightDelta, grounding: set[float]) -> int:
    _, n = count_grounded(f"{candidate.title} {candidate.proof}", grounding)
    return n


def discovery_gain(
    new_insights: Sequence[InsightDelta],
    judge: JudgeClient,
    prev_state: AnalysisState,
    params: GainParams = GainParams(),
    action: str = "",
    observation: str = "",
) -> tuple[float, tuple[GainDetail, ...]]:
    """Judge each incremental insight and sum its gain.

    Any judge failure zeroes the whole step's gain and is flagged on the
    detail, so a broken judge can never look like validation.
    """
    grounding = grounding_index(prev_state)
    running: list = list(prev_state.insights)
    total = 0.0
    failed = False
    details: list[GainDetail] = []
    for candidate in new_insights:
        if candidate.status == InsightStatus.UNCHANGED:
            continue
        try:
            verdict = judge.judge(prev_state.question, tuple(running), action,
                                  observation, candidate)
        except JudgeError as exc:
            failed = True
            details.append(GainDetail(candidate.title, candidate.status, None, 0,
                                      0.0, f"judge failure: {exc}"))
            running.append(candidate)
            continue
        h = insight_hallucinations(candidate, grounding)
        if verdict.valid:
            contribution = max(params.base(candidate.status) - params.eta * h, params.floor)
        else:
            contribution = params.invalid_penalty
        total += contribution
        details.append(GainDetail(candidate.title, candidate.status, verdict.valid,
                                  h, contribution, verdict.rationale))
        running.append(candidate)
    if failed:
        return 0.0, tuple(details)
    return total, tuple(details)


def score_step(
    step: StepOutput,
    prev_state: AnalysisState,
    observation: Observation | None = None,
    judge: JudgeClient | None = None,
    params: GainParams = GainParams(),
    state_bounds: tuple[int, int] = DEFAULT_STATE_BOUNDS,
    action_bounds: tuple[int, int] = DEFAULT_ACTION_BOUNDS,
) -> RewardBreakdown:
    """Every reward component for one parsed turn."""
    grounding = grounding_index(prev_state)
    hallu_state, state_counts = hallucination_penalty(step.state_think, grounding)
    hallu_action, action_counts = hallucination_penalty(step.action_think, grounding)

    schema_insight = 0.0
    if step.insight_schema_ok is False:
        schema_insight = -1.0
    elif step.insight_block:
        try:
            apply_update(prev_state, StateUpdate(insight_updates=step.insight_block))
        except TransitionError:
            schema_insight = -1.0

    schema_key_data = -1.0 if step.key_data_schema_ok is False else 0.0

    mermaid_render = 0.0
    if step.graph_block is not None and not validate_mermaid(step.graph_block).parse_ok:
        mermaid_render = -1.0

    json_schema = 0.0 if (step.tool_call is not None and step.tool_call.schema_ok) else -1.0

    script_exec = 0.0
    if (observation is not None and observation.tool == TOOL_PYTHON
            and not observation.body.get("exit_ok", False)):
        script_exec = -1.0

    gain = 0.0
    details: tuple[GainDetail, ...] = ()
    judge_failed = False
    if judge is not None and step.insight_block and schema_insight == 0.0:
        action_text = step.tool_call.arguments if step.tool_call else ""
        last_obs = prev_state.observations[-1].description if prev_state.observations else ""
        gain, details = discovery_gain(step.insight_block, judge, prev_state,
                                       params, action_text, last_obs)
        judge_failed = any(d.valid is None for d in details)

    return RewardBreakdown(
        step_format=0.0 if step.format_ok else -1.0,
        hallu_state=hallu_state,
        hallu_action=hallu_action,
        schema_insight=schema_insight,
        schema_key_data=schema_key_data,
        mermaid_render=mermaid_render,
        json_schema=json_schema,
        script_exec=script_exec,
        length_state=length_reward(token_length(step.state_think), *state_bounds),
        length_action=length_reward(token_length(step.action_think), *action_bounds),
        discovery_gain=gain,
        state_counts=state_counts,
        action_counts=action_counts,
        gain_details=details,
        judge_failed=judge_failed,
    )
