"""Insight validity judges behind one interface.

MockJudge scores candidates against the warehouse's planted causes and is
what the tests and the scripted policies use. RemoteJudge posts the prompt
template to a chat-completion endpoint; it exists for live runs and is never
exercised by the acceptance suite.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib import resources
from typing import Protocol, Sequence

from insightenv.state import Insight, InsightDelta, InsightStatus
from insightenv.warehouse import GroundTruth

JUDGE_ENDPOINT_ENV_VAR = "INSIGHTENV_JUDGE_ENDPOINT"

VALID_SHARE_THRESHOLD = 0.5
TRIVIAL_SHARE_THRESHOLD = 0.1


class JudgeError(RuntimeError):
    """The judge could not produce a verdict."""


def _names_segment(text: str, segment: str) -> bool:
    # whole-token match only; "app" must not fire inside "happened"
    return re.search(rf"(?<!\w){re.escape(segment.lower())}(?!\w)", text) is not None


@dataclass(frozen=True)
class JudgeVerdict:
    valid: bool
    rationale: str


def load_prompt_template() -> str:
    return resources.files("insightenv.data").joinpath("judge_prompt.txt").read_text(
        encoding="utf-8")


def _insight_text(item) -> str:
    if isinstance(item, (Insight, InsightDelta)):
        return f"{item.title}: {item.proof}" if item.proof else item.title
    return str(item)


def render_prompt(question: str, prev_insights: Sequence, action: str,
                  observation: str, candidate) -> str:
    """Fill the template; the two {insight} slots take the previous set and
    the candidate, in that order."""
    template = load_prompt_template()
    prev_text = "\n".join(f"{i}. {_insight_text(p)}"
                          for i, p in enumerate(prev_insights, start=1)) or "(none)"
    filled = template.replace("{insight}", prev_text, 1)
    filled = filled.replace("{insight}", _insight_text(candidate), 1)
    filled = filled.replace("{question}", question)
    filled = filled.replace("{action}", action or "(none)")
    filled = filled.replace("{obs}", observation or "(none)")
    return filled


class JudgeClient(Protocol):
    def judge(self, question: str, prev_insights: Sequence, action: str,
              observation: str, candidate) -> JudgeVerdict: ...

    def render_prompt(self, question: str, prev_insights: Sequence, action: str,
                      observation: str, candidate) -> str: ...


class MockJudge:
    """Deterministic rule-based judge over planted ground truths.

    A candidate naming a planted segment that carries at least half of an
    effect is Valid; naming one at or below a tenth is Invalid (the trivial
    many). Proof-free candidates and duplicate New titles are Invalid.
    """

    def __init__(self, ground_truths: Sequence[GroundTruth]):
        self._causes = tuple(c for gt in ground_truths for c in gt.planted_causes)

    def render_prompt(self, question, prev_insights, action, observation, candidate):
        return render_prompt(question, prev_insights, action, observation, candidate)

    def judge(self, question, prev_insights, action, observation, candidate) -> JudgeVerdict:
        title = getattr(candidate, "title", str(candidate))
        proof = getattr(candidate, "proof", "")
        status = getattr(candidate, "status", InsightStatus.NEW)
        if not proof.strip():
            return JudgeVerdict(False, "no supporting proof; relies on missing data")
        if status == InsightStatus.NEW:
            prev_titles = {getattr(p, "title", str(p)).strip().lower()
                           for p in prev_insights}
            if title.strip().lower() in prev_titles:
                return JudgeVerdict(False, "redundant with a previous sub-insight")
        text = f"{title} {proof}".lower()
        matched = [c for c in self._causes if _names_segment(text, c.segment)]
        if not matched:
            return JudgeVerdict(False, "does not focus on a key factor")
        best = max(c.share_of_effect for c in matched)
        if best >= VALID_SHARE_THRESHOLD:
            return JudgeVerdict(True, f"names a dominant factor carrying {best:.0%} of the effect")
        if best <= TRIVIAL_SHARE_THRESHOLD:
            return JudgeVerdict(False, f"names a trivial factor carrying {best:.0%} of the effect")
        return JudgeVerdict(False, f"factor carries only {best:.0%}; not the primary contradiction")


class RemoteJudge:
    """Chat-completion-backed judge; endpoint from the environment unless given."""

    def __init__(self, endpoint: str | None = None, model: str = "judge",
                 timeout_seconds: float = 30.0):
        self.endpoint = endpoint or os.environ.get(JUDGE_ENDPOINT_ENV_VAR, "")
        self.model = model
        self.timeout_seconds = timeout_seconds

    def render_prompt(self, question, prev_insights, action, observation, candidate):
        return render_prompt(question, prev_insights, action, observation, candidate)

    def judge(self, question, prev_insights, action, observation, candidate) -> JudgeVerdict:
        if not self.endpoint:
            raise JudgeError(f"no judge endpoint configured ({JUDGE_ENDPOINT_ENV_VAR})")
        import requests

        prompt = self.render_prompt(question, prev_insights, action, observation, candidate)
        try:
            response = requests.post(
                self.endpoint,
                json={"model": self.model,
                      "messages": [{"role": "user", "content": prompt}]},
                timeout=self.timeout_seconds,
            )
            response.raise_for_status()
            content = response.json()["choices"][0]["message"]["content"]
        except Exception as exc:
            raise JudgeError(f"judge call failed: {exc}") from exc
        return parse_verdict(content)


def parse_verdict(content: str) -> JudgeVerdict:
    """Read the 'Final Answer: Valid|Invalid' line out of a judge reply."""
    rationale = content.strip()
    for line in reversed(content.splitlines()):
        lowered = line.lower()
        if "final answer" in lowered:
            if "invalid" in lowered:
                return JudgeVerdict(False, rationale)
            if "valid" in lowered:
                return JudgeVerdict(True, rationale)
    raise JudgeError(f"judge reply carries no final answer: {content[:200]!r}")


def judge_from_env(ground_truths: Sequence[GroundTruth]) -> JudgeClient:
    """RemoteJudge when an endpoint is configured, MockJudge otherwise."""
    if os.environ.get(JUDGE_ENDPOINT_ENV_VAR):
        return RemoteJudge()
    return MockJudge(ground_truths)
