"""Reward components against hand-computed and brute-force oracles."""

import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insightenv.judges import JudgeError, JudgeVerdict, MockJudge
from insightenv.rewards import (
    GainParams,
    RewardBreakdown,
    discovery_gain,
    hallucination_penalty,
    insight_hallucinations,
    length_reward,
    score_step,
)
from insightenv.state import (
    InsightDelta,
    InsightStatus,
    ObservationEntry,
    ObservationStructure,
    StateUpdate,
    apply_update,
    initial_state,
)
from insightenv.steps import build_step, parse_step


def make_state(numerals=(), insights=()):
    state = initial_state({"shopId": "S0001"}, "Why did GMV drop?")
    appends = ()
    if numerals:
        appends = (ObservationEntry(
            type="CSV", description="panel", payload_ref="data/x.csv",
            structure=ObservationStructure(metrics=("netGMV",)),
            numerals=frozenset(numerals)),)
    deltas = tuple(InsightDelta(t, InsightStatus.NEW, "proof") for t in insights)
    if appends or deltas:
        state = apply_update(state, StateUpdate(
            insight_updates=deltas, observation_appends=appends))
    return state


class StubJudge:
    """Fixed verdicts by title prefix: 'ok ...' valid, 'bad ...' invalid,
    'boom ...' raises."""

    def judge(self, question, prev_insights, action, observation, candidate):
        if candidate.title.startswith("boom"):
            raise JudgeError("endpoint down")
        return JudgeVerdict(candidate.title.startswith("ok"), "stub")

    def render_prompt(self, *args):
        return "stub"


class TestHallucinationPenalty:
    def test_upper_clamp(self):
        grounding = {float(i) for i in range(10)}
        text = " ".join(str(i) for i in range(10))
        value, counts = hallucination_penalty(text, grounding)
        assert value == pytest.approx(0.1)
        assert counts.m == 10 and counts.n == 0

    def test_lower_clamp(self):
        text = " ".join(str(i + 0.5) for i in range(20))
        value, counts = hallucination_penalty(text, set())
        assert value == pytest.approx(-1.0)
        assert counts.n == 20

    def test_mixed_counts(self):
        grounding = {1.0, 2.0, 3.0, 4.0, 5.0}
        text = "saw 1 2 3 4 5 but also 9.9 8.8"
        value, counts = hallucination_penalty(text, grounding)
        assert counts.m == 5 and counts.n == 2
        assert value == pytest.approx(0.01 * 5 - 0.1 * 2)  # -0.15

    def test_written_precision_grounding(self):
        value, counts = hallucination_penalty("the ratio fell to 15.2", {15.23})
        assert counts.m == 1 and counts.n == 0
        assert value == pytest.approx(0.01)

    def test_empty_text(self):
        value, counts = hallucination_penalty("", {1.0})
        assert value == 0.0
        assert counts.m == counts.n == 0

    @given(m=st.integers(0, 30), n=st.integers(0, 30))
    @settings(max_examples=60, deadline=None)
    def test_range_and_monotonicity(self, m, n):
        grounding = {float(1000 + i) for i in range(m)}
        tokens = [str(1000 + i) for i in range(m)] + [f"{i}.77" for i in range(n)]
        value, counts = hallucination_penalty(" ".join(tokens), grounding)
        assert -1.0 <= value <= 0.1
        assert (counts.m, counts.n) == (m, n)
        more_grounded, _ = hallucination_penalty(
            " ".join(tokens + [str(1000 + m)]), grounding | {float(1000 + m)})
        assert more_grounded >= value
        more_hallu, _ = hallucination_penalty(
            " ".join(tokens + [f"{n}.88"]), grounding)
        assert more_hallu <= value


class TestLengthReward:
    def test_lower_endpoint(self):
        assert length_reward(500, 500, 1000) == 0.0

    def test_upper_endpoint(self):
        assert length_reward(1000, 500, 1000) == pytest.approx(0.1)

    def test_midpoint(self):
        assert length_reward(750, 500, 1000) == pytest.approx(0.05)

    def test_clamps_outside(self):
        assert length_reward(10, 500, 1000) == 0.0
        assert length_reward(5000, 500, 1000) == pytest.approx(0.1)

    def test_bad_bounds(self):
        with pytest.raises(ValueError):
            length_reward(10, 700, 700)

    @given(L=st.integers(0, 3000))
    @settings(max_examples=50, deadline=None)
    def test_range_property(self, L):
        assert 0.0 <= length_reward(L, 500, 1000) <= 0.1


class TestDiscoveryGain:
    def test_one_valid_new_h0(self):
        gain, details = discovery_gain(
            (InsightDelta("ok find", InsightStatus.NEW, "proof"),),
            StubJudge(), make_state())
        assert gain == pytest.approx(1.0)
        assert details[0].valid is True

    def test_valid_new_h2(self):
        state = make_state(numerals=[100.0])
        delta = InsightDelta("ok drop", InsightStatus.NEW, "fell 55.5 then 66.6")
        gain, details = discovery_gain((delta,), StubJudge(), state)
        assert details[0].hallucinated == 2
        assert gain == pytest.approx(max(1.0 - 0.4 * 2, 0.1))  # 0.2

    def test_floor_applies(self):
        delta = InsightDelta("ok drop", InsightStatus.NEW, "1.1 2.2 3.3 4.4")
        gain, _ = discovery_gain((delta,), StubJudge(), make_state())
        assert gain == pytest.approx(0.1)

    def test_invalid_penalty(self):
        gain, details = discovery_gain(
            (InsightDelta("bad guess", InsightStatus.NEW, "proof"),),
            StubJudge(), make_state())
        assert gain == pytest.approx(-2.0)
        assert details[0].valid is False

    def test_unchanged_skipped(self):
        gain, details = discovery_gain(
            (InsightDelta("ok old", InsightStatus.UNCHANGED, ""),),
            StubJudge(), make_state(insights=("ok old",)))
        assert gain == 0.0
        assert details == ()

    def test_judge_failure_zeroes_step(self):
        deltas = (InsightDelta("ok fine", InsightStatus.NEW, "proof"),
                  InsightDelta("boom", InsightStatus.NEW, "proof"))
        gain, details = discovery_gain(deltas, StubJudge(), make_state())
        assert gain == 0.0
        assert details[1].valid is None
        assert "judge failure" in details[1].rationale

    def test_brute_force_oracle_exhaustive(self):
        """Batches of <= 3 insights x statuses x H in {0..3} against a
        one-by-one re-computation of the per-insight formula."""
        params = GainParams()
        base = {InsightStatus.NEW: 1.0, InsightStatus.REFUTED: 0.7,
                InsightStatus.REINFORCED: 0.5}
        statuses = (InsightStatus.NEW, InsightStatus.REFUTED, InsightStatus.REINFORCED)
        grounding_state = make_state(
            numerals=[100.0], insights=("seed a", "seed b", "seed c"))

        def fake_numbers(h):
            return " ".join(f"{i}.123" for i in range(1, h + 1))

        case_id = 0
        for size in (1, 2, 3):
            for combo in itertools.product(
                    itertools.product(statuses, (True, False), range(4)), repeat=size):
                case_id += 1
                # letters only: digits in a title would count as numerals
                uid = "".join(chr(ord("a") + int(d)) for d in str(case_id))
                deltas = []
                expected = 0.0
                for i, (status, valid, h) in enumerate(combo):
                    prefix = "ok" if valid else "bad"
                    title = f"{prefix} case {uid} {'abc'[i]}"
                    deltas.append(InsightDelta(title, status, f"proof {fake_numbers(h)}"))
                    if valid:
                        expected += max(base[status] - params.eta * h, params.floor)
                    else:
                        expected += params.invalid_penalty
                gain, _ = discovery_gain(tuple(deltas), StubJudge(),
                                         grounding_state, params)
                assert gain == pytest.approx(expected), combo

    def test_mock_judge_running_context_blocks_batch_duplicates(self):
        state = make_state()
        judge = StubWithMemory()
        deltas = (InsightDelta("same title", InsightStatus.NEW, "proof"),
                  InsightDelta("same title", InsightStatus.NEW, "proof"))
        discovery_gain(deltas, judge, state)
        # the second call saw the first candidate in its prev_insights
        assert any("same title" in t for t in judge.seen_prev[1])


class StubWithMemory:
    def __init__(self):
        self.seen_prev = []

    def judge(self, question, prev_insights, action, observation, candidate):
        self.seen_prev.append([getattr(p, "title", str(p)) for p in prev_insights])
        return JudgeVerdict(True, "stub")

    def render_prompt(self, *args):
        return "stub"


@pytest.fixture(scope="module")
def judge(small_warehouse):
    return MockJudge(small_warehouse.ground_truths)


@pytest.fixture(scope="module")
def dominant(small_warehouse):
    causes = [c for gt in small_warehouse.ground_truths for c in gt.planted_causes]
    return max(causes, key=lambda c: c.share_of_effect)


class TestMockJudge:
    def test_dominant_cause_valid(self, judge, dominant):
        assert dominant.share_of_effect >= 0.5
        delta = InsightDelta(
            f"{dominant.metric} dropped in {dominant.segment}",
            InsightStatus.NEW, f"the {dominant.segment} segment fell sharply")
        verdict = judge.judge("q", (), "", "", delta)
        assert verdict.valid

    def test_proof_free_invalid(self, judge, dominant):
        delta = InsightDelta(f"drop in {dominant.segment}", InsightStatus.NEW, "  ")
        assert not judge.judge("q", (), "", "", delta).valid

    def test_duplicate_new_title_invalid(self, judge, dominant):
        delta = InsightDelta(f"drop in {dominant.segment}", InsightStatus.NEW, "proof")
        prev = (InsightDelta(f"drop in {dominant.segment}", InsightStatus.NEW, "proof"),)
        assert not judge.judge("q", prev, "", "", delta).valid

    def test_reinforced_same_title_allowed(self, judge, dominant):
        delta = InsightDelta(f"drop in {dominant.segment}", InsightStatus.REINFORCED,
                             f"{dominant.segment} still down")
        prev = (InsightDelta(f"drop in {dominant.segment}", InsightStatus.NEW, "proof"),)
        assert judge.judge("q", prev, "", "", delta).valid

    def test_unfocused_insight_invalid(self, judge):
        delta = InsightDelta("something happened", InsightStatus.NEW,
                             "numbers moved around")
        assert not judge.judge("q", (), "", "", delta).valid


class TestScoreStep:
    def make_step(self, **kwargs):
        defaults = dict(
            state_think="No observations yet. Planning a first panel query.",
            action_think="Query the weekly panel.",
            tool="python",
            arguments="print(1)",
        )
        defaults.update(kwargs)
        return build_step(**defaults)

    def test_conforming_step_composition(self):
        state = make_state(numerals=[45000.0])
        step = self.make_step(
            insights=(InsightDelta("ok insight", InsightStatus.NEW,
                                   "grounded at 45000"),),
            graph_text="graph TD\nA[Q] --> B[Drop]",
        )
        breakdown = score_step(step, state, judge=StubJudge())
        assert breakdown.step_format == 0.0
        assert breakdown.json_schema == 0.0
        assert breakdown.mermaid_render == 0.0
        assert breakdown.schema_insight == 0.0
        assert breakdown.discovery_gain == pytest.approx(1.0)
        assert breakdown.accumulated_total == pytest.approx(
            breakdown.length_state + breakdown.length_action + 1.0)

    def test_unparseable_tool_call(self):
        raw = ("<state_think>\nx\n</state_think>\n<action_think>\ny\n</action_think>\n"
               "<tool_call>\n{broken\n</tool_call>")
        step = parse_step(raw)
        breakdown = score_step(step, make_state())
        assert breakdown.json_schema == -1.0

    def test_failing_graph_block(self):
        step = self.make_step(graph_text="graph TD\nA --> ")
        breakdown = score_step(step, make_state())
        assert breakdown.mermaid_render == -1.0

    def test_format_failure(self):
        step = parse_step("<state_think>\nonly this\n</state_think>")
        breakdown = score_step(step, make_state())
        assert breakdown.step_format == -1.0
        assert breakdown.syntax_failed

    def test_transition_error_hits_insight_schema(self):
        state = make_state(insights=("existing",))
        step = self.make_step(
            insights=(InsightDelta("existing", InsightStatus.NEW, "proof"),))
        breakdown = score_step(step, state, judge=StubJudge())
        assert breakdown.schema_insight == -1.0
        assert breakdown.discovery_gain == 0.0  # not judged
        assert breakdown.syntax_failed

    def test_script_failure_scored(self, catalog, small_warehouse, tmp_path):
        from insightenv.steps import EnvironmentHandle, execute_action
        env = EnvironmentHandle.create(catalog, small_warehouse, str(tmp_path))
        step = self.make_step(arguments="1/0")
        obs = execute_action(step.tool_call, env)
        breakdown = score_step(step, make_state(), observation=obs)
        assert breakdown.script_exec == -1.0

    def test_hallucinated_think_blocks_scored_independently(self):
        state = make_state(numerals=[10.0])
        step = self.make_step(
            state_think="grounded 10 here",
            action_think="ungrounded 99.9 there",
        )
        breakdown = score_step(step, state)
        assert breakdown.hallu_state == pytest.approx(0.01)
        assert breakdown.hallu_action == pytest.approx(-0.1)

    def test_judge_failure_flagged(self):
        step = self.make_step(
            insights=(InsightDelta("boom x", InsightStatus.NEW, "proof"),))
        breakdown = score_step(step, make_state(), judge=StubJudge())
        assert breakdown.judge_failed
        assert breakdown.discovery_gain == 0.0

    def test_invalid_insight_flag_for_masking(self):
        step = self.make_step(
            insights=(InsightDelta("bad guess", InsightStatus.NEW, "proof"),))
        breakdown = score_step(step, make_state(), judge=StubJudge())
        assert breakdown.has_invalid_insight
        assert not breakdown.syntax_failed

    def test_length_rewards_at_bounds(self):
        step = self.make_step(
            state_think=" ".join(["w"] * 750),
            action_think=" ".join(["w"] * 700),
        )
        breakdown = score_step(step, make_state())
        assert breakdown.length_state == pytest.approx(0.05)
        assert breakdown.length_action == pytest.approx(0.1)

    def test_as_dict_round_trips_json(self):
        breakdown = score_step(self.make_step(), make_state())
        payload = json.dumps(breakdown.as_dict())
        assert json.loads(payload)["step_format"] == 0.0

    @given(st.text(max_size=200))
    @settings(max_examples=30, deadline=None)
    def test_component_ranges_fuzzed(self, raw):
        breakdown = score_step(parse_step(raw), make_state())
        assert -1.0 <= breakdown.step_format <= 0.0
        assert -1.0 <= breakdown.hallu_state <= 0.1
        assert -1.0 <= breakdown.hallu_action <= 0.1
        assert -1.0 <= breakdown.schema_insight <= 0.0
        assert -1.0 <= breakdown.schema_key_data <= 0.0
        assert -1.0 <= breakdown.mermaid_render <= 0.0
        assert -1.0 <= breakdown.json_schema <= 0.0
        assert -1.0 <= breakdown.script_exec <= 0.0
        assert 0.0 <= breakdown.length_state <= 0.1
        assert 0.0 <= breakdown.length_action <= 0.1


def test_breakdown_totals_are_sums():
    b = RewardBreakdown(step_format=-1.0, hallu_state=0.1, hallu_action=-0.2,
                        schema_insight=-1.0, json_schema=-1.0,
                        length_state=0.05, length_action=0.1, discovery_gain=0.7)
    assert b.intermediate_total == pytest.approx(-1.0 + 0.1 - 0.2 - 1.0 - 1.0)
    assert b.accumulated_total == pytest.approx(0.85)
