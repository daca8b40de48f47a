"""Analysis-state fold semantics and grounding index."""

import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insightenv.state import (
    AnalysisState,
    InsightDelta,
    InsightStatus,
    ObservationEntry,
    ObservationStructure,
    StateUpdate,
    TransitionError,
    apply_update,
    format_state,
    grounding_index,
    incremental_insights,
    initial_state,
)


def obs(numerals=(), ref="data/x.csv", typ="CSV", desc="rows"):
    return ObservationEntry(
        type=typ,
        description=desc,
        structure=ObservationStructure(metrics=("netGMV",), dimensions=("ds",)),
        payload_ref=ref,
        numerals=frozenset(numerals),
    )


def new(title, proof="because the data says so"):
    return InsightDelta(title=title, status=InsightStatus.NEW, proof=proof)


@pytest.fixture
def base():
    return initial_state({"shopId": "S0001"}, "Why did GMV drop last week?")


class TestApplyUpdate:
    def test_empty_state_plus_new_insight(self, base):
        out = apply_update(base, StateUpdate(insight_updates=(new("GMV fell in delivery"),)))
        assert len(out.insights) == 1
        assert out.insights[0].status == InsightStatus.NEW
        assert out.insights[0].title == "GMV fell in delivery"

    def test_reinforced_on_missing_title_is_error(self, base):
        delta = InsightDelta("nope", InsightStatus.REINFORCED, proof="p")
        with pytest.raises(TransitionError):
            apply_update(base, StateUpdate(insight_updates=(delta,)))

    def test_refuted_on_existing_replaces_proof(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("claim", proof="old proof"),)))
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("claim", InsightStatus.REFUTED, proof="counter-evidence"),)))
        assert len(s2.insights) == len(s1.insights) == 1
        assert s2.insights[0].status == InsightStatus.REFUTED
        assert s2.insights[0].proof == "counter-evidence"
        assert s2.insights[0].corrected

    def test_new_on_existing_title_is_error(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("claim"),)))
        with pytest.raises(TransitionError):
            apply_update(s1, StateUpdate(insight_updates=(new("claim"),)))

    def test_unchanged_keeps_proof(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("claim", proof="original"),)))
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("claim", InsightStatus.UNCHANGED),)))
        assert s2.insights[0].proof == "original"
        assert s2.insights[0].status == InsightStatus.UNCHANGED

    def test_proof_required_for_new(self, base):
        with pytest.raises(TransitionError):
            apply_update(base, StateUpdate(insight_updates=(
                InsightDelta("t", InsightStatus.NEW, proof="  "),)))

    def test_proof_required_for_reinforced_and_refuted(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("t"),)))
        for status in (InsightStatus.REINFORCED, InsightStatus.REFUTED):
            with pytest.raises(TransitionError):
                apply_update(s1, StateUpdate(insight_updates=(
                    InsightDelta("t", status, proof=""),)))

    def test_unchanged_needs_no_proof(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("t"),)))
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.UNCHANGED),)))
        assert s2.insights[0].status == InsightStatus.UNCHANGED

    def test_empty_title_rejected(self, base):
        with pytest.raises(TransitionError):
            apply_update(base, StateUpdate(insight_updates=(new("   "),)))

    def test_step_index_defaults_to_increment(self, base):
        s1 = apply_update(base, StateUpdate())
        assert s1.step_index == base.step_index + 1
        s2 = apply_update(s1, StateUpdate(), at_step=7)
        assert s2.step_index == 7

    def test_status_history_accumulates(self, base):
        s = apply_update(base, StateUpdate(insight_updates=(new("t"),)))
        s = apply_update(s, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.REINFORCED, proof="more"),)))
        s = apply_update(s, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.REFUTED, proof="actually no"),)))
        assert s.insights[0].status_history == (
            InsightStatus.NEW, InsightStatus.REINFORCED, InsightStatus.REFUTED)

    def test_refuted_then_reinforced_is_legal(self, base):
        s = apply_update(base, StateUpdate(insight_updates=(new("t"),)))
        s = apply_update(s, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.REFUTED, proof="no"),)))
        s = apply_update(s, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.REINFORCED, proof="yes after all"),)))
        assert s.insights[0].status == InsightStatus.REINFORCED
        assert s.insights[0].corrected  # Refuted stays in the history

    def test_first_and_last_step_tracking(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("t"),)), at_step=3)
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("t", InsightStatus.REINFORCED, proof="p"),)), at_step=5)
        assert s2.insights[0].first_seen_step == 3
        assert s2.insights[0].last_updated_step == 5

    def test_observation_indices_contiguous(self, base):
        s = apply_update(base, StateUpdate(observation_appends=(
            obs(ref="a.csv"), obs(ref="b.csv"))))
        s = apply_update(s, StateUpdate(observation_appends=(obs(ref="c.csv"),)))
        assert [o.index for o in s.observations] == [0, 1, 2]

    def test_observation_index_reassigned_on_append(self, base):
        entry = dataclasses.replace(obs(), index=99)
        s = apply_update(base, StateUpdate(observation_appends=(entry,)))
        assert s.observations[0].index == 0

    def test_graph_text_replaces_graph(self, base):
        s = apply_update(base, StateUpdate(graph_text="graph TD\nA[Q] --> B[Drop]"))
        assert s.graph.parse_ok
        assert len(s.graph.nodes) == 2

    def test_invalid_graph_text_still_replaces(self, base):
        s1 = apply_update(base, StateUpdate(graph_text="graph TD\nA --> B"))
        s2 = apply_update(s1, StateUpdate(graph_text="graph TD\nA --> "))
        assert not s2.graph.parse_ok
        assert s2.graph.source_text == "graph TD\nA --> "

    def test_graph_none_keeps_previous(self, base):
        s1 = apply_update(base, StateUpdate(graph_text="graph TD\nA --> B"))
        s2 = apply_update(s1, StateUpdate())
        assert s2.graph is s1.graph

    def test_purity_input_unmodified(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("t"),),
                                            observation_appends=(obs(),)))
        assert base.insights == ()
        assert base.observations == ()
        assert base.step_index == 0
        assert s1 is not base

    def test_titles_remain_unique(self, base):
        s = apply_update(base, StateUpdate(insight_updates=(new("a"), new("b"))))
        assert len(set(s.insight_titles())) == len(s.insights) == 2

    def test_duplicate_new_within_one_update_rejected(self, base):
        with pytest.raises(TransitionError):
            apply_update(base, StateUpdate(insight_updates=(new("a"), new("a"))))

    def test_new_then_reinforce_within_one_update(self, base):
        s = apply_update(base, StateUpdate(insight_updates=(
            new("a"), InsightDelta("a", InsightStatus.REINFORCED, proof="p"))))
        assert s.insights[0].status == InsightStatus.REINFORCED


class TestGroundingIndex:
    def test_appendix_preview_values(self, base):
        s = apply_update(base, StateUpdate(observation_appends=(
            obs(numerals=[15.2, 45000.0]),)))
        assert grounding_index(s) == {15.2, 45000.0}

    def test_empty_state(self, base):
        assert grounding_index(base) == set()

    def test_duplicates_collapse(self, base):
        s = apply_update(base, StateUpdate(observation_appends=(
            obs(numerals=[15.2], ref="a.csv"), obs(numerals=[15.2, 7.0], ref="b.csv"))))
        assert grounding_index(s) == {15.2, 7.0}

    @given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False,
                                       width=32), max_size=4), max_size=5))
    @settings(max_examples=50, deadline=None)
    def test_monotone_along_trajectory(self, batches):
        s = initial_state({}, "q")
        seen: set = set()
        for batch in batches:
            s = apply_update(s, StateUpdate(observation_appends=(obs(numerals=batch),)))
            now = grounding_index(s)
            assert seen <= now
            seen = now


class TestDeterminism:
    def test_fold_replay_identical(self, base):
        updates = [
            StateUpdate(insight_updates=(new("a"),), observation_appends=(obs(numerals=[1.5]),)),
            StateUpdate(insight_updates=(InsightDelta("a", InsightStatus.REINFORCED, proof="p"),),
                        graph_text="graph TD\nA --> B"),
            StateUpdate(observation_appends=(obs(numerals=[2.5], ref="b.csv"),)),
        ]
        def run():
            s = base
            for u in updates:
                s = apply_update(s, u)
            return s
        assert run() == run()

    def test_format_state_stable(self, base):
        s = apply_update(base, StateUpdate(
            insight_updates=(new("a"),),
            observation_appends=(obs(numerals=[15.2, 45000.0]),),
            graph_text="graph TD\nA[Q] --> B[A]"))
        assert format_state(s) == format_state(s)
        text = format_state(s)
        for section in ("[id]", "[q]", "[insights]", "[observations]", "[graph]", "[step]"):
            assert section in text


class TestIncrementalInsights:
    def test_only_last_step_and_not_unchanged(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("a"),)))
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("a", InsightStatus.UNCHANGED),
            new("b"),
        )))
        inc = incremental_insights(s1, s2)
        assert [i.title for i in inc] == ["b"]

    def test_refuted_is_incremental(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("a"),)))
        s2 = apply_update(s1, StateUpdate(insight_updates=(
            InsightDelta("a", InsightStatus.REFUTED, proof="counter"),)))
        inc = incremental_insights(s1, s2)
        assert [i.status for i in inc] == [InsightStatus.REFUTED]

    def test_no_updates_no_incremental(self, base):
        s1 = apply_update(base, StateUpdate(insight_updates=(new("a"),)))
        s2 = apply_update(s1, StateUpdate())
        assert incremental_insights(s1, s2) == ()


def test_initial_state_sorts_id_pairs():
    s = initial_state({"b": "2", "a": "1"}, "q")
    assert s.id == (("a", "1"), ("b", "2"))
    assert s.id_map == {"a": "1", "b": "2"}
    assert s.step_index == 0
