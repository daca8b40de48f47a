"""Turn parsing, rendering round-trip, and tool dispatch."""

import copy
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insightenv.sandbox import SandboxLimits
from insightenv.state import InsightDelta, InsightStatus, ObservationEntry, ObservationStructure
from insightenv.steps import (
    REQUIRED_TAGS,
    TOOL_DSL2DATA,
    TOOL_PYTHON,
    EnvironmentHandle,
    StepOutput,
    ToolCall,
    build_step,
    execute_action,
    observation_text,
    parse_step,
    parse_tool_call,
    render_step,
    script_code,
)

PANEL_PAYLOAD = {
    "metric": ["netGMV"],
    "ds": ["20251008", "20251014"],
    "dimension": ["channel"],
}

# the published example request, verbatim
LISTING_PAYLOAD = {
    "metric": ["Net_GMV"],
    "dimension": ["Gender"],
    "filter": {
        "relation": "and",
        "conditions": [
            {"columnEName": "brand_id", "queryRule": "in", "params": ["xxx"]},
        ],
    },
    "ds": ["20251010", "20251110"],
    "orderBy": [{"columnEName": "Net_GMV", "orderType": "desc"}],
    "limit": 10,
}


def turn_text(tool_call_body=None, include=("state_think", "action_think", "tool_call")):
    body = tool_call_body or json.dumps({"tool": "dsl2data", "arguments": PANEL_PAYLOAD})
    pieces = {
        "state_think": "<state_think>\nNo data yet.\n</state_think>",
        "insight": '<insight>\n[{"title": "t", "status": "New", "proof": "p"}]\n</insight>',
        "key_data": ('<key_data>\n[{"type": "CSV", "description": "d", '
                     '"structure": {"metrics": ["netGMV"], "dimensions": [], "filters": []}, '
                     '"payload_ref": "data/x.csv"}]\n</key_data>'),
        "graph": "<graph>\ngraph TD\nA[Q] --> B[GMV]\n</graph>",
        "action_think": "<action_think>\nQuery the panel.\n</action_think>",
        "tool_call": f"<tool_call>\n{body}\n</tool_call>",
    }
    return "\n".join(pieces[tag] for tag in include)


class TestParseStep:
    def test_all_blocks_canonical_order(self):
        out = parse_step(turn_text(include=(
            "state_think", "insight", "key_data", "graph", "action_think", "tool_call")))
        assert out.format_ok
        assert out.state_think == "No data yet."
        assert out.insight_block == (InsightDelta("t", InsightStatus.NEW, "p"),)
        assert out.key_data_block is not None
        assert out.graph_block == "graph TD\nA[Q] --> B[GMV]"
        assert out.action_think == "Query the panel."
        assert out.tool_call is not None and out.tool_call.schema_ok
        assert out.block_diagnostics == ()

    def test_required_blocks_only(self):
        out = parse_step(turn_text())
        assert out.format_ok
        assert out.insight_block is None
        assert out.graph_block is None

    def test_missing_tool_call(self):
        out = parse_step(turn_text(include=("state_think", "action_think")))
        assert not out.format_ok
        assert "missing tool_call" in out.block_diagnostics

    def test_missing_each_required_tag(self):
        for tag in REQUIRED_TAGS:
            include = tuple(t for t in ("state_think", "action_think", "tool_call") if t != tag)
            out = parse_step(turn_text(include=include))
            assert not out.format_ok
            assert f"missing {tag}" in out.block_diagnostics

    def test_out_of_order_blocks(self):
        text = turn_text(include=("action_think", "state_think", "tool_call"))
        out = parse_step(text)
        assert not out.format_ok
        assert "blocks out of canonical order" in out.block_diagnostics

    def test_unclosed_tag(self):
        out = parse_step("<state_think>\nthinking...")
        assert not out.format_ok
        assert any("unclosed" in d for d in out.block_diagnostics)

    def test_interleaved_tags(self):
        text = ("<state_think>a<action_think>b</state_think>c</action_think>"
                "<tool_call>{}</tool_call>")
        out = parse_step(text)
        assert not out.format_ok

    def test_duplicate_block(self):
        text = turn_text() + "\n<state_think>\nagain\n</state_think>"
        out = parse_step(text)
        assert not out.format_ok
        assert any("duplicate" in d for d in out.block_diagnostics)

    def test_text_outside_blocks(self):
        out = parse_step("Sure! Here is my analysis.\n" + turn_text())
        assert not out.format_ok
        assert "text outside tagged blocks" in out.block_diagnostics

    def test_never_throws(self):
        for raw in ("", None, "< <state_think> >", "</tool_call>", "\x00",
                    "<tool_call>{broken</tool_call>" * 3):
            parse_step(raw)  # must not raise

    def test_malformed_insight_block_keeps_format_ok(self):
        text = turn_text(include=("state_think", "insight", "action_think", "tool_call"))
        text = text.replace('[{"title": "t", "status": "New", "proof": "p"}]', "not json")
        out = parse_step(text)
        assert out.format_ok  # structure fine, content bad
        assert out.insight_schema_ok is False
        assert out.insight_block is None

    def test_unknown_insight_status_fails_schema(self):
        text = turn_text(include=("state_think", "insight", "action_think", "tool_call"))
        text = text.replace('"status": "New"', '"status": "Novel"')
        out = parse_step(text)
        assert out.insight_schema_ok is False

    def test_key_data_schema_checked(self):
        text = turn_text(include=("state_think", "key_data", "action_think", "tool_call"))
        bad = text.replace('"type": "CSV"', '"type": "PARQUET"')
        assert parse_step(text).key_data_schema_ok is True
        assert parse_step(bad).key_data_schema_ok is False

    def test_absent_optional_blocks_have_none_schema(self):
        out = parse_step(turn_text())
        assert out.insight_schema_ok is None
        assert out.key_data_schema_ok is None


class TestToolCall:
    def test_valid_dsl_call(self):
        call = parse_tool_call(json.dumps({"tool": "dsl2data", "arguments": PANEL_PAYLOAD}))
        assert call.schema_ok
        assert call.tool == TOOL_DSL2DATA

    def test_dsl_schema_violation_flagged(self):
        payload = {"metric": ["netGMV"], "ds": ["20251008"]}  # ds must be a pair
        call = parse_tool_call(json.dumps({"tool": "dsl2data", "arguments": payload}))
        assert not call.schema_ok
        assert any("schema" in d for d in call.diagnostics)

    def test_python_code_string(self):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": "print(1)"}))
        assert call.schema_ok
        assert script_code(call) == "print(1)"

    def test_python_code_object(self):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": {"code": "x = 1"}}))
        assert call.schema_ok
        assert script_code(call) == "x = 1"

    def test_python_empty_code_rejected(self):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": "   "}))
        assert not call.schema_ok

    def test_unknown_tool(self):
        call = parse_tool_call(json.dumps({"tool": "sql", "arguments": {}}))
        assert not call.schema_ok
        assert any("unknown tool" in d for d in call.diagnostics)

    def test_unknown_keys_rejected(self):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": "x", "retry": True}))
        assert not call.schema_ok

    def test_missing_arguments(self):
        call = parse_tool_call(json.dumps({"tool": "python"}))
        assert not call.schema_ok

    def test_broken_json(self):
        call = parse_tool_call("{nope")
        assert not call.schema_ok
        assert call.tool == ""


class TestRoundTrip:
    def test_render_parse_identity_on_full_step(self):
        step = build_step(
            state_think="The GMV drop concentrates in delivery.",
            action_think="Drill into channel.",
            tool=TOOL_DSL2DATA,
            arguments=PANEL_PAYLOAD,
            insights=(InsightDelta("GMV drop in delivery", InsightStatus.NEW, "wow -30%"),),
            key_data=(ObservationEntry(
                type="CSV", description="panel by channel",
                structure=ObservationStructure(metrics=("netGMV",), dimensions=("channel",)),
                payload_ref="data/panel.csv"),),
            graph_text="graph TD\nA[Q] --> B[Channel]",
        )
        assert step.format_ok
        assert parse_step(render_step(step)) == step

    texts = st.text(
        alphabet=st.characters(blacklist_characters="<>", blacklist_categories=("Cs",)),
        max_size=40).map(str.strip)
    statuses = st.sampled_from(list(InsightStatus))

    @given(
        state_think=texts, action_think=texts,
        titles=st.lists(texts.filter(bool), max_size=2, unique=True),
        status=statuses, code=st.just("print('hi')"),
        graph=st.one_of(st.none(), st.just("graph TD\nA --> B")),
    )
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, state_think, action_think, titles, status, code, graph):
        insights = tuple(InsightDelta(t, status, "proof") for t in titles) or None
        step = build_step(state_think, action_think, TOOL_PYTHON, code,
                          insights=insights, graph_text=graph)
        assert parse_step(render_step(step)) == step


@pytest.fixture(scope="module")
def env(catalog, small_warehouse, tmp_path_factory):
    workspace = tmp_path_factory.mktemp("steps_ws")
    return EnvironmentHandle.create(catalog, small_warehouse, str(workspace))


class TestExecuteAction:
    def test_listing_payload_succeeds(self, env):
        call = parse_tool_call(json.dumps({"tool": "dsl2data", "arguments": LISTING_PAYLOAD}))
        obs = execute_action(call, env)
        assert obs.tool == TOOL_DSL2DATA
        assert obs.status == "Success"
        assert obs.body["calibration_report"]["corrected_dsl"]["metric"] == ["netGMV"]

    def test_preview_numerals_captured(self, env):
        call = parse_tool_call(json.dumps({"tool": "dsl2data", "arguments": PANEL_PAYLOAD}))
        obs = execute_action(call, env)
        assert obs.status == "Success"
        preview = obs.body["execution_results"]["preview"]
        assert preview
        for row in preview:
            for value in row.values():
                if isinstance(value, (int, float)) and not isinstance(value, bool):
                    assert float(value) in obs.numerals
        assert obs.data_path

    def test_unknown_metric_records_violation(self, env):
        payload = {"metric": ["warpDrive"], "ds": ["20251008", "20251010"]}
        call = parse_tool_call(json.dumps({"tool": "dsl2data", "arguments": payload}))
        obs = execute_action(call, env)
        assert obs.status == "Error"
        assert obs.violations
        assert any("warpDrive" in v for v in obs.violations)

    def test_python_smoke(self, env):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": "print(1+1)"}))
        obs = execute_action(call, env)
        assert obs.status == "Success"
        assert obs.body["stdout"].strip() == "2"
        assert obs.body["exit_ok"]
        assert 2.0 in obs.numerals

    def test_python_failure_is_error_status(self, env):
        call = parse_tool_call(json.dumps({"tool": "python", "arguments": "1/0"}))
        obs = execute_action(call, env)
        assert obs.status == "Error"
        assert not obs.body["exit_ok"]

    def test_python_timeout_status(self, catalog, small_warehouse, tmp_path):
        env = EnvironmentHandle.create(catalog, small_warehouse, str(tmp_path),
                                       limits=SandboxLimits(timeout_seconds=0.5))
        call = parse_tool_call(json.dumps(
            {"tool": "python", "arguments": "import time; time.sleep(30)"}))
        obs = execute_action(call, env)
        assert obs.status == "Timeout"

    def test_no_tool_call(self, env):
        obs = execute_action(None, env)
        assert obs.status == "Error"

    def test_bad_dsl_payload_yields_error_package(self, env):
        call = parse_tool_call(json.dumps(
            {"tool": "dsl2data", "arguments": {"metric": ["netGMV"]}}))
        assert not call.schema_ok
        obs = execute_action(call, env)
        assert obs.status == "Error"
        assert any("Schema error" in n
                   for n in obs.body["calibration_report"]["notices"])

    def test_warehouse_untouched_by_actions(self, env, small_warehouse):
        before = open(small_warehouse.path, "rb").read()
        for arguments in (PANEL_PAYLOAD, "open('f.txt', 'w').write('x')"):
            tool = "dsl2data" if isinstance(arguments, dict) else "python"
            execute_action(parse_tool_call(json.dumps(
                {"tool": tool, "arguments": arguments})), env)
        assert open(small_warehouse.path, "rb").read() == before

    def test_observation_text_forms(self, env):
        dsl = execute_action(parse_tool_call(json.dumps(
            {"tool": "dsl2data", "arguments": PANEL_PAYLOAD})), env)
        assert "execution_results" in observation_text(dsl)
        py = execute_action(parse_tool_call(json.dumps(
            {"tool": "python", "arguments": "print('hello')"})), env)
        assert "hello" in observation_text(py)

    def test_deepcopyable_observation(self, env):
        obs = execute_action(parse_tool_call(json.dumps(
            {"tool": "dsl2data", "arguments": PANEL_PAYLOAD})), env)
        assert copy.deepcopy(obs) == obs


def test_step_output_defaults():
    out = StepOutput()
    assert not out.format_ok
    assert out.tool_call is None


def test_tool_call_is_value_object():
    a = ToolCall("python", '"x=1"', True)
    b = ToolCall("python", '"x=1"', True)
    assert a == b
