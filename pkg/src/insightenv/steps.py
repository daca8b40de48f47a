"""One agent turn: tagged output blocks, tool dispatch, observations.

A turn is plain text carrying angle-bracket blocks in canonical order:

    <state_think>...</state_think>
    <insight>[{"title", "status", "proof"}, ...]</insight>
    <key_data>[{"type", "description", "structure", "payload_ref"}, ...]</key_data>
    <graph>mermaid text</graph>
    <action_think>...</action_think>
    <tool_call>{"tool": "dsl2data" | "python", "arguments": ...}</tool_call>

state_think, action_think, and tool_call are required; the middle blocks are
optional deltas. parse_step never throws: malformed turns come back with
format_ok=false and diagnostics, which the format reward consumes.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field

from insightenv.catalog import Catalog
from insightenv.dsl.engine import DslEngine, EngineResponse
from insightenv.dsl.protocol import SchemaError, parse_payload
from insightenv.numerals import extract_numerals, numerals_from_values
from insightenv.sandbox import SandboxLimits, ScriptResult, run_script
from insightenv.state import InsightDelta, InsightStatus, ObservationEntry, ObservationStructure
from insightenv.warehouse import WarehouseHandle

TOOL_DSL2DATA = "dsl2data"
TOOL_PYTHON = "python"
KNOWN_TOOLS = (TOOL_DSL2DATA, TOOL_PYTHON)

TAG_ORDER = ("state_think", "insight", "key_data", "graph", "action_think", "tool_call")
REQUIRED_TAGS = ("state_think", "action_think", "tool_call")

_RANK = {tag: i for i, tag in enumerate(TAG_ORDER)}

STATUS_SUCCESS = "Success"
STATUS_ERROR = "Error"
STATUS_TIMEOUT = "Timeout"


class BlockError(ValueError):
    """Structured block fails its schema."""


@dataclass(frozen=True)
class ToolCall:
    tool: str
    arguments: str  # canonical JSON text of the arguments value
    schema_ok: bool
    diagnostics: tuple[str, ...] = ()


@dataclass(frozen=True)
class StepOutput:
    state_think: str = ""
    insight_block: tuple[InsightDelta, ...] | None = None
    key_data_block: tuple[ObservationEntry, ...] | None = None
    graph_block: str | None = None
    action_think: str = ""
    tool_call: ToolCall | None = None
    format_ok: bool = False
    block_diagnostics: tuple[str, ...] = ()
    # present but unparseable structured blocks: None above, False here
    insight_schema_ok: bool | None = None
    key_data_schema_ok: bool | None = None


@dataclass(frozen=True)
class Observation:
    tool: str
    status: str
    body: dict
    numerals: frozenset[float] = frozenset()
    violations: tuple[str, ...] = ()
    data_path: str | None = None

    @property
    def success(self) -> bool:
        return self.status == STATUS_SUCCESS


def _canonical_json(value) -> str:
    return json.dumps(value, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


# --- block parsers -----------------------------------------------------------

def parse_insight_block(text: str) -> tuple[InsightDelta, ...]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BlockError(f"insight block is not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise BlockError("insight block must be a JSON array")
    out = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise BlockError(f"insight entry {i} must be an object")
        unknown = set(item) - {"title", "status", "proof"}
        if unknown:
            raise BlockError(f"insight entry {i} has unknown keys {sorted(unknown)}")
        for key in ("title", "status"):
            if key not in item:
                raise BlockError(f"insight entry {i} is missing '{key}'")
        title, status = item["title"], item["status"]
        proof = item.get("proof", "")
        if not isinstance(title, str) or not isinstance(status, str) or not isinstance(proof, str):
            raise BlockError(f"insight entry {i} fields must be strings")
        try:
            parsed = InsightStatus(status)
        except ValueError:
            raise BlockError(f"insight entry {i} has unknown status {status!r}") from None
        out.append(InsightDelta(title=title, status=parsed, proof=proof))
    return tuple(out)


def parse_key_data_block(text: str) -> tuple[ObservationEntry, ...]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise BlockError(f"key_data block is not valid JSON: {exc}") from None
    if not isinstance(data, list):
        raise BlockError("key_data block must be a JSON array")
    out = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise BlockError(f"key_data entry {i} must be an object")
        unknown = set(item) - {"type", "description", "structure", "payload_ref"}
        if unknown:
            raise BlockError(f"key_data entry {i} has unknown keys {sorted(unknown)}")
        for key in ("type", "description", "structure", "payload_ref"):
            if key not in item:
                raise BlockError(f"key_data entry {i} is missing '{key}'")
        if item["type"] not in ("CSV", "TXT"):
            raise BlockError(f"key_data entry {i} type must be CSV or TXT")
        structure = item["structure"]
        if not isinstance(structure, dict):
            raise BlockError(f"key_data entry {i} structure must be an object")
        unknown = set(structure) - {"metrics", "dimensions", "filters"}
        if unknown:
            raise BlockError(f"key_data entry {i} structure has unknown keys {sorted(unknown)}")
        fields = {}
        for key in ("metrics", "dimensions", "filters"):
            values = structure.get(key, [])
            if not isinstance(values, list) or any(not isinstance(v, str) for v in values):
                raise BlockError(f"key_data entry {i} structure.{key} must be a list of strings")
            fields[key] = tuple(values)
        if not isinstance(item["description"], str) or not isinstance(item["payload_ref"], str):
            raise BlockError(f"key_data entry {i} description/payload_ref must be strings")
        out.append(ObservationEntry(
            type=item["type"],
            description=item["description"],
            structure=ObservationStructure(**fields),
            payload_ref=item["payload_ref"],
        ))
    return tuple(out)


def parse_tool_call(text: str) -> ToolCall:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        return ToolCall("", text.strip(), False, (f"tool_call is not valid JSON: {exc}",))
    if not isinstance(data, dict):
        return ToolCall("", text.strip(), False, ("tool_call must be a JSON object",))
    unknown = set(data) - {"tool", "arguments"}
    if unknown:
        return ToolCall(str(data.get("tool", "")), _canonical_json(data.get("arguments")),
                        False, (f"tool_call has unknown keys {sorted(unknown)}",))
    tool = data.get("tool")
    if tool not in KNOWN_TOOLS:
        return ToolCall(str(tool or ""), _canonical_json(data.get("arguments")),
                        False, (f"unknown tool {tool!r}",))
    if "arguments" not in data:
        return ToolCall(tool, "null", False, ("tool_call is missing 'arguments'",))
    arguments = data["arguments"]
    diagnostics: list[str] = []
    ok = True
    if tool == TOOL_DSL2DATA:
        if not isinstance(arguments, dict):
            ok, diagnostics = False, ["dsl2data arguments must be a JSON object"]
        else:
            try:
                parse_payload(arguments)
            except SchemaError as exc:
                ok, diagnostics = False, [f"dsl2data payload schema: {exc}"]
    else:
        code = arguments.get("code") if isinstance(arguments, dict) else arguments
        if isinstance(arguments, dict) and set(arguments) - {"code"}:
            ok, diagnostics = False, ["python arguments allow only the 'code' key"]
        elif not isinstance(code, str) or not code.strip():
            ok, diagnostics = False, ["python arguments must carry a non-empty code string"]
    return ToolCall(tool, _canonical_json(arguments), ok, tuple(diagnostics))


def script_code(call: ToolCall) -> str:
    """Extract the code string from a python tool call ('' when absent)."""
    try:
        arguments = json.loads(call.arguments)
    except json.JSONDecodeError:
        return ""
    if isinstance(arguments, str):
        return arguments
    if isinstance(arguments, dict) and isinstance(arguments.get("code"), str):
        return arguments["code"]
    return ""


# --- turn parsing ------------------------------------------------------------

def parse_step(raw: str) -> StepOutput:
    """Split one turn into blocks; never throws."""
    text = raw or ""
    diagnostics: list[str] = []
    blocks: dict[str, str] = {}
    order: list[str] = []
    open_tag: str | None = None
    open_end = 0
    cursor = 0
    outside: list[str] = []
    nesting_ok = True

    for match in re.finditer(r"<(/?)(%s)>" % "|".join(TAG_ORDER), text):
        closing, name = match.group(1) == "/", match.group(2)
        if not closing:
            if open_tag is not None:
                diagnostics.append(f"tag <{name}> opened inside <{open_tag}>")
                nesting_ok = False
                continue
            if name in blocks:
                diagnostics.append(f"duplicate block <{name}>")
                nesting_ok = False
            open_tag, open_end = name, match.end()
            outside.append(text[cursor:match.start()])
        else:
            if open_tag != name:
                diagnostics.append(f"unexpected closing tag </{name}>")
                nesting_ok = False
                continue
            blocks[name] = text[open_end:match.start()].strip()
            order.append(name)
            open_tag = None
            cursor = match.end()
    if open_tag is not None:
        diagnostics.append(f"unclosed tag <{open_tag}>")
        nesting_ok = False
    outside.append(text[cursor:])

    if nesting_ok and "".join(outside).strip():
        diagnostics.append("text outside tagged blocks")

    ranks = [_RANK[t] for t in order]
    if ranks != sorted(ranks):
        diagnostics.append("blocks out of canonical order")
    for tag in REQUIRED_TAGS:
        if tag not in blocks:
            diagnostics.append(f"missing {tag}")

    insight_block = None
    insight_ok: bool | None = None
    if "insight" in blocks:
        try:
            insight_block, insight_ok = parse_insight_block(blocks["insight"]), True
        except BlockError as exc:
            insight_ok = False
            diagnostics.append(str(exc))
    key_data_block = None
    key_data_ok: bool | None = None
    if "key_data" in blocks:
        try:
            key_data_block, key_data_ok = parse_key_data_block(blocks["key_data"]), True
        except BlockError as exc:
            key_data_ok = False
            diagnostics.append(str(exc))
    tool_call = parse_tool_call(blocks["tool_call"]) if "tool_call" in blocks else None

    # block-content problems feed the schema rewards, not the format reward
    structural = [d for d in diagnostics
                  if d.startswith(("tag ", "duplicate", "unexpected", "unclosed",
                                   "text outside", "blocks out", "missing"))]
    return StepOutput(
        state_think=blocks.get("state_think", ""),
        insight_block=insight_block,
        key_data_block=key_data_block,
        graph_block=blocks.get("graph"),
        action_think=blocks.get("action_think", ""),
        tool_call=tool_call,
        format_ok=not structural,
        block_diagnostics=tuple(diagnostics),
        insight_schema_ok=insight_ok,
        key_data_schema_ok=key_data_ok,
    )


def render_step(step: StepOutput) -> str:
    """Canonical text for a structured step; inverse of parse_step on
    well-formed steps."""
    parts: list[str] = []

    def block(tag: str, body: str):
        parts.append(f"<{tag}>\n{body}\n</{tag}>")

    block("state_think", step.state_think)
    if step.insight_block is not None:
        body = json.dumps([
            {"title": d.title, "status": d.status.value, "proof": d.proof}
            for d in step.insight_block], ensure_ascii=False, indent=2)
        block("insight", body)
    if step.key_data_block is not None:
        body = json.dumps([
            {
                "type": e.type,
                "description": e.description,
                "structure": {
                    "metrics": list(e.structure.metrics),
                    "dimensions": list(e.structure.dimensions),
                    "filters": list(e.structure.filters),
                },
                "payload_ref": e.payload_ref,
            } for e in step.key_data_block], ensure_ascii=False, indent=2)
        block("key_data", body)
    if step.graph_block is not None:
        block("graph", step.graph_block)
    block("action_think", step.action_think)
    if step.tool_call is not None:
        body = json.dumps(
            {"tool": step.tool_call.tool, "arguments": json.loads(step.tool_call.arguments)},
            ensure_ascii=False, indent=2, sort_keys=True)
        block("tool_call", body)
    return "\n".join(parts)


def build_step(
    state_think: str,
    action_think: str,
    tool: str,
    arguments,
    insights: tuple[InsightDelta, ...] | None = None,
    key_data: tuple[ObservationEntry, ...] | None = None,
    graph_text: str | None = None,
) -> StepOutput:
    """Assemble a step the way a conforming policy would emit it."""
    call = parse_tool_call(_canonical_json({"tool": tool, "arguments": arguments}))
    draft = StepOutput(
        state_think=state_think,
        insight_block=insights,
        key_data_block=key_data,
        graph_block=graph_text,
        action_think=action_think,
        tool_call=call,
    )
    return parse_step(render_step(draft))


# --- tool dispatch -----------------------------------------------------------

@dataclass
class EnvironmentHandle:
    """Catalog, warehouse engine, and sandbox settings for one episode."""

    engine: DslEngine
    limits: SandboxLimits = field(default_factory=SandboxLimits)
    workspace: str = "."
    _run_counter: int = 0

    @classmethod
    def create(cls, catalog: Catalog, warehouse: WarehouseHandle, workspace: str,
               limits: SandboxLimits | None = None,
               timeout_seconds: float = 60.0) -> "EnvironmentHandle":
        engine = DslEngine(catalog, warehouse, workspace=workspace,
                           timeout_seconds=timeout_seconds)
        return cls(engine=engine, limits=limits or SandboxLimits.from_env(),
                   workspace=workspace)


def execute_action(call: ToolCall | None, env: EnvironmentHandle) -> Observation:
    """Dispatch one tool call; always returns an Observation, never raises."""
    if call is None:
        return Observation(tool="", status=STATUS_ERROR,
                           body={"error": "no tool call provided"})
    if call.tool == TOOL_DSL2DATA:
        return _run_dsl(call, env)
    if call.tool == TOOL_PYTHON:
        return _run_python(call, env)
    return Observation(tool=call.tool, status=STATUS_ERROR,
                       body={"error": f"unknown tool {call.tool!r}"})


def _run_dsl(call: ToolCall, env: EnvironmentHandle) -> Observation:
    response: EngineResponse = env.engine.run_text(call.arguments)
    package = response.package
    numerals: set[float] = set()
    for row in package["execution_results"]["preview"]:
        numerals |= numerals_from_values(row.values())
    violations = ()
    if response.report is not None:
        violations = tuple(f"{v.kind.value}: {v.detail}" for v in response.report.violations)
    return Observation(
        tool=TOOL_DSL2DATA,
        status=package["status"],
        body=package,
        numerals=frozenset(numerals),
        violations=violations,
        data_path=package["execution_results"]["data_path"],
    )


def _run_python(call: ToolCall, env: EnvironmentHandle) -> Observation:
    code = script_code(call)
    if not code.strip():
        return Observation(tool=TOOL_PYTHON, status=STATUS_ERROR,
                           body={"stdout": "", "stderr": "no code provided", "exit_ok": False})
    env._run_counter += 1
    workdir = os.path.join(env.workspace, "sandbox", f"run_{env._run_counter:04d}")
    result: ScriptResult = run_script(code, workdir, env.limits)
    if result.timed_out:
        status = STATUS_TIMEOUT
    elif result.exit_ok:
        status = STATUS_SUCCESS
    else:
        status = STATUS_ERROR
    # grounding comes from what the script printed, not its tracebacks
    numerals = frozenset(extract_numerals(result.stdout))
    return Observation(tool=TOOL_PYTHON, status=status, body=result.as_body(),
                       numerals=numerals)


def observation_text(obs: Observation) -> str:
    """Stable text form of an observation, for logs and judge prompts."""
    if obs.tool == TOOL_DSL2DATA:
        return json.dumps(obs.body, ensure_ascii=False, sort_keys=True, indent=2)
    body = obs.body
    parts = [f"status: {obs.status}"]
    if body.get("stdout"):
        parts.append("stdout:\n" + body["stdout"])
    if body.get("stderr"):
        parts.append("stderr:\n" + body["stderr"])
    return "\n".join(parts)
