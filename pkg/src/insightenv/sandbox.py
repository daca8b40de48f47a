"""Script execution in an external interpreter with wall-clock and output
caps.

Each run gets a scratch working directory. Network isolation is delegated to
the hosting container; this layer scrubs proxy variables and enforces the
time and size limits.
"""

from __future__ import annotations

import os
import subprocess
import sys
from dataclasses import dataclass

DEFAULT_TIMEOUT_SECONDS = 10.0
DEFAULT_OUTPUT_CAP_BYTES = 1 << 20

TIMEOUT_ENV_VAR = "INSIGHTENV_SANDBOX_TIMEOUT"
OUTPUT_CAP_ENV_VAR = "INSIGHTENV_SANDBOX_OUTPUT_CAP"

_SCRUBBED = ("http_proxy", "https_proxy", "HTTP_PROXY", "HTTPS_PROXY",
             "ALL_PROXY", "all_proxy")


@dataclass(frozen=True)
class SandboxLimits:
    timeout_seconds: float = DEFAULT_TIMEOUT_SECONDS
    output_cap_bytes: int = DEFAULT_OUTPUT_CAP_BYTES

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "SandboxLimits":
        src = os.environ if env is None else env
        limits = cls()
        raw = src.get(TIMEOUT_ENV_VAR)
        if raw:
            try:
                limits = SandboxLimits(float(raw), limits.output_cap_bytes)
            except ValueError:
                pass
        raw = src.get(OUTPUT_CAP_ENV_VAR)
        if raw:
            try:
                limits = SandboxLimits(limits.timeout_seconds, int(raw))
            except ValueError:
                pass
        return limits


@dataclass(frozen=True)
class ScriptResult:
    stdout: str
    stderr: str
    exit_code: int
    exit_ok: bool
    timed_out: bool = False
    truncated: bool = False

    def as_body(self) -> dict:
        return {"stdout": self.stdout, "stderr": self.stderr, "exit_ok": self.exit_ok}


def run_script(code: str, workdir: str,
               limits: SandboxLimits | None = None) -> ScriptResult:
    """Run one python script; never raises."""
    limits = limits or SandboxLimits()
    os.makedirs(workdir, exist_ok=True)
    script_path = os.path.join(workdir, "script.py")
    try:
        with open(script_path, "w", encoding="utf-8") as fh:
            fh.write(code)
    except OSError as exc:
        return ScriptResult("", f"sandbox setup failed: {exc}", 1, False)

    env = {k: v for k, v in os.environ.items() if k not in _SCRUBBED}
    try:
        proc = subprocess.run(
            [sys.executable, script_path],
            cwd=workdir,
            env=env,
            capture_output=True,
            text=True,
            timeout=limits.timeout_seconds,
        )
        stdout, stderr = proc.stdout, proc.stderr
        exit_code = proc.returncode
        timed_out = False
    except subprocess.TimeoutExpired as exc:
        stdout = _decode(exc.stdout)
        stderr = _decode(exc.stderr) + f"\nwall clock limit {limits.timeout_seconds}s exceeded"
        exit_code = -1
        timed_out = True
    except OSError as exc:
        return ScriptResult("", f"sandbox launch failed: {exc}", 1, False)

    stdout, stderr, truncated = _cap(stdout, stderr, limits.output_cap_bytes)
    return ScriptResult(
        stdout=stdout,
        stderr=stderr,
        exit_code=exit_code,
        exit_ok=exit_code == 0 and not timed_out,
        timed_out=timed_out,
        truncated=truncated,
    )


def _decode(raw) -> str:
    if raw is None:
        return ""
    if isinstance(raw, bytes):
        return raw.decode("utf-8", errors="replace")
    return raw


def _cap(stdout: str, stderr: str, cap: int) -> tuple[str, str, bool]:
    # combined cap, stdout first
    out_bytes = stdout.encode("utf-8")
    err_bytes = stderr.encode("utf-8")
    if len(out_bytes) + len(err_bytes) <= cap:
        return stdout, stderr, False
    if len(out_bytes) >= cap:
        kept = out_bytes[:cap].decode("utf-8", errors="ignore")
        return kept + "\n[output truncated]", "[output truncated]", True
    remaining = cap - len(out_bytes)
    kept_err = err_bytes[:remaining].decode("utf-8", errors="ignore")
    return stdout, kept_err + "\n[output truncated]", True
