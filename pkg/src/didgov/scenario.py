"""Scripted CLI runs with expectations, used for end-to-end checks.

A script is a JSON list of steps, or an object ``{"seed", "clockSchedule", "steps"}``.
Step shapes:

* ``{"cmd": [...], "expect": {"exit": 0, "json_subset": {...}}, "capture": {"var": "a.b"}}``
* ``{"file": "name.json", "content": <json>}`` writes a file into the work dir
* ``{"tick": true}`` advances to the next clockSchedule entry and runs ``tick``

``${var}`` in strings is replaced by captured values, ``${seed}`` and ``${now}``.
"""

from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import canonical
from .errors import ScenarioAssertionFailed, UsageError

_VAR = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
LEDGER_FILE = "ledger.jsonl"


@dataclass
class ScenarioScript:
    steps: list[dict[str, Any]]
    seed: str | None = None
    clock_schedule: list[int] = field(default_factory=list)

    @classmethod
    def from_json(cls, data: Any) -> "ScenarioScript":
        if isinstance(data, list):
            return cls(data)
        if isinstance(data, dict) and isinstance(data.get("steps"), list):
            unknown = set(data) - {"seed", "clockSchedule", "steps"}
            if unknown:
                raise UsageError(f"unknown scenario keys: {sorted(unknown)}")
            return cls(data["steps"], data.get("seed"), list(data.get("clockSchedule", [])))
        raise UsageError("a scenario is a list of steps or an object with 'steps'")


def substitute(value: Any, env: dict[str, Any]) -> Any:
    if isinstance(value, str):
        def repl(m: re.Match) -> str:
            if m.group(1) not in env:
                raise UsageError(f"undefined variable ${{{m.group(1)}}}")
            return str(env[m.group(1)])
        return _VAR.sub(repl, value)
    if isinstance(value, list):
        return [substitute(v, env) for v in value]
    if isinstance(value, dict):
        return {k: substitute(v, env) for k, v in value.items()}
    return value


def is_subset(expected: Any, actual: Any) -> bool:
    """Dicts match on the keys given, lists element-wise at equal length, scalars by equality."""
    if isinstance(expected, dict):
        return isinstance(actual, dict) and all(
            k in actual and is_subset(v, actual[k]) for k, v in expected.items()
        )
    if isinstance(expected, list):
        return isinstance(actual, list) and len(expected) == len(actual) and all(
            is_subset(e, a) for e, a in zip(expected, actual)
        )
    return expected == actual


def lookup(data: Any, path: str) -> Any:
    for part in path.split("."):
        if isinstance(data, list):
            data = data[int(part)]
        elif isinstance(data, dict) and part in data:
            data = data[part]
        else:
            raise KeyError(path)
    return data


def _ledger_digest(path: Path) -> str | None:
    if not path.exists():
        return None
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        return None
    import json

    return json.loads(lines[-1])["recordDigest"]


def _run_step(step: dict, env: dict[str, Any], schedule: list[int]) -> tuple[int, dict]:
    from .cli import run_command

    if "file" in step:
        Path(substitute(step["file"], env)).write_text(
            canonical.dumps(substitute(step["content"], env)) + "\n", encoding="utf-8"
        )
        return 0, {"file": step["file"]}
    if step.get("tick"):
        if not schedule:
            raise UsageError("tick step with an exhausted clockSchedule")
        env["now"] = schedule.pop(0)
        return run_command(["--ledger", LEDGER_FILE, "tick", "--now", str(env["now"])])
    if "cmd" in step:
        argv = [str(a) for a in substitute(step["cmd"], env)]
        return run_command(["--ledger", LEDGER_FILE, *argv])
    raise UsageError(f"unrecognised step: {sorted(step)}")


def run_scenario(script: ScenarioScript, workdir: str | Path | None = None,
                 raise_on_failure: bool = True) -> dict[str, Any]:
    """Run every step against a fresh ledger; returns a per-step report."""
    tmp = None
    if workdir is None:
        tmp = tempfile.TemporaryDirectory(prefix="didgov-scenario-")
        workdir = tmp.name
    Path(workdir).mkdir(parents=True, exist_ok=True)
    env: dict[str, Any] = {"now": 0}
    if script.seed is not None:
        env["seed"] = script.seed
    schedule = list(script.clock_schedule)
    results: list[dict[str, Any]] = []
    failure: tuple[int, str, dict] | None = None
    old_cwd = os.getcwd()
    os.chdir(workdir)
    try:
        for i, step in enumerate(script.steps):
            code, output = _run_step(step, env, schedule)
            expect = substitute(step.get("expect", {"exit": 0}), env)
            reason = None
            if "exit" in expect and code != expect["exit"]:
                reason = f"exit {code}, expected {expect['exit']}"
            elif "json_subset" in expect and not is_subset(expect["json_subset"], output):
                reason = "output does not contain the expected subset"
            for var, path in step.get("capture", {}).items():
                if reason is None:
                    try:
                        env[var] = lookup(output, path)
                    except (KeyError, IndexError, ValueError):
                        reason = f"cannot capture {path!r}"
            results.append({"index": i, "passed": reason is None, "exit": code, "output": output,
                            **({"reason": reason} if reason else {})})
            if reason:
                failure = (i, reason, output)
                break
        digest = _ledger_digest(Path(LEDGER_FILE))
    finally:
        os.chdir(old_cwd)
        if tmp is not None:
            tmp.cleanup()
    report = {"passed": failure is None, "steps": results, "ledgerDigest": digest}
    if failure and raise_on_failure:
        raise ScenarioAssertionFailed(failure[0], failure[1], output=failure[2])
    return report
