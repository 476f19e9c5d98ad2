"""Dialogue data model, line-delimited ingestion, validation, and corpus statistics.

File format (one JSON object per line):

    {"id": "d1", "scene": "refunds", "turns": [{"role": "customer", "text": "..."}, ...]}

``scene`` is optional for raw log dialogues and mandatory for dialogue
scripts. Field names are part of the wire contract and must not change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .errors import SchemaError


class Role(str, Enum):
    CUSTOMER = "customer"
    AGENT = "agent"


@dataclass(frozen=True)
class Turn:
    """One utterance in a dialogue; ``index`` is its 0-based position."""

    role: Role
    text: str
    index: int


@dataclass(frozen=True)
class Dialogue:
    """A raw multi-turn conversation from the service logs.

    Raw logs are noisy: consecutive turns by the same role are allowed here,
    unlike in :class:`DialogueScript`.
    """

    id: str
    turns: tuple[Turn, ...]
    scene: str | None = None


@dataclass(frozen=True)
class DialogueScript:
    """A curated customer-first, strictly alternating exemplar for one scene.

    Construction does not enforce the alternation invariants so that
    :func:`validate_script` can report violations as data; loaders are
    expected to validate before serving a script.
    """

    id: str
    scene: str
    turns: tuple[Turn, ...]


@dataclass(frozen=True)
class CorpusStats:
    """Corpus-level statistics; means kept as exact rationals until display."""

    num_dialogs: int
    avg_rounds: Fraction
    avg_length: Fraction

    def as_report(self) -> dict:
        return {
            "num_dialogs": self.num_dialogs,
            "avg_rounds": float(self.avg_rounds),
            "avg_length": float(self.avg_length),
        }


@dataclass(frozen=True)
class LineError:
    """A malformed input line: 1-based line number plus the parse failure."""

    line: int
    message: str


@dataclass
class IngestResult:
    dialogues: list[Dialogue] = field(default_factory=list)
    errors: list[LineError] = field(default_factory=list)


def _parse_turns(obj: dict) -> tuple[Turn, ...]:
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list):
        raise SchemaError("'turns' must be a list")
    turns = []
    for i, raw in enumerate(raw_turns):
        if not isinstance(raw, dict):
            raise SchemaError(f"turn {i} is not an object")
        role = raw.get("role")
        if role not in (Role.CUSTOMER.value, Role.AGENT.value):
            raise SchemaError(f"turn {i} has invalid role {role!r}")
        text = raw.get("text")
        if not isinstance(text, str) or not text.strip():
            raise SchemaError(f"turn {i} has empty or missing text")
        turns.append(Turn(role=Role(role), text=text, index=i))
    return tuple(turns)


def dialogue_from_record(obj: dict) -> Dialogue:
    """Parse one JSON record into a Dialogue, raising SchemaError when malformed."""
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object")
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise SchemaError("'id' must be a non-empty string")
    scene = obj.get("scene")
    if scene is not None and not isinstance(scene, str):
        raise SchemaError("'scene' must be a string when present")
    turns = _parse_turns(obj)
    if len(turns) < 2:
        raise SchemaError("dialogue must have at least 2 turns")
    return Dialogue(id=did, turns=turns, scene=scene)


def script_from_record(obj: dict) -> DialogueScript:
    """Parse one JSON record into a DialogueScript; scene is mandatory.

    Structural script invariants (customer-first, alternating) are checked
    separately by :func:`validate_script`.
    """
    dialogue = dialogue_from_record(obj)
    if dialogue.scene is None:
        raise SchemaError("script records require a 'scene'")
    return DialogueScript(id=dialogue.id, scene=dialogue.scene, turns=dialogue.turns)


def dialogue_to_record(dialogue: Dialogue | DialogueScript) -> dict:
    record: dict = {"id": dialogue.id}
    scene = getattr(dialogue, "scene", None)
    if scene is not None:
        record["scene"] = scene
    record["turns"] = [{"role": t.role.value, "text": t.text} for t in dialogue.turns]
    return record


def ingest_log(path: str | Path) -> IngestResult:
    """Read a line-delimited dialogue log.

    Well-formed records are returned in file order; malformed lines are
    collected into ``errors`` with their 1-based line numbers rather than
    silently dropped. Blank lines are ignored.
    """
    result = IngestResult()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                result.errors.append(LineError(lineno, f"invalid JSON: {exc.msg}"))
                continue
            try:
                result.dialogues.append(dialogue_from_record(obj))
            except SchemaError as exc:
                result.errors.append(LineError(lineno, str(exc)))
    return result


def ingest_scripts(path: str | Path) -> tuple[list[DialogueScript], list[LineError]]:
    """Read a line-delimited script file, validating every script invariant."""
    scripts: list[DialogueScript] = []
    errors: list[LineError] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                errors.append(LineError(lineno, f"invalid JSON: {exc.msg}"))
                continue
            try:
                script = script_from_record(obj)
            except SchemaError as exc:
                errors.append(LineError(lineno, str(exc)))
                continue
            report = validate_script(script)
            if report:
                errors.append(LineError(lineno, "; ".join(report)))
            else:
                scripts.append(script)
    return scripts, errors


def write_dialogues(dialogues: Iterable[Dialogue | DialogueScript], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            fh.write(json.dumps(dialogue_to_record(dialogue), ensure_ascii=False))
            fh.write("\n")


def corpus_stats(dialogues: Sequence[Dialogue]) -> CorpusStats:
    """Per-corpus statistics; an empty corpus yields all-zero stats.

    ``avg_rounds`` counts turns per dialogue (rounds = turns); ``avg_length``
    counts characters, summed over turn texts.
    """
    n = len(dialogues)
    if n == 0:
        return CorpusStats(0, Fraction(0), Fraction(0))
    total_rounds = sum(len(d.turns) for d in dialogues)
    total_chars = sum(len(t.text) for d in dialogues for t in d.turns)
    return CorpusStats(n, Fraction(total_rounds, n), Fraction(total_chars, n))


def validate_script(script: DialogueScript) -> list[str]:
    """Check every DialogueScript invariant; an empty report means valid.

    Violations are returned as data (one entry per broken invariant), never
    raised.
    """
    report: list[str] = []
    if len(script.turns) < 2:
        report.append("too-few-turns")
    for i, turn in enumerate(script.turns):
        if not turn.text.strip():
            report.append(f"empty-text at turn {i}")
        if turn.index != i:
            report.append(f"bad-index at turn {i}")
    if script.turns and script.turns[0].role is not Role.CUSTOMER:
        report.append("first-turn-not-customer")
    for i in range(1, len(script.turns)):
        if script.turns[i].role is script.turns[i - 1].role:
            report.append(f"non-alternating at turn {i}")
    if not any(t.role is Role.AGENT for t in script.turns):
        report.append("no-agent-turn")
    return report


def agent_turns(script: DialogueScript) -> list[Turn]:
    return [t for t in script.turns if t.role is Role.AGENT]


def customer_turns(dialogue: Dialogue | DialogueScript) -> list[Turn]:
    return [t for t in dialogue.turns if t.role is Role.CUSTOMER]
