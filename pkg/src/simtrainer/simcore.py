"""Session orchestration: the simulated customer's turn-by-turn state machine.

A session serves one dialogue script. The bot opens with the script's first
customer turn and waits. Each trainee reply is matched against the expected
agent utterance at the cursor: a similar reply advances the script and the
bot speaks the next scripted customer turn; a dissimilar reply leaves the
cursor in place and the bot answers with the best ranked
retrieval/generation candidate instead, re-asking in different words.

Every state change is appended to a per-session line-delimited event log
before anything else observes it; folding the log back reproduces the
session exactly, which is what the crash-recovery and replay guarantees
build on. Randomness is derived statelessly from (seed, session id, purpose,
turn counter), so a replayed session cannot drift.
"""

from __future__ import annotations

import hashlib
import json
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import DialogueScript, Role, dialogue_to_record, script_from_record
from .errors import (
    ConfigurationError,
    ContractViolation,
    IllegalStateError,
    NotFoundError,
)
from .respond import FallbackResponder
from .textenc import Matcher

CLOSING_ACK = "Thanks, that settles it for me. Goodbye!"
GENERIC_HINT = "Look at the customer's last message and respond to it directly."


@dataclass
class SimPolicy:
    advance_threshold: float = 0.5
    context_window: int = 4
    max_misses_before_hint: int = 2
    max_rounds: int = 60
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.advance_threshold <= 1.0:
            raise ConfigurationError("advance_threshold must lie in [0, 1]")
        if self.context_window < 1 or self.max_misses_before_hint < 0 or self.max_rounds < 2:
            raise ConfigurationError("context_window, hint gate, and max_rounds out of range")


class Speaker(str, Enum):
    BOT = "bot"
    TRAINEE = "trainee"


class TurnTag(str, Enum):
    SCRIPTED = "scripted"
    FALLBACK = "fallback"
    HINT = "hint"


class SessionPhase(str, Enum):
    AWAIT_AGENT = "await_agent"
    COMPLETED = "completed"
    ABANDONED = "abandoned"


class CloseReason(str, Enum):
    COMPLETED = "completed"
    ABANDONED = "abandoned"
    TRAINEE_QUIT = "trainee_quit"


class BotPath(str, Enum):
    SCRIPT_ADVANCE = "script_advance"
    FALLBACK = "fallback"


@dataclass(frozen=True)
class TranscriptEntry:
    speaker: Speaker
    text: str
    timestamp: float
    tag: TurnTag | None = None
    # for trainee turns: index of the script agent turn that was expected
    script_cursor: int | None = None


@dataclass
class SessionState:
    session_id: str
    scene_id: str
    script: DialogueScript
    cursor: int
    transcript: list[TranscriptEntry] = field(default_factory=list)
    phase: SessionPhase = SessionPhase.AWAIT_AGENT
    miss_count: int = 0
    created_at: float = 0.0
    wait_started_at: float = 0.0
    assigned_at: float = 0.0


@dataclass(frozen=True)
class SessionRecord:
    """Immutable, self-contained snapshot of a finished session."""

    session_id: str
    scene_id: str
    script: DialogueScript
    transcript: tuple[TranscriptEntry, ...]
    phase: SessionPhase
    reason: CloseReason
    completed: bool
    created_at: float
    wait_started_at: float
    assigned_at: float
    closed_at: float


@dataclass(frozen=True)
class BotTurnResult:
    bot_utterance: str
    path: BotPath
    match_score: float
    candidates_considered: int
    completed: bool


@dataclass(frozen=True)
class HintResult:
    text: str
    revealed: bool
    full_text: str | None = None


def derive_seed(base: int, session_id: str, purpose: str, counter: int = 0) -> int:
    """Stateless per-session seed so replays and recovery cannot drift."""
    digest = hashlib.sha256(f"{base}:{session_id}:{purpose}:{counter}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _first_clause(text: str) -> str:
    for i, ch in enumerate(text):
        if ch in ".!?;,。！？；，":
            return text[: i + 1]
    return text


def _next_agent_index(script: DialogueScript, after: int) -> int | None:
    for i in range(after, len(script.turns)):
        if script.turns[i].role is Role.AGENT:
            return i
    return None


class SimulatorEngine:
    """Runs training sessions against a scene registry.

    Engine handles (matcher, responder, scripts) are shared read-only across
    sessions; each session has a single writer.
    """

    def __init__(
        self,
        scripts: Iterable[DialogueScript],
        matcher: Matcher,
        responder: FallbackResponder | None,
        policy: SimPolicy | None = None,
        clock: Callable[[], float] = time.time,
        event_sink: Callable[[str, dict], None] | None = None,
    ):
        self.scenes: dict[str, list[DialogueScript]] = {}
        for script in scripts:
            self.scenes.setdefault(script.scene, []).append(script)
        self.matcher = matcher
        self.responder = responder
        self.policy = policy or SimPolicy()
        self.clock = clock
        self.event_sink = event_sink

    def _emit(self, session_id: str, event: dict) -> None:
        if self.event_sink is not None:
            self.event_sink(session_id, event)

    def scene_summaries(self) -> list[dict]:
        return [
            {"scene_id": scene_id, "num_scripts": len(scripts)}
            for scene_id, scripts in sorted(self.scenes.items())
        ]

    def start_session(self, scene_id: str, session_id: str | None = None) -> tuple[SessionState, str]:
        """Open a session: pick a script for the scene, speak its first turn."""
        if scene_id not in self.scenes:
            raise NotFoundError(f"unknown scene {scene_id!r}")
        scripts = self.scenes[scene_id]
        if not scripts:
            raise ConfigurationError(f"scene {scene_id!r} has no scripts")
        session_id = session_id or uuid.uuid4().hex
        wait_started = self.clock()

        rng = np.random.default_rng(derive_seed(self.policy.seed, session_id, "script"))
        script = scripts[int(rng.integers(len(scripts)))]
        if self.policy.max_rounds < len(script.turns):
            raise ConfigurationError(
                f"max_rounds {self.policy.max_rounds} below script length {len(script.turns)}"
            )
        cursor = _next_agent_index(script, 0)
        if cursor is None:  # unreachable for validated scripts
            raise ConfigurationError(f"script {script.id!r} has no agent turn")

        assigned = self.clock()
        opening = script.turns[0].text
        state = SessionState(
            session_id=session_id,
            scene_id=scene_id,
            script=script,
            cursor=cursor,
            created_at=wait_started,
            wait_started_at=wait_started,
            assigned_at=assigned,
        )
        state.transcript.append(TranscriptEntry(Speaker.BOT, opening, assigned, TurnTag.SCRIPTED))
        self._emit(
            session_id,
            {
                "type": "session_start",
                "session_id": session_id,
                "scene_id": scene_id,
                "script": dialogue_to_record(script),
                "cursor": cursor,
                "opening": opening,
                "wait_started_at": wait_started,
                "assigned_at": assigned,
            },
        )
        return state, opening

    def agent_reply(self, state: SessionState, text: str, token: str | None = None) -> BotTurnResult:
        """Process one trainee utterance and produce the bot's next turn."""
        if state.phase is not SessionPhase.AWAIT_AGENT:
            raise IllegalStateError(f"session {state.session_id} is {state.phase.value}")
        if not text.strip():
            raise ContractViolation("trainee utterance must be non-empty")

        expected = state.script.turns[state.cursor].text
        score = self.matcher(text, expected)
        now = self.clock()
        state.transcript.append(
            TranscriptEntry(Speaker.TRAINEE, text, now, None, script_cursor=state.cursor)
        )
        self._emit(
            state.session_id,
            {"type": "trainee_turn", "text": text, "ts": now, "cursor": state.cursor, "token": token},
        )

        generator_source = None
        if score >= self.policy.advance_threshold:
            path = BotPath.SCRIPT_ADVANCE
            considered = 0
            next_customer = state.cursor + 1 if state.cursor + 1 < len(state.script.turns) else None
            next_agent = _next_agent_index(state.script, state.cursor + 1)
            state.miss_count = 0
            if next_agent is None:
                state.phase = SessionPhase.COMPLETED
                state.cursor = len(state.script.turns)
                bot_text = (
                    state.script.turns[next_customer].text if next_customer is not None else CLOSING_ACK
                )
            else:
                bot_text = state.script.turns[next_customer].text  # type: ignore[index]
                state.cursor = next_agent
            tag = TurnTag.SCRIPTED
        else:
            path = BotPath.FALLBACK
            state.miss_count += 1
            if self.responder is None:
                raise ConfigurationError("engine has no responder for fallback turns")
            context_turns = [
                entry.text for entry in state.transcript[-self.policy.context_window :]
            ]
            last_customer = next(
                (e.text for e in reversed(state.transcript) if e.speaker is Speaker.BOT), ""
            )
            seed = derive_seed(self.policy.seed, state.session_id, "gen", len(state.transcript))
            outcome = self.responder.respond(context_turns, last_customer, seed, state.scene_id)
            bot_text = outcome.best.text
            considered = outcome.considered
            generator_source = outcome.generator_source
            tag = TurnTag.FALLBACK

        bot_ts = self.clock()
        state.transcript.append(TranscriptEntry(Speaker.BOT, bot_text, bot_ts, tag))
        if state.phase is SessionPhase.AWAIT_AGENT and len(state.transcript) > self.policy.max_rounds:
            state.phase = SessionPhase.ABANDONED

        self._emit(
            state.session_id,
            {
                "type": "bot_turn",
                "text": bot_text,
                "ts": bot_ts,
                "tag": tag.value,
                "path": path.value,
                "match_score": score,
                "cursor_after": state.cursor,
                "miss_count_after": state.miss_count,
                "phase_after": state.phase.value,
                "considered": considered,
                "generator_source": generator_source,
            },
        )
        return BotTurnResult(
            bot_utterance=bot_text,
            path=path,
            match_score=score,
            candidates_considered=considered,
            completed=state.phase is SessionPhase.COMPLETED,
        )

    def request_hint(self, state: SessionState) -> HintResult:
        """A nudge, or (after enough misses) a preview of the expected reply."""
        if state.phase is not SessionPhase.AWAIT_AGENT:
            raise IllegalStateError(f"session {state.session_id} is {state.phase.value}")
        expected = state.script.turns[state.cursor].text
        if state.miss_count >= self.policy.max_misses_before_hint:
            hint = HintResult(
                text=f"Try something along the lines of: {_first_clause(expected)}",
                revealed=True,
                full_text=expected,
            )
        else:
            hint = HintResult(text=GENERIC_HINT, revealed=False)
        now = self.clock()
        state.transcript.append(TranscriptEntry(Speaker.BOT, hint.text, now, TurnTag.HINT))
        self._emit(
            state.session_id,
            {
                "type": "hint",
                "text": hint.text,
                "ts": now,
                "revealed": hint.revealed,
                "full_text": hint.full_text,
            },
        )
        return hint

    def close_session(self, state: SessionState, reason: CloseReason) -> SessionRecord:
        """Finalize the session into an immutable record; mid-flight closes abandon it."""
        if state.phase is SessionPhase.AWAIT_AGENT:
            state.phase = SessionPhase.ABANDONED
        closed_at = self.clock()
        record = SessionRecord(
            session_id=state.session_id,
            scene_id=state.scene_id,
            script=state.script,
            transcript=tuple(state.transcript),
            phase=state.phase,
            reason=reason,
            completed=state.phase is SessionPhase.COMPLETED,
            created_at=state.created_at,
            wait_started_at=state.wait_started_at,
            assigned_at=state.assigned_at,
            closed_at=closed_at,
        )
        self._emit(
            state.session_id,
            {
                "type": "session_close",
                "reason": reason.value,
                "ts": closed_at,
                "completed": record.completed,
                "phase": state.phase.value,
            },
        )
        return record


class SessionEventLog:
    """Append-only JSONL event log, one file per session."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, session_id: str) -> Path:
        return self.directory / f"{session_id}.jsonl"

    def append(self, session_id: str, event: dict) -> None:
        with open(self._path(session_id), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False))
            fh.write("\n")
            fh.flush()

    def read(self, session_id: str) -> list[dict]:
        path = self._path(session_id)
        if not path.exists():
            raise NotFoundError(f"no event log for session {session_id}")
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]

    def session_ids(self) -> list[str]:
        return sorted(p.stem for p in self.directory.glob("*.jsonl"))


@dataclass
class FoldedSession:
    state: SessionState
    record: SessionRecord | None
    responses_by_token: dict[str, dict]


def fold_events(events: Sequence[dict]) -> FoldedSession:
    """Rebuild a session (and its idempotency map) from its event log."""
    if not events or events[0].get("type") != "session_start":
        raise ContractViolation("event log must begin with session_start")
    start = events[0]
    script = script_from_record(start["script"])
    state = SessionState(
        session_id=start["session_id"],
        scene_id=start["scene_id"],
        script=script,
        cursor=start["cursor"],
        created_at=start["wait_started_at"],
        wait_started_at=start["wait_started_at"],
        assigned_at=start["assigned_at"],
    )
    state.transcript.append(
        TranscriptEntry(Speaker.BOT, start["opening"], start["assigned_at"], TurnTag.SCRIPTED)
    )
    record: SessionRecord | None = None
    responses: dict[str, dict] = {}
    pending_token: str | None = None
    for event in events[1:]:
        etype = event["type"]
        if etype == "trainee_turn":
            state.transcript.append(
                TranscriptEntry(
                    Speaker.TRAINEE, event["text"], event["ts"], None, script_cursor=event["cursor"]
                )
            )
            pending_token = event.get("token")
        elif etype == "bot_turn":
            state.transcript.append(
                TranscriptEntry(Speaker.BOT, event["text"], event["ts"], TurnTag(event["tag"]))
            )
            state.cursor = event["cursor_after"]
            state.miss_count = event["miss_count_after"]
            state.phase = SessionPhase(event["phase_after"])
            if pending_token:
                responses[pending_token] = {
                    "bot_utterance": event["text"],
                    "path": event["path"],
                    "completed": state.phase is SessionPhase.COMPLETED,
                }
            pending_token = None
        elif etype == "hint":
            state.transcript.append(
                TranscriptEntry(Speaker.BOT, event["text"], event["ts"], TurnTag.HINT)
            )
        elif etype == "session_close":
            state.phase = SessionPhase(event["phase"])
            record = SessionRecord(
                session_id=state.session_id,
                scene_id=state.scene_id,
                script=state.script,
                transcript=tuple(state.transcript),
                phase=state.phase,
                reason=CloseReason(event["reason"]),
                completed=event["completed"],
                created_at=state.created_at,
                wait_started_at=state.wait_started_at,
                assigned_at=state.assigned_at,
                closed_at=event["ts"],
            )
        else:
            raise ContractViolation(f"unknown event type {etype!r}")
    return FoldedSession(state=state, record=record, responses_by_token=responses)


def load_session_records(log: SessionEventLog, closed_only: bool = True) -> list[SessionRecord]:
    """All session records in a log directory, skipping in-flight ones by default."""
    records = []
    for session_id in log.session_ids():
        folded = fold_events(log.read(session_id))
        if folded.record is not None:
            records.append(folded.record)
        elif not closed_only:
            pass  # in-flight sessions have no record yet
    return records
