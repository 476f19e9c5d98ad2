"""Automated session evaluation and training-program metrics.

A finished session is scored on three dimensions:

* fluency — language quality of each trainee turn under a calibrated
  language-model proxy, averaged over turns, each turn mapped into [0, 1];
* consistency — the share of trainee turns whose similarity to the
  then-expected script utterance reaches the 0.5 threshold;
* compliance — a binary rule inspection (forbidden phrases, required
  opening, required closing).

The final score is the fixed 0.35/0.35/0.30 blend, and any weak dimension
produces concrete feedback reasons citing the offending turns.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .corpus import DialogueScript
from .errors import ConfigurationError, ContractViolation, UndefinedResultError
from .respond import NGramLM
from .simcore import SessionRecord, Speaker
from .textenc import Matcher

FINAL_WEIGHTS = (0.35, 0.35, 0.30)
FLUENCY_FLAG_THRESHOLD = 0.6
CONSISTENCY_FLAG_THRESHOLD = 0.7
DEFAULT_CONSISTENCY_THRESHOLD = 0.5


class RuleKind(str, Enum):
    FORBIDDEN_PATTERN = "forbidden_pattern"
    REQUIRED_OPENING = "required_opening"
    REQUIRED_CLOSING = "required_closing"


@dataclass(frozen=True)
class ComplianceRule:
    rule_id: str
    kind: RuleKind
    pattern: str
    message: str

    def __post_init__(self) -> None:
        if not self.message:
            raise ConfigurationError(f"rule {self.rule_id}: message must be non-empty")
        try:
            re.compile(self.pattern)
        except re.error as exc:
            raise ConfigurationError(f"rule {self.rule_id}: bad pattern: {exc}") from exc


@dataclass(frozen=True)
class Violation:
    rule_id: str
    message: str
    turn_index: int | None = None


@dataclass(frozen=True)
class PerTurnDetail:
    turn_index: int
    fluency_turn: float
    matched: bool
    violations: tuple[str, ...] = ()
    expected_text: str | None = None


@dataclass(frozen=True)
class SessionScore:
    fluency: float
    consistency: float
    compliance: int
    final: float
    per_turn: tuple[PerTurnDetail, ...] = ()
    reasons: tuple[str, ...] = ()


@dataclass(frozen=True)
class FluencyCalibration:
    """Center and scale of per-token negative log-likelihood on real agent turns."""

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise ConfigurationError("calibration sigma must be > 0")


@dataclass(frozen=True)
class TrainingMetrics:
    waiting_time_avg: float  # seconds
    avg_duration: float  # minutes
    avg_rounds: float
    completion_rate: float  # percent
    num_sessions: int

    def as_report(self) -> dict:
        return {
            "waiting_time_avg": self.waiting_time_avg,
            "avg_duration": self.avg_duration,
            "avg_rounds": self.avg_rounds,
            "completion_rate": self.completion_rate,
            "num_sessions": self.num_sessions,
        }


def load_rules(path: str | Path) -> list[ComplianceRule]:
    """Rules from a line-delimited file {rule_id, kind, pattern, message}.

    Pattern problems surface here, at load time, never during scoring.
    """
    rules = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            rules.append(
                ComplianceRule(
                    rule_id=obj["rule_id"],
                    kind=RuleKind(obj["kind"]),
                    pattern=obj["pattern"],
                    message=obj["message"],
                )
            )
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"{path}:{lineno}: bad rule: {exc}") from exc
    return rules


def _logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def calibrate_fluency(lm: NGramLM, texts: Sequence[str]) -> FluencyCalibration:
    """Fit the calibration from a corpus of real agent turns.

    A degenerate corpus gets a tiny floor sigma instead of failing, so the
    pipeline still runs on toy fixtures.
    """
    if not texts:
        raise ConfigurationError("calibration needs a non-empty corpus")
    nlls = [-lm.logprob(t)[1] for t in texts]
    mu = sum(nlls) / len(nlls)
    var = sum((x - mu) ** 2 for x in nlls) / len(nlls)
    return FluencyCalibration(mu=mu, sigma=max(math.sqrt(var), 1e-6))


def _trainee_turns(record: SessionRecord) -> list[tuple[int, str, int | None]]:
    return [
        (i, entry.text, entry.script_cursor)
        for i, entry in enumerate(record.transcript)
        if entry.speaker is Speaker.TRAINEE
    ]


def fluency_score(
    record: SessionRecord, lm: NGramLM, calib: FluencyCalibration
) -> tuple[float, list[float]]:
    """Mean per-turn fluency; each turn is logistic((mu - nll) / sigma)."""
    turns = _trainee_turns(record)
    if not turns:
        raise UndefinedResultError("fluency is undefined for a session with no trainee turns")
    per_turn = []
    for _, text, _ in turns:
        nll = -lm.logprob(text)[1]
        per_turn.append(_logistic((calib.mu - nll) / calib.sigma))
    return sum(per_turn) / len(per_turn), per_turn


def consistency_score(
    record: SessionRecord,
    script: DialogueScript,
    matcher: Matcher,
    threshold: float = DEFAULT_CONSISTENCY_THRESHOLD,
) -> tuple[float, list[bool]]:
    """Share of trainee turns matching the script utterance expected at the time.

    The expected utterance for each turn comes from the cursor recorded in
    the event log, so repeated attempts at one script step each count.
    """
    turns = _trainee_turns(record)
    if not turns:
        raise UndefinedResultError("consistency is undefined for a session with no trainee turns")
    matched = []
    for _, text, cursor in turns:
        if cursor is None or cursor >= len(script.turns):
            raise ContractViolation("trainee turn lacks its script alignment")
        matched.append(matcher(text, script.turns[cursor].text) >= threshold)
    return sum(matched) / len(matched), matched


def compliance_score(
    record: SessionRecord, rules: Sequence[ComplianceRule]
) -> tuple[int, list[Violation]]:
    """Binary rule inspection over the trainee's turns; 1 means fully compliant.

    Forbidden patterns are checked on every trainee turn, the required
    opening on the first, the required closing on the last. Matching is
    case-insensitive; order of the rule list does not matter.
    """
    turns = _trainee_turns(record)
    violations: list[Violation] = []
    for rule in rules:
        regex = re.compile(rule.pattern, re.IGNORECASE)
        if rule.kind is RuleKind.FORBIDDEN_PATTERN:
            for idx, text, _ in turns:
                if regex.search(text):
                    violations.append(Violation(rule.rule_id, rule.message, idx))
        elif rule.kind is RuleKind.REQUIRED_OPENING:
            if not turns or not regex.search(turns[0][1]):
                violations.append(Violation(rule.rule_id, rule.message, turns[0][0] if turns else None))
        elif rule.kind is RuleKind.REQUIRED_CLOSING:
            if not turns or not regex.search(turns[-1][1]):
                violations.append(Violation(rule.rule_id, rule.message, turns[-1][0] if turns else None))
    return (0 if violations else 1), violations


def final_score(
    fluency: float,
    consistency: float,
    compliance: int,
    per_turn: Sequence[PerTurnDetail] = (),
) -> SessionScore:
    """Blend the three dimensions: 0.35 fluency + 0.35 consistency + 0.30 compliance."""
    if not (0.0 <= fluency <= 1.0 and 0.0 <= consistency <= 1.0):
        raise ContractViolation("fluency and consistency must lie in [0, 1]")
    if compliance not in (0, 1):
        raise ContractViolation("compliance must be 0 or 1")
    wf, wc, wp = FINAL_WEIGHTS
    score = SessionScore(
        fluency=fluency,
        consistency=consistency,
        compliance=compliance,
        final=wf * fluency + wc * consistency + wp * compliance,
        per_turn=tuple(per_turn),
    )
    return replace(score, reasons=tuple(build_feedback(score)))


def build_feedback(score: SessionScore) -> list[str]:
    """Reasons for every weak dimension: compliance, then consistency, then fluency."""
    reasons: list[str] = []
    if score.compliance == 0:
        seen = set()
        for detail in score.per_turn:
            for message in detail.violations:
                key = (detail.turn_index, message)
                if key not in seen:
                    seen.add(key)
                    reasons.append(f"Compliance: {message} (turn {detail.turn_index})")
        if not reasons:
            reasons.append("Compliance: a service rule was violated")
    if score.consistency < CONSISTENCY_FLAG_THRESHOLD:
        unmatched = [d for d in score.per_turn if not d.matched]
        for detail in unmatched:
            expected = f" — expected something like: {detail.expected_text}" if detail.expected_text else ""
            reasons.append(
                f"Consistency: turn {detail.turn_index} strayed from the service procedure{expected}"
            )
        if not unmatched:
            reasons.append(f"Consistency {score.consistency:.2f} is below {CONSISTENCY_FLAG_THRESHOLD}")
    if score.fluency < FLUENCY_FLAG_THRESHOLD:
        worst = sorted(score.per_turn, key=lambda d: d.fluency_turn)[:3]
        cited = ", ".join(str(d.turn_index) for d in worst) or "n/a"
        reasons.append(
            f"Fluency {score.fluency:.2f} is below {FLUENCY_FLAG_THRESHOLD}; weakest turns: {cited}"
        )
    return reasons


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise ContractViolation("pearson requires equal-length sequences")
    if len(xs) < 2:
        raise ContractViolation("pearson requires at least 2 points")
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedResultError("pearson is undefined when either side has zero variance")
    return sxy / math.sqrt(sxx * syy)


def aggregate_metrics(records: Sequence[SessionRecord]) -> TrainingMetrics:
    """Program-level metrics over closed sessions."""
    if not records:
        raise UndefinedResultError("metrics are undefined for an empty session list")
    n = len(records)
    waiting = sum(r.assigned_at - r.wait_started_at for r in records) / n
    duration = sum(r.closed_at - r.assigned_at for r in records) / n / 60.0
    rounds = sum(len(r.transcript) for r in records) / n
    completion = 100.0 * sum(1 for r in records if r.completed) / n
    return TrainingMetrics(
        waiting_time_avg=waiting,
        avg_duration=duration,
        avg_rounds=rounds,
        completion_rate=completion,
        num_sessions=n,
    )


METRICS_COLUMNS = [
    ("waiting_time_avg", "Waiting Time (secs)"),
    ("avg_duration", "Average Durations (mins)"),
    ("avg_rounds", "Average Rounds"),
    ("completion_rate", "Completion Rate (%)"),
]


def format_metrics_table(metrics: TrainingMetrics, mode: str = "human-computer") -> str:
    """Fixed-order metrics table: waiting, duration, rounds, completion."""
    headers = ["Training Mode"] + [label for _, label in METRICS_COLUMNS]
    values = [mode] + [f"{getattr(metrics, key):.1f}" for key, _ in METRICS_COLUMNS]
    widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
    line = " | ".join(h.ljust(w) for h, w in zip(headers, widths))
    row = " | ".join(v.ljust(w) for v, w in zip(values, widths))
    return f"{line}\n{'-' * len(line)}\n{row}"


@dataclass
class ScoreBundle:
    """Everything needed to score a session record."""

    lm: NGramLM
    calibration: FluencyCalibration
    matcher: Matcher
    rules: list[ComplianceRule] = field(default_factory=list)
    consistency_threshold: float = DEFAULT_CONSISTENCY_THRESHOLD


def score_session(record: SessionRecord, bundle: ScoreBundle) -> SessionScore:
    """Run all three dimensions on one session and assemble the blended score."""
    fluency, fluency_turns = fluency_score(record, bundle.lm, bundle.calibration)
    consistency, matched = consistency_score(
        record, record.script, bundle.matcher, bundle.consistency_threshold
    )
    compliance, violations = compliance_score(record, bundle.rules)
    turns = _trainee_turns(record)
    by_turn: dict[int, list[str]] = {}
    for violation in violations:
        if violation.turn_index is not None:
            by_turn.setdefault(violation.turn_index, []).append(violation.message)
    details = [
        PerTurnDetail(
            turn_index=idx,
            fluency_turn=fluency_turns[i],
            matched=matched[i],
            violations=tuple(by_turn.get(idx, ())),
            expected_text=record.script.turns[cursor].text if cursor is not None else None,
        )
        for i, (idx, _, cursor) in enumerate(turns)
    ]
    return final_score(fluency, consistency, compliance, details)


def score_report(session_id: str, score: SessionScore) -> dict:
    """The wire/file form of a score; field names are part of the UI contract."""
    return {
        "session_id": session_id,
        "fluency": score.fluency,
        "consistency": score.consistency,
        "compliance": score.compliance,
        "final": score.final,
        "reasons": list(score.reasons),
        "per_turn": [
            {
                "turn_index": d.turn_index,
                "fluency_turn": d.fluency_turn,
                "matched": d.matched,
                "violations": list(d.violations),
                "expected_text": d.expected_text,
            }
            for d in score.per_turn
        ],
    }
