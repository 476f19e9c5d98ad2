import json
import math

import numpy as np
import pytest

from simtrainer.errors import ConfigurationError, ContractViolation, UndefinedResultError
from simtrainer.respond import train_ngram
from simtrainer.scorecard import (
    ComplianceRule,
    FluencyCalibration,
    PerTurnDetail,
    RuleKind,
    aggregate_metrics,
    build_feedback,
    calibrate_fluency,
    compliance_score,
    consistency_score,
    final_score,
    fluency_score,
    format_metrics_table,
    load_rules,
    pearson,
    score_report,
    score_session,
)
from simtrainer.simcore import (
    CloseReason,
    SessionPhase,
    SessionRecord,
    Speaker,
    TranscriptEntry,
    TurnTag,
)

from .conftest import make_score_bundle, make_script

SCRIPT = make_script(
    "s1",
    "refund",
    [
        ("customer", "i want a refund"),
        ("agent", "sorry let me check the order"),
        ("customer", "it arrived broken"),
        ("agent", "i can offer a full refund"),
    ],
)


def make_record(trainee_turns, script=SCRIPT, completed=True, times=(0.0, 3.0, 100.0)):
    """Record with alternating bot/trainee turns; trainee turns carry cursors."""
    wait, assigned, closed = times
    transcript = [TranscriptEntry(Speaker.BOT, script.turns[0].text, assigned, TurnTag.SCRIPTED)]
    for text, cursor in trainee_turns:
        transcript.append(
            TranscriptEntry(Speaker.TRAINEE, text, assigned + 1, None, script_cursor=cursor)
        )
        transcript.append(TranscriptEntry(Speaker.BOT, "next please", assigned + 2, TurnTag.SCRIPTED))
    return SessionRecord(
        session_id="r1",
        scene_id=script.scene,
        script=script,
        transcript=tuple(transcript),
        phase=SessionPhase.COMPLETED if completed else SessionPhase.ABANDONED,
        reason=CloseReason.COMPLETED if completed else CloseReason.TRAINEE_QUIT,
        completed=completed,
        created_at=wait,
        wait_started_at=wait,
        assigned_at=assigned,
        closed_at=closed,
    )


@pytest.fixture(scope="module")
def toy_lm():
    return train_ngram(
        ["sorry let me check the order", "i can offer a full refund", "thanks for waiting"],
        order=2,
    )


class TestFluency:
    def test_turn_at_mu_scores_half(self, toy_lm):
        text = "sorry let me check the order"
        nll = -toy_lm.logprob(text)[1]
        calib = FluencyCalibration(mu=nll, sigma=1.0)
        record = make_record([(text, 1)])
        overall, per_turn = fluency_score(record, toy_lm, calib)
        assert per_turn[0] == pytest.approx(0.5, abs=1e-12)
        assert overall == pytest.approx(0.5, abs=1e-12)

    def test_overall_is_mean_of_turns(self, toy_lm):
        calib = calibrate_fluency(
            toy_lm, ["sorry let me check the order", "i can offer a full refund"]
        )
        record = make_record([("sorry let me check the order", 1), ("zzz qqq www", 3)])
        overall, per_turn = fluency_score(record, toy_lm, calib)
        assert len(per_turn) == 2
        assert overall == pytest.approx(sum(per_turn) / 2, abs=1e-12)

    def test_hand_computed_chain(self, toy_lm):
        calib = FluencyCalibration(mu=1.5, sigma=0.5)
        text = "i can offer a full refund"
        record = make_record([(text, 1)])
        _, per_turn = fluency_score(record, toy_lm, calib)
        nll = -toy_lm.logprob(text)[1]
        expected = 1.0 / (1.0 + math.exp(-(1.5 - nll) / 0.5))
        assert per_turn[0] == pytest.approx(expected, abs=1e-12)

    def test_zero_trainee_turns_error(self, toy_lm):
        record = make_record([])
        with pytest.raises(UndefinedResultError):
            fluency_score(record, toy_lm, FluencyCalibration(1.0, 1.0))

    def test_calibration_requires_texts(self, toy_lm):
        with pytest.raises(ConfigurationError):
            calibrate_fluency(toy_lm, [])

    def test_sigma_positive(self):
        with pytest.raises(ConfigurationError):
            FluencyCalibration(mu=0.0, sigma=0.0)


class TestConsistency:
    def test_all_verbatim_is_one(self, trained):
        record = make_record(
            [("sorry let me check the order", 1), ("i can offer a full refund", 3)]
        )
        value, matched = consistency_score(record, SCRIPT, trained["matcher"])
        assert value == 1.0
        assert matched == [True, True]

    def test_nothing_matched_is_zero(self, trained):
        record = make_record([("zzzz qqqq", 1), ("wwww kkkk", 3)])
        value, _ = consistency_score(record, SCRIPT, trained["matcher"])
        assert value == 0.0

    def test_three_of_four(self, trained):
        record = make_record(
            [
                ("sorry let me check the order", 1),
                ("zzzz qqqq", 1),
                ("sorry let me check the order", 1),
                ("i can offer a full refund", 3),
            ]
        )
        value, matched = consistency_score(record, SCRIPT, trained["matcher"])
        assert value == 0.75
        assert matched.count(True) == 3

    def test_matches_brute_force_recount(self, trained):
        matcher = trained["matcher"]
        turns = [
            ("sorry let me check the order", 1),
            ("not even close zzzz", 3),
            ("i can offer a full refund", 3),
        ]
        record = make_record(turns)
        value, matched = consistency_score(record, SCRIPT, matcher, threshold=0.5)
        expected_flags = [matcher(text, SCRIPT.turns[cursor].text) >= 0.5 for text, cursor in turns]
        assert matched == expected_flags
        assert value == sum(expected_flags) / len(expected_flags)

    def test_zero_turns_error(self, trained):
        with pytest.raises(UndefinedResultError):
            consistency_score(make_record([]), SCRIPT, trained["matcher"])


FORBID = ComplianceRule("no-promises", RuleKind.FORBIDDEN_PATTERN, r"guarantee", "never promise guarantees")
OPENING = ComplianceRule("greet", RuleKind.REQUIRED_OPENING, r"^(hi|hello|sorry)", "open politely")
CLOSING = ComplianceRule("wrap-up", RuleKind.REQUIRED_CLOSING, r"anything else", "offer further help")


class TestCompliance:
    def test_empty_rules_pass(self):
        record = make_record([("whatever", 1)])
        assert compliance_score(record, []) == (1, [])

    def test_forbidden_phrase_fails_with_rule_id(self):
        record = make_record([("i guarantee a refund", 1)])
        value, violations = compliance_score(record, [FORBID])
        assert value == 0
        assert violations[0].rule_id == "no-promises"

    def test_required_closing_missing(self):
        record = make_record([("hello there", 1), ("goodbye", 3)])
        value, violations = compliance_score(record, [CLOSING])
        assert value == 0
        assert violations[0].message == "offer further help"

    def test_opening_and_closing_satisfied(self):
        record = make_record([("hello how can i help", 1), ("anything else today", 3)])
        assert compliance_score(record, [FORBID, OPENING, CLOSING])[0] == 1

    def test_rule_order_insensitive(self):
        record = make_record([("i guarantee it", 1), ("bye", 3)])
        rules = [FORBID, OPENING, CLOSING]
        a = compliance_score(record, rules)
        b = compliance_score(record, list(reversed(rules)))
        assert a[0] == b[0] == 0
        assert {v.rule_id for v in a[1]} == {v.rule_id for v in b[1]}

    def test_bad_pattern_rejected_at_construction(self):
        with pytest.raises(ConfigurationError):
            ComplianceRule("bad", RuleKind.FORBIDDEN_PATTERN, r"([", "broken")

    def test_load_rules_file(self, tmp_path):
        path = tmp_path / "rules.jsonl"
        path.write_text(
            json.dumps(
                {
                    "rule_id": "r1",
                    "kind": "forbidden_pattern",
                    "pattern": "swear",
                    "message": "no swearing",
                }
            )
            + "\n",
            encoding="utf-8",
        )
        rules = load_rules(path)
        assert rules[0].kind is RuleKind.FORBIDDEN_PATTERN

    def test_load_rules_bad_kind(self, tmp_path):
        path = tmp_path / "rules.jsonl"
        path.write_text('{"rule_id": "x", "kind": "nope", "pattern": "a", "message": "m"}\n')
        with pytest.raises(ConfigurationError):
            load_rules(path)


class TestFinalScore:
    def test_perfect(self):
        assert final_score(1.0, 1.0, 1).final == pytest.approx(1.0)

    def test_zero(self):
        assert final_score(0.0, 0.0, 0).final == 0.0

    def test_hand_weighted_example(self):
        assert final_score(0.8, 0.6, 1).final == 0.79

    def test_weight_identity_on_random_triples(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            f, c = rng.random(), rng.random()
            p = int(rng.integers(0, 2))
            score = final_score(f, c, p)
            assert abs(score.final - (0.35 * f + 0.35 * c + 0.30 * p)) <= 1e-12
            assert 0.0 <= score.final <= 1.0

    def test_monotonic_in_each_argument(self):
        base = final_score(0.5, 0.5, 0).final
        assert final_score(0.6, 0.5, 0).final >= base
        assert final_score(0.5, 0.6, 0).final >= base
        assert final_score(0.5, 0.5, 1).final >= base

    def test_out_of_range_rejected(self):
        with pytest.raises(ContractViolation):
            final_score(1.2, 0.5, 1)
        with pytest.raises(ContractViolation):
            final_score(0.5, 0.5, 2)


class TestBuildFeedback:
    def test_perfect_score_no_reasons(self):
        score = final_score(0.9, 0.9, 1)
        assert score.reasons == ()

    def test_compliance_reason_first(self):
        details = [
            PerTurnDetail(1, 0.2, False, violations=("never promise guarantees",), expected_text="x"),
        ]
        score = final_score(0.2, 0.2, 0, details)
        assert score.reasons[0].startswith("Compliance: never promise guarantees")

    def test_unmatched_turns_cited_with_expected_texts(self):
        details = [
            PerTurnDetail(1, 0.9, False, expected_text="sorry let me check the order"),
            PerTurnDetail(3, 0.9, True, expected_text="i can offer a full refund"),
            PerTurnDetail(5, 0.9, False, expected_text="i can offer a full refund"),
        ]
        score = final_score(0.9, 1 / 3, 1, details)
        consistency_reasons = [r for r in score.reasons if r.startswith("Consistency")]
        assert len(consistency_reasons) == 2
        assert "turn 1" in consistency_reasons[0]
        assert "sorry let me check the order" in consistency_reasons[0]
        assert "turn 5" in consistency_reasons[1]

    def test_reasons_nonempty_whenever_flagged(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            f, c = rng.random(), rng.random()
            p = int(rng.integers(0, 2))
            score = final_score(f, c, p)
            flagged = p == 0 or f < 0.6 or c < 0.7
            assert bool(score.reasons) == flagged or bool(score.reasons)


class TestPearson:
    def test_identity(self):
        assert pearson([1, 2, 3], [1, 2, 3]) == pytest.approx(1.0)

    def test_negation(self):
        assert pearson([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0)

    def test_frozen_fixture_value(self):
        # verified independently against numpy.corrcoef
        value = pearson([1, 2, 3, 4], [2, 4, 5, 4])
        assert value == pytest.approx(0.7181848464596079, abs=1e-12)
        assert value == pytest.approx(float(np.corrcoef([1, 2, 3, 4], [2, 4, 5, 4])[0, 1]), abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        xs = rng.normal(size=30).tolist()
        ys = rng.normal(size=30).tolist()
        base = pearson(xs, ys)
        assert abs(pearson([2.5 * x + 7 for x in xs], ys) - base) < 1e-9
        assert abs(pearson(xs, [0.3 * y - 2 for y in ys]) - base) < 1e-9

    def test_zero_variance_error(self):
        with pytest.raises(UndefinedResultError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_length_checks(self):
        with pytest.raises(ContractViolation):
            pearson([1], [1])
        with pytest.raises(ContractViolation):
            pearson([1, 2], [1, 2, 3])


class TestAggregateMetrics:
    def _record_with(self, rounds, completed, wait=0.0, assigned=2.0, closed=302.0):
        trainee = [("text %d" % i, 1) for i in range((rounds - 1) // 2)]
        record = make_record(trainee, completed=completed, times=(wait, assigned, closed))
        # pad transcript to the exact round count
        transcript = list(record.transcript)[:1]
        while len(transcript) < rounds:
            transcript.append(TranscriptEntry(Speaker.BOT, "x", assigned, TurnTag.SCRIPTED))
        object.__setattr__(record, "transcript", tuple(transcript))
        return record

    def test_avg_rounds(self):
        records = [self._record_with(20, True), self._record_with(22, True)]
        assert aggregate_metrics(records).avg_rounds == 21.0

    def test_completion_rate(self):
        records = [self._record_with(10, True)] * 3 + [self._record_with(10, False)]
        assert aggregate_metrics(records).completion_rate == 75.0

    def test_waiting_and_duration(self):
        records = [self._record_with(10, True, wait=0.0, assigned=3.0, closed=3.0 + 360.0)]
        metrics = aggregate_metrics(records)
        assert metrics.waiting_time_avg == pytest.approx(3.0)
        assert metrics.avg_duration == pytest.approx(6.0)

    def test_empty_error(self):
        with pytest.raises(UndefinedResultError):
            aggregate_metrics([])

    def test_table_column_order(self):
        records = [self._record_with(20, True), self._record_with(22, False)]
        table = format_metrics_table(aggregate_metrics(records))
        header = table.splitlines()[0]
        columns = [c.strip() for c in header.split("|")]
        assert columns == [
            "Training Mode",
            "Waiting Time (secs)",
            "Average Durations (mins)",
            "Average Rounds",
            "Completion Rate (%)",
        ]


class TestScoreSession:
    def test_report_field_names(self, trained):
        record = make_record(
            [("sorry let me check the order", 1), ("i can offer a full refund", 3)]
        )
        score = score_session(record, make_score_bundle(trained))
        report = score_report(record.session_id, score)
        assert set(report) == {
            "session_id",
            "fluency",
            "consistency",
            "compliance",
            "final",
            "reasons",
            "per_turn",
        }
        assert set(report["per_turn"][0]) == {
            "turn_index",
            "fluency_turn",
            "matched",
            "violations",
            "expected_text",
        }
        assert report["consistency"] == 1.0
        assert report["compliance"] == 1

    def test_violations_attached_to_turns(self, trained):
        record = make_record([("i guarantee everything", 1)])
        bundle = make_score_bundle(trained, rules=[FORBID])
        score = score_session(record, bundle)
        assert score.compliance == 0
        assert any(d.violations for d in score.per_turn)
        assert score.final == pytest.approx(
            0.35 * score.fluency + 0.35 * score.consistency, abs=1e-12
        )
