from __future__ import annotations

import numpy as np
import pytest

from simtrainer.corpus import Dialogue, DialogueScript, Role, Turn
from simtrainer.respond import (
    FallbackResponder,
    FeatureExtractor,
    NGramGenerator,
    ResponseRanker,
    train_ngram,
)
from simtrainer.scorecard import FluencyCalibration, ScoreBundle, calibrate_fluency
from simtrainer.simcore import SimPolicy, SimulatorEngine
from simtrainer.textenc import HybridMatcher, SgnsConfig, build_vocab, train_sgns
from simtrainer.vindex import ContextPayload, VectorIndex, make_entries


def make_dialogue(did: str, texts: list[tuple[str, str]], scene: str | None = None) -> Dialogue:
    turns = tuple(
        Turn(role=Role(role), text=text, index=i) for i, (role, text) in enumerate(texts)
    )
    return Dialogue(id=did, turns=turns, scene=scene)


def make_script(sid: str, scene: str, texts: list[tuple[str, str]]) -> DialogueScript:
    turns = tuple(
        Turn(role=Role(role), text=text, index=i) for i, (role, text) in enumerate(texts)
    )
    return DialogueScript(id=sid, scene=scene, turns=turns)


# Small synthetic service corpus: three intent families with wording variation,
# alternating customer/agent turns.
_SCENE_TEMPLATES = {
    "refund": [
        ("customer", "i want a refund for my {item} order"),
        ("agent", "i am sorry to hear that let me check your {item} order"),
        ("customer", "the {item} arrived broken and late"),
        ("agent", "i can offer a full refund for the {item} right away"),
        ("customer", "thank you please send the refund"),
        ("agent", "the refund is on its way is there anything else"),
    ],
    "shipping": [
        ("customer", "where is my {item} package it has not arrived"),
        ("agent", "let me look up the tracking for your {item} package"),
        ("customer", "it was supposed to arrive last {day}"),
        ("agent", "the courier shows a delay your {item} arrives next {day}"),
        ("customer", "fine i will wait until next {day}"),
        ("agent", "thanks for your patience is there anything else"),
    ],
    "password": [
        ("customer", "i cannot log into my account since {day}"),
        ("agent", "i can help you reset the password of your account"),
        ("customer", "i tried the reset link but it failed"),
        ("agent", "i have sent a fresh reset link to your email"),
        ("customer", "got it the new link works"),
        ("agent", "great the account is recovered is there anything else"),
    ],
}
_ITEMS = ["phone", "laptop", "charger", "monitor", "tablet"]
_DAYS = ["monday", "tuesday", "friday", "sunday"]


def synthetic_corpus(per_scene: int = 5, seed: int = 7) -> list[Dialogue]:
    rng = np.random.default_rng(seed)
    dialogues = []
    for scene, template in _SCENE_TEMPLATES.items():
        for i in range(per_scene):
            item = _ITEMS[int(rng.integers(len(_ITEMS)))]
            day = _DAYS[int(rng.integers(len(_DAYS)))]
            texts = [
                (role, text.format(item=item, day=day)) for role, text in template
            ]
            dialogues.append(make_dialogue(f"{scene}-{i}", texts, scene=scene))
    return dialogues


@pytest.fixture(scope="session")
def corpus() -> list[Dialogue]:
    return synthetic_corpus()


@pytest.fixture(scope="session")
def trained(corpus):
    """Small trained stack shared across tests: embeddings, LMs, ranker, index."""
    config = SgnsConfig(dim=16, window=3, negatives=3, epochs=2, seed=1)
    vocab = build_vocab(corpus)
    emb = train_sgns(corpus, config, vocab)
    customer_texts = [t.text for d in corpus for t in d.turns if t.role is Role.CUSTOMER]
    agent_texts = [t.text for d in corpus for t in d.turns if t.role is Role.AGENT]
    generator_lm = train_ngram(customer_texts, order=3)
    fluency_lm = train_ngram(agent_texts, order=3)
    calibration = calibrate_fluency(fluency_lm, agent_texts)

    extractor = FeatureExtractor(emb, vocab, generator_lm)
    ranker = ResponseRanker(epochs=50)
    rng = np.random.default_rng(3)
    features = rng.normal(size=(40, 4))
    labels = (features[:, 0] + 0.5 * features[:, 1] > 0).astype(float)
    ranker.fit(features, labels)

    from simtrainer.textenc import embed_text

    vectors, payloads = [], []
    for d in corpus:
        for j, turn in enumerate(d.turns):
            if j == 0 or turn.role is not Role.CUSTOMER:
                continue
            ctx = " ".join(t.text for t in d.turns[max(0, j - 4) : j])
            vectors.append(embed_text(ctx, emb, vocab).vector)
            payloads.append(ContextPayload(d.id, j, turn.text))
    index = VectorIndex.build(make_entries(vectors, payloads))

    return {
        "vocab": vocab,
        "emb": emb,
        "generator_lm": generator_lm,
        "fluency_lm": fluency_lm,
        "calibration": calibration,
        "ranker": ranker,
        "extractor": extractor,
        "index": index,
        "matcher": HybridMatcher(emb, vocab),
    }


class TickClock:
    """Deterministic clock advancing by a fixed step per call."""

    def __init__(self, start: float = 1000.0, step: float = 1.0):
        self.now = start
        self.step = step

    def __call__(self) -> float:
        value = self.now
        self.now += self.step
        return value


def build_engine(trained, scripts, policy: SimPolicy | None = None, clock=None, event_sink=None):
    responder = FallbackResponder(
        embeddings=trained["emb"],
        vocab=trained["vocab"],
        generator=NGramGenerator(trained["generator_lm"]),
        ranker=trained["ranker"],
        extractor=trained["extractor"],
        index=trained["index"],
    )
    return SimulatorEngine(
        scripts,
        trained["matcher"],
        responder,
        policy or SimPolicy(seed=11),
        clock=clock or TickClock(),
        event_sink=event_sink,
    )


def make_score_bundle(trained, rules=None) -> ScoreBundle:
    return ScoreBundle(
        lm=trained["fluency_lm"],
        calibration=trained["calibration"],
        matcher=trained["matcher"],
        rules=rules or [],
    )


@pytest.fixture(scope="session")
def artifact_dir(tmp_path_factory, corpus, trained):
    """Every trained artifact written to disk, plus a ready service config."""
    from simtrainer.artifacts import ModelBundle, save_model_bundle
    from simtrainer.corpus import write_dialogues
    from simtrainer.intentcluster import script_from_dialogue
    from simtrainer.respond import save_ranker
    from simtrainer.service import ServiceConfig
    from simtrainer.textenc import save_embeddings

    root = tmp_path_factory.mktemp("artifacts")
    write_dialogues(corpus, root / "corpus.jsonl")
    scripts = [script_from_dialogue(d, d.scene) for d in corpus if d.id.endswith("-0")]
    write_dialogues([s for s in scripts if s is not None], root / "scripts.jsonl")
    save_embeddings(root / "embeddings.bin", trained["vocab"], trained["emb"])
    save_model_bundle(
        ModelBundle(trained["generator_lm"], trained["fluency_lm"], trained["calibration"]),
        root / "models.json",
    )
    save_ranker(trained["ranker"], root / "ranker.json")
    trained["index"].save(root / "index.bin")
    rules = [
        {
            "rule_id": "no-swearing",
            "kind": "forbidden_pattern",
            "pattern": r"\bdamn\b",
            "message": "keep the tone professional",
        }
    ]
    import json as _json

    (root / "rules.jsonl").write_text(
        "\n".join(_json.dumps(r) for r in rules) + "\n", encoding="utf-8"
    )

    def config(log_dir, **overrides) -> ServiceConfig:
        fields = dict(
            scripts_path=str(root / "scripts.jsonl"),
            embeddings_path=str(root / "embeddings.bin"),
            lm_path=str(root / "models.json"),
            ranker_path=str(root / "ranker.json"),
            index_path=str(root / "index.bin"),
            rules_path=str(root / "rules.jsonl"),
            session_log_dir=str(log_dir),
            seed=11,
        )
        fields.update(overrides)
        return ServiceConfig(**fields)

    return {"root": root, "make_config": config}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    seen = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid:
                name = nodeid.split("::")[-1]
                status = "PASS" if outcome == "passed" else "FAIL"
                seen[name] = status
    if seen:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, status in sorted(seen.items()):
            terminalreporter.write_line(f"{status}  {name}")
