"""Candidate customer utterances: retrieval, n-gram generation, and ranking.

The bot plays the customer, so candidates are customer-side utterances.
Retrieval pulls the recorded follow-ups of the most similar stored contexts;
generation samples from a backoff n-gram language model; a logistic ranker
scores how reasonable each candidate is for the current context and the
best one wins. Both the generator and the ranker are intentionally small,
deterministic stand-ins behind pluggable contracts, so a heavier backend can
replace either without touching the orchestrator.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import ConfigurationError, ContractViolation
from .textenc import EmbeddingMatrix, Vocabulary, cosine, embed_text, tokenize
from .vindex import VectorIndex

BOS = "<s>"
EOS = "</s>"


class CandidateSource(str, Enum):
    RETRIEVAL = "retrieval"
    GENERATION = "generation"


@dataclass(frozen=True)
class CandidateResponse:
    text: str
    source: CandidateSource
    ranker_score: float | None = None


class NGramLM(BaseEstimator):
    """Backoff n-gram language model with absolute discounting.

    Probabilities interpolate down order by order and bottom out at a
    uniform floor over the closed vocabulary (plus the end marker), so no
    query ever scores -inf. The distribution over the vocabulary sums to 1
    for any history.
    """

    def __init__(self, order: int = 3, discount: float = 0.75):
        self.order = order
        self.discount = discount

    def fit(self, texts: Iterable[str], y=None) -> "NGramLM":
        if self.order < 1:
            raise ConfigurationError("order must be >= 1")
        if not 0.0 < self.discount < 1.0:
            raise ConfigurationError("discount must lie in (0, 1)")
        counts: list[Counter] = [Counter() for _ in range(self.order + 1)]
        context_totals: list[Counter] = [Counter() for _ in range(self.order + 1)]
        continuations: list[Counter] = [Counter() for _ in range(self.order + 1)]
        support: set[str] = set()
        n_sentences = 0
        for text in texts:
            tokens = tokenize(text)
            if not tokens:
                continue
            n_sentences += 1
            support.update(tokens)
            padded = [BOS] * (self.order - 1) + tokens + [EOS]
            for k in range(1, self.order + 1):
                for i in range(len(padded) - k + 1):
                    gram = tuple(padded[i : i + k])
                    if gram[-1] == BOS:
                        continue  # the start marker is context only, never predicted
                    if counts[k][gram] == 0:
                        continuations[k][gram[:-1]] += 1
                    counts[k][gram] += 1
                    context_totals[k][gram[:-1]] += 1
        if n_sentences == 0:
            raise ConfigurationError("cannot fit a language model on an empty corpus")
        self.counts_ = counts
        self.context_totals_ = context_totals
        self.continuations_ = continuations
        self.support_ = sorted(support) + [EOS]
        self.support_index_ = {tok: i for i, tok in enumerate(self.support_)}
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "support_"):
            raise ConfigurationError("NGramLM is not fitted")

    def prob(self, word: str, history: Sequence[str]) -> float:
        """P(word | history) via interpolated absolute discounting."""
        self._check_fitted()
        history = tuple(history)[-(self.order - 1) :] if self.order > 1 else ()
        return self._prob_order(word, history, len(history) + 1)

    def _prob_order(self, word: str, history: tuple[str, ...], k: int) -> float:
        if k <= 0:
            return 1.0 / len(self.support_)
        total = self.context_totals_[k][history]
        if total == 0:
            return self._prob_order(word, history[1:], k - 1)
        count = self.counts_[k][history + (word,)]
        distinct = self.continuations_[k][history]
        backoff_weight = self.discount * distinct / total
        lower = self._prob_order(word, history[1:], k - 1)
        return max(count - self.discount, 0.0) / total + backoff_weight * lower

    def distribution(self, history: Sequence[str]) -> np.ndarray:
        """The full next-token distribution over the support, in support order."""
        self._check_fitted()
        return np.array([self.prob(tok, history) for tok in self.support_])

    def logprob(self, text: str) -> tuple[float, float]:
        """(total log-probability, per-token average), both <= 0 and finite.

        The end marker counts as one scored position, so empty text still
        has a defined score.
        """
        self._check_fitted()
        tokens = tokenize(text)
        padded = [BOS] * (self.order - 1) + tokens + [EOS]
        total = 0.0
        scored = len(tokens) + 1
        for i in range(self.order - 1, len(padded)):
            history = tuple(padded[max(0, i - self.order + 1) : i])
            total += math.log(self._prob_order(padded[i], history, len(history) + 1))
        return total, total / scored

    def generate(
        self,
        context: str,
        rng: np.random.Generator,
        temperature: float = 0.8,
        max_tokens: int = 30,
    ) -> str:
        """Sample one continuation conditioned on the context's trailing tokens."""
        self._check_fitted()
        history = tokenize(context)[-(self.order - 1) :] if self.order > 1 else []
        out: list[str] = []
        support = self.support_
        for _ in range(max_tokens):
            probs = self.distribution(history)
            if temperature < 1e-6:
                idx = int(np.argmax(probs))
            else:
                weights = probs ** (1.0 / temperature)
                weights /= weights.sum()
                idx = int(np.searchsorted(np.cumsum(weights), rng.random()))
                idx = min(idx, len(support) - 1)
            token = support[idx]
            if token == EOS:
                break
            out.append(token)
            history = (history + [token])[-(self.order - 1) :] if self.order > 1 else []
        return " ".join(out)


def train_ngram(texts: Iterable[str], order: int = 3, discount: float = 0.75) -> NGramLM:
    return NGramLM(order=order, discount=discount).fit(texts)


def lm_logprob(lm: NGramLM, text: str) -> tuple[float, float]:
    return lm.logprob(text)


def lm_to_payload(lm: NGramLM) -> dict:
    lm._check_fitted()
    return {
        "order": lm.order,
        "discount": lm.discount,
        "support": lm.support_,
        "counts": [
            {" ".join(gram): n for gram, n in counter.items()} for counter in lm.counts_
        ],
    }


def lm_from_payload(payload: dict) -> NGramLM:
    lm = NGramLM(order=payload["order"], discount=payload["discount"])
    counts = [Counter() for _ in range(lm.order + 1)]
    context_totals = [Counter() for _ in range(lm.order + 1)]
    continuations = [Counter() for _ in range(lm.order + 1)]
    for k, table in enumerate(payload["counts"]):
        for key, n in table.items():
            gram = tuple(key.split(" "))
            counts[k][gram] = n
            context_totals[k][gram[:-1]] += n
            continuations[k][gram[:-1]] += 1
    lm.counts_ = counts
    lm.context_totals_ = context_totals
    lm.continuations_ = continuations
    lm.support_ = payload["support"]
    lm.support_index_ = {tok: i for i, tok in enumerate(lm.support_)}
    return lm


def save_lm(lm: NGramLM, path: str | Path) -> None:
    Path(path).write_text(json.dumps(lm_to_payload(lm), ensure_ascii=False), encoding="utf-8")


def load_lm(path: str | Path) -> NGramLM:
    return lm_from_payload(json.loads(Path(path).read_text(encoding="utf-8")))


class CandidateGenerator(Protocol):
    """Anything that returns n non-empty texts for a dialogue context.

    ``context_turns`` is the recent transcript, oldest first. Implementations
    must be deterministic for a given seed.
    """

    def generate_candidates(
        self, context_turns: Sequence[str], n: int, seed: int, scene: str | None = None
    ) -> list[str]: ...


@dataclass
class NGramGenerator:
    """Default generation backend sampling from the n-gram model."""

    lm: NGramLM
    temperature: float = 0.8
    max_tokens: int = 30

    def generate_candidates(
        self, context_turns: Sequence[str], n: int, seed: int, scene: str | None = None
    ) -> list[str]:
        if n < 1:
            raise ContractViolation("n must be >= 1")
        context = " ".join(context_turns)
        rng = np.random.default_rng(seed)
        seen: set[str] = set()
        out: list[str] = []
        for _ in range(n):
            text = ""
            for _attempt in range(5):
                text = self.lm.generate(context, rng, self.temperature, self.max_tokens)
                if text and text not in seen:
                    break
            if not text:
                # degenerate model: fall back to its single most likely token
                probs = self.lm.distribution([])
                order = np.argsort(-probs)
                text = next(
                    self.lm.support_[i] for i in order if self.lm.support_[i] != EOS
                )
            seen.add(text)
            out.append(text)
        return out


def generate_candidates(lm: NGramLM, context: str, n: int = 3, seed: int = 0) -> list[str]:
    return NGramGenerator(lm).generate_candidates([context], n, seed)


def retrieve_candidates(
    index: VectorIndex, context_vector: np.ndarray, k: int = 3
) -> list[CandidateResponse]:
    """The recorded follow-up utterances of the top-k similar contexts.

    An empty index yields an empty list; the orchestrator then falls back to
    generation only.
    """
    if len(index) == 0:
        return []
    hits = index.search(context_vector, k)
    return [
        CandidateResponse(hit.entry.payload.next_customer_utterance, CandidateSource.RETRIEVAL)
        for hit in hits
    ]


def logistic_loss_and_grad(
    weights: np.ndarray, features: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of a logistic model and its analytic gradient.

    ``weights`` includes the bias as its last component; ``features`` must
    carry a matching all-ones column. Shared by training and the
    finite-difference tests.
    """
    scores = features @ weights
    # log(1 + exp(-z)) for y=1 and log(1 + exp(z)) for y=0, stably
    losses = np.logaddexp(0.0, np.where(labels == 1, -scores, scores))
    probs = 1.0 / (1.0 + np.exp(-scores))
    grad = features.T @ (probs - labels) / len(labels)
    return float(losses.mean()), grad


@dataclass
class RankerConfig:
    epochs: int = 300
    learning_rate: float = 0.5
    seed: int = 0


class ResponseRanker(BaseEstimator):
    """Logistic reasonableness scorer over four context/response features.

    Features: [cosine(context, response), token-Jaccard(last customer turn,
    response), response length normalized by the generation cap, per-token LM
    log-probability].
    """

    N_FEATURES = 4

    def __init__(self, epochs: int = 300, learning_rate: float = 0.5, seed: int = 0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X: np.ndarray, y: np.ndarray) -> "ResponseRanker":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.N_FEATURES:
            raise ContractViolation(f"expected {self.N_FEATURES} features per row")
        if len(set(y.tolist())) < 2:
            raise ConfigurationError("ranker training needs both classes")
        design = np.hstack([X, np.ones((len(X), 1))])
        weights = np.zeros(self.N_FEATURES + 1)
        for _ in range(self.epochs):
            _, grad = logistic_loss_and_grad(weights, design, y)
            weights -= self.learning_rate * grad
        self.weights_ = weights[:-1]
        self.bias_ = float(weights[-1])
        return self

    def score(self, features: np.ndarray) -> float:
        if not hasattr(self, "weights_"):
            raise ConfigurationError("ResponseRanker is not fitted")
        z = float(np.asarray(features, dtype=np.float64) @ self.weights_ + self.bias_)
        return 1.0 / (1.0 + math.exp(-z))


@dataclass
class FeatureExtractor:
    """Builds the ranker's feature vector for a (context, response) pair."""

    embeddings: EmbeddingMatrix
    vocab: Vocabulary
    lm: NGramLM
    max_tokens: int = 30

    def features(self, context: str, last_customer: str, response: str) -> np.ndarray:
        ctx_vec = embed_text(context, self.embeddings, self.vocab).vector
        resp_vec = embed_text(response, self.embeddings, self.vocab).vector
        ctx_cos = cosine(ctx_vec, resp_vec)
        prev = set(tokenize(last_customer))
        resp_tokens = tokenize(response)
        resp_set = set(resp_tokens)
        if prev or resp_set:
            overlap = len(prev & resp_set) / len(prev | resp_set)
        else:
            overlap = 0.0
        length = min(len(resp_tokens) / self.max_tokens, 1.0)
        _, per_token = self.lm.logprob(response)
        return np.array([ctx_cos, overlap, length, per_token])


def train_ranker(
    positives: Sequence[tuple[str, str, str]],
    negatives: Sequence[tuple[str, str, str]],
    extractor: FeatureExtractor,
    config: RankerConfig | None = None,
) -> ResponseRanker:
    """Fit the ranker on (context, last customer turn, response) triples."""
    if not positives or not negatives:
        raise ConfigurationError("ranker training needs both positive and negative pairs")
    config = config or RankerConfig()
    rows = [extractor.features(*p) for p in positives] + [
        extractor.features(*n) for n in negatives
    ]
    labels = np.array([1.0] * len(positives) + [0.0] * len(negatives))
    ranker = ResponseRanker(
        epochs=config.epochs, learning_rate=config.learning_rate, seed=config.seed
    )
    return ranker.fit(np.vstack(rows), labels)


def save_ranker(ranker: ResponseRanker, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps({"weights": ranker.weights_.tolist(), "bias": ranker.bias_}),
        encoding="utf-8",
    )


def load_ranker(path: str | Path) -> ResponseRanker:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    ranker = ResponseRanker()
    ranker.weights_ = np.asarray(payload["weights"], dtype=np.float64)
    ranker.bias_ = float(payload["bias"])
    return ranker


_SOURCE_PREFERENCE = {CandidateSource.RETRIEVAL: 0, CandidateSource.GENERATION: 1}


def rank_candidates(
    ranker: ResponseRanker,
    extractor: FeatureExtractor,
    context: str,
    last_customer: str,
    candidates: Sequence[CandidateResponse],
) -> list[CandidateResponse]:
    """Scored candidates, best first; exact-duplicate texts are deduplicated.

    Ties break by source preference (retrieval over generation), then
    lexicographically by text.
    """
    if not candidates:
        raise ContractViolation("rank_candidates requires at least one candidate")
    scored = [
        replace(c, ranker_score=ranker.score(extractor.features(context, last_customer, c.text)))
        for c in candidates
    ]
    best_by_text: dict[str, CandidateResponse] = {}
    for cand in scored:
        held = best_by_text.get(cand.text)
        if held is None or _dedup_key(cand) < _dedup_key(held):
            best_by_text[cand.text] = cand
    return sorted(
        best_by_text.values(),
        key=lambda c: (-(c.ranker_score or 0.0), _SOURCE_PREFERENCE[c.source], c.text),
    )


def _dedup_key(c: CandidateResponse) -> tuple:
    return (-(c.ranker_score or 0.0), _SOURCE_PREFERENCE[c.source])


@dataclass
class RespondOutcome:
    best: CandidateResponse
    considered: int
    ranked: list[CandidateResponse]
    generator_source: str = "ngram"


@dataclass
class FallbackResponder:
    """Pools retrieval and generation candidates and picks the ranked best."""

    embeddings: EmbeddingMatrix
    vocab: Vocabulary
    generator: CandidateGenerator
    ranker: ResponseRanker
    extractor: FeatureExtractor
    index: VectorIndex | None = None
    n_retrieval: int = 3
    n_generation: int = 3

    def respond(
        self,
        context_turns: Sequence[str],
        last_customer: str,
        seed: int,
        scene: str | None = None,
    ) -> RespondOutcome:
        context = " ".join(context_turns)
        pool: list[CandidateResponse] = []
        if self.index is not None and len(self.index) > 0:
            ctx_vec = embed_text(context, self.embeddings, self.vocab).vector
            pool.extend(retrieve_candidates(self.index, ctx_vec, self.n_retrieval))
        texts = self.generator.generate_candidates(context_turns, self.n_generation, seed, scene)
        pool.extend(CandidateResponse(t, CandidateSource.GENERATION) for t in texts)
        considered = len(pool)
        ranked = rank_candidates(self.ranker, self.extractor, context, last_customer, pool)
        source = getattr(self.generator, "last_source", "ngram")
        return RespondOutcome(ranked[0], considered, ranked, generator_source=source)


def bleu2(hypotheses: Sequence[str], references: Sequence[str]) -> float:
    """Corpus BLEU-2: geometric mean of 1/2-gram modified precision with BP.

    Add-one smoothing applies to the bigram precision only when its raw
    match count is zero.
    """
    if len(hypotheses) != len(references):
        raise ContractViolation("hypotheses and references must have equal length")
    if not hypotheses:
        raise ContractViolation("bleu2 requires at least one pair")
    match = [0, 0]
    total = [0, 0]
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = tokenize(hyp)
        ref_tokens = tokenize(ref)
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        for n in (1, 2):
            hyp_grams = Counter(
                tuple(hyp_tokens[i : i + n]) for i in range(len(hyp_tokens) - n + 1)
            )
            ref_grams = Counter(
                tuple(ref_tokens[i : i + n]) for i in range(len(ref_tokens) - n + 1)
            )
            match[n - 1] += sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
            total[n - 1] += sum(hyp_grams.values())
    if hyp_len == 0 or total[0] == 0:
        return 0.0
    p1 = match[0] / total[0]
    if total[1] == 0 or match[1] == 0:
        p2 = (match[1] + 1) / (total[1] + 1)
    else:
        p2 = match[1] / total[1]
    if p1 == 0.0:
        return 0.0
    brevity = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return brevity * math.sqrt(p1 * p2)
