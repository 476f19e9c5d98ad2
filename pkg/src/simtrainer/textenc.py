"""Tokenization, vocabulary, skip-gram embeddings, and text similarity.

Dialogue text is encoded into fixed-size vectors (200-dim by default) by a
skip-gram model with negative sampling, trained from scratch on the ingested
corpus. Utterance vectors are L2-normalized token means; the hybrid
similarity used for script alignment and consistency scoring blends the
embedding cosine with token-set overlap so it stays meaningful for
out-of-vocabulary text.
"""

from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import Dialogue
from .errors import ConfigurationError, ContractViolation

Matcher = Callable[[str, str], float]

# CJK ideographs plus kana; runs of these are split into character bigrams.
_CJK_RANGES = (
    (0x3040, 0x30FF),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x20000, 0x2EBEF),
)


def _is_cjk(ch: str) -> bool:
    code = ord(ch)
    return any(lo <= code <= hi for lo, hi in _CJK_RANGES)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace/punctuation boundaries.

    Contiguous CJK runs are emitted as overlapping character bigrams; a run
    of length 1 is emitted as the single character. Deterministic; empty or
    whitespace-only input yields an empty list.
    """
    tokens: list[str] = []
    word: list[str] = []
    cjk: list[str] = []

    def flush_word() -> None:
        if word:
            tokens.append("".join(word))
            word.clear()

    def flush_cjk() -> None:
        if len(cjk) == 1:
            tokens.append(cjk[0])
        else:
            tokens.extend(cjk[i] + cjk[i + 1] for i in range(len(cjk) - 1))
        cjk.clear()

    for ch in text.lower():
        if _is_cjk(ch):
            flush_word()
            cjk.append(ch)
        elif ch.isalnum():
            if cjk:
                flush_cjk()
            word.append(ch)
        else:
            flush_word()
            if cjk:
                flush_cjk()
    flush_word()
    if cjk:
        flush_cjk()
    return tokens


@dataclass
class Vocabulary:
    """Token inventory with dense ids ordered by descending corpus frequency."""

    token_to_id: dict[str, int]
    id_to_token: list[str]
    frequencies: np.ndarray
    min_count: int = 1

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def ids(self, tokens: Iterable[str]) -> list[int]:
        """Ids of the in-vocabulary tokens, in order; OOV tokens are dropped."""
        return [self.token_to_id[t] for t in tokens if t in self.token_to_id]


def build_vocab_from_texts(texts: Iterable[str], min_count: int = 1) -> Vocabulary:
    if min_count < 1:
        raise ContractViolation("min_count must be >= 1")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tokenize(text))
    kept = sorted(
        ((tok, n) for tok, n in counts.items() if n >= min_count),
        key=lambda item: (-item[1], item[0]),
    )
    token_to_id = {tok: i for i, (tok, _) in enumerate(kept)}
    return Vocabulary(
        token_to_id=token_to_id,
        id_to_token=[tok for tok, _ in kept],
        frequencies=np.array([n for _, n in kept], dtype=np.int64),
        min_count=min_count,
    )


def build_vocab(corpus: Sequence[Dialogue], min_count: int = 1) -> Vocabulary:
    """Vocabulary over all turn texts; ids by descending frequency, ties lexicographic."""
    return build_vocab_from_texts(
        (turn.text for dialogue in corpus for turn in dialogue.turns), min_count
    )


@dataclass
class SgnsConfig:
    """Skip-gram-with-negative-sampling hyperparameters."""

    dim: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.dim, self.window, self.negatives, self.epochs) < 1:
            raise ConfigurationError("dim, window, negatives, and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")


@dataclass
class EmbeddingMatrix:
    """Input (word) and output (context) vectors, one row per vocabulary id."""

    dim: int
    vectors_in: np.ndarray
    vectors_out: np.ndarray


def sgns_loss_and_grads(
    center: np.ndarray, context: np.ndarray, negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and analytic gradients for one (center, context, negatives) step.

    The objective for the step is

        -log s(u_ctx . v_ctr) - sum_j log s(-u_nj . v_ctr)

    with s the logistic function. Returns (loss, d/d_center, d/d_context,
    d/d_negatives). Written with logaddexp so the loss is stable for large
    scores; training and the finite-difference tests share this exact code.
    """
    pos_score = float(context @ center)
    neg_scores = negatives @ center
    loss = float(np.logaddexp(0.0, -pos_score) + np.logaddexp(0.0, neg_scores).sum())
    # d loss / d score terms: sigma(x) - 1 for the positive, sigma(x) for negatives
    g_pos = _sigmoid(pos_score) - 1.0
    g_neg = _sigmoid(neg_scores)
    grad_center = g_pos * context + negatives.T @ g_neg
    grad_context = g_pos * center
    grad_negatives = np.outer(g_neg, center)
    return loss, grad_center, grad_context, grad_negatives


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def _training_pairs(
    corpus: Sequence[Dialogue], vocab: Vocabulary, window: int
) -> list[tuple[int, int]]:
    """(center, context) id pairs; each utterance is one training sentence."""
    pairs: list[tuple[int, int]] = []
    for dialogue in corpus:
        for turn in dialogue.turns:
            ids = vocab.ids(tokenize(turn.text))
            for i, center in enumerate(ids):
                lo = max(0, i - window)
                hi = min(len(ids), i + window + 1)
                for j in range(lo, hi):
                    if j != i:
                        pairs.append((center, ids[j]))
    return pairs


def _noise_cdf(vocab: Vocabulary) -> np.ndarray:
    weights = np.asarray(vocab.frequencies, dtype=np.float64) ** 0.75
    return np.cumsum(weights / weights.sum())


def train_sgns(
    corpus: Sequence[Dialogue],
    config: SgnsConfig,
    vocab: Vocabulary | None = None,
) -> EmbeddingMatrix:
    """Train skip-gram embeddings with negative sampling.

    Negatives are drawn from the unigram distribution raised to 0.75; the
    learning rate decays linearly to 10% of its initial value over all
    updates. Single-threaded and deterministic for a given seed.
    """
    if vocab is None:
        vocab = build_vocab(corpus)
    size = len(vocab)
    if size == 0:
        raise ConfigurationError("cannot train embeddings on an empty vocabulary")

    rng = np.random.default_rng(config.seed)
    bound = 0.5 / config.dim
    vectors_in = rng.uniform(-bound, bound, size=(size, config.dim))
    vectors_out = np.zeros((size, config.dim), dtype=np.float64)

    pairs = _training_pairs(corpus, vocab, config.window)
    noise_cdf = _noise_cdf(vocab)
    total = len(pairs) * config.epochs
    step = 0
    for _ in range(config.epochs):
        for center_id, context_id in pairs:
            lr = config.learning_rate * (1.0 - 0.9 * (step / total))
            step += 1
            neg_ids = np.searchsorted(noise_cdf, rng.random(config.negatives))
            center = vectors_in[center_id]
            _, g_center, g_context, g_negs = sgns_loss_and_grads(
                center, vectors_out[context_id], vectors_out[neg_ids]
            )
            vectors_in[center_id] = center - lr * g_center
            vectors_out[context_id] -= lr * g_context
            # np.subtract.at accumulates correctly when a negative id repeats
            np.subtract.at(vectors_out, neg_ids, lr * g_negs)
    return EmbeddingMatrix(dim=config.dim, vectors_in=vectors_in, vectors_out=vectors_out)


def sgns_corpus_loss(
    emb: EmbeddingMatrix,
    vocab: Vocabulary,
    corpus: Sequence[Dialogue],
    config: SgnsConfig,
    seed: int = 0,
) -> float:
    """Mean step loss over the full pair set with freshly seeded negatives.

    Used to check the optimization trend; the negative draw is seeded so two
    evaluations of the same parameters agree exactly.
    """
    pairs = _training_pairs(corpus, vocab, config.window)
    if not pairs:
        raise ConfigurationError("corpus yields no training pairs under this config")
    rng = np.random.default_rng(seed)
    noise_cdf = _noise_cdf(vocab)
    total = 0.0
    for center_id, context_id in pairs:
        neg_ids = np.searchsorted(noise_cdf, rng.random(config.negatives))
        loss, _, _, _ = sgns_loss_and_grads(
            emb.vectors_in[center_id], emb.vectors_out[context_id], emb.vectors_out[neg_ids]
        )
        total += loss
    return total / len(pairs)


@dataclass(frozen=True)
class TextVector:
    """An utterance embedding; ``oov`` flags the all-out-of-vocabulary case."""

    vector: np.ndarray
    oov: bool


def embed_text(text: str, emb: EmbeddingMatrix, vocab: Vocabulary) -> TextVector:
    """L2-normalized mean of the in-vocabulary token vectors.

    Text with no in-vocabulary token embeds to the all-zero vector with the
    ``oov`` flag set, so downstream similarity treats it as maximally
    dissimilar rather than failing.
    """
    ids = vocab.ids(tokenize(text))
    if not ids:
        return TextVector(np.zeros(emb.dim, dtype=np.float64), oov=True)
    mean = emb.vectors_in[ids].mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return TextVector(np.zeros(emb.dim, dtype=np.float64), oov=True)
    return TextVector(mean / norm, oov=False)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; defined as 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"vector length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


@dataclass
class HybridMatcher:
    """Default text matcher: embedding cosine blended with token overlap.

    score = 0.5 * max(0, cosine(embed(a), embed(b))) + 0.5 * jaccard(a, b)

    When both utterances embed to the zero vector (all tokens OOV) the score
    falls back to the Jaccard term alone, which keeps self-similarity at 1
    for any utterance with at least one token. Symmetric, bounded in [0, 1].
    Any backend with those three properties can replace this one.
    """

    embeddings: EmbeddingMatrix
    vocab: Vocabulary

    def __call__(self, a: str, b: str) -> float:
        tokens_a = set(tokenize(a))
        tokens_b = set(tokenize(b))
        overlap = _jaccard(tokens_a, tokens_b)
        va = embed_text(a, self.embeddings, self.vocab)
        vb = embed_text(b, self.embeddings, self.vocab)
        if va.oov and vb.oov:
            return overlap
        return 0.5 * max(0.0, cosine(va.vector, vb.vector)) + 0.5 * overlap


_MAGIC = b"STVEC001"
_VERSION = 1


def save_embeddings(path: str | Path, vocab: Vocabulary, emb: EmbeddingMatrix) -> None:
    """Write vocabulary and both matrices; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, emb.dim, len(vocab)))
        fh.write(struct.pack("<I", vocab.min_count))
        for token, freq in zip(vocab.id_to_token, vocab.frequencies):
            raw = token.encode("utf-8")
            fh.write(struct.pack("<IQ", len(raw), int(freq)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(emb.vectors_in, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(emb.vectors_out, dtype="<f8").tobytes())


def load_embeddings(path: str | Path) -> tuple[Vocabulary, EmbeddingMatrix]:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ConfigurationError(f"{path}: not an embedding file")
        version, dim, size = struct.unpack("<III", fh.read(12))
        if version != _VERSION:
            raise ConfigurationError(f"{path}: unsupported version {version}")
        (min_count,) = struct.unpack("<I", fh.read(4))
        tokens: list[str] = []
        freqs = np.zeros(size, dtype=np.int64)
        for i in range(size):
            length, freq = struct.unpack("<IQ", fh.read(12))
            tokens.append(fh.read(length).decode("utf-8"))
            freqs[i] = freq
        matrix_bytes = size * dim * 8
        vectors_in = np.frombuffer(fh.read(matrix_bytes), dtype="<f8").reshape(size, dim).copy()
        vectors_out = np.frombuffer(fh.read(matrix_bytes), dtype="<f8").reshape(size, dim).copy()
    vocab = Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(tokens)},
        id_to_token=tokens,
        frequencies=freqs,
        min_count=min_count,
    )
    return vocab, EmbeddingMatrix(dim=dim, vectors_in=vectors_in, vectors_out=vectors_out)


class SgnsEmbedder(BaseEstimator, TransformerMixin):
    """Estimator wrapper around the skip-gram trainer.

    ``fit`` takes a sequence of :class:`~simtrainer.corpus.Dialogue` and
    learns the vocabulary and embedding matrices; ``transform`` maps
    utterance strings to normalized vectors (zero rows for all-OOV text).
    """

    def __init__(
        self,
        dim: int = 200,
        window: int = 5,
        negatives: int = 5,
        epochs: int = 5,
        learning_rate: float = 0.025,
        min_count: int = 1,
        seed: int = 0,
    ):
        self.dim = dim
        self.window = window
        self.negatives = negatives
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.min_count = min_count
        self.seed = seed

    def _config(self) -> SgnsConfig:
        return SgnsConfig(
            dim=self.dim,
            window=self.window,
            negatives=self.negatives,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    def fit(self, X: Sequence[Dialogue], y=None) -> "SgnsEmbedder":
        self.vocabulary_ = build_vocab(X, min_count=self.min_count)
        self.embeddings_ = train_sgns(X, self._config(), self.vocabulary_)
        return self

    def transform(self, X: Iterable[str]) -> np.ndarray:
        self._check_fitted()
        rows = [embed_text(text, self.embeddings_, self.vocabulary_).vector for text in X]
        if not rows:
            return np.zeros((0, self.embeddings_.dim))
        return np.vstack(rows)

    def embed(self, text: str) -> TextVector:
        self._check_fitted()
        return embed_text(text, self.embeddings_, self.vocabulary_)

    def matcher(self) -> HybridMatcher:
        self._check_fitted()
        return HybridMatcher(self.embeddings_, self.vocabulary_)

    def _check_fitted(self) -> None:
        if not hasattr(self, "embeddings_"):
            raise ConfigurationError("SgnsEmbedder is not fitted")
