import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simtrainer.errors import ConfigurationError, ContractViolation
from simtrainer.textenc import (
    EmbeddingMatrix,
    HybridMatcher,
    SgnsConfig,
    SgnsEmbedder,
    Vocabulary,
    build_vocab,
    cosine,
    embed_text,
    load_embeddings,
    save_embeddings,
    sgns_corpus_loss,
    sgns_loss_and_grads,
    tokenize,
    train_sgns,
)

from .conftest import make_dialogue


class TestTokenize:
    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("   \t\n") == []

    def test_lowercase_and_punctuation(self):
        assert tokenize("Refund my ORDER!") == ["refund", "my", "order"]

    def test_punctuation_boundaries(self):
        assert tokenize("can't-stop,now.") == ["can", "t", "stop", "now"]

    def test_cjk_bigrams(self):
        assert tokenize("退款单") == ["退款", "款单"]

    def test_cjk_single_char(self):
        assert tokenize("退") == ["退"]

    def test_cjk_mixed_with_latin(self):
        assert tokenize("refund 退款 now") == ["refund", "退款", "now"]

    @given(st.text(alphabet=st.characters(max_codepoint=0x2FF), max_size=40))
    def test_rejoin_idempotent_for_non_cjk(self, text):
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens


class TestVocabulary:
    def test_min_count_threshold(self):
        dialogues = [
            make_dialogue("d", [("customer", "hello hello hello hello hello"), ("agent", "x y")])
        ]
        vocab = build_vocab(dialogues, min_count=6)
        assert "hello" not in vocab

    def test_tie_break_lexicographic(self):
        dialogues = [make_dialogue("d", [("customer", "bb aa"), ("agent", "aa bb")])]
        vocab = build_vocab(dialogues)
        assert vocab.token_to_id["aa"] < vocab.token_to_id["bb"]

    def test_against_hand_count(self):
        # "red": 3, "blue": 2, "green": 1
        dialogues = [
            make_dialogue("d1", [("customer", "red blue"), ("agent", "red green")]),
            make_dialogue("d2", [("customer", "red blue"), ("agent", "ok")]),
        ]
        vocab = build_vocab(dialogues, min_count=2)
        assert vocab.id_to_token == ["red", "blue"]
        assert vocab.frequencies.tolist() == [3, 2]
        assert "green" not in vocab and "ok" not in vocab

    def test_ids_dense(self, corpus):
        vocab = build_vocab(corpus)
        assert sorted(vocab.token_to_id.values()) == list(range(len(vocab)))


class TestSgns:
    def test_output_shape(self, corpus):
        config = SgnsConfig(dim=8, window=2, negatives=2, epochs=1, seed=0)
        emb = train_sgns(corpus, config)
        vocab = build_vocab(corpus)
        assert emb.vectors_in.shape == (len(vocab), 8)
        assert emb.vectors_out.shape == (len(vocab), 8)
        assert np.isfinite(emb.vectors_in).all() and np.isfinite(emb.vectors_out).all()

    def test_deterministic_for_seed(self, corpus):
        config = SgnsConfig(dim=6, window=2, negatives=2, epochs=1, seed=42)
        a = train_sgns(corpus, config)
        b = train_sgns(corpus, config)
        assert np.array_equal(a.vectors_in, b.vectors_in)
        assert np.array_equal(a.vectors_out, b.vectors_out)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(0)
        h = 1e-4
        for _ in range(20):
            dim = int(rng.integers(2, 6))
            n_neg = int(rng.integers(1, 4))
            center = rng.normal(size=dim)
            context = rng.normal(size=dim)
            negatives = rng.normal(size=(n_neg, dim))
            _, g_center, g_context, g_negs = sgns_loss_and_grads(center, context, negatives)

            def loss_at(c=center, ctx=context, neg=negatives):
                return sgns_loss_and_grads(c, ctx, neg)[0]

            for i in range(dim):
                for vec, grad in ((center, g_center), (context, g_context)):
                    plus, minus = vec.copy(), vec.copy()
                    plus[i] += h
                    minus[i] -= h
                    fd = (
                        loss_at(plus if vec is center else center, plus if vec is context else context)
                        - loss_at(minus if vec is center else center, minus if vec is context else context)
                    ) / (2 * h)
                    assert abs(fd - grad[i]) <= 1e-4 * max(1.0, abs(fd))
            for j in range(n_neg):
                for i in range(dim):
                    plus, minus = negatives.copy(), negatives.copy()
                    plus[j, i] += h
                    minus[j, i] -= h
                    fd = (loss_at(neg=plus) - loss_at(neg=minus)) / (2 * h)
                    assert abs(fd - g_negs[j, i]) <= 1e-4 * max(1.0, abs(fd))

    def test_loss_decreases_with_training(self, corpus):
        vocab = build_vocab(corpus)
        short = SgnsConfig(dim=8, window=2, negatives=3, epochs=1, learning_rate=0.05, seed=5)
        long = SgnsConfig(dim=8, window=2, negatives=3, epochs=5, learning_rate=0.05, seed=5)
        early = train_sgns(corpus, short, vocab)
        late = train_sgns(corpus, long, vocab)
        loss_early = sgns_corpus_loss(early, vocab, corpus, short, seed=99)
        loss_late = sgns_corpus_loss(late, vocab, corpus, long, seed=99)
        assert loss_late < loss_early

    def test_empty_vocabulary_is_configuration_error(self):
        dialogues = [make_dialogue("d", [("customer", "abc"), ("agent", "abc")])]
        vocab = build_vocab(dialogues, min_count=10)
        with pytest.raises(ConfigurationError):
            train_sgns(dialogues, SgnsConfig(dim=4), vocab)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            SgnsConfig(dim=0)
        with pytest.raises(ConfigurationError):
            SgnsConfig(learning_rate=0.0)


def toy_embedding() -> tuple[Vocabulary, EmbeddingMatrix]:
    vocab = Vocabulary(
        token_to_id={"alpha": 0, "beta": 1, "gamma": 2},
        id_to_token=["alpha", "beta", "gamma"],
        frequencies=np.array([3, 2, 1]),
        min_count=1,
    )
    vectors_in = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
    emb = EmbeddingMatrix(dim=3, vectors_in=vectors_in, vectors_out=np.zeros((3, 3)))
    return vocab, emb


class TestEmbedText:
    def test_single_token_is_normalized_row(self):
        vocab, emb = toy_embedding()
        result = embed_text("beta", emb, vocab)
        assert not result.oov
        assert np.allclose(result.vector, [0.0, 1.0, 0.0])

    def test_all_oov_is_zero_with_flag(self):
        vocab, emb = toy_embedding()
        result = embed_text("zzz qqq", emb, vocab)
        assert result.oov
        assert np.array_equal(result.vector, np.zeros(3))

    def test_two_token_mean_hand_computed(self):
        vocab, emb = toy_embedding()
        # mean of (1,0,0) and (0,2,0) is (0.5,1,0); norm sqrt(1.25)
        expected = np.array([0.5, 1.0, 0.0]) / math.sqrt(1.25)
        result = embed_text("alpha beta", emb, vocab)
        assert np.allclose(result.vector, expected, atol=1e-12)

    def test_norm_is_one_or_zero(self, corpus, trained):
        for text in ["refund please", "zzz unknown junk", "package arrived broken"]:
            vec = embed_text(text, trained["emb"], trained["vocab"]).vector
            norm = np.linalg.norm(vec)
            assert norm == 0.0 or abs(norm - 1.0) <= 1e-9


class TestCosine:
    def test_self_similarity(self):
        v = np.array([1.0, 2.0, -3.0])
        assert cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert cosine(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_hand_value(self):
        assert cosine(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(
            0.7071067811865475
        )

    def test_zero_norm_defined_as_zero(self):
        assert cosine(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ContractViolation):
            cosine(np.zeros(3), np.zeros(4))


class TestHybridMatcher:
    def test_identical_nonempty_is_one(self, trained):
        matcher = trained["matcher"]
        assert matcher("i want a refund", "i want a refund") == pytest.approx(1.0)

    def test_identical_oov_text_is_one(self, trained):
        matcher = trained["matcher"]
        assert matcher("zzzz qqqq", "zzzz qqqq") == pytest.approx(1.0)

    def test_disjoint_oov_texts_are_zero(self, trained):
        matcher = trained["matcher"]
        assert matcher("zzzz", "qqqq") == 0.0

    def test_both_empty_is_zero(self, trained):
        assert trained["matcher"]("", "") == 0.0

    def test_hand_computed_blend(self):
        vocab, emb = toy_embedding()
        matcher = HybridMatcher(emb, vocab)
        # embeddings: a = norm(mean(e_alpha, e_beta)), b = norm(mean(e_beta, e_gamma))
        a = np.array([0.5, 1.0, 0.0]) / math.sqrt(1.25)
        b = np.array([0.0, 1.0, 0.5]) / math.sqrt(1.25)
        cos = float(a @ b)
        jaccard = 1 / 3  # {alpha,beta} vs {beta,gamma}
        expected = 0.5 * max(0.0, cos) + 0.5 * jaccard
        assert matcher("alpha beta", "beta gamma") == pytest.approx(expected, abs=1e-12)

    @settings(max_examples=60)
    @given(
        st.text(alphabet="ab z退款", max_size=12),
        st.text(alphabet="ab z退款", max_size=12),
    )
    def test_symmetric_and_bounded(self, trained, a, b):
        matcher = trained["matcher"]
        s_ab = matcher(a, b)
        s_ba = matcher(b, a)
        assert s_ab == pytest.approx(s_ba, abs=1e-12)
        assert 0.0 <= s_ab <= 1.0


class TestPersistence:
    def test_bit_exact_round_trip(self, tmp_path, trained):
        path = tmp_path / "emb.bin"
        save_embeddings(path, trained["vocab"], trained["emb"])
        vocab2, emb2 = load_embeddings(path)
        assert vocab2.id_to_token == trained["vocab"].id_to_token
        assert vocab2.token_to_id == trained["vocab"].token_to_id
        assert np.array_equal(vocab2.frequencies, trained["vocab"].frequencies)
        assert np.array_equal(emb2.vectors_in, trained["emb"].vectors_in)
        assert np.array_equal(emb2.vectors_out, trained["emb"].vectors_out)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(ConfigurationError):
            load_embeddings(path)


class TestEstimator:
    def test_fit_transform_shapes(self, corpus):
        encoder = SgnsEmbedder(dim=8, window=2, negatives=2, epochs=1, seed=0)
        encoder.fit(corpus)
        matrix = encoder.transform(["refund please", "zzz"])
        assert matrix.shape == (2, 8)
        assert np.linalg.norm(matrix[1]) == 0.0  # OOV row

    def test_get_params_round_trip(self):
        encoder = SgnsEmbedder(dim=12, epochs=2)
        params = encoder.get_params()
        assert params["dim"] == 12
        clone = SgnsEmbedder(**params)
        assert clone.get_params() == params

    def test_unfitted_raises(self):
        with pytest.raises(ConfigurationError):
            SgnsEmbedder().transform(["x"])
