import math

import numpy as np
import pytest

from sca import coherence, corpus, lm
from sca.embedding import EmbeddingTable, init_embeddings
from sca.kernel import KernelSpec
from sca.lm import BigramModel
from sca.trainer import TrainConfig

RBF = KernelSpec("rbf", 0.5)


def _uniform_model(n=7, d=4):
    return BigramModel(table=EmbeddingTable(np.zeros((n, d))), bias=np.zeros(n))


class TestNll:
    def test_uniform_model_gives_log_n(self):
        model = _uniform_model(n=7)
        assert lm.nll(model, (0, 3)) == pytest.approx(math.log(7), abs=1e-12)

    def test_dominant_logit_gives_tiny_nll(self):
        model = _uniform_model(n=5)
        model.bias[2] = 25.0
        assert lm.nll(model, (0, 2)) < 1e-8

    def test_nonnegative_for_random_models(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            model = BigramModel(
                table=EmbeddingTable(rng.standard_normal((6, 3))),
                bias=rng.standard_normal(6),
            )
            pair = tuple(rng.integers(0, 6, size=2))
            assert lm.nll(model, pair) >= 0.0

    def test_out_of_vocabulary_rejected(self):
        model = _uniform_model(n=4)
        with pytest.raises(ValueError, match="vocabulary"):
            lm.nll(model, (0, 4))

    def test_softmax_normalization(self):
        rng = np.random.default_rng(1)
        for n, d in ((5, 3), (50, 16), (500, 32)):
            model = BigramModel(
                table=EmbeddingTable(rng.standard_normal((n, d))),
                bias=rng.standard_normal(n),
            )
            z = lm.logits(model, 0)
            p = np.exp(z - z.max())
            p /= p.sum()
            assert p.sum() == pytest.approx(1.0, abs=1e-9)


class TestPerplexity:
    def test_uniform_model_equals_vocabulary_size(self):
        model = _uniform_model(n=9)
        seq = np.array([0, 1, 2, 3, 4])
        assert lm.perplexity(model, seq) == pytest.approx(9.0, rel=1e-12)

    def test_matches_per_pair_oracle(self):
        rng = np.random.default_rng(2)
        model = BigramModel(
            table=EmbeddingTable(rng.standard_normal((8, 4))), bias=rng.standard_normal(8)
        )
        seq = rng.integers(0, 8, size=10)
        want = math.exp(
            np.mean([lm.nll(model, (seq[i], seq[i + 1])) for i in range(len(seq) - 1)])
        )
        assert lm.perplexity(model, seq) == pytest.approx(want, rel=1e-12)

    def test_memorized_bigram_approaches_one(self):
        # the one bigram (0 -> 1), repeated; a tied model can drive its
        # nll to zero through the bias alone
        docs = [
            corpus.Document(f"d{k}", "c", np.array([0, 1], dtype=np.int64)) for k in range(40)
        ]
        model = lm.make_model(init_embeddings(2, 4, seed=0))
        config = TrainConfig(lr=0.5, batch_size=8, max_epochs=80, seed=0, tol=None)
        trained, _ = lm.train_baseline(model, docs, config)
        assert lm.corpus_perplexity(trained, docs) < 1.05

    def test_short_sequence_rejected(self):
        with pytest.raises(ValueError):
            lm.perplexity(_uniform_model(), np.array([1]))


class TestAccuracy:
    def test_memorized_set(self):
        model = _uniform_model(n=4)
        model.bias[:] = 0.0
        # separate each source deterministically via huge pairwise logits
        model.table.vectors[:] = np.eye(4)[:, :4] * 10.0
        pairs = np.array([[0, 0], [1, 1], [2, 2], [3, 3]])
        assert lm.classification_accuracy(model, pairs) == 1.0

    def test_never_correct_set(self):
        model = _uniform_model(n=4)
        model.bias[3] = 10.0
        pairs = np.array([[0, 0], [1, 1], [2, 2]])
        assert lm.classification_accuracy(model, pairs) == 0.0

    def test_hand_counted_fraction(self):
        model = _uniform_model(n=3)
        model.bias[:] = [0.0, 1.0, 2.0]  # argmax always token 2
        pairs = np.array([[0, 2], [1, 2], [2, 2], [0, 1], [1, 0]])
        assert lm.classification_accuracy(model, pairs) == pytest.approx(3 / 5)

    def test_argmax_ties_take_smallest_id(self):
        model = _uniform_model(n=4)  # all logits equal
        pairs = np.array([[1, 0], [2, 0], [3, 1]])
        assert lm.classification_accuracy(model, pairs) == pytest.approx(2 / 3)


class TestCeGradients:
    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(3)
        n, d = 12, 6
        eps = 1e-5
        for trial in range(5):
            vectors = rng.standard_normal((n, d))
            bias = rng.standard_normal(n)
            pair = rng.integers(0, n, size=2)
            model = BigramModel(EmbeddingTable(vectors.copy()), bias.copy())
            _, emb_grad, bias_grad = lm.ce_batch_gradients(model, pair[None, :])

            def loss_with(vec, b):
                return lm.nll(BigramModel(EmbeddingTable(vec), b), tuple(pair))

            for i in range(n):
                for j in range(d):
                    plus = vectors.copy()
                    minus = vectors.copy()
                    plus[i, j] += eps
                    minus[i, j] -= eps
                    fd = (loss_with(plus, bias) - loss_with(minus, bias)) / (2 * eps)
                    assert emb_grad[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)
            for i in range(n):
                plus = bias.copy()
                minus = bias.copy()
                plus[i] += eps
                minus[i] -= eps
                fd = (loss_with(vectors, plus) - loss_with(vectors, minus)) / (2 * eps)
                assert bias_grad[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestJointTraining:
    def test_lambda_zero_matches_baseline_bitwise(self, small_docs):
        docs, vocab = small_docs
        config = TrainConfig(lr=0.2, batch_size=8, max_epochs=4, seed=6, tol=None, lam=0.0)
        base_model, base_logs = lm.train_baseline(
            lm.make_model(init_embeddings(len(vocab), 6, seed=6, vocab=vocab)), docs, config
        )
        joint_model, joint_logs = lm.train_joint(
            lm.make_model(init_embeddings(len(vocab), 6, seed=6, vocab=vocab)),
            docs,
            RBF,
            config,
        )
        assert np.array_equal(base_model.table.vectors, joint_model.table.vectors)
        assert np.array_equal(base_model.bias, joint_model.bias)
        assert [l.loss for l in base_logs] == [l.loss for l in joint_logs]

    def test_positive_lambda_raises_coherence(self, toy_docs):
        config = TrainConfig(lr=0.3, batch_size=32, max_epochs=25, seed=4, tol=None, lam=0.5)
        table = init_embeddings(100, 8, seed=4)
        spec = KernelSpec("rbf", 0.45)
        trained, logs = lm.train_joint(lm.make_model(table), toy_docs, spec, config)
        before = coherence.evaluate_coherence(table, toy_docs, spec, 32, seed=4)
        after = coherence.evaluate_coherence(trained.table, toy_docs, spec, 32, seed=4)
        assert after > before
        assert all(np.isfinite(l.coherence) for l in logs)

    def test_heldout_perplexity_finite_for_both_settings(self, small_docs):
        docs, vocab = small_docs
        for lam in (0.0, 0.5):
            config = TrainConfig(lr=0.2, batch_size=8, max_epochs=3, seed=1, tol=None, lam=lam)
            model, _ = lm.train_joint(
                lm.make_model(init_embeddings(len(vocab), 6, seed=1, vocab=vocab)),
                docs,
                RBF,
                config,
            )
            ppl = lm.corpus_perplexity(model, docs)
            assert np.isfinite(ppl) and ppl >= 1.0

    def test_joint_and_baseline_sample_identical_batches(self, small_docs):
        docs, _ = small_docs
        pools = corpus.bigram_pools(docs)
        a = corpus.sample_from_pools(pools, 8, seed=2, step=0)
        b = corpus.sample_from_pools(pools, 8, seed=2, step=0)
        assert np.array_equal(a, b)
