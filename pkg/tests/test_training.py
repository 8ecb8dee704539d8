import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from divrec import autodiff as ad
from divrec.autodiff import Tensor, backward
from divrec.data import SyntheticSpec, generate_synthetic
from divrec.model import ModelConfig, init_params
from divrec.text import table_from_vectors
from divrec.training import (
    TrainingConfig,
    build_samples,
    combined_loss,
    diversity_regularization_loss,
    init_seed,
    listwise_contrastive_loss,
    pairwise_bpr_loss,
    pointwise_loss,
    train,
)


def rec_oracle(scores, labels):
    """Per clicked item, an explicit (1+Q)-way softmax."""
    total = 0.0
    negs = [s for s, y in zip(scores, labels) if y == 0]
    for s, y in zip(scores, labels):
        if y == 1:
            terms = [s] + negs
            top = max(terms)
            log_z = top + math.log(sum(math.exp(t - top) for t in terms))
            total += log_z - s
    return total


def div_oracle(scores, sim):
    return sum(scores[i] * scores[j] * sim[i][j] for i in range(len(scores)) for j in range(len(scores)))


def random_case(rng, m):
    scores = rng.normal(scale=3, size=m)
    labels = (rng.random(m) < 0.3).astype(int)
    labels[rng.integers(m)] = 1
    e = rng.normal(size=(m, 4))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    return scores, labels, e @ e.T


class TestListwise:
    def test_equal_scores_one_each(self):
        assert listwise_contrastive_loss(Tensor([0.3, 0.3]), [1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_one_positive_two_negatives(self):
        loss = listwise_contrastive_loss(Tensor([1.0, 0.0, 0.0]), [1, 0, 0]).item()
        assert loss == pytest.approx(-math.log(math.e / (math.e + 2)), abs=1e-15)
        assert loss == pytest.approx(0.551445, abs=1e-6)

    def test_two_positives_sum(self):
        s = [0.7, -0.2, 1.5, 0.1, 0.0]
        both = listwise_contrastive_loss(Tensor(s), [1, 0, 1, 0, 0]).item()
        first = listwise_contrastive_loss(Tensor([0.7, -0.2, 0.1, 0.0]), [1, 0, 0, 0]).item()
        second = listwise_contrastive_loss(Tensor([1.5, -0.2, 0.1, 0.0]), [1, 0, 0, 0]).item()
        assert both == pytest.approx(first + second, abs=1e-14)
        assert both == pytest.approx(rec_oracle(s, [1, 0, 1, 0, 0]), abs=1e-14)

    def test_no_positive(self):
        with pytest.raises(ValueError):
            listwise_contrastive_loss(Tensor([0.1, 0.2]), [0, 0])

    def test_no_negative_is_zero(self):
        assert listwise_contrastive_loss(Tensor([0.1, 0.2]), [1, 1]).item() == 0.0

    def test_large_scores_stable(self):
        loss = listwise_contrastive_loss(Tensor([-900.0, 0.0, 900.0]), [1, 0, 1]).item()
        assert loss == pytest.approx(900.0 + math.log1p(math.exp(-900)), abs=1e-9)

    @given(st.integers(2, 20), st.integers(0, 2**31 - 1), st.floats(-50, 50))
    @settings(max_examples=50)
    def test_oracle_and_shift_invariance(self, m, seed, c):
        scores, labels, _ = random_case(np.random.default_rng(seed), m)
        base = listwise_contrastive_loss(Tensor(scores), labels).item()
        assert base == pytest.approx(rec_oracle(scores, labels), abs=1e-10)
        shifted = listwise_contrastive_loss(Tensor(scores + c), labels).item()
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_per_positive_weighting(self):
        rng = np.random.default_rng(0)
        scores = rng.normal(size=6)
        labels = [1, 1, 1, 0, 0, 0]
        single = [listwise_contrastive_loss(Tensor(np.r_[scores[i], scores[3:]]), [1, 0, 0, 0]).item() for i in range(3)]
        assert listwise_contrastive_loss(Tensor(scores), labels).item() == pytest.approx(sum(single), abs=1e-13)


class TestDiversity:
    def test_zero_scores(self):
        assert diversity_regularization_loss(Tensor(np.zeros(3)), np.eye(3)).item() == 0.0

    def test_identity(self):
        assert diversity_regularization_loss(Tensor([1.0, 2.0]), np.eye(2)).item() == 5.0

    def test_off_diagonal(self):
        assert diversity_regularization_loss(Tensor([1.0, 2.0]), [[1, 0.5], [0.5, 1]]).item() == pytest.approx(7.0, abs=1e-15)

    def test_not_shift_invariant(self):
        s = np.array([[1.0, 0.2], [0.2, 1.0]])
        a = diversity_regularization_loss(Tensor([1.0, 2.0]), s).item()
        b = diversity_regularization_loss(Tensor([2.0, 3.0]), s).item()
        assert a != b

    def test_gradient_is_two_s_y(self):
        rng = np.random.default_rng(1)
        y, _, s = random_case(rng, 7)
        t = Tensor(y, requires_grad=True)
        backward(diversity_regularization_loss(t, s))
        np.testing.assert_allclose(t.grad, 2 * s @ y, rtol=1e-12)

    @given(st.integers(1, 20), st.integers(0, 2**31 - 1))
    @settings(max_examples=50)
    def test_matches_double_loop(self, m, seed):
        scores, _, s = random_case(np.random.default_rng(seed), m)
        assert diversity_regularization_loss(Tensor(scores), s).item() == pytest.approx(div_oracle(scores, s), abs=1e-10)

    def test_squash(self):
        y = np.array([0.0, 0.0])
        assert diversity_regularization_loss(Tensor(y), np.eye(2), squash=True).item() == pytest.approx(0.5)


class TestCombined:
    def test_lambda_zero(self):
        s = Tensor([0.5, -0.1, 0.3])
        assert combined_loss(s, [1, 0, 0], np.eye(3), 0.0).item() == listwise_contrastive_loss(s, [1, 0, 0]).item()

    def test_lambda_one(self):
        expect = (math.log(math.e + 2) - 1) + (1 + 0 + 0)
        got = combined_loss(Tensor([1.0, 0.0, 0.0]), [1, 0, 0], np.eye(3), 1.0).item()
        assert got == pytest.approx(expect, abs=1e-14)

    def test_lambda_twenty(self):
        scores, labels, s = random_case(np.random.default_rng(2), 9)
        got = combined_loss(Tensor(scores), labels, s, 20.0).item()
        assert got == pytest.approx(rec_oracle(scores, labels) + 20 * div_oracle(scores, s), abs=1e-12 * max(1, abs(got)))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        scores, labels, s = random_case(rng, 6)
        t = Tensor(scores, requires_grad=True)
        assert ad.finite_difference_check(lambda: listwise_contrastive_loss(t, labels), [t]) < 1e-5
        assert ad.finite_difference_check(lambda: diversity_regularization_loss(t, s), [t]) < 1e-5
        assert ad.finite_difference_check(lambda: combined_loss(t, labels, s, 20.0), [t]) < 1e-5


class TestPointwise:
    def test_zero_scores(self):
        assert pointwise_loss(Tensor([0.0, 0.0]), [1, 1]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_large_margin(self):
        assert pointwise_loss(Tensor([40.0, -40.0]), [1, 0]).item() < 1e-15

    def test_matches_loop(self):
        scores, labels, _ = random_case(np.random.default_rng(4), 8)
        expect = -sum(y * math.log(1 / (1 + math.exp(-s))) + (1 - y) * math.log(1 - 1 / (1 + math.exp(-s)))
                      for s, y in zip(scores, labels)) / 8
        assert pointwise_loss(Tensor(scores), labels).item() == pytest.approx(expect, abs=1e-12)


class TestBPR:
    def test_equal(self):
        assert pairwise_bpr_loss(Tensor([0.4, 0.4]), [1, 0]).item() == pytest.approx(math.log(2), abs=1e-15)

    def test_margin_two(self):
        loss = pairwise_bpr_loss(Tensor([2.0, 0.0]), [1, 0]).item()
        assert loss == pytest.approx(math.log1p(math.exp(-2)), abs=1e-15)
        assert loss == pytest.approx(0.126928, abs=1e-6)

    def test_six_pairs(self):
        scores = np.array([0.3, 1.2, -0.5, 0.8, 0.0])
        labels = [1, 0, 1, 0, 0]
        pairs = [(p, n) for p in (0, 2) for n in (1, 3, 4)]
        expect = sum(math.log1p(math.exp(-(scores[p] - scores[n]))) for p, n in pairs) / 6
        assert pairwise_bpr_loss(Tensor(scores), labels).item() == pytest.approx(expect, abs=1e-14)

    def test_no_pair(self):
        with pytest.raises(ValueError):
            pairwise_bpr_loss(Tensor([0.1, 0.2]), [1, 1])


@pytest.fixture(scope="module")
def small_corpus():
    syn = generate_synthetic(SyntheticSpec(n_users=60, n_news=300, seed=11))
    tr = syn.dataset("train")
    table = table_from_vectors(syn.word_vectors, tr.vocab)
    cfg = ModelConfig.desk(model_dim=16, heads=2, pool_dim=8, max_title_len=12, max_history_len=10)
    return build_samples(tr, table, cfg.max_title_len, cfg.max_history_len), cfg, table.vectors


class TestTrainLoop:
    def test_samples_carry_similarity(self, small_corpus):
        samples, _, _ = small_corpus
        s = samples[0]
        assert s.similarity.shape == (len(s.labels),) * 2
        assert np.array_equal(s.similarity, s.similarity.T)

    def test_zero_epochs(self, small_corpus):
        samples, cfg, words = small_corpus
        res = train(samples, TrainingConfig(epochs=0, seed=3), cfg, words)
        init = init_params(cfg, words, seed=init_seed(3))
        for name, t in res.params.tensors.items():
            assert np.array_equal(t.data, init[name].data)
        assert res.trace == []

    def test_same_seed_bit_identical(self, small_corpus):
        samples, cfg, words = small_corpus
        conf = TrainingConfig(epochs=1, seed=5, lr=1e-3, lam=5.0)
        a = train(samples[:40], conf, cfg, words)
        b = train(samples[:40], conf, cfg, words)
        for name in a.params.tensors:
            assert a.params[name].data.tobytes() == b.params[name].data.tobytes()
        assert [r.line() for r in a.trace] == [r.line() for r in b.trace]

    def test_loss_decreases(self, small_corpus):
        samples, cfg, words = small_corpus
        res = train(samples, TrainingConfig(lam=0.0, epochs=3, lr=1e-3), cfg, words)
        means = res.epoch_means()
        assert means[0] > means[1] > means[2]

    @pytest.mark.parametrize("objective", ["pointwise", "pairwise"])
    def test_variant_objectives_train(self, small_corpus, objective):
        samples, cfg, words = small_corpus
        res = train(samples[:60], TrainingConfig(lam=1.0, epochs=1, lr=1e-3, objective=objective), cfg, words)
        assert all(np.isfinite(r.l_total) for r in res.trace)

    def test_accumulation(self, small_corpus):
        samples, cfg, words = small_corpus
        res = train(samples[:30], TrainingConfig(lam=0.0, epochs=1, batch_size=4, lr=1e-3), cfg, words)
        assert len(res.trace) == len([s for s in samples[:30] if s.n_pos])

    def test_trace_line_format(self, small_corpus):
        samples, cfg, words = small_corpus
        res = train(samples[:5], TrainingConfig(lam=2.0, epochs=1, lr=1e-3), cfg, words)
        fields = res.trace[0].line().split("\t")
        assert len(fields) == 5 and fields[:2] == ["0", "0"]
        assert float(fields[4]) == pytest.approx(float(fields[2]) + 2.0 * float(fields[3]))

    def test_rejects_clickless_data(self, small_corpus):
        samples, cfg, words = small_corpus
        dead = [s for s in samples if s.n_pos == 0]
        with pytest.raises(ValueError, match="trainable"):
            train(dead[:3], TrainingConfig(), cfg, words)

    def test_non_finite_loss_names_impression(self, small_corpus):
        samples, cfg, words = small_corpus
        params = init_params(cfg, words)
        params["news.dense.b"].data[:] = np.inf
        with pytest.raises(FloatingPointError, match="impression"):
            train(samples[:3], TrainingConfig(lam=1.0, epochs=1), cfg, words, params=params)


class TestTrainingConfig:
    def test_negative_lambda(self):
        with pytest.raises(ValueError, match="lam"):
            TrainingConfig(lam=-1)

    def test_objective(self):
        with pytest.raises(ValueError, match="objective"):
            TrainingConfig(objective="listmle")
