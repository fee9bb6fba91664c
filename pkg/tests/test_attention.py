import numpy as np
import pytest

from slotintent.attention import (
    AttentionParams,
    AttentionRecord,
    attend,
    attend_causal,
    score,
)
from slotintent.tensor import ParamStore, Tensor, add_n, grad_check, sum_all, mul


def make_params(seed=0, query_dim=3, key_dim=4, att_dim=2):
    store = ParamStore()
    p = AttentionParams.create(store, "att", query_dim, key_dim, att_dim, np.random.default_rng(seed), np.float64)
    return store, p


class TestScore:
    def test_zero_vector_gives_zero(self):
        _, p = make_params()
        p.v.data[:] = 0.0
        rng = np.random.default_rng(1)
        e = score(Tensor(rng.standard_normal((1, 3))), Tensor(rng.standard_normal((1, 4))), p)
        assert e.data[0, 0] == 0.0

    def test_zero_query_projection_depends_only_on_key(self):
        _, p = make_params(seed=2)
        p.ws.data[:] = 0.0
        rng = np.random.default_rng(3)
        k = Tensor(rng.standard_normal((1, 4)))
        e1 = score(Tensor(rng.standard_normal((1, 3))), k, p)
        e2 = score(Tensor(rng.standard_normal((1, 3))), k, p)
        assert e1.data[0, 0] == e2.data[0, 0]

    def test_matches_formula(self):
        _, p = make_params(seed=4)
        rng = np.random.default_rng(5)
        s = rng.standard_normal((1, 3))
        k = rng.standard_normal((1, 4))
        expected = np.tanh(s @ p.ws.data + k @ p.wh.data) @ p.v.data
        got = score(Tensor(s), Tensor(k), p)
        np.testing.assert_allclose(got.data, expected, atol=1e-12)


class TestAttend:
    def test_equal_scores_give_uniform_weights_and_mean_context(self):
        _, p = make_params(seed=6)
        p.v.data[:] = 0.0
        rng = np.random.default_rng(7)
        keys = rng.standard_normal((5, 4))
        alpha, context = attend(Tensor(rng.standard_normal((1, 3))), Tensor(keys), p)
        np.testing.assert_allclose(alpha.data[0], 0.2, atol=1e-15)
        np.testing.assert_allclose(context.data[0], keys.mean(axis=0), atol=1e-12)

    def test_single_key(self):
        _, p = make_params(seed=8)
        keys = np.random.default_rng(9).standard_normal((1, 4))
        alpha, context = attend(Tensor(np.zeros((1, 3))), Tensor(keys), p)
        np.testing.assert_array_equal(alpha.data, [[1.0]])
        np.testing.assert_allclose(context.data, keys, atol=1e-15)

    def test_dominant_score_saturates(self):
        store, p = make_params(seed=10, att_dim=1)
        p.ws.data[:] = 0.0
        p.wh.data[:] = 0.0
        p.wh.data[0, 0] = 5.0
        p.v.data[:] = 100.0
        keys = np.zeros((4, 4))
        keys[:, 0] = [-1.0, -1.0, 1.0, -1.0]  # scores = 100*tanh(+-5), gap > 50
        alpha, context = attend(Tensor(np.zeros((1, 3))), Tensor(keys), p)
        assert alpha.data[0, 2] > 1 - 1e-15
        np.testing.assert_allclose(context.data[0], keys[2], atol=1e-12)

    def test_record_rows_sum_to_one(self):
        _, p = make_params(seed=11)
        rng = np.random.default_rng(12)
        record = AttentionRecord()
        for _ in range(6):
            attend(Tensor(rng.standard_normal((1, 3))), Tensor(rng.standard_normal((4, 4)) * 5), p, record)
        assert record.n_steps == 6
        for w in record.weights:
            assert abs(w.sum() - 1.0) < 1e-6
            assert (w >= 0).all()
        assert record.weight_matrix(4).shape == (6, 4)

    def test_gradient(self):
        rng = np.random.default_rng(13)
        store, p = make_params(seed=13)
        q = store.add("q", rng.standard_normal((1, 3)))
        keys = store.add("keys", rng.standard_normal((5, 4)))

        def f(params):
            alpha, context = attend(q, keys, p)
            return add_n([sum_all(mul(alpha, alpha)), sum_all(context)])

        assert grad_check(f, store).max_rel_error < 1e-4

    def test_weights_are_shift_invariant_softmax_of_scores(self):
        _, p = make_params(seed=14)
        rng = np.random.default_rng(15)
        record = AttentionRecord()
        attend(Tensor(rng.standard_normal((1, 3))), Tensor(rng.standard_normal((6, 4))), p, record)
        scores = record.scores[0]
        shifted = np.exp(scores + 123.0 - (scores + 123.0).max())
        np.testing.assert_allclose(record.weights[0], shifted / shifted.sum(), atol=1e-12)


class TestAttendCausal:
    def test_matches_stepwise_attend(self):
        rng = np.random.default_rng(16)
        _, p = make_params(seed=16, query_dim=4, key_dim=4)
        states = Tensor(rng.standard_normal((5, 4)))
        rec_all = AttentionRecord()
        alpha_all, ctx_all = attend_causal(states, states, p, rec_all)
        from slotintent.tensor import rows

        for i in range(5):
            rec_i = AttentionRecord()
            alpha_i, ctx_i = attend(rows(states, i, i + 1), rows(states, 0, i + 1), p, rec_i)
            np.testing.assert_allclose(alpha_all.data[i, : i + 1], alpha_i.data[0], atol=1e-12)
            np.testing.assert_allclose(ctx_all.data[i], ctx_i.data[0], atol=1e-12)
            np.testing.assert_allclose(rec_all.weights[i], rec_i.weights[0], atol=1e-12)
        assert (alpha_all.data[np.triu_indices(5, k=1)] == 0).all()

    def test_gradient(self):
        rng = np.random.default_rng(17)
        store, p = make_params(seed=17, query_dim=4, key_dim=4)
        states = store.add("states", rng.standard_normal((4, 4)))

        def f(params):
            alpha, contexts = attend_causal(states, states, p)
            return add_n([sum_all(mul(alpha, alpha)), sum_all(contexts)])

        assert grad_check(f, store).max_rel_error < 1e-4
