import numpy as np
import pytest

from slotintent.encoder import EncoderParams, encode, initial_decoder_state
from slotintent.layers import RunContext
from slotintent.tensor import DomainError, ParamStore, add_n, grad_check, sum_all


def make_params(seed=0, vocab=9, emb=4, hidden=3):
    store = ParamStore()
    params = EncoderParams.create(store, "enc", vocab, emb, hidden, np.random.default_rng(seed), np.float64)
    return store, params


class TestEncode:
    def test_empty_sequence_rejected(self):
        _, p = make_params()
        with pytest.raises(DomainError):
            encode([], p)

    def test_single_step_halves(self):
        _, p = make_params()
        states = encode([4], p)
        assert states.length == 1
        np.testing.assert_array_equal(states.states.data[0, :3], states.fwd_final.data[0])
        np.testing.assert_array_equal(states.states.data[0, 3:], states.bwd_final.data[0])

    def test_shapes_at_reference_width(self):
        store, p = make_params(vocab=20, emb=128, hidden=128)
        states = encode(list(range(7)), p)
        assert states.states.shape == (7, 256)

    def test_reversal_symmetry_with_tied_directions(self):
        store, p = make_params(seed=2)
        p.bwd.wx.data[:] = p.fwd.wx.data
        p.bwd.wh.data[:] = p.fwd.wh.data
        p.bwd.b.data[:] = p.fwd.b.data
        ids = [1, 5, 2, 7]
        fwd_view = encode(ids, p).states.data
        rev_view = encode(ids[::-1], p).states.data
        T, hid = 4, 3
        for i in range(T):
            swapped = np.concatenate([rev_view[T - 1 - i, hid:], rev_view[T - 1 - i, :hid]])
            np.testing.assert_allclose(fwd_view[i], swapped, atol=1e-12)

    def test_deterministic_in_eval(self):
        _, p = make_params(seed=3)
        a = encode([1, 2, 3], p).states.data
        b = encode([1, 2, 3], p).states.data
        np.testing.assert_array_equal(a, b)

    def test_permutation_changes_states(self):
        _, p = make_params(seed=4)
        a = encode([1, 2, 3], p).states.data
        b = encode([3, 2, 1], p).states.data
        assert not np.allclose(a, b)


class TestInitialDecoderState:
    def test_zero_projection(self):
        _, p = make_params()
        p.init_w.data[:] = 0.0
        p.init_b.data[:] = 0.0
        s0 = initial_decoder_state(encode([1, 2], p), p.init_w, p.init_b)
        np.testing.assert_array_equal(s0.data, 0.0)

    def test_dimension_contract(self):
        _, p = make_params(hidden=128, emb=16)
        s0 = initial_decoder_state(encode([1, 2, 3], p), p.init_w, p.init_b)
        assert s0.shape == (1, 128)

    def test_gradient_reaches_backward_lstm(self):
        store, p = make_params(seed=5)

        def f(params):
            states = encode([1, 2, 3], p)
            s0 = initial_decoder_state(states, p.init_w, p.init_b)
            return add_n([sum_all(s0), sum_all(states.states)])

        report = grad_check(f, store)
        assert report.max_rel_error < 1e-4
        store.zero_grad()
        s0_only = initial_decoder_state(encode([1, 2, 3], p), p.init_w, p.init_b)
        sum_all(s0_only).backward()
        assert np.abs(store["enc.bwd.wx"].grad).max() > 0


def test_dropout_applies_only_to_embeddings():
    _, p = make_params(seed=6)
    trace = []
    ctx = RunContext(train=True, keep=0.5, rng=np.random.default_rng(0), trace=trace)
    encode([1, 2, 3], p, ctx)
    assert set(trace) == {"encoder_embedding_fwd", "encoder_embedding_bwd"}
