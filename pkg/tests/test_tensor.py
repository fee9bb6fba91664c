import math

import numpy as np
import pytest

from slotintent.tensor import (
    DimensionError,
    DomainError,
    GradCheckError,
    ParamStore,
    Precision,
    Tensor,
    add,
    add_n,
    concat,
    cross_entropy,
    embedding_lookup,
    flip_rows,
    grad_check,
    matmul,
    mean_rows,
    mul,
    reshape,
    rows,
    scale,
    sequence_cross_entropy,
    sigmoid,
    softmax,
    sum_all,
    tanh,
)


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape))


class TestMatmul:
    def test_identity(self):
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.eye(2)), b)
        np.testing.assert_array_equal(out.data, b.data)

    def test_zero(self):
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = matmul(Tensor(np.zeros((2, 2))), b)
        np.testing.assert_array_equal(out.data, np.zeros((2, 2)))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))
        expected = np.zeros((3, 2))
        for i in range(3):
            for j in range(2):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        out = matmul(Tensor(a), Tensor(b))
        np.testing.assert_allclose(out.data, expected, atol=1e-12, rtol=0)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


class TestElementwise:
    def test_sigmoid_zero(self):
        assert sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_tanh_zero(self):
        assert tanh(Tensor([0.0])).data[0] == 0.0

    def test_concat_last_axis(self):
        out = concat([Tensor([1.0, 2.0]), Tensor([3.0])], axis=-1)
        np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])

    def test_concat_shape_mismatch(self):
        with pytest.raises(DimensionError):
            concat([Tensor(np.zeros((2, 2))), Tensor(np.zeros((3, 3)))], axis=1)

    def test_add_shape_mismatch(self):
        with pytest.raises(DimensionError):
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))


class TestSoftmax:
    def test_uniform(self):
        out = softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            v = rng.standard_normal(5)
            c = rng.uniform(-100, 100)
            np.testing.assert_allclose(
                softmax(Tensor(v)).data, softmax(Tensor(v + c)).data, atol=1e-12
            )

    def test_log_integers(self):
        out = softmax(Tensor(np.log([1.0, 2.0, 3.0])))
        np.testing.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            out = softmax(Tensor(rng.uniform(-50, 50, size=7)))
            assert abs(out.data.sum() - 1.0) < 1e-9
            assert (out.data >= 0).all()

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            softmax(Tensor(np.zeros(0)))


class TestCrossEntropy:
    def test_uniform_gives_log_k(self):
        for k in (2, 5, 18, 127):
            loss = cross_entropy(softmax(Tensor(np.zeros(k))), 0)
            assert abs(loss.item() - math.log(k)) < 1e-12

    def test_certain_prediction_gives_zero(self):
        probs = Tensor([1.0, 0.0, 0.0])
        assert cross_entropy(probs, 0).item() == 0.0

    def test_closed_form(self):
        probs = Tensor([0.5, 0.25, 0.25])
        assert abs(cross_entropy(probs, 1).item() - math.log(4)) < 1e-12
        fused = cross_entropy(softmax(Tensor(np.log([0.5, 0.25, 0.25]))), 1)
        assert abs(fused.item() - math.log(4)) < 1e-12

    def test_fused_backward_is_p_minus_onehot(self):
        logits = Tensor([1.0, -2.0, 0.5])
        p = softmax(logits)
        loss = cross_entropy(p, 2)
        loss.backward()
        expected = p.data.copy()
        expected[2] -= 1.0
        np.testing.assert_allclose(logits.grad, expected, atol=1e-15)

    def test_index_out_of_range(self):
        with pytest.raises(DomainError):
            cross_entropy(Tensor([0.5, 0.5]), 2)

    def test_nonpositive_probability(self):
        with pytest.raises(DomainError):
            cross_entropy(Tensor([1.0, 0.0]), 1)

    def test_sequence_matches_per_row(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((4, 6))
        targets = [0, 5, 2, 2]
        seq = sequence_cross_entropy(Tensor(logits), targets)
        per_row = sum(
            cross_entropy(softmax(Tensor(logits[i])), t).item() for i, t in enumerate(targets)
        )
        assert abs(seq.item() - per_row) < 1e-12


class TestGradCheck:
    def test_square_at_three(self):
        store = ParamStore()
        theta = store.add("theta", np.array([[3.0]]))

        def f(params):
            return sum_all(mul(theta, theta))

        store.zero_grad()
        loss = f(store)
        loss.backward()
        assert abs(theta.grad[0, 0] - 6.0) < 1e-12
        report = grad_check(f, store)
        assert report.max_rel_error < 1e-9

    def test_requires_f64(self):
        store = ParamStore()
        t = store.add("w", np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(GradCheckError, match="F64"):
            grad_check(lambda p: sum_all(t), store)

    def test_nonfinite_loss_aborts(self):
        store = ParamStore()
        t = store.add("w", np.array([[1e308]]))
        with pytest.raises(GradCheckError, match="finite"):
            grad_check(lambda p: sum_all(mul(t, t)), store)


def _primitive_cases():
    def matmul_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 3)))
        b = store.add("b", rng.standard_normal((3, 2)))
        return lambda p: sum_all(tanh(matmul(a, b)))

    def add_broadcast_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 3)))
        b = store.add("b", rng.standard_normal(3))
        return lambda p: sum_all(sigmoid(add(a, b)))

    def mul_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 3)))
        b = store.add("b", rng.standard_normal((2, 3)))
        return lambda p: sum_all(mul(a, b))

    def activation_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 3)))
        return lambda p: sum_all(mul(sigmoid(a), tanh(a)))

    def concat_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 2)))
        b = store.add("b", rng.standard_normal((2, 3)))
        return lambda p: sum_all(tanh(concat([a, b], axis=1)))

    def softmax_case(store, rng):
        a = store.add("a", rng.standard_normal((1, 5)))
        w = store.add("w", rng.standard_normal((5, 1)))
        return lambda p: sum_all(matmul(softmax(a), w))

    def xent_fused_case(store, rng):
        a = store.add("a", rng.standard_normal((1, 4)))
        return lambda p: cross_entropy(softmax(a), 2)

    def xent_plain_case(store, rng):
        a = store.add("a", rng.uniform(0.2, 1.0, size=4))
        return lambda p: cross_entropy(a, 1)

    def seq_xent_case(store, rng):
        a = store.add("a", rng.standard_normal((3, 4)))
        return lambda p: sequence_cross_entropy(a, [0, 3, 1])

    def rows_case(store, rng):
        a = store.add("a", rng.standard_normal((4, 3)))
        return lambda p: sum_all(sigmoid(rows(a, 1, 3)))

    def flip_case(store, rng):
        a = store.add("a", rng.standard_normal((4, 3)))
        w = store.add("w", rng.standard_normal((3, 2)))
        return lambda p: sum_all(matmul(flip_rows(a), w))

    def reshape_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 6)))
        return lambda p: sum_all(tanh(reshape(a, (3, 4))))

    def embedding_case(store, rng):
        t = store.add("table", rng.standard_normal((5, 3)))
        return lambda p: sum_all(tanh(embedding_lookup(t, [0, 3, 3, 1])))

    def add_n_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 2)))
        b = store.add("b", rng.standard_normal((2, 2)))
        c = store.add("c", rng.standard_normal((2, 2)))
        return lambda p: sum_all(tanh(add_n([a, b, c])))

    def scale_case(store, rng):
        a = store.add("a", rng.standard_normal((2, 2)))
        return lambda p: scale(sum_all(mul(a, a)), 0.37)

    def mean_rows_case(store, rng):
        a = store.add("a", rng.standard_normal((4, 3)))
        return lambda p: sum_all(tanh(mean_rows(a)))

    return [
        ("matmul", matmul_case),
        ("add_broadcast", add_broadcast_case),
        ("mul", mul_case),
        ("activations", activation_case),
        ("concat", concat_case),
        ("softmax", softmax_case),
        ("cross_entropy_fused", xent_fused_case),
        ("cross_entropy_plain", xent_plain_case),
        ("sequence_cross_entropy", seq_xent_case),
        ("rows", rows_case),
        ("flip_rows", flip_case),
        ("reshape", reshape_case),
        ("embedding_lookup", embedding_case),
        ("add_n", add_n_case),
        ("scale", scale_case),
        ("mean_rows", mean_rows_case),
    ]


@pytest.mark.parametrize("name,builder", _primitive_cases(), ids=[n for n, _ in _primitive_cases()])
def test_primitive_backward_matches_finite_differences(name, builder):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        f = builder(store, rng)
        report = grad_check(f, store)
        assert report.max_rel_error < 1e-4, f"{name} seed {seed}: {report.max_rel_error}"


def test_forward_and_backward_stay_finite():
    rng = np.random.default_rng(7)
    for _ in range(20):
        store = ParamStore()
        a = store.add("a", rng.standard_normal((3, 4)) * 10)
        b = store.add("b", rng.standard_normal((4, 4)) * 10)
        out = softmax(tanh(matmul(sigmoid(a), b)))
        loss = cross_entropy(rows(out, 0, 1), 1)
        assert np.isfinite(loss.item())
        loss.backward()
        for t in (a, b):
            assert np.isfinite(t.grad).all()
            assert t.data.size == t.grad.size == int(np.prod(t.shape))


def test_backward_on_nonscalar_requires_seed():
    a = Tensor(np.zeros((2, 2)))
    out = tanh(a)
    with pytest.raises(DomainError):
        out.backward()


def test_shared_tensor_accumulates_both_paths():
    store = ParamStore()
    a = store.add("a", np.array([[2.0]]))
    out = add(mul(a, a), scale(a, 3.0))  # a^2 + 3a, d/da = 2a + 3
    out.backward()
    assert abs(a.grad[0, 0] - 7.0) < 1e-12


class TestParamStore:
    def test_duplicate_name(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", np.zeros(2))

    def test_insertion_order(self):
        store = ParamStore()
        for name in ("z", "a", "m"):
            store.add(name, np.zeros(1))
        assert store.names() == ["z", "a", "m"]

    def test_state_roundtrip(self):
        store = ParamStore()
        t = store.add("w", np.arange(6, dtype=np.float64).reshape(2, 3))
        state = store.state_dict()
        t.data[:] = 0
        store.load_state(state)
        np.testing.assert_array_equal(t.data, np.arange(6).reshape(2, 3))

    def test_load_state_shape_mismatch(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            store.load_state({"w": np.zeros((3, 2))})

    def test_load_state_name_mismatch(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="mismatch"):
            store.load_state({"v": np.zeros(2)})


def test_precision_enum():
    assert Precision.F32.dtype == np.float32
    assert Precision.F64.dtype == np.float64
    assert Precision.from_name("f64") is Precision.F64
    with pytest.raises(DomainError):
        Precision.from_name("f16")
