"""Dense numeric core: shape-tagged arrays, the differentiable primitives the
layers are built from, and a finite-difference gradient checker.

Every operation records a node in a lightweight reverse-mode graph.
``backward`` walks the graph in reverse topological order and accumulates
gradients with ``+=``, so a tensor consumed by several downstream nodes (a
shared encoder state, the shared initial decoder state) receives the sum of
all contributions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Precision",
    "Tensor",
    "ParamStore",
    "DimensionError",
    "DomainError",
    "GradCheckError",
    "GradCheckReport",
    "matmul",
    "add",
    "mul",
    "sigmoid",
    "tanh",
    "concat",
    "softmax",
    "cross_entropy",
    "sequence_cross_entropy",
    "rows",
    "flip_rows",
    "reshape",
    "embedding_lookup",
    "add_n",
    "scale",
    "sum_all",
    "mean_rows",
    "backward",
    "grad_check",
]


class Precision(enum.Enum):
    """Floating-point width of the engine. Gradient checks require F64."""

    F32 = "f32"
    F64 = "f64"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self is Precision.F32 else np.float64)

    @classmethod
    def from_name(cls, name: str) -> "Precision":
        try:
            return cls(name.lower())
        except ValueError:
            raise DomainError(f"unknown precision {name!r}; expected 'f32' or 'f64'") from None


class DimensionError(ValueError):
    """Shapes of the operands do not conform."""


class DomainError(ValueError):
    """Value outside the operation's domain (bad index, empty input, ...)."""


class Tensor:
    """A dense array plus an accumulated-gradient buffer of the same shape."""

    __slots__ = ("data", "grad", "creator")

    def __init__(self, data, dtype=None, creator=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64, np.longdouble):
            arr = arr.astype(np.float64)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.creator = creator

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise DomainError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def add_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:  # pragma: no cover
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype})"


class _Op:
    """Graph node. Subclasses compute forward in ``__init__``-time factories
    and implement ``backward(gouts) -> list of per-input gradients``."""

    __slots__ = ("inputs", "outputs")

    def _finish(self, inputs, out_arrays):
        self.inputs = inputs
        outs = []
        for a in out_arrays:
            # fast construction: op results are fresh contiguous float arrays
            t = Tensor.__new__(Tensor)
            t.data = a
            t.grad = None
            t.creator = self
            outs.append(t)
        self.outputs = tuple(outs)
        return self.outputs

    def backward(self, gouts):  # pragma: no cover
        raise NotImplementedError


def _toposort(root: _Op) -> list[_Op]:
    order: list[_Op] = []
    visited = {id(root)}
    stack = [(root, iter([t.creator for t in root.inputs]))]
    while stack:
        op, children = stack[-1]
        advanced = False
        for child in children:
            if child is not None and id(child) not in visited:
                visited.add(id(child))
                stack.append((child, iter([t.creator for t in child.inputs])))
                advanced = True
                break
        if not advanced:
            order.append(op)
            stack.pop()
    return order


def backward(out: Tensor) -> None:
    """Reverse-mode sweep from ``out``; accumulates into ``.grad`` buffers."""
    if out.creator is None:
        return
    if out.grad is None:
        if out.size != 1:
            raise DomainError("backward() needs a scalar output or a pre-seeded grad")
        out.grad = np.ones_like(out.data)
    for op in reversed(_toposort(out.creator)):
        gouts = [o.grad for o in op.outputs]
        if all(g is None for g in gouts):
            continue
        for t, g in zip(op.inputs, op.backward(gouts)):
            if g is not None:
                t.add_grad(g)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    for _ in range(g.ndim - len(shape)):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class _MatMul(_Op):
    __slots__ = ()

    def backward(self, gouts):
        g = gouts[0]
        a, b = self.inputs
        return [g @ b.data.T, a.data.T @ g]


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product; backward is dA = dC.B^T, dB = A^T.dC."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes do not conform: {a.shape} x {b.shape}")
    (out,) = _MatMul()._finish((a, b), (a.data @ b.data,))
    return out


class _Add(_Op):
    __slots__ = ()

    def backward(self, gouts):
        g = gouts[0]
        a, b = self.inputs
        return [_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)]


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise DimensionError(f"add shapes do not conform: {a.shape} + {b.shape}") from None
    (res,) = _Add()._finish((a, b), (out,))
    return res


class _Mul(_Op):
    __slots__ = ()

    def backward(self, gouts):
        g = gouts[0]
        a, b = self.inputs
        return [_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)]


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul shapes do not conform: {a.shape} * {b.shape}") from None
    (res,) = _Mul()._finish((a, b), (out,))
    return res


class _Sigmoid(_Op):
    __slots__ = ("_out",)

    def backward(self, gouts):
        s = self._out
        return [gouts[0] * s * (1.0 - s)]


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))
    op = _Sigmoid()
    op._out = out
    (res,) = op._finish((x,), (out,))
    return res


class _Tanh(_Op):
    __slots__ = ("_out",)

    def backward(self, gouts):
        t = self._out
        return [gouts[0] * (1.0 - t * t)]


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    op = _Tanh()
    op._out = out
    (res,) = op._finish((x,), (out,))
    return res


class _Concat(_Op):
    __slots__ = ("_axis", "_splits")

    def backward(self, gouts):
        return np.split(gouts[0], self._splits, axis=self._axis)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (default last); other axes must agree."""
    tensors = tuple(tensors)
    if not tensors:
        raise DomainError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            "concat shapes do not conform: " + ", ".join(str(t.shape) for t in tensors)
        ) from None
    op = _Concat()
    op._axis = axis if axis >= 0 else out.ndim + axis
    sizes = [t.data.shape[op._axis] for t in tensors]
    op._splits = np.cumsum(sizes)[:-1]
    (res,) = op._finish(tensors, (out,))
    return res


class _Softmax(_Op):
    __slots__ = ("_out",)

    def backward(self, gouts):
        g = gouts[0]
        p = self._out
        return [p * (g - (g * p).sum(axis=-1, keepdims=True))]


def softmax(logits: Tensor) -> Tensor:
    """Softmax along the last axis, computed with max-subtraction."""
    if logits.size == 0:
        raise DomainError("softmax of an empty tensor")
    z = logits.data
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)
    op = _Softmax()
    op._out = out
    (res,) = op._finish((logits,), (out,))
    return res


class _SoftmaxXent(_Op):
    """Fused softmax + negative log-likelihood; backward is p - onehot."""

    __slots__ = ("_p", "_target")

    def backward(self, gouts):
        g = gouts[0]
        d = self._p.copy()
        d.reshape(-1)[self._target] -= 1.0
        return [d * g]


class _Xent(_Op):
    __slots__ = ("_p", "_target")

    def backward(self, gouts):
        g = gouts[0]
        d = np.zeros_like(self._p)
        flat = self._p.reshape(-1)
        d.reshape(-1)[self._target] = -g / flat[self._target]
        return [d]


def cross_entropy(probabilities: Tensor, target_index: int) -> Tensor:
    """Negative log-likelihood -ln(p[target]) of a single distribution.

    When ``probabilities`` is the direct output of :func:`softmax` the pair is
    fused: the loss is computed from the logits via log-sum-exp and the
    backward pass writes ``p - onehot(target)`` straight into the logits'
    gradient, which avoids the cancellation of composing the two jacobians.
    """
    n = probabilities.shape[-1] if probabilities.shape else 0
    if probabilities.size != n or n < 1:
        raise DimensionError(
            f"cross_entropy expects a single distribution, got shape {probabilities.shape}"
        )
    if not 0 <= int(target_index) < n:
        raise DomainError(f"target index {target_index} out of range for {n} classes")
    target_index = int(target_index)

    creator = probabilities.creator
    if isinstance(creator, _Softmax):
        logits = creator.inputs[0]
        z = logits.data.reshape(-1)
        m = z.max()
        loss = (m + np.log(np.exp(z - m).sum())) - z[target_index]
        op = _SoftmaxXent()
        op._p = probabilities.data.copy()
        op._target = target_index
        (res,) = op._finish((logits,), (np.asarray(loss, dtype=logits.dtype),))
        return res

    p_t = float(probabilities.data.reshape(-1)[target_index])
    if p_t <= 0.0:
        raise DomainError(f"probability at target index {target_index} is not positive")
    op = _Xent()
    op._p = probabilities.data
    op._target = target_index
    (res,) = op._finish((probabilities,), (np.asarray(-np.log(p_t), dtype=probabilities.dtype),))
    return res


class _SequenceXent(_Op):
    """Summed fused softmax + negative log-likelihood over the rows of a
    logit matrix; backward is row-wise p - onehot."""

    __slots__ = ("_p", "_targets")

    def backward(self, gouts):
        g = gouts[0]
        d = self._p.copy()
        d[np.arange(d.shape[0]), self._targets] -= 1.0
        return [d * g]


def sequence_cross_entropy(logits: Tensor, target_indices) -> Tensor:
    """Sum of per-row -ln(softmax(logits[t])[target[t]]) as one node."""
    targets = np.asarray(target_indices, dtype=np.intp)
    if logits.data.ndim != 2 or targets.ndim != 1 or targets.size != logits.shape[0]:
        raise DimensionError(
            f"sequence_cross_entropy: logits {logits.shape} vs {targets.size} targets"
        )
    n = logits.shape[1]
    if targets.size and (targets.min() < 0 or targets.max() >= n):
        raise DomainError(f"target index out of range for {n} classes")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    denom = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(denom[:, 0])
    loss = (lse - z[np.arange(z.shape[0]), targets]).sum()
    op = _SequenceXent()
    op._p = e / denom
    op._targets = targets
    (res,) = op._finish((logits,), (np.asarray(loss, dtype=z.dtype),))
    return res


class _Rows(_Op):
    __slots__ = ("_start", "_stop", "_shape")

    def backward(self, gouts):
        g = np.zeros(self._shape, dtype=gouts[0].dtype)
        g[self._start : self._stop] = gouts[0]
        return [g]


def rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Row slice x[start:stop] of a 2-D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"rows expects a 2-D tensor, got shape {x.shape}")
    if not 0 <= start < stop <= x.shape[0]:
        raise DomainError(f"row slice [{start}:{stop}] out of range for shape {x.shape}")
    op = _Rows()
    op._start, op._stop, op._shape = start, stop, x.shape
    (res,) = op._finish((x,), (x.data[start:stop].copy(),))
    return res


class _FlipRows(_Op):
    __slots__ = ()

    def backward(self, gouts):
        return [gouts[0][::-1].copy()]


def flip_rows(x: Tensor) -> Tensor:
    """Reverse row order of a 2-D tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"flip_rows expects a 2-D tensor, got shape {x.shape}")
    (res,) = _FlipRows()._finish((x,), (x.data[::-1].copy(),))
    return res


class _Reshape(_Op):
    __slots__ = ("_shape",)

    def backward(self, gouts):
        return [gouts[0].reshape(self._shape)]


def reshape(x: Tensor, shape) -> Tensor:
    op = _Reshape()
    op._shape = x.shape
    (res,) = op._finish((x,), (x.data.reshape(shape).copy(),))
    return res


class _EmbeddingLookup(_Op):
    __slots__ = ("_ids", "_vocab")

    def backward(self, gouts):
        g = np.zeros((self._vocab, gouts[0].shape[-1]), dtype=gouts[0].dtype)
        np.add.at(g, self._ids, gouts[0])
        return [g]


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows ``table[ids]``; backward scatter-adds into the looked-up rows."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise DimensionError(f"embedding ids must be a flat sequence, got shape {ids.shape}")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        bad = ids[(ids < 0) | (ids >= vocab)][0]
        raise DomainError(f"embedding id {bad} out of range for table of {vocab} rows")
    op = _EmbeddingLookup()
    op._ids, op._vocab = ids, vocab
    (res,) = op._finish((table,), (table.data[ids],))
    return res


class _AddN(_Op):
    __slots__ = ()

    def backward(self, gouts):
        return [gouts[0]] * len(self.inputs)


def add_n(tensors) -> Tensor:
    """Sum of same-shape tensors as a single node (fixed accumulation order)."""
    tensors = tuple(tensors)
    if not tensors:
        raise DomainError("add_n of zero tensors")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"add_n shapes do not conform: {shape} vs {t.shape}")
    out = tensors[0].data.copy()
    for t in tensors[1:]:
        out += t.data
    (res,) = _AddN()._finish(tensors, (out,))
    return res


class _Scale(_Op):
    __slots__ = ("_k",)

    def backward(self, gouts):
        return [gouts[0] * self._k]


def scale(x: Tensor, k: float) -> Tensor:
    op = _Scale()
    op._k = float(k)
    (res,) = op._finish((x,), (x.data * op._k,))
    return res


class _SumAll(_Op):
    __slots__ = ("_shape",)

    def backward(self, gouts):
        return [np.full(self._shape, gouts[0], dtype=gouts[0].dtype)]


def sum_all(x: Tensor) -> Tensor:
    op = _SumAll()
    op._shape = x.shape
    (res,) = op._finish((x,), (np.asarray(x.data.sum(), dtype=x.dtype),))
    return res


class _MeanRows(_Op):
    __slots__ = ("_n",)

    def backward(self, gouts):
        return [np.repeat(gouts[0] / self._n, self._n, axis=0)]


def mean_rows(x: Tensor) -> Tensor:
    """Mean over axis 0 of a 2-D tensor, kept as a [1 x n] row."""
    if x.data.ndim != 2:
        raise DimensionError(f"mean_rows expects a 2-D tensor, got shape {x.shape}")
    op = _MeanRows()
    op._n = x.shape[0]
    (res,) = op._finish((x,), (x.data.mean(axis=0, keepdims=True),))
    return res


class ParamStore:
    """Named collection of trainable tensors; iteration follows insertion order.

    Gradient accumulation into a store must be externally serialized; tensors
    themselves are plain values and safe to read concurrently.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = data if isinstance(data, Tensor) else Tensor(data)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def scale_grads(self, k: float) -> None:
        for t in self._params.values():
            if t.grad is not None:
                t.grad *= k

    def n_scalars(self) -> int:
        return sum(t.size for t in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, t in self._params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.shape:
                raise DimensionError(f"parameter {name!r}: shape {arr.shape} != expected {t.shape}")
            t.data = np.ascontiguousarray(arr, dtype=t.dtype)


class GradCheckError(RuntimeError):
    """Gradient check could not run (wrong precision, non-finite loss)."""


@dataclass
class GradCheckReport:
    """Max relative error per parameter between analytic and central-difference gradients."""

    per_param: dict[str, float]
    worst_param: str
    max_rel_error: float

    def ok(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_error < tolerance


def grad_check(f, params: ParamStore, epsilon: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of ``f(params)`` with central differences.

    ``f`` must rebuild its graph on every call, be deterministic, and return a
    scalar Tensor. Relative error per scalar is |a-n| / max(|a|, |n|, 1e-8).

    The analytic pass runs at F64; the difference quotients are evaluated in
    extended precision (``np.longdouble``) so that round-off in
    (f(x+eps) - f(x-eps)) stays far below the tolerance even for parameters
    whose true gradient is tiny.
    """
    for name, t in params.items():
        if t.dtype != np.float64:
            raise GradCheckError(f"gradient check requires F64 parameters; {name!r} is {t.dtype}")
    params.zero_grad()
    loss = f(params)
    if not np.isfinite(loss.item()):
        raise GradCheckError(f"loss is not finite: {loss.item()!r}")
    loss.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    params.zero_grad()

    originals = {name: t.data for name, t in params.items()}
    for t in params._params.values():
        t.data = t.data.astype(np.longdouble)
    eps = np.longdouble(epsilon)
    per_param: dict[str, float] = {}
    try:
        for name, t in params.items():
            flat = t.data.reshape(-1)
            a_flat = analytic[name].reshape(-1)
            worst = 0.0
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = f(params).data.reshape(())
                flat[j] = orig - eps
                down = f(params).data.reshape(())
                flat[j] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise GradCheckError(f"non-finite loss while perturbing {name}[{j}]")
                numeric = float((up - down) / (2.0 * eps))
                rel = abs(float(a_flat[j]) - numeric) / max(abs(float(a_flat[j])), abs(numeric), 1e-8)
                if rel > worst:
                    worst = rel
            per_param[name] = worst
    finally:
        for name, t in params.items():
            t.data = originals[name]
    worst_param = max(per_param, key=per_param.get)
    return GradCheckReport(per_param, worst_param, per_param[worst_param])
