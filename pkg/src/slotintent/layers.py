"""Trainable building blocks: embeddings, feed-forward projections, the LSTM
cell, and inverted dropout.

The LSTM step is a single fused graph node with a hand-written backward pass;
gate blocks are ordered (input, forget, output, candidate) in the weight
columns. Fresh parameters are uniform(-0.08, 0.08) except the forget-gate
bias slice, which starts at exactly 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    DimensionError,
    DomainError,
    ParamStore,
    Tensor,
    _Op,
    add,
    embedding_lookup,
    matmul,
    tanh,
)

INIT_SCALE = 0.08


def uniform_init(rng: np.random.Generator, shape, dtype, scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


@dataclass
class LstmParams:
    """LSTM cell weights: input-to-gates, hidden-to-gates, and gate bias."""

    wx: Tensor  # [input_dim, 4*hidden]
    wh: Tensor  # [hidden, 4*hidden]
    b: Tensor  # [4*hidden]
    hidden: int

    @property
    def input_dim(self) -> int:
        return self.wx.shape[0]

    @classmethod
    def create(
        cls,
        store: ParamStore,
        prefix: str,
        input_dim: int,
        hidden: int,
        rng: np.random.Generator,
        dtype,
    ) -> "LstmParams":
        wx = store.add(f"{prefix}.wx", uniform_init(rng, (input_dim, 4 * hidden), dtype))
        wh = store.add(f"{prefix}.wh", uniform_init(rng, (hidden, 4 * hidden), dtype))
        b_data = uniform_init(rng, (4 * hidden,), dtype)
        b_data[hidden : 2 * hidden] = 1.0  # forget gate opens by default
        b = store.add(f"{prefix}.b", b_data)
        return cls(wx=wx, wh=wh, b=b, hidden=hidden)


try:
    from scipy.linalg.blas import dger as _dger, sger as _sger

    _GER = {np.dtype(np.float64): _dger, np.dtype(np.float32): _sger}
except ImportError:  # pragma: no cover
    _GER = {}


def _accumulate_outer(param, col_vec, row_vec):
    """param.grad += outer(col_vec, row_vec) without materializing the outer
    product when a BLAS rank-1 update is available."""
    if param.grad is None:
        param.grad = np.zeros_like(param.data)
    ger = _GER.get(param.grad.dtype)
    if ger is not None:
        # BLAS ger is column-major; the transpose of the C-ordered grad is
        # the same buffer seen F-ordered, so update grad.T += outer(row, col)
        res = ger(1.0, row_vec, col_vec, a=param.grad.T, overwrite_a=1)
        param.grad = res.T
    else:
        param.grad += np.outer(col_vec, row_vec)


class _LstmStep(_Op):
    """Fused LSTM step. Outputs (h, c); either output grad may be absent.
    Weight gradients are accumulated in place (rank-1 updates)."""

    __slots__ = ("_x", "_h_prev", "_c_prev", "_i", "_f", "_o", "_g", "_tc")

    def backward(self, gouts):
        gh, gc_out = gouts
        i, f, o, g, tc = self._i, self._f, self._o, self._g, self._tc
        x, h_prev, c_prev = self._x, self._h_prev, self._c_prev
        wx_t, wh_t, b_t = self.inputs[3], self.inputs[4], self.inputs[5]

        if gh is not None:
            do = gh * tc
            dc = gh * o * (1.0 - tc * tc)
        else:
            do = np.zeros_like(o)
            dc = np.zeros_like(o)
        if gc_out is not None:
            dc = dc + gc_out

        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dc_prev = dc * f

        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), do * o * (1.0 - o), dg * (1.0 - g * g)],
            axis=1,
        )
        _accumulate_outer(wx_t, x[0], dz[0])
        _accumulate_outer(wh_t, h_prev[0], dz[0])
        if b_t.grad is None:
            b_t.grad = np.zeros_like(b_t.data)
        b_t.grad += dz[0]
        return [dz @ wx_t.data.T, dz @ wh_t.data.T, dc_prev, None, None, None]


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor, params: LstmParams) -> tuple[Tensor, Tensor]:
    """One LSTM step: c = f*c_prev + i*g, h = o*tanh(c)."""
    hid = params.hidden
    if x.data.ndim != 2 or x.shape[1] != params.input_dim:
        raise DimensionError(f"lstm input shape {x.shape} does not match weight {params.wx.shape}")
    if h_prev.shape != (x.shape[0], hid) or c_prev.shape != (x.shape[0], hid):
        raise DimensionError(
            f"lstm state shapes {h_prev.shape}/{c_prev.shape} do not match hidden size {hid}"
        )
    z = x.data @ params.wx.data + h_prev.data @ params.wh.data + params.b.data
    zi, zf, zo, zg = np.split(z, 4, axis=1)
    i = 1.0 / (1.0 + np.exp(-zi))
    f = 1.0 / (1.0 + np.exp(-zf))
    o = 1.0 / (1.0 + np.exp(-zo))
    g = np.tanh(zg)
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc

    op = _LstmStep()
    op._x, op._h_prev, op._c_prev = x.data, h_prev.data, c_prev.data
    op._i, op._f, op._o, op._g, op._tc = i, f, o, g, tc
    h_t, c_t = op._finish((x, h_prev, c_prev, params.wx, params.wh, params.b), (h, c))
    return h_t, c_t


class _LstmSequence(_Op):
    """Whole-sequence LSTM: one graph node per direction instead of one per
    step. Backward is textbook truncated-free BPTT with the weight gradients
    formed by two stacked matmuls. Outputs (all h rows, final h, final c)."""

    __slots__ = ("_xs", "_h_prevs", "_c_prevs", "_i", "_f", "_o", "_g", "_tc")

    def backward(self, gouts):
        ghs, gh_last, gc_last = gouts
        i, f, o, g, tc = self._i, self._f, self._o, self._g, self._tc
        xs, h_prevs, c_prevs = self._xs, self._h_prevs, self._c_prevs
        wx_t, wh_t, b_t = self.inputs[3], self.inputs[4], self.inputs[5]
        T, hid = i.shape
        wh = wh_t.data

        # gate-derivative factors for all steps at once; the loop only carries
        # the sequential dh/dc recurrences
        i_fac = i * (1.0 - i) * g
        f_fac = f * (1.0 - f) * c_prevs
        o_fac = o * (1.0 - o) * tc
        g_fac = (1.0 - g * g) * i
        c_fac = o * (1.0 - tc * tc)
        dz_all = np.empty((T, 4 * hid), dtype=i.dtype)
        dh = np.zeros(hid, dtype=i.dtype) if gh_last is None else gh_last[0].copy()
        dc = np.zeros(hid, dtype=i.dtype) if gc_last is None else gc_last[0].copy()
        for t in range(T - 1, -1, -1):
            if ghs is not None:
                dh += ghs[t]
            dc += dh * c_fac[t]
            dz = dz_all[t]
            dz[:hid] = dc * i_fac[t]
            dz[hid : 2 * hid] = dc * f_fac[t]
            dz[2 * hid : 3 * hid] = dh * o_fac[t]
            dz[3 * hid :] = dc * g_fac[t]
            dc *= f[t]
            dh = dz @ wh.T

        for param, stacked in ((wx_t, xs), (wh_t, h_prevs)):
            if param.grad is None:
                param.grad = np.zeros_like(param.data)
            param.grad += stacked.T @ dz_all
        if b_t.grad is None:
            b_t.grad = np.zeros_like(b_t.data)
        b_t.grad += dz_all.sum(axis=0)
        return [dz_all @ wx_t.data.T, dh.reshape(1, -1), dc.reshape(1, -1), None, None, None]


def lstm_sequence(
    xs: Tensor, h0: Tensor, c0: Tensor, params: LstmParams
) -> tuple[Tensor, Tensor, Tensor]:
    """Run the cell over all rows of ``xs``; returns (h rows [T x hidden],
    final h [1 x hidden], final c [1 x hidden])."""
    hid = params.hidden
    if xs.data.ndim != 2 or xs.shape[1] != params.input_dim:
        raise DimensionError(f"lstm input shape {xs.shape} does not match weight {params.wx.shape}")
    if h0.shape != (1, hid) or c0.shape != (1, hid):
        raise DimensionError(
            f"lstm state shapes {h0.shape}/{c0.shape} do not match hidden size {hid}"
        )
    T = xs.shape[0]
    dtype = xs.dtype
    z_x = xs.data @ params.wx.data + params.b.data
    wh = params.wh.data
    i_all = np.empty((T, hid), dtype=dtype)
    f_all = np.empty((T, hid), dtype=dtype)
    o_all = np.empty((T, hid), dtype=dtype)
    g_all = np.empty((T, hid), dtype=dtype)
    tc_all = np.empty((T, hid), dtype=dtype)
    h_prevs = np.empty((T, hid), dtype=dtype)
    c_prevs = np.empty((T, hid), dtype=dtype)
    hs = np.empty((T, hid), dtype=dtype)
    h = h0.data[0]
    c = c0.data[0]
    for t in range(T):
        h_prevs[t] = h
        c_prevs[t] = c
        z = z_x[t] + h @ wh
        i = 1.0 / (1.0 + np.exp(-z[:hid]))
        f = 1.0 / (1.0 + np.exp(-z[hid : 2 * hid]))
        o = 1.0 / (1.0 + np.exp(-z[2 * hid : 3 * hid]))
        g = np.tanh(z[3 * hid :])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        i_all[t], f_all[t], o_all[t], g_all[t], tc_all[t] = i, f, o, g, tc
        hs[t] = h

    op = _LstmSequence()
    op._xs, op._h_prevs, op._c_prevs = xs.data, h_prevs, c_prevs
    op._i, op._f, op._o, op._g, op._tc = i_all, f_all, o_all, g_all, tc_all
    return op._finish(
        (xs, h0, c0, params.wx, params.wh, params.b),
        (hs, h.reshape(1, -1).copy(), c.reshape(1, -1).copy()),
    )


@dataclass
class EmbeddingTable:
    """Lookup table of learned vectors, one row per vocabulary entry."""

    table: Tensor

    @property
    def vocab_size(self) -> int:
        return self.table.shape[0]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @classmethod
    def create(
        cls,
        store: ParamStore,
        name: str,
        vocab_size: int,
        dim: int,
        rng: np.random.Generator,
        dtype,
    ) -> "EmbeddingTable":
        return cls(table=store.add(name, uniform_init(rng, (vocab_size, dim), dtype)))


def embed(ids, table: EmbeddingTable) -> Tensor:
    """Look up rows for a sequence of ids; result is [len(ids) x dim]."""
    return embedding_lookup(table.table, ids)


def feed_forward(x: Tensor, weight: Tensor, bias: Tensor, activation: str = "none") -> Tensor:
    """activation(x.W + b) with activation in {none, tanh}."""
    out = add(matmul(x, weight), bias)
    if activation == "tanh":
        return tanh(out)
    if activation == "none":
        return out
    raise DomainError(f"unknown activation {activation!r}")


@dataclass
class DropoutMask:
    """Sampled keep/drop pattern. In eval mode the layer is the identity; in
    train mode survivors are scaled by 1/keep (inverted dropout)."""

    keep: float
    mode: str  # "train" or "eval"
    mask: np.ndarray | None = None

    @classmethod
    def sample(cls, shape, keep: float, rng: np.random.Generator) -> "DropoutMask":
        if not 0.0 < keep <= 1.0:
            raise DomainError(f"keep probability must be in (0, 1], got {keep}")
        return cls(keep=keep, mode="train", mask=(rng.random(shape) < keep).astype(np.float64))


class _Dropout(_Op):
    __slots__ = ("_scaled",)

    def backward(self, gouts):
        return [gouts[0] * self._scaled]


def dropout_apply(x: Tensor, mask: DropoutMask) -> Tensor:
    if mask.mode == "eval" or mask.keep >= 1.0:
        return x
    if mask.mask is None or mask.mask.shape != x.shape:
        got = None if mask.mask is None else mask.mask.shape
        raise DimensionError(f"dropout mask shape {got} does not match input {x.shape}")
    op = _Dropout()
    op._scaled = mask.mask / mask.keep
    (res,) = op._finish((x,), (x.data * op._scaled,))
    return res


@dataclass
class RunContext:
    """Per-forward carrier of mode, dropout rate, and RNG.

    Dropout fires only on non-recurrent connections; callers tag each
    application with a site name, recorded in ``trace`` when set, so tests can
    assert the recurrent h/c paths never receive a mask.
    """

    train: bool = False
    keep: float = 1.0
    rng: np.random.Generator | None = None
    trace: list[str] | None = field(default=None)

    def dropout(self, x: Tensor, site: str) -> Tensor:
        if not self.train or self.keep >= 1.0:
            return x
        if self.trace is not None:
            self.trace.append(site)
        if self.rng is None:
            raise DomainError("train-mode dropout needs an RNG")
        return dropout_apply(x, DropoutMask.sample(x.shape, self.keep, self.rng))


def eval_context() -> RunContext:
    return RunContext(train=False)
