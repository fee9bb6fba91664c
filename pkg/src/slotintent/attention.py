"""Additive attention: alignment scores, normalized weights, context vectors.

The scorer is a one-hidden-layer feed-forward net, e = v . tanh(Ws.q + Wh.k),
shared in form by the slot and intent heads (each head owns its own
parameters). Weights are a softmax over the scored key set, and the context
vector is the weight-matrix product with the key states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ParamStore, Tensor, _Op, add, matmul, tanh
from .layers import uniform_init


@dataclass
class AttentionParams:
    ws: Tensor  # [query_dim, att_dim]
    wh: Tensor  # [key_dim, att_dim]
    v: Tensor  # [att_dim, 1]

    @classmethod
    def create(
        cls,
        store: ParamStore,
        prefix: str,
        query_dim: int,
        key_dim: int,
        att_dim: int,
        rng: np.random.Generator,
        dtype,
    ) -> "AttentionParams":
        return cls(
            ws=store.add(f"{prefix}.ws", uniform_init(rng, (query_dim, att_dim), dtype)),
            wh=store.add(f"{prefix}.wh", uniform_init(rng, (key_dim, att_dim), dtype)),
            v=store.add(f"{prefix}.v", uniform_init(rng, (att_dim, 1), dtype)),
        )


@dataclass
class AttentionRecord:
    """Detached per-step rows of scores and weights plus context vectors."""

    scores: list[np.ndarray] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    contexts: list[np.ndarray] = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return len(self.weights)

    def append(self, scores: np.ndarray, weights: np.ndarray, context: np.ndarray) -> None:
        self.scores.append(scores.copy())
        self.weights.append(weights.copy())
        self.contexts.append(context.copy())

    def weight_matrix(self, width: int) -> np.ndarray:
        """Weights as a dense [n_steps x width] matrix, zero-padded on the
        right for rows scored over a key prefix."""
        out = np.zeros((self.n_steps, width))
        for i, w in enumerate(self.weights):
            out[i, : w.size] = w
        return out


def score(s_prev: Tensor, h_k: Tensor, params: AttentionParams) -> Tensor:
    """Alignment score of one query/key pair: v . tanh(Ws.s + Wh.h)."""
    return matmul(tanh(add(matmul(s_prev, params.ws), matmul(h_k, params.wh))), params.v)


def project_keys(keys: Tensor, params: AttentionParams) -> Tensor:
    """Precompute Wh.keys once per utterance; reused by every attend call."""
    return matmul(keys, params.wh)


class _Attend(_Op):
    """Fused scorer + softmax + weighted sum over one query and K keys.
    Inputs (query, keys, key_proj, ws, v); outputs (alpha, context)."""

    __slots__ = ("_S", "_alpha", "_q")

    def backward(self, gouts):
        galpha, gc = gouts
        query, keys, _, ws, v = self.inputs
        S, alpha = self._S, self._alpha
        dkeys = None
        dalpha = galpha.copy() if galpha is not None else np.zeros_like(alpha)
        if gc is not None:
            dalpha += gc @ keys.data.T
            dkeys = alpha.T @ gc
        de_col = (alpha * (dalpha - (dalpha * alpha).sum())).T  # softmax jacobian, [K x 1]
        dS = de_col @ v.data.T
        dv = S.T @ de_col
        dpre = dS * (1.0 - S * S)
        dq_pre = dpre.sum(axis=0, keepdims=True)
        return [dq_pre @ ws.data.T, dkeys, dpre, self._q.T @ dq_pre, dv]


class _AttendCausal(_Op):
    """All decoding steps of self-attention in one node: step i's query is
    row i of ``queries`` and its keys are rows 0..i (lower-triangular mask).
    Inputs (queries, keys, key_proj, ws, v); outputs (alpha [TxT], contexts)."""

    __slots__ = ("_S", "_alpha")

    def backward(self, gouts):
        galpha, gc = gouts
        queries, keys, _, ws, v = self.inputs
        S, alpha = self._S, self._alpha
        dkeys = None
        dalpha = galpha.copy() if galpha is not None else np.zeros_like(alpha)
        if gc is not None:
            dalpha += gc @ keys.data.T
            dkeys = alpha.T @ gc
        de = alpha * (dalpha - (dalpha * alpha).sum(axis=1, keepdims=True))
        dS = de[:, :, None] * v.data[None, None, :, 0]
        dpre = dS * (1.0 - S * S)  # masked entries have de == 0, so dS == 0
        dqp = dpre.sum(axis=1)
        dkp = dpre.sum(axis=0)
        dv = np.tensordot(S, de, axes=([0, 1], [0, 1])).reshape(-1, 1)
        dqueries = dqp @ ws.data.T
        dws = queries.data.T @ dqp
        return [dqueries, dkeys, dkp, dws, dv]


def attend_causal(
    queries: Tensor,
    keys: Tensor,
    params: AttentionParams,
    record: AttentionRecord | None = None,
    key_proj: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Attention for every step at once when all states already exist; step i
    sees keys 0..i. Returns (weights [TxT], contexts [Tx key_dim])."""
    if key_proj is None:
        key_proj = project_keys(keys, params)
    T = queries.shape[0]
    qp = queries.data @ params.ws.data
    S = np.tanh(qp[:, None, :] + key_proj.data[None, :, :])  # [T x T x att_dim]
    scores = S @ params.v.data[:, 0]  # [T x T]
    mask = np.tril(np.ones((T, T), dtype=bool))
    masked = np.where(mask, scores, -np.inf)
    shifted = np.exp(masked - masked.max(axis=1, keepdims=True))
    alpha = shifted / shifted.sum(axis=1, keepdims=True)
    contexts = alpha @ keys.data

    op = _AttendCausal()
    op._S = S
    op._alpha = alpha
    alpha_t, contexts_t = op._finish(
        (queries, keys, key_proj, params.ws, params.v), (alpha, contexts)
    )
    if record is not None:
        for i in range(T):
            record.append(scores[i, : i + 1], alpha[i, : i + 1], contexts[i])
    return alpha_t, contexts_t


def attend(
    query: Tensor,
    keys: Tensor,
    params: AttentionParams,
    record: AttentionRecord | None = None,
    key_proj: Tensor | None = None,
) -> tuple[Tensor, Tensor]:
    """Score all keys against one query; return (weights [1xK], context [1xD])."""
    if key_proj is None:
        key_proj = project_keys(keys, params)
    S = np.tanh(query.data @ params.ws.data + key_proj.data)  # [K x att_dim]
    e_row = (S @ params.v.data).reshape(1, -1)
    shifted = np.exp(e_row - e_row.max())
    alpha = shifted / shifted.sum()
    context = alpha @ keys.data

    op = _Attend()
    op._S = S
    op._alpha = alpha
    op._q = query.data
    alpha_t, context_t = op._finish((query, keys, key_proj, params.ws, params.v), (alpha, context))
    if record is not None:
        record.append(e_row[0], alpha[0], context[0])
    return alpha_t, context_t
