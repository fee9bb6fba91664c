"""Bidirectional LSTM encoder.

Two independent LSTMs read the embedded tokens left-to-right and
right-to-left; the per-step state is the concatenation [forward ; backward].
The backward LSTM's last computed state (at position 0) seeds the decoder via
a learned tanh projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import EmbeddingTable, LstmParams, RunContext, embed, feed_forward, lstm_sequence, uniform_init
from .tensor import DomainError, ParamStore, Tensor, concat, flip_rows, rows


@dataclass
class EncoderParams:
    embedding: EmbeddingTable
    fwd: LstmParams
    bwd: LstmParams
    init_w: Tensor  # [hidden, hidden]
    init_b: Tensor  # [hidden]
    hidden: int

    @classmethod
    def create(
        cls,
        store: ParamStore,
        prefix: str,
        vocab_size: int,
        emb_dim: int,
        hidden: int,
        rng: np.random.Generator,
        dtype,
    ) -> "EncoderParams":
        return cls(
            embedding=EmbeddingTable.create(store, f"{prefix}.embedding", vocab_size, emb_dim, rng, dtype),
            fwd=LstmParams.create(store, f"{prefix}.fwd", emb_dim, hidden, rng, dtype),
            bwd=LstmParams.create(store, f"{prefix}.bwd", emb_dim, hidden, rng, dtype),
            init_w=store.add(f"{prefix}.init.w", uniform_init(rng, (hidden, hidden), dtype)),
            init_b=store.add(f"{prefix}.init.b", uniform_init(rng, (hidden,), dtype)),
            hidden=hidden,
        )


@dataclass
class EncoderStates:
    """Per-step concatenated states plus both terminal states.

    ``states`` is [T x 2*hidden]; row i is [fh_i ; bh_i]. ``bwd_final`` is the
    backward LSTM's last computed state (the position-0 state).
    """

    states: Tensor
    fwd_final: Tensor  # [1, hidden]
    bwd_final: Tensor  # [1, hidden]

    @property
    def length(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def step(self, i: int) -> Tensor:
        return rows(self.states, i, i + 1)


def encode(token_ids, params: EncoderParams, ctx: RunContext | None = None) -> EncoderStates:
    """Run both directions over the embedded tokens and concatenate per step."""
    if ctx is None:
        ctx = RunContext()
    token_ids = list(token_ids)
    if not token_ids:
        raise DomainError("cannot encode an empty token sequence")
    T = len(token_ids)
    hid = params.hidden
    dtype = params.embedding.table.dtype

    emb = embed(token_ids, params.embedding)
    x_fwd = ctx.dropout(emb, "encoder_embedding_fwd")
    x_bwd = ctx.dropout(emb, "encoder_embedding_bwd")

    def zeros():
        return Tensor(np.zeros((1, hid), dtype=dtype))

    fwd_stack, fwd_final, _ = lstm_sequence(x_fwd, zeros(), zeros(), params.fwd)
    rev_stack, bwd_final, _ = lstm_sequence(flip_rows(x_bwd), zeros(), zeros(), params.bwd)
    bwd_stack = flip_rows(rev_stack)
    states = concat([fwd_stack, bwd_stack], axis=1)
    return EncoderStates(states=states, fwd_final=fwd_final, bwd_final=bwd_final)


def initial_decoder_state(states: EncoderStates, init_w: Tensor, init_b: Tensor) -> Tensor:
    """s_0 = tanh(W . bwd_final + b); the decoder cell state starts at zero."""
    return feed_forward(states.bwd_final, init_w, init_b, activation="tanh")
