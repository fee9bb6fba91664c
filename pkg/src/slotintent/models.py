"""Complete model graphs for joint slot filling and intent detection.

Two families share one label-tagging contract (exactly T slot labels for a
T-token input):

* encoder-decoder: a bidirectional LSTM encoder and a unidirectional LSTM
  decoder fed, per step, the embedded previous label plus optionally the
  aligned encoder state and an attention context vector. The intent head is a
  one-step decoder over the shared initial state and its own context vector.
* bidirectional tagger (BiRNN): the backward LSTM runs first over the
  embeddings, then the forward LSTM consumes [token embedding ; previous
  label embedding] so label dependencies live in the forward direction. Slot
  logits come from the concatenated step state, optionally joined with an
  attention context; the intent head is mean-pooling or a learned-query
  attention over all step states.

Label feedback uses gold labels when the caller supplies them (teacher
forcing) and the model's own argmax otherwise. In the tagger, attention keys
for step i are the states computed so far (positions 1..i): later forward
states do not exist yet when label i is predicted, so the key set is the same
prefix in training and decoding. The backward half of every key already
carries right-of-key context.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .attention import AttentionParams, AttentionRecord, attend, attend_causal, project_keys
from .encoder import EncoderParams, EncoderStates, encode, initial_decoder_state
from .layers import (
    EmbeddingTable,
    LstmParams,
    RunContext,
    embed,
    feed_forward,
    lstm_sequence,
    lstm_step,
    uniform_init,
)
from .tensor import (
    DimensionError,
    DomainError,
    ParamStore,
    Precision,
    Tensor,
    add_n,
    concat,
    cross_entropy,
    flip_rows,
    matmul,
    mean_rows,
    rows,
    scale,
    sequence_cross_entropy,
    softmax,
)

ENC_DEC = "encdec"
BI_RNN = "birnn"
ARCHITECTURES = (ENC_DEC, BI_RNN)
TASKS = ("slot", "intent", "joint")


class ConfigError(ValueError):
    """Inconsistent or unsupported model configuration."""


@dataclass
class ModelConfig:
    architecture: str = BI_RNN
    aligned_inputs: bool = True
    attention: bool = True
    task: str = "joint"
    hidden: int = 128
    embedding_dim: int = 128
    label_embedding_dim: int = 128
    att_dim: int = 128
    dropout_keep: float = 0.5
    beam_width: int = 1
    precision: str = "f64"

    def validate(self) -> "ModelConfig":
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.architecture == ENC_DEC and not self.aligned_inputs and not self.attention:
            raise ConfigError(
                "encoder-decoder without aligned inputs requires attention: "
                "the decoder would see only previous labels; enable --attention "
                "or --aligned"
            )
        if self.beam_width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.beam_width}")
        if not 0.0 < self.dropout_keep <= 1.0:
            raise ConfigError(f"dropout keep probability must be in (0, 1], got {self.dropout_keep}")
        for name in ("hidden", "embedding_dim", "label_embedding_dim", "att_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        Precision.from_name(self.precision)
        return self

    @property
    def dtype(self):
        return Precision.from_name(self.precision).dtype

    @property
    def joint(self) -> bool:
        return self.task == "joint"

    @property
    def has_slot_head(self) -> bool:
        return self.task in ("slot", "joint")

    @property
    def has_intent_head(self) -> bool:
        return self.task in ("intent", "joint")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class ModelOutput:
    """Forward results: logits are graph tensors, attention is detached.
    ``slot_logits`` is a [T x n_slot_labels] matrix, one row per token."""

    slot_logits: Tensor | None = None
    intent_logits: Tensor | None = None
    slot_attention: AttentionRecord | None = None
    intent_attention: AttentionRecord | None = None
    fed_labels: list[int] = field(default_factory=list)
    predicted_slots: list[int] = field(default_factory=list)
    predicted_intent: int | None = None


@dataclass
class DecodeResult:
    slot_ids: list[int]
    intent_id: int | None
    slot_attention: AttentionRecord | None
    intent_attention: AttentionRecord | None
    logprob: float


@dataclass
class _EncDecParams:
    enc: EncoderParams
    label_emb: EmbeddingTable | None = None
    att_slot: AttentionParams | None = None
    dec: LstmParams | None = None
    out_w: Tensor | None = None
    out_b: Tensor | None = None
    att_intent: AttentionParams | None = None
    intent_dec: LstmParams | None = None
    intent_w: Tensor | None = None
    intent_b: Tensor | None = None


@dataclass
class _BiRnnParams:
    embedding: EmbeddingTable
    bwd: LstmParams
    fwd: LstmParams
    label_emb: EmbeddingTable | None = None
    att_slot: AttentionParams | None = None
    out_w: Tensor | None = None
    out_b: Tensor | None = None
    intent_query: Tensor | None = None
    att_intent: AttentionParams | None = None
    intent_w: Tensor | None = None
    intent_b: Tensor | None = None


def _zeros(n: int, dtype) -> Tensor:
    return Tensor(np.zeros((1, n), dtype=dtype))


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


class Model:
    """A configuration, its parameter store, and the label/intent sizes."""

    def __init__(self, config: ModelConfig, n_tokens: int, n_slots: int, n_intents: int):
        config.validate()
        if n_tokens < 1:
            raise ConfigError("token vocabulary must be non-empty")
        if config.has_slot_head and n_slots < 1:
            raise ConfigError("slot label set must be non-empty")
        if config.has_intent_head and n_intents < 1:
            raise ConfigError("intent set must be non-empty")
        self.config = config
        self.n_tokens = n_tokens
        self.n_slots = n_slots
        self.n_intents = n_intents
        self.store = ParamStore()
        self.p: _EncDecParams | _BiRnnParams | None = None

    # the reserved begin-of-sequence row sits after all real labels
    @property
    def bos_label_id(self) -> int:
        return self.n_slots

    @classmethod
    def new(cls, config: ModelConfig, n_tokens: int, n_slots: int, n_intents: int, rng) -> "Model":
        m = cls(config, n_tokens, n_slots, n_intents)
        if config.architecture == ENC_DEC:
            m.p = m._build_encdec(rng)
        else:
            m.p = m._build_birnn(rng)
        return m

    def _build_encdec(self, rng) -> _EncDecParams:
        cfg = self.config
        dt = cfg.dtype
        store = self.store
        hid = cfg.hidden
        p = _EncDecParams(
            enc=EncoderParams.create(store, "enc", self.n_tokens, cfg.embedding_dim, hid, rng, dt)
        )
        if cfg.has_slot_head:
            p.label_emb = EmbeddingTable.create(
                store, "label_embedding", self.n_slots + 1, cfg.label_embedding_dim, rng, dt
            )
            if cfg.attention:
                p.att_slot = AttentionParams.create(store, "att_slot", hid, 2 * hid, cfg.att_dim, rng, dt)
            dec_in = cfg.label_embedding_dim
            if cfg.aligned_inputs:
                dec_in += 2 * hid
            if cfg.attention:
                dec_in += 2 * hid
            p.dec = LstmParams.create(store, "dec", dec_in, hid, rng, dt)
            p.out_w = store.add("out.w", uniform_init(rng, (hid, self.n_slots), dt))
            p.out_b = store.add("out.b", uniform_init(rng, (self.n_slots,), dt))
        if cfg.has_intent_head:
            p.att_intent = AttentionParams.create(store, "att_intent", hid, 2 * hid, cfg.att_dim, rng, dt)
            p.intent_dec = LstmParams.create(store, "intent_dec", 2 * hid, hid, rng, dt)
            p.intent_w = store.add("intent.w", uniform_init(rng, (hid, self.n_intents), dt))
            p.intent_b = store.add("intent.b", uniform_init(rng, (self.n_intents,), dt))
        return p

    def _build_birnn(self, rng) -> _BiRnnParams:
        cfg = self.config
        dt = cfg.dtype
        store = self.store
        hid = cfg.hidden
        fwd_in = cfg.embedding_dim + (cfg.label_embedding_dim if cfg.has_slot_head else 0)
        p = _BiRnnParams(
            embedding=EmbeddingTable.create(store, "embedding", self.n_tokens, cfg.embedding_dim, rng, dt),
            bwd=LstmParams.create(store, "bwd", cfg.embedding_dim, hid, rng, dt),
            fwd=LstmParams.create(store, "fwd", fwd_in, hid, rng, dt),
        )
        if cfg.has_slot_head:
            p.label_emb = EmbeddingTable.create(
                store, "label_embedding", self.n_slots + 1, cfg.label_embedding_dim, rng, dt
            )
            if cfg.attention:
                p.att_slot = AttentionParams.create(store, "att_slot", 2 * hid, 2 * hid, cfg.att_dim, rng, dt)
            feat = 4 * hid if cfg.attention else 2 * hid
            p.out_w = store.add("out.w", uniform_init(rng, (feat, self.n_slots), dt))
            p.out_b = store.add("out.b", uniform_init(rng, (self.n_slots,), dt))
        if cfg.has_intent_head:
            if cfg.attention:
                p.intent_query = store.add("intent.query", uniform_init(rng, (1, 2 * hid), dt))
                p.att_intent = AttentionParams.create(store, "att_intent", 2 * hid, 2 * hid, cfg.att_dim, rng, dt)
            p.intent_w = store.add("intent.w", uniform_init(rng, (2 * hid, self.n_intents), dt))
            p.intent_b = store.add("intent.b", uniform_init(rng, (self.n_intents,), dt))
        return p

    def forward(self, token_ids, gold_slots=None, ctx: RunContext | None = None) -> ModelOutput:
        """Run the full graph. ``gold_slots`` turns on teacher forcing; without
        it the model feeds back its own argmax labels."""
        if ctx is None:
            ctx = RunContext()
        if self.config.architecture == ENC_DEC:
            return encdec_forward(self, token_ids, gold_slots, ctx)
        return birnn_forward(self, token_ids, gold_slots, ctx)

    def decode(self, token_ids, beam_width: int | None = None) -> DecodeResult:
        return decode(self, token_ids, beam_width)


# ---------------------------------------------------------------------------
# encoder-decoder family


def _encdec_state_step(model: Model, states, key_proj, i, prev_label, s, c, ctx, record):
    """One decoder LSTM step; the output projection is applied by the caller."""
    cfg = model.config
    p = model.p
    parts = [embed([prev_label], p.label_emb)]
    if cfg.aligned_inputs:
        parts.append(states.step(i))
    if cfg.attention:
        _, context = attend(s, states.states, p.att_slot, record, key_proj)
        parts.append(context)
    x = ctx.dropout(concat(parts, axis=1) if len(parts) > 1 else parts[0], "decoder_input")
    return lstm_step(x, s, c, p.dec)


def intent_head_encdec(
    model: Model, states: EncoderStates, s0: Tensor, ctx: RunContext, record: AttentionRecord
) -> Tensor:
    """One-step intent decoder over (s0, context over all encoder states)."""
    p = model.p
    _, context = attend(s0, states.states, p.att_intent, record)
    x = ctx.dropout(context, "intent_input")
    h, _ = lstm_step(x, s0, _zeros(model.config.hidden, s0.dtype), p.intent_dec)
    return feed_forward(ctx.dropout(h, "intent_output"), p.intent_w, p.intent_b)


def encdec_forward(model: Model, token_ids, gold_slots=None, ctx: RunContext | None = None) -> ModelOutput:
    cfg = model.config
    if cfg.architecture != ENC_DEC:
        raise ConfigError("encdec_forward called on a non-encoder-decoder model")
    if ctx is None:
        ctx = RunContext()
    p = model.p
    states = encode(token_ids, p.enc, ctx)
    T = states.length
    s0 = initial_decoder_state(states, p.enc.init_w, p.enc.init_b)
    out = ModelOutput()

    if cfg.has_slot_head:
        if gold_slots is not None and len(gold_slots) != T:
            raise DimensionError(f"gold slot count {len(gold_slots)} != token count {T}")
        out.slot_attention = AttentionRecord() if cfg.attention else None
        key_proj = project_keys(states.states, p.att_slot) if cfg.attention else None
        s = s0
        c = _zeros(cfg.hidden, s0.dtype)
        if gold_slots is not None:
            out.fed_labels = [model.bos_label_id] + [int(x) for x in gold_slots[:-1]]
            s_rows = []
            for i in range(T):
                s, c = _encdec_state_step(
                    model, states, key_proj, i, out.fed_labels[i], s, c, ctx, out.slot_attention
                )
                s_rows.append(s)
            hs = concat(s_rows, axis=0) if T > 1 else s_rows[0]
            out.slot_logits = feed_forward(ctx.dropout(hs, "decoder_output"), p.out_w, p.out_b)
            out.predicted_slots = [int(j) for j in np.argmax(out.slot_logits.data, axis=1)]
        else:
            prev = model.bos_label_id
            logit_rows = []
            for i in range(T):
                out.fed_labels.append(prev)
                s, c = _encdec_state_step(
                    model, states, key_proj, i, prev, s, c, ctx, out.slot_attention
                )
                logits = feed_forward(ctx.dropout(s, "decoder_output"), p.out_w, p.out_b)
                logit_rows.append(logits)
                prev = int(np.argmax(logits.data[0]))
                out.predicted_slots.append(prev)
            out.slot_logits = concat(logit_rows, axis=0) if T > 1 else logit_rows[0]

    if cfg.has_intent_head:
        out.intent_attention = AttentionRecord()
        out.intent_logits = intent_head_encdec(model, states, s0, ctx, out.intent_attention)
        out.predicted_intent = int(np.argmax(out.intent_logits.data[0]))
    return out


# ---------------------------------------------------------------------------
# bidirectional tagger family


def _birnn_backward_pass(model: Model, emb, ctx):
    p = model.p
    hid = model.config.hidden
    dtype = emb.dtype
    x = ctx.dropout(emb, "tagger_embedding_bwd")
    rev_stack, _, _ = lstm_sequence(
        flip_rows(x), _zeros(hid, dtype), _zeros(hid, dtype), p.bwd
    )
    return flip_rows(rev_stack)


def _birnn_forced(model: Model, token_ids, fed_labels, ctx: RunContext, out: ModelOutput):
    """Teacher-forced pass: the label feed is known upfront, so both LSTM
    directions run as whole-sequence nodes and attention keys are row slices
    of the full state matrix."""
    cfg = model.config
    p = model.p
    T = len(token_ids)
    dtype = cfg.dtype

    emb = embed(token_ids, p.embedding)
    bwd_stack = _birnn_backward_pass(model, emb, ctx)
    x_fwd = ctx.dropout(emb, "tagger_embedding_fwd")
    if cfg.has_slot_head:
        lab = ctx.dropout(embed(fed_labels, p.label_emb), "tagger_label_embedding")
        xs = concat([x_fwd, lab], axis=1)
    else:
        xs = x_fwd
    fwd_stack, _, _ = lstm_sequence(xs, _zeros(cfg.hidden, dtype), _zeros(cfg.hidden, dtype), p.fwd)
    all_states = concat([fwd_stack, bwd_stack], axis=1)

    if cfg.has_slot_head:
        if cfg.attention:
            _, contexts = attend_causal(all_states, all_states, p.att_slot, out.slot_attention)
            feats = concat([all_states, contexts], axis=1)
        else:
            feats = all_states
        out.slot_logits = feed_forward(ctx.dropout(feats, "tagger_output"), p.out_w, p.out_b)
        out.predicted_slots = [int(j) for j in np.argmax(out.slot_logits.data, axis=1)]
    return all_states


def _birnn_greedy(model: Model, token_ids, ctx: RunContext, out: ModelOutput):
    """Sequential pass feeding back the argmax label; attention keys grow with
    the decoded prefix."""
    cfg = model.config
    p = model.p
    T = len(token_ids)
    dtype = cfg.dtype

    emb = embed(token_ids, p.embedding)
    bwd_stack = _birnn_backward_pass(model, emb, ctx)
    x_fwd = ctx.dropout(emb, "tagger_embedding_fwd")

    fh = _zeros(cfg.hidden, dtype)
    fc = _zeros(cfg.hidden, dtype)
    prefix: Tensor | None = None
    key_proj: Tensor | None = None
    logit_rows = []
    prev = model.bos_label_id
    for i in range(T):
        parts = [rows(x_fwd, i, i + 1)]
        out.fed_labels.append(prev)
        parts.append(ctx.dropout(embed([prev], p.label_emb), "tagger_label_embedding"))
        x = concat(parts, axis=1)
        fh, fc = lstm_step(x, fh, fc, p.fwd)
        h_i = concat([fh, rows(bwd_stack, i, i + 1)], axis=1)
        prefix = h_i if prefix is None else concat([prefix, h_i], axis=0)
        if cfg.attention:
            proj_i = matmul(h_i, p.att_slot.wh)
            key_proj = proj_i if key_proj is None else concat([key_proj, proj_i], axis=0)
            _, context = attend(h_i, prefix, p.att_slot, out.slot_attention, key_proj=key_proj)
            feat = concat([h_i, context], axis=1)
        else:
            feat = h_i
        logits = feed_forward(ctx.dropout(feat, "tagger_output"), p.out_w, p.out_b)
        logit_rows.append(logits)
        prev = int(np.argmax(logits.data[0]))
        out.predicted_slots.append(prev)
    out.slot_logits = concat(logit_rows, axis=0) if T > 1 else logit_rows[0]
    return prefix


def birnn_forward(model: Model, token_ids, gold_slots=None, ctx: RunContext | None = None) -> ModelOutput:
    cfg = model.config
    if cfg.architecture != BI_RNN:
        raise ConfigError("birnn_forward called on a non-tagger model")
    if ctx is None:
        ctx = RunContext()
    token_ids = list(token_ids)
    if not token_ids:
        raise DomainError("cannot run the tagger on an empty token sequence")
    T = len(token_ids)
    out = ModelOutput()
    out.slot_attention = AttentionRecord() if (cfg.has_slot_head and cfg.attention) else None

    if cfg.has_slot_head and gold_slots is not None:
        if len(gold_slots) != T:
            raise DimensionError(f"gold slot count {len(gold_slots)} != token count {T}")
        out.fed_labels = [model.bos_label_id] + [int(s) for s in gold_slots[:-1]]
        all_states = _birnn_forced(model, token_ids, out.fed_labels, ctx, out)
    elif cfg.has_slot_head:
        all_states = _birnn_greedy(model, token_ids, ctx, out)
    else:
        all_states = _birnn_forced(model, token_ids, None, ctx, out)

    if cfg.has_intent_head:
        p = model.p
        if cfg.attention:
            out.intent_attention = AttentionRecord()
            _, feats = attend(p.intent_query, all_states, p.att_intent, out.intent_attention)
        else:
            feats = mean_rows(all_states)
        out.intent_logits = feed_forward(ctx.dropout(feats, "intent_output"), p.intent_w, p.intent_b)
        out.predicted_intent = int(np.argmax(out.intent_logits.data[0]))
    return out


# ---------------------------------------------------------------------------
# loss and decoding


def joint_loss(
    output: ModelOutput,
    gold_slots=None,
    gold_intent: int | None = None,
    w_slot: float = 1.0,
    w_intent: float = 1.0,
) -> Tensor:
    """w_slot * sum_t CE(slot_t) + w_intent * CE(intent).

    Slot cross-entropies are summed, not averaged, within an utterance;
    averaging across a batch is the trainer's job.
    """
    terms = []
    if output.slot_logits is not None:
        n_steps = output.slot_logits.shape[0]
        if gold_slots is None or len(gold_slots) != n_steps:
            got = 0 if gold_slots is None else len(gold_slots)
            raise DimensionError(f"gold slot count {got} != decoder step count {n_steps}")
        terms.append(scale(sequence_cross_entropy(output.slot_logits, gold_slots), w_slot))
    if output.intent_logits is not None:
        if gold_intent is None:
            raise DomainError("model has an intent head but no gold intent was given")
        terms.append(scale(cross_entropy(softmax(output.intent_logits), gold_intent), w_intent))
    if not terms:
        raise DomainError("model output carries neither slot nor intent logits")
    return add_n(terms) if len(terms) > 1 else terms[0]


def _beam_search_slots(model: Model, token_ids, width: int):
    """Beam over label sequences scored by summed log-probabilities."""
    cfg = model.config
    ctx = RunContext()
    p = model.p

    if cfg.architecture == ENC_DEC:
        states = encode(token_ids, p.enc, ctx)
        T = states.length
        s0 = initial_decoder_state(states, p.enc.init_w, p.enc.init_b)
        key_proj = project_keys(states.states, p.att_slot) if cfg.attention else None
        init_carry = (s0, _zeros(cfg.hidden, s0.dtype))

        def step(i, prev, carry):
            s, c = carry
            s, c = _encdec_state_step(model, states, key_proj, i, prev, s, c, ctx, None)
            logits = feed_forward(s, p.out_w, p.out_b)
            return logits.data[0], (s, c)

    else:
        emb = embed(list(token_ids), p.embedding)
        T = emb.shape[0]
        bwd_stack = _birnn_backward_pass(model, emb, ctx)
        init_carry = (_zeros(cfg.hidden, cfg.dtype), _zeros(cfg.hidden, cfg.dtype), None, None)

        def step(i, prev, carry):
            fh, fc, prefix, key_proj = carry
            x = concat([rows(emb, i, i + 1), embed([prev], p.label_emb)], axis=1)
            fh, fc = lstm_step(x, fh, fc, p.fwd)
            h_i = concat([fh, rows(bwd_stack, i, i + 1)], axis=1)
            prefix = h_i if prefix is None else concat([prefix, h_i], axis=0)
            if cfg.attention:
                proj_i = matmul(h_i, p.att_slot.wh)
                key_proj = proj_i if key_proj is None else concat([key_proj, proj_i], axis=0)
                _, context = attend(h_i, prefix, p.att_slot, None, key_proj=key_proj)
                feat = concat([h_i, context], axis=1)
            else:
                feat = h_i
            logits = feed_forward(feat, p.out_w, p.out_b)
            return logits.data[0], (fh, fc, prefix, key_proj)

    hyps = [(0.0, (), init_carry)]
    for i in range(T):
        candidates = []
        for score_so_far, labels, carry in hyps:
            prev = labels[-1] if labels else model.bos_label_id
            logits, carry2 = step(i, prev, carry)
            logp = log_softmax_np(logits)
            for label in range(model.n_slots):
                candidates.append((score_so_far + logp[label], labels + (label,), carry2))
        candidates.sort(key=lambda h: (-h[0], h[1]))
        hyps = candidates[:width]
    best_score, best_labels, _ = hyps[0]
    return list(best_labels), float(best_score)


def _greedy_logprob(output: ModelOutput) -> float:
    total = 0.0
    for row, label in zip(output.slot_logits.data, output.predicted_slots):
        total += float(log_softmax_np(row)[label])
    return total


def decode(model: Model, token_ids, beam_width: int | None = None) -> DecodeResult:
    """Greedy (width 1) or beam decoding over exactly T steps, plus intent argmax."""
    width = model.config.beam_width if beam_width is None else beam_width
    if width < 1:
        raise ConfigError(f"beam width must be >= 1, got {width}")
    if not model.config.has_slot_head or width == 1:
        out = model.forward(token_ids, gold_slots=None, ctx=RunContext())
        logprob = _greedy_logprob(out) if out.slot_logits is not None else 0.0
        return DecodeResult(
            slot_ids=list(out.predicted_slots),
            intent_id=out.predicted_intent,
            slot_attention=out.slot_attention,
            intent_attention=out.intent_attention,
            logprob=logprob,
        )
    best_labels, best_score = _beam_search_slots(model, token_ids, width)
    # forced re-run regenerates attention records and the intent head for the
    # winning sequence without per-hypothesis bookkeeping
    out = model.forward(token_ids, gold_slots=best_labels, ctx=RunContext())
    return DecodeResult(
        slot_ids=best_labels,
        intent_id=out.predicted_intent,
        slot_attention=out.slot_attention,
        intent_attention=out.intent_attention,
        logprob=best_score,
    )
