"""Mini-batch training: Adam with bias correction, global-norm gradient
clipping, seeded shuffling, dev-set model selection with patience, and a
binary checkpoint format.

Batches are processed one utterance at a time; gradients accumulate across
the batch in a fixed order and are rescaled to the batch mean before
clipping, which is exactly the masked-padding computation without any
padding. Default hyperparameters: batch 16, clip norm 5, Adam at
lr 0.001 / beta1 0.9 / beta2 0.999 / eps 1e-8.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import Vocabulary, build_vocab, encode_utterance
from .evaluation import evaluate_model
from .layers import RunContext
from .models import Model, ModelConfig, joint_loss
from .tensor import ParamStore

CHECKPOINT_MAGIC = b"SLTF"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_DTYPE_NAMES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class TrainingError(RuntimeError):
    """Training aborted (non-finite gradients, empty corpus, ...)."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    max_grad_norm: float = 5.0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    w_slot: float = 1.0
    w_intent: float = 1.0

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_grad_norm <= 0:
            raise ValueError(f"max_grad_norm must be > 0, got {self.max_grad_norm}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.eval_every < 1 or self.patience < 1:
            raise ValueError("eval_every and patience must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class AdamState:
    """Per-parameter first/second moments plus the shared step counter."""

    def __init__(self, store: ParamStore):
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.t = 0


def clip_gradients(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients by max_norm/g when the global norm g exceeds it;
    returns the applied scale. Aborts on a non-finite gradient."""
    total = 0.0
    for name, tensor in store.items():
        if tensor.grad is None:
            continue
        sq = float(np.sum(tensor.grad.astype(np.float64) ** 2))
        if not math.isfinite(sq):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        total += sq
    norm = math.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    scale = max_norm / norm
    store.scale_grads(scale)
    return scale


def adam_step(store: ParamStore, state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update; gradients are zeroed afterward."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    correction1 = 1.0 - b1**state.t
    correction2 = 1.0 - b2**state.t
    for name, tensor in store.items():
        g = tensor.grad
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + cfg.adam_eps)
        tensor.data -= cfg.lr * update.astype(tensor.dtype)
    store.zero_grad()


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    dev_f1: float | None
    dev_intent_err: float | None

    def format(self) -> str:
        def fmt(v):
            return "n/a" if v is None else f"{v:.6f}"

        return f"{self.epoch}\t{self.train_loss:.6f}\t{fmt(self.dev_f1)}\t{fmt(self.dev_intent_err)}"


@dataclass
class Checkpoint:
    """Everything needed to resume or evaluate: config, vocabularies, named
    parameter tensors, Adam state, and the optimizer step counter."""

    model_config: ModelConfig
    token_vocab: Vocabulary
    slot_vocab: Vocabulary
    intent_vocab: Vocabulary
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_t: int
    step: int
    version: int = CHECKPOINT_VERSION

    def build_model(self) -> Model:
        model = Model.new(
            self.model_config,
            n_tokens=self.token_vocab.size,
            n_slots=self.slot_vocab.content_size,
            n_intents=self.intent_vocab.content_size,
            rng=np.random.default_rng(0),
        )
        model.store.load_state(self.params)
        return model

    # binary layout: magic "SLTF", u32 version, u32 tensor count, per tensor
    # (u16 name length, name utf-8, u8 dtype code, u8 ndim, u32 dims...,
    # u64 byte length, raw little-endian C-order data), u64 meta length,
    # meta JSON utf-8. Parameter tensors are prefixed "p/", Adam moments
    # "m/" and "v/".
    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        buf.write(struct.pack("<I", self.version))
        entries = [("p/" + k, a) for k, a in self.params.items()]
        entries += [("m/" + k, a) for k, a in self.adam_m.items()]
        entries += [("v/" + k, a) for k, a in self.adam_v.items()]
        buf.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            raw_name = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw_name)))
            buf.write(raw_name)
            code = _DTYPE_NAMES[np.dtype(arr.dtype)]
            buf.write(struct.pack("<BB", code, arr.ndim))
            for dim in arr.shape:
                buf.write(struct.pack("<I", dim))
            data = np.ascontiguousarray(arr).astype(_DTYPE_CODES[code], copy=False).tobytes()
            buf.write(struct.pack("<Q", len(data)))
            buf.write(data)
        meta = json.dumps(
            {
                "model_config": self.model_config.to_dict(),
                "vocabs": {
                    "tokens": self.token_vocab.to_dict(),
                    "slots": self.slot_vocab.to_dict(),
                    "intents": self.intent_vocab.to_dict(),
                },
                "adam_t": self.adam_t,
                "step": self.step,
            },
            sort_keys=True,
        ).encode("utf-8")
        buf.write(struct.pack("<Q", len(meta)))
        buf.write(meta)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        buf = io.BytesIO(blob)
        magic = buf.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file (magic {magic!r})")
        (version,) = struct.unpack("<I", buf.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<I", buf.read(4))
        groups: dict[str, dict[str, np.ndarray]] = {"p": {}, "m": {}, "v": {}}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", buf.read(2))
            name = buf.read(name_len).decode("utf-8")
            code, ndim = struct.unpack("<BB", buf.read(2))
            shape = tuple(struct.unpack("<I", buf.read(4))[0] for _ in range(ndim))
            (nbytes,) = struct.unpack("<Q", buf.read(8))
            arr = np.frombuffer(buf.read(nbytes), dtype=_DTYPE_CODES[code]).reshape(shape)
            prefix, bare = name.split("/", 1)
            groups[prefix][bare] = arr.astype(arr.dtype.newbyteorder("="))
        (meta_len,) = struct.unpack("<Q", buf.read(8))
        meta = json.loads(buf.read(meta_len).decode("utf-8"))
        return cls(
            model_config=ModelConfig.from_dict(meta["model_config"]),
            token_vocab=Vocabulary.from_dict(meta["vocabs"]["tokens"]),
            slot_vocab=Vocabulary.from_dict(meta["vocabs"]["slots"]),
            intent_vocab=Vocabulary.from_dict(meta["vocabs"]["intents"]),
            params=groups["p"],
            adam_m=groups["m"],
            adam_v=groups["v"],
            adam_t=int(meta["adam_t"]),
            step=int(meta["step"]),
            version=version,
        )

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[MetricsRow] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float | None = None


def _selection_metric(cfg: ModelConfig, dev_f1, dev_ierr) -> float:
    # higher is better: slot-bearing models select on F1, intent-only on -error
    return dev_f1 if cfg.has_slot_head else -dev_ierr


def train(
    model_cfg: ModelConfig,
    train_utts,
    dev_utts,
    tcfg: TrainConfig,
    log=None,
) -> TrainResult:
    """Full training run; returns the checkpoint with the best dev metric.

    Deterministic for a fixed (seed, corpus, config) on a single thread: the
    init, shuffle, and dropout RNG streams are all derived from one seed, and
    per-batch gradients are reduced in corpus order.
    """
    model_cfg.validate()
    tcfg.validate()
    train_utts = list(train_utts)
    dev_utts = list(dev_utts)
    if not train_utts:
        raise TrainingError("training corpus is empty")
    if not dev_utts:
        raise TrainingError("dev corpus is empty")

    token_vocab, slot_vocab, intent_vocab = build_vocab(train_utts)
    init_ss, shuffle_ss, dropout_ss = np.random.SeedSequence(tcfg.seed).spawn(3)
    model = Model.new(
        model_cfg,
        n_tokens=token_vocab.size,
        n_slots=slot_vocab.content_size,
        n_intents=intent_vocab.content_size,
        rng=np.random.default_rng(init_ss),
    )
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    encoded = [encode_utterance(u, token_vocab, slot_vocab, intent_vocab) for u in train_utts]
    adam = AdamState(model.store)
    step = 0

    def snapshot() -> Checkpoint:
        return Checkpoint(
            model_config=model_cfg,
            token_vocab=token_vocab,
            slot_vocab=slot_vocab,
            intent_vocab=intent_vocab,
            params=model.store.state_dict(),
            adam_m={k: a.copy() for k, a in adam.m.items()},
            adam_v={k: a.copy() for k, a in adam.v.items()},
            adam_t=adam.t,
            step=step,
        )

    result = TrainResult(checkpoint=snapshot())
    stale_evals = 0

    for epoch in range(1, tcfg.epochs + 1):
        order = shuffle_rng.permutation(len(encoded))
        epoch_loss = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            batch = order[start : start + tcfg.batch_size]
            model.store.zero_grad()
            for idx in batch:
                token_ids, slot_targets, intent_target = encoded[idx]
                ctx = RunContext(train=True, keep=model_cfg.dropout_keep, rng=dropout_rng)
                out = model.forward(
                    token_ids,
                    gold_slots=slot_targets if model_cfg.has_slot_head else None,
                    ctx=ctx,
                )
                loss = joint_loss(
                    out,
                    gold_slots=slot_targets if model_cfg.has_slot_head else None,
                    gold_intent=intent_target if model_cfg.has_intent_head else None,
                    w_slot=tcfg.w_slot,
                    w_intent=tcfg.w_intent,
                )
                epoch_loss += loss.item()
                loss.backward()
            model.store.scale_grads(1.0 / len(batch))
            clip_gradients(model.store, tcfg.max_grad_norm)
            adam_step(model.store, adam, tcfg)
            step += 1
        train_loss = epoch_loss / len(encoded)

        if epoch % tcfg.eval_every == 0:
            report = evaluate_model(model, dev_utts, token_vocab, slot_vocab, intent_vocab)
            dev_f1 = report.slot.f1 if report.slot is not None else None
            dev_ierr = report.intent_err
            row = MetricsRow(epoch, train_loss, dev_f1, dev_ierr)
            result.history.append(row)
            if log is not None:
                log(row.format())
            metric = _selection_metric(model_cfg, dev_f1, dev_ierr)
            if result.best_metric is None or metric > result.best_metric:
                result.best_metric = metric
                result.best_epoch = epoch
                result.checkpoint = snapshot()
                stale_evals = 0
            else:
                stale_evals += 1
                if stale_evals >= tcfg.patience:
                    break
    if result.best_metric is None:
        # no evaluation ever ran (epochs < eval_every); keep the final state
        result.checkpoint = snapshot()
    return result
