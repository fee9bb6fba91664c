"""Shared toy builders for the test suite."""

import numpy as np

from slotintent.data import SyntheticGrammar, Utterance, generate_synthetic
from slotintent.layers import RunContext
from slotintent.models import Model, ModelConfig, joint_loss

TOY_DIMS = dict(hidden=4, embedding_dim=4, label_embedding_dim=3, att_dim=3, precision="f64")

ALL_JOINT_CONFIGS = [
    dict(architecture="encdec", aligned_inputs=False, attention=True, task="joint"),
    dict(architecture="encdec", aligned_inputs=True, attention=False, task="joint"),
    dict(architecture="encdec", aligned_inputs=True, attention=True, task="joint"),
    dict(architecture="birnn", attention=False, task="joint"),
    dict(architecture="birnn", attention=True, task="joint"),
]

GRAD_CHECK_CONFIGS = ALL_JOINT_CONFIGS + [
    dict(architecture="encdec", aligned_inputs=True, attention=True, task="slot"),
    dict(architecture="encdec", aligned_inputs=True, attention=True, task="intent"),
    dict(architecture="birnn", attention=True, task="slot"),
]


def toy_model(seed=0, n_tokens=7, n_slots=5, n_intents=3, **overrides) -> Model:
    cfg = ModelConfig(**{**TOY_DIMS, **overrides})
    return Model.new(cfg, n_tokens, n_slots, n_intents, np.random.default_rng(seed))


def train_ctx(keep=1.0, seed=0) -> RunContext:
    return RunContext(train=True, keep=keep, rng=np.random.default_rng(seed))


def model_loss_fn(model, token_ids, gold_slots, gold_intent):
    cfg = model.config

    def f(params):
        out = model.forward(
            token_ids,
            gold_slots=gold_slots if cfg.has_slot_head else None,
            ctx=RunContext(train=True, keep=1.0),
        )
        return joint_loss(
            out,
            gold_slots if cfg.has_slot_head else None,
            gold_intent if cfg.has_intent_head else None,
        )

    return f


def zero_projections(model) -> None:
    """Zero every output projection so all predicted distributions are uniform."""
    for name in ("out.w", "out.b", "intent.w", "intent.b"):
        if name in model.store:
            model.store[name].data[:] = 0.0


def tiny_corpus(n=16, seed=0) -> list[Utterance]:
    return generate_synthetic(SyntheticGrammar.default(), n, seed=seed)
