"""slotintent: joint slot filling and intent detection.

Encoder-decoder and attention BiRNN taggers on a self-contained numpy
autodiff engine, with the full training recipe (Adam, gradient clipping,
inverted dropout, early stopping) and conlleval-style chunk F1 evaluation.
"""

from .data import (
    SyntheticGrammar,
    Utterance,
    Vocabulary,
    build_vocab,
    generate_synthetic,
    kfold_split,
    load_corpus_file,
    parse_corpus,
    serialize_corpus,
)
from .evaluation import EvalReport, evaluate_model, extract_chunks, intent_error, slot_f1
from .models import Model, ModelConfig, decode, joint_loss
from .tensor import ParamStore, Precision, Tensor, grad_check
from .trainer import Checkpoint, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "EvalReport",
    "Model",
    "ModelConfig",
    "ParamStore",
    "Precision",
    "SyntheticGrammar",
    "Tensor",
    "TrainConfig",
    "Utterance",
    "Vocabulary",
    "build_vocab",
    "decode",
    "evaluate_model",
    "extract_chunks",
    "generate_synthetic",
    "grad_check",
    "intent_error",
    "joint_loss",
    "kfold_split",
    "load_corpus_file",
    "parse_corpus",
    "serialize_corpus",
    "slot_f1",
    "train",
    "__version__",
]
