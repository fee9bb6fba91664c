"""Metrics: chunk-level slot precision/recall/F1, intent error rate, and
attention-weight inspection output.

Chunk extraction follows the classic CoNLL evaluation semantics, including
the forgiving rule that an I- label opens a chunk when it does not continue
one; scores are micro-averaged over the whole corpus.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

from .data import Utterance, Vocabulary
from .models import Model


class UnsupportedOperationError(RuntimeError):
    """The model cannot produce what was asked for (e.g. no attention)."""


def _tag_parts(label: str) -> tuple[str, str]:
    if label.startswith("B-"):
        return "B", label[2:]
    if label.startswith("I-"):
        return "I", label[2:]
    return "O", ""  # anything malformed is normalized to outside


def extract_chunks(labels) -> set[tuple[str, int, int]]:
    """Chunks as (type, start, end) with inclusive ends.

    A chunk starts at B-X, or at I-X whose predecessor is not a B-X/I-X of
    the same type; it ends before O, any B-, or a type change.
    """
    chunks = set()
    current_type = None
    start = 0
    for i, label in enumerate(labels):
        tag, typ = _tag_parts(label)
        if current_type is not None and (tag == "O" or tag == "B" or typ != current_type):
            chunks.add((current_type, start, i - 1))
            current_type = None
        if tag == "B" or (tag == "I" and current_type is None):
            current_type = typ
            start = i
    if current_type is not None:
        chunks.add((current_type, start, len(labels) - 1))
    return chunks


@dataclass
class SlotScore:
    precision: float  # percent
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int
    per_type: dict[str, tuple[int, int, int]] = field(default_factory=dict)  # gold, pred, correct


def _prf(n_gold: int, n_pred: int, n_correct: int) -> tuple[float, float, float]:
    p = 100.0 * n_correct / n_pred if n_pred else 0.0
    r = 100.0 * n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def slot_f1(gold_seqs, pred_seqs) -> SlotScore:
    """Micro-averaged chunk P/R/F1; a chunk counts only on an exact
    (type, start, end) match within its utterance."""
    if len(gold_seqs) != len(pred_seqs):
        raise ValueError(f"corpus sizes differ: {len(gold_seqs)} gold vs {len(pred_seqs)} predicted")
    n_gold = n_pred = n_correct = 0
    per_type: dict[str, list[int]] = {}
    for idx, (gold, pred) in enumerate(zip(gold_seqs, pred_seqs)):
        if len(gold) != len(pred):
            raise ValueError(
                f"utterance {idx}: label counts differ ({len(gold)} gold vs {len(pred)} predicted)"
            )
        g = extract_chunks(gold)
        p = extract_chunks(pred)
        n_gold += len(g)
        n_pred += len(p)
        n_correct += len(g & p)
        for typ, *_ in g:
            per_type.setdefault(typ, [0, 0, 0])[0] += 1
        for typ, *_ in p:
            per_type.setdefault(typ, [0, 0, 0])[1] += 1
        for typ, *_ in g & p:
            per_type.setdefault(typ, [0, 0, 0])[2] += 1
    precision, recall, f1 = _prf(n_gold, n_pred, n_correct)
    return SlotScore(
        precision=precision,
        recall=recall,
        f1=f1,
        n_gold=n_gold,
        n_pred=n_pred,
        n_correct=n_correct,
        per_type={t: tuple(v) for t, v in sorted(per_type.items())},
    )


def intent_error(gold_intents, predicted_intents) -> float:
    """Percent of utterances whose predicted intent differs from gold."""
    if len(gold_intents) != len(predicted_intents):
        raise ValueError(
            f"corpus sizes differ: {len(gold_intents)} gold vs {len(predicted_intents)} predicted"
        )
    if not gold_intents:
        raise ValueError("cannot compute intent error on an empty corpus")
    wrong = sum(1 for g, p in zip(gold_intents, predicted_intents) if g != p)
    return 100.0 * wrong / len(gold_intents)


@dataclass
class EvalReport:
    """Corpus-level scores plus chunk counts and a per-label breakdown."""

    n_utterances: int
    slot: SlotScore | None = None
    intent_err: float | None = None
    decode_logprob: float | None = None

    def to_kv(self) -> str:
        lines = [f"n_utterances={self.n_utterances}"]
        if self.slot is not None:
            s = self.slot
            lines += [
                f"slot_precision={s.precision:.2f}",
                f"slot_recall={s.recall:.2f}",
                f"slot_f1={s.f1:.2f}",
                f"chunks_gold={s.n_gold}",
                f"chunks_pred={s.n_pred}",
                f"chunks_correct={s.n_correct}",
            ]
        else:
            lines += ["slot_precision=n/a", "slot_recall=n/a", "slot_f1=n/a"]
        if self.intent_err is not None:
            lines.append(f"intent_error={self.intent_err:.2f}")
        else:
            lines.append("intent_error=n/a")
        if self.decode_logprob is not None:
            lines.append(f"decode_logprob={self.decode_logprob:.6f}")
        return "\n".join(lines)

    def to_table(self) -> str:
        rows = [("metric", "value")]
        if self.slot is not None:
            rows += [
                ("slot precision", f"{self.slot.precision:.2f}"),
                ("slot recall", f"{self.slot.recall:.2f}"),
                ("slot F1", f"{self.slot.f1:.2f}"),
            ]
        if self.intent_err is not None:
            rows.append(("intent error", f"{self.intent_err:.2f}"))
        rows.append(("utterances", str(self.n_utterances)))
        if self.slot is not None and self.slot.per_type:
            rows.append(("", ""))
            rows.append(("per label (gold/pred/correct)", ""))
            for typ, (g, p, c) in self.slot.per_type.items():
                rows.append((f"  {typ}", f"{g}/{p}/{c}"))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate_model(
    model: Model,
    utterances,
    token_vocab: Vocabulary,
    slot_vocab: Vocabulary,
    intent_vocab: Vocabulary,
    beam_width: int | None = None,
) -> EvalReport:
    """Decode every utterance and score against its gold annotation."""
    utterances = list(utterances)
    gold_slots, pred_slots = [], []
    gold_intents, pred_intents = [], []
    total_logprob = 0.0
    for u in utterances:
        ids = [token_vocab.encode(t) for t in u.tokens]
        result = model.decode(ids, beam_width=beam_width)
        total_logprob += result.logprob
        if model.config.has_slot_head:
            gold_slots.append(list(u.slots))
            pred_slots.append([slot_vocab.from_content_index(i) for i in result.slot_ids])
        if model.config.has_intent_head:
            gold_intents.append(u.intent)
            pred_intents.append(intent_vocab.from_content_index(result.intent_id))
    report = EvalReport(n_utterances=len(utterances))
    if gold_slots:
        report.slot = slot_f1(gold_slots, pred_slots)
        report.decode_logprob = total_logprob
    if gold_intents:
        report.intent_err = intent_error(gold_intents, pred_intents)
    return report


def dump_attention(
    model: Model,
    utterance: Utterance,
    token_vocab: Vocabulary,
    slot_vocab: Vocabulary,
    intent_vocab: Vocabulary,
    out,
    beam_width: int | None = None,
) -> None:
    """Write decoded attention weights as CSV: a token header row, one row per
    decoding step labeled with its predicted slot label, then (when the model
    has an attentive intent head) a final ``intent:<label>`` row.

    Tagger slot rows are scored over the step prefix and zero-padded on the
    right, so every row still sums to 1.
    """
    if not model.config.attention:
        raise UnsupportedOperationError(
            "this model has no attention weights to inspect (aligned-inputs-only "
            "encoder-decoder or tagger without attention)"
        )
    ids = [token_vocab.encode(t) for t in utterance.tokens]
    result = model.decode(ids, beam_width=beam_width)
    width = len(utterance.tokens)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["label"] + list(utterance.tokens))
    if result.slot_attention is not None:
        matrix = result.slot_attention.weight_matrix(width)
        for i, slot_id in enumerate(result.slot_ids):
            label = slot_vocab.from_content_index(slot_id)
            writer.writerow([label] + [f"{w:.9f}" for w in matrix[i]])
    if result.intent_attention is not None and result.intent_attention.n_steps:
        intent = intent_vocab.from_content_index(result.intent_id)
        row = result.intent_attention.weight_matrix(width)[0]
        writer.writerow([f"intent:{intent}"] + [f"{w:.9f}" for w in row])
