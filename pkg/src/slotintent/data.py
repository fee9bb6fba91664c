"""Corpus I/O, vocabularies, synthetic corpus generation, and split helpers.

Corpus file format (UTF-8): blocks separated by one blank line. The first
line of a block is ``intent: <label>``; each following line is
``<token>\\t<slot_label>``. No trailing whitespace; final newline required.
A directory corpus holds ``train.txt``, ``dev.txt``, ``test.txt``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD = "<pad>"
UNK = "<unk>"
BOS = "<bos>"

TOKEN_SPECIALS = (PAD, UNK)
SLOT_SPECIALS = (PAD, UNK, BOS)
INTENT_SPECIALS = (PAD, UNK)

_IOB_RE = re.compile(r"^(O|[BI]-\S+)$")


class CorpusFormatError(ValueError):
    """Malformed corpus text; message carries the 1-based line number."""


@dataclass(frozen=True)
class Utterance:
    """A token sequence, its aligned IOB slot labels, and one intent label."""

    tokens: tuple[str, ...]
    slots: tuple[str, ...]
    intent: str

    def __post_init__(self):
        if len(self.tokens) != len(self.slots) or not self.tokens:
            raise CorpusFormatError(
                f"utterance needs equal, nonzero token/slot counts "
                f"(got {len(self.tokens)} tokens, {len(self.slots)} slots)"
            )
        for s in self.slots:
            if not _IOB_RE.match(s):
                raise CorpusFormatError(f"slot label {s!r} is not O, B-<type>, or I-<type>")
        if not self.intent:
            raise CorpusFormatError("utterance needs a nonempty intent label")

    def __len__(self) -> int:
        return len(self.tokens)


def parse_corpus(text: str) -> list[Utterance]:
    """Parse block-format corpus text; errors name the offending line."""
    utterances: list[Utterance] = []
    intent: str | None = None
    tokens: list[str] = []
    slots: list[str] = []
    block_start = 0

    def flush(line_no: int):
        nonlocal intent, tokens, slots
        if intent is None:
            return
        if not tokens:
            raise CorpusFormatError(f"line {block_start}: block has an intent but no token lines")
        utterances.append(Utterance(tuple(tokens), tuple(slots), intent))
        intent, tokens, slots = None, [], []

    for line_no, line in enumerate(text.split("\n"), start=1):
        if line == "":
            flush(line_no)
            continue
        if intent is None:
            if not line.startswith("intent: "):
                raise CorpusFormatError(
                    f"line {line_no}: expected 'intent: <label>' at block start, got {line!r}"
                )
            intent = line[len("intent: ") :]
            if not intent or intent != intent.strip():
                raise CorpusFormatError(f"line {line_no}: empty or padded intent label")
            block_start = line_no
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise CorpusFormatError(
                f"line {line_no}: expected '<token>\\t<slot_label>', got {line!r}"
            )
        try:
            tokens.append(parts[0])
            slots.append(parts[1])
            if not _IOB_RE.match(parts[1]):
                raise CorpusFormatError(
                    f"line {line_no}: slot label {parts[1]!r} is not O, B-<type>, or I-<type>"
                )
        except CorpusFormatError:
            raise
    flush(len(text.split("\n")))
    return utterances


def serialize_corpus(utterances) -> str:
    """Canonical text form; parse(serialize(x)) == x and the form is stable."""
    blocks = []
    for u in utterances:
        lines = [f"intent: {u.intent}"]
        lines.extend(f"{t}\t{s}" for t, s in zip(u.tokens, u.slots))
        blocks.append("\n".join(lines) + "\n")
    return "\n".join(blocks)


def load_corpus_file(path) -> list[Utterance]:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


def save_corpus_file(path, utterances) -> None:
    Path(path).write_text(serialize_corpus(utterances), encoding="utf-8")


class Vocabulary:
    """Bijective token/id map with reserved leading specials.

    Encoding an unseen item returns the UNK id. ``content`` indices address
    the non-special tail, which is what model heads emit logits over.
    """

    def __init__(self, entries: list[str], n_specials: int):
        if len(set(entries)) != len(entries):
            raise ValueError("vocabulary entries must be unique")
        self._entries = list(entries)
        self._ids = {tok: i for i, tok in enumerate(entries)}
        self.n_specials = n_specials

    @classmethod
    def build(cls, items, specials, min_count: int = 1) -> "Vocabulary":
        counts = Counter(items)
        kept = sorted(
            (tok for tok, n in counts.items() if n >= min_count and tok not in specials),
            key=lambda tok: (-counts[tok], tok),
        )
        return cls(list(specials) + kept, n_specials=len(specials))

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self._entries == other._entries
            and self.n_specials == other.n_specials
        )

    @property
    def size(self) -> int:
        return len(self._entries)

    @property
    def content_size(self) -> int:
        return len(self._entries) - self.n_specials

    def encode(self, item: str) -> int:
        return self._ids.get(item, self._ids.get(UNK, 0))

    def decode(self, idx: int) -> str:
        return self._entries[idx]

    def __contains__(self, item: str) -> bool:
        return item in self._ids

    def content_index(self, item: str) -> int:
        """Index into the logit space; unseen or special items are not mappable."""
        idx = self._ids.get(item)
        if idx is None or idx < self.n_specials:
            raise KeyError(f"label {item!r} is not a trainable vocabulary entry")
        return idx - self.n_specials

    def from_content_index(self, idx: int) -> str:
        return self._entries[idx + self.n_specials]

    def content_entries(self) -> list[str]:
        return self._entries[self.n_specials :]

    def to_dict(self) -> dict:
        return {"entries": self._entries, "n_specials": self.n_specials}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(list(d["entries"]), int(d["n_specials"]))


def build_vocab(utterances, min_count: int = 1) -> tuple[Vocabulary, Vocabulary, Vocabulary]:
    """Token, slot-label, and intent vocabularies with deterministic ids:
    specials first, then entries by descending frequency, ties lexicographic.
    ``min_count`` prunes rare tokens only; labels are always kept."""
    if not utterances:
        raise ValueError("cannot build vocabularies from an empty corpus")
    tokens = Vocabulary.build(
        (t for u in utterances for t in u.tokens), TOKEN_SPECIALS, min_count=min_count
    )
    slots = Vocabulary.build((s for u in utterances for s in u.slots), SLOT_SPECIALS)
    intents = Vocabulary.build((u.intent for u in utterances), INTENT_SPECIALS)
    return tokens, slots, intents


def encode_utterance(u: Utterance, token_vocab: Vocabulary, slot_vocab: Vocabulary, intent_vocab: Vocabulary):
    """(token ids, slot logit-space targets, intent logit-space target)."""
    token_ids = [token_vocab.encode(t) for t in u.tokens]
    slot_targets = [slot_vocab.content_index(s) for s in u.slots]
    intent_target = intent_vocab.content_index(u.intent)
    return token_ids, slot_targets, intent_target


# ---------------------------------------------------------------------------
# synthetic corpus generation

_PLACEHOLDER_RE = re.compile(r"^\{([a-z0-9_]+)\}$")


@dataclass(frozen=True)
class Template:
    intent: str
    tokens: tuple[str, ...]


@dataclass
class SyntheticGrammar:
    """Slot-placeholder templates plus per-slot-type lexicons.

    Template tokens of the form ``{slot_type}`` are replaced by a lexicon
    entry (possibly multi-word); gold IOB labels follow from the template, so
    every generated utterance is labelable with certainty.
    """

    templates: list[Template] = field(default_factory=list)
    lexicons: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)

    def validate(self) -> "SyntheticGrammar":
        if not self.templates:
            raise ValueError("grammar needs at least one template")
        for tpl in self.templates:
            for tok in tpl.tokens:
                m = _PLACEHOLDER_RE.match(tok)
                if m and m.group(1) not in self.lexicons:
                    raise ValueError(f"template uses unknown slot type {m.group(1)!r}")
        for slot, values in self.lexicons.items():
            if not values or any(not v for v in values):
                raise ValueError(f"lexicon for {slot!r} has empty entries")
        return self

    def slot_types(self) -> list[str]:
        return sorted(self.lexicons)

    def intents(self) -> list[str]:
        return sorted({t.intent for t in self.templates})

    def to_json(self) -> str:
        return json.dumps(
            {
                "templates": [{"intent": t.intent, "tokens": list(t.tokens)} for t in self.templates],
                "lexicons": {k: [list(v) for v in vs] for k, vs in self.lexicons.items()},
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticGrammar":
        raw = json.loads(text)
        unknown = set(raw) - {"templates", "lexicons"}
        if unknown:
            raise ValueError(f"unknown grammar keys: {sorted(unknown)}")
        grammar = cls(
            templates=[Template(t["intent"], tuple(t["tokens"])) for t in raw["templates"]],
            lexicons={k: [tuple(v) for v in vs] for k, vs in raw["lexicons"].items()},
        )
        return grammar.validate()

    @classmethod
    def default(cls) -> "SyntheticGrammar":
        return _default_grammar()


def _tpl(intent: str, text: str) -> Template:
    return Template(intent, tuple(text.split()))


def _default_grammar() -> SyntheticGrammar:
    """Travel-assistant grammar: 8 intents, 12 slot types, multi-word slot
    values, and a book/cancel flight pair whose shared templates differ in a
    single word far from the slots (long-range intent evidence)."""
    cities = [
        ("boston",), ("denver",), ("new", "york"), ("los", "angeles"),
        ("salt", "lake", "city"), ("chicago",), ("san", "francisco"),
        ("miami",), ("seattle",), ("atlanta",),
    ]
    lexicons = {
        "from_city": cities,
        "to_city": cities,
        "depart_date": [
            ("monday",), ("tuesday",), ("next", "friday"), ("july", "fourth"),
            ("tomorrow",), ("this", "weekend"), ("december", "third"), ("sunday", "evening"),
        ],
        "depart_time": [
            ("noon",), ("eight", "am"), ("five", "pm"), ("early", "morning"),
            ("late", "evening"), ("six", "thirty"),
        ],
        "airline": [
            ("united",), ("delta",), ("alaska", "air"), ("jet", "blue"),
            ("lufthansa",), ("qantas",),
        ],
        "cabin_class": [
            ("economy",), ("first", "class"), ("business", "class"), ("premium", "economy"),
        ],
        "hotel_name": [
            ("grand", "plaza"), ("sea", "view", "inn"), ("north", "gate", "lodge"),
            ("king", "suite", "hotel"), ("city", "center", "hostel"),
        ],
        "nights": [("two",), ("three",), ("five",), ("seven",), ("ten",)],
        "cuisine": [
            ("thai",), ("italian",), ("sushi",), ("barbecue",), ("vegan",), ("dim", "sum"),
        ],
        "party_size": [("two",), ("four",), ("six",), ("eight",)],
        "car_type": [
            ("compact",), ("suv",), ("luxury", "sedan"), ("minivan",), ("pickup", "truck"),
        ],
        "pickup_place": [
            ("the", "airport"), ("downtown",), ("the", "train", "station"), ("my", "hotel"),
        ],
    }
    templates = [
        _tpl("book_flight", "i would like to book a flight from {from_city} to {to_city} on {depart_date}"),
        _tpl("book_flight", "book me a {cabin_class} seat with {airline} leaving {from_city} at {depart_time}"),
        _tpl("book_flight", "please book a {airline} flight to {to_city} departing {depart_date} at {depart_time}"),
        _tpl("book_flight", "there is a flight from {from_city} to {to_city} on {depart_date} that i need you to book for me"),
        _tpl("cancel_flight", "i would like to cancel a flight from {from_city} to {to_city} on {depart_date}"),
        _tpl("cancel_flight", "please cancel my {airline} flight to {to_city} departing {depart_date} at {depart_time}"),
        _tpl("cancel_flight", "there is a flight from {from_city} to {to_city} on {depart_date} that i need you to cancel for me"),
        _tpl("flight_status", "what is the status of the {airline} flight from {from_city} to {to_city}"),
        _tpl("flight_status", "has the flight to {to_city} on {depart_date} left yet"),
        _tpl("flight_status", "is the {depart_time} flight from {from_city} running late"),
        _tpl("book_hotel", "book a room at {hotel_name} in {to_city} for {nights} nights"),
        _tpl("book_hotel", "i need a hotel room for {nights} nights starting {depart_date} at {hotel_name}"),
        _tpl("cancel_hotel", "please cancel my reservation at {hotel_name} in {to_city}"),
        _tpl("cancel_hotel", "cancel the room at {hotel_name} i reserved for {depart_date}"),
        _tpl("find_restaurant", "find me a {cuisine} restaurant in {to_city} for {party_size} people"),
        _tpl("find_restaurant", "where can {party_size} of us get {cuisine} food near {pickup_place}"),
        _tpl("rent_car", "i want to rent a {car_type} at {pickup_place} on {depart_date}"),
        _tpl("rent_car", "reserve a {car_type} for pickup at {pickup_place} at {depart_time}"),
        _tpl("greeting", "hello there"),
        _tpl("greeting", "good morning to you"),
        _tpl("greeting", "thanks for all of your help today"),
        _tpl("greeting", "goodbye now"),
    ]
    return SyntheticGrammar(templates=templates, lexicons=lexicons).validate()


def generate_synthetic(grammar: SyntheticGrammar, n: int, seed: int) -> list[Utterance]:
    """Sample templates and lexicon fillers uniformly with a seeded RNG."""
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    grammar.validate()
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        tpl = grammar.templates[int(rng.integers(len(grammar.templates)))]
        tokens: list[str] = []
        slots: list[str] = []
        for tok in tpl.tokens:
            m = _PLACEHOLDER_RE.match(tok)
            if m is None:
                tokens.append(tok)
                slots.append("O")
                continue
            slot_type = m.group(1)
            values = grammar.lexicons[slot_type]
            words = values[int(rng.integers(len(values)))]
            for j, w in enumerate(words):
                tokens.append(w)
                slots.append(("B-" if j == 0 else "I-") + slot_type)
        out.append(Utterance(tuple(tokens), tuple(slots), tpl.intent))
    return out


# ---------------------------------------------------------------------------
# splits


def kfold_split(utterances, k: int = 10, seed: int = 0):
    """Seeded shuffle then k nearly equal contiguous folds (sizes differ <= 1);
    every utterance lands in exactly one test fold."""
    n = len(utterances)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds corpus size {n}")
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [utterances[i] for i in order]
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = shuffled[start : start + size]
        train = shuffled[:start] + shuffled[start + size :]
        folds.append((train, test))
        start += size
    return folds


def train_dev_split(utterances, dev_fraction: float = 0.1, seed: int = 0):
    """Seeded shuffle; the first ``dev_fraction`` share becomes the dev set."""
    n = len(utterances)
    if n < 2:
        raise ValueError("need at least two utterances to split off a dev set")
    order = np.random.default_rng(seed).permutation(n)
    n_dev = min(n - 1, max(1, int(round(n * dev_fraction))))
    dev = [utterances[i] for i in order[:n_dev]]
    train = [utterances[i] for i in order[n_dev:]]
    return train, dev
