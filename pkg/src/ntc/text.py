"""Tokenization, vocabulary, HuffPost ingestion, splitting and batching."""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptySequenceError, EmptyTextError, IngestionError, StratificationError
from .tensor import make_rng

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
MAX_MALFORMED = 0.10
MALFORMED_GRACE = 2  # small files may carry a couple of bad lines
REQUIRED_FIELDS = ("category", "headline", "short_description")

_WORD = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _WORD.findall(text.lower())


@dataclass
class Vocabulary:
    itos: list[str]
    counts: list[int]
    min_count: int = 1
    max_size: int | None = None
    stoi: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, (tok, n) in enumerate(zip(self.itos, self.counts)):
                fh.write(f"{tok}\t{i}\t{n}\n")

    @classmethod
    def read(cls, path: str | Path) -> "Vocabulary":
        itos, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or int(parts[1]) != lineno - 1:
                    raise IngestionError(f"{path}:{lineno}: malformed vocabulary line")
                itos.append(parts[0])
                counts.append(int(parts[2]))
        if itos[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise IngestionError(f"{path}: vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}")
        return cls(itos, counts)


def build_vocab(corpus: Iterable[Sequence[str]], min_count: int = 1, max_size: int | None = None) -> Vocabulary:
    """Keep tokens seen at least ``min_count`` times, most frequent first.

    Ties are broken lexicographically; at most ``max_size - 2`` tokens are
    kept since ids 0 and 1 are reserved for padding and unknown tokens.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    freq = Counter(tok for doc in corpus for tok in doc)
    ranked = sorted((kv for kv in freq.items() if kv[1] >= min_count), key=lambda kv: (-kv[1], kv[0]))
    if max_size is not None:
        ranked = ranked[: max(max_size - 2, 0)]
    return Vocabulary(
        [PAD_TOKEN, UNK_TOKEN] + [t for t, _ in ranked],
        [0, 0] + [n for _, n in ranked],
        min_count,
        max_size,
    )


def encode(tokens: Sequence[str], vocab: Vocabulary, max_len: int) -> tuple[np.ndarray, int]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if not tokens:
        raise EmptyTextError("cannot encode an empty token list")
    ids = np.full(max_len, PAD, dtype=np.int64)
    kept = [vocab.id(t) for t in tokens[:max_len]]
    ids[: len(kept)] = kept
    return ids, len(kept)


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    """Tokens for the non-pad prefix of ``ids``."""
    out = []
    for i in ids:
        if i == PAD:
            break
        out.append(vocab.token(int(i)))
    return out


@dataclass
class Record:
    category: str
    headline: str
    short_description: str
    label: int | None = None

    @property
    def text(self) -> str:
        return f"{self.headline} {self.short_description}"

    def to_json(self) -> str:
        d = {"category": self.category, "headline": self.headline, "short_description": self.short_description}
        if self.label is not None:
            d["label"] = self.label
        return json.dumps(d, sort_keys=True, ensure_ascii=False)


def load_huffpost(path: str | Path, categories: Iterable[str] | None = None) -> list[Record]:
    """Read a line-delimited HuffPost file.

    Malformed lines and lines missing a required field are skipped with a
    warning naming the line number.  More than 10% of such lines (and more
    than two in absolute terms) aborts with :class:`IngestionError`.  An integer ``label`` field, when present, is kept.
    """
    allow = None if categories is None else set(categories)
    records: list[Record] = []
    bad = total = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            total += 1
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("not an object")
            except ValueError as exc:
                bad += 1
                log.warning("%s:%d: malformed record skipped (%s)", path, lineno, exc)
                continue
            missing = [k for k in REQUIRED_FIELDS if not isinstance(obj.get(k), str)]
            if missing:
                bad += 1
                log.warning("%s:%d: record missing %s, skipped", path, lineno, ", ".join(missing))
                continue
            if allow is not None and obj["category"] not in allow:
                continue
            label = obj.get("label")
            records.append(Record(obj["category"], obj["headline"], obj["short_description"],
                                  label if isinstance(label, int) else None))
    if bad > max(MAX_MALFORMED * total, MALFORMED_GRACE):
        raise IngestionError(f"{path}: {bad} of {total} lines malformed (limit {MAX_MALFORMED:.0%})")
    return records


def top_categories(records: Iterable[Record], n: int) -> list[str]:
    """The ``n`` most frequent categories, ties broken by name."""
    freq = Counter(r.category for r in records)
    return [c for c, _ in sorted(freq.items(), key=lambda kv: (-kv[1], kv[0]))[:n]]


def assign_labels(records: Iterable[Record], categories: Sequence[str]) -> list[Record]:
    index = {c: i for i, c in enumerate(categories)}
    return [Record(r.category, r.headline, r.short_description, index[r.category])
            for r in records if r.category in index]


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(records: Sequence[Record], test_fraction: float, seed: int) -> tuple[list[Record], list[Record]]:
    """Per-class seeded split; both halves keep the input order."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.category, []).append(i)
    rng = make_rng(seed)
    test_idx: set[int] = set()
    for cat in sorted(by_class):
        idx = by_class[cat]
        if len(idx) < 2:
            raise StratificationError(f"class {cat!r} has {len(idx)} record(s); at least 2 are required")
        k = _round_half_up(len(idx) * test_fraction)
        perm = rng.permutation(len(idx))
        test_idx.update(idx[j] for j in perm[:k])
    train = [r for i, r in enumerate(records) if i not in test_idx]
    test = [r for i, r in enumerate(records) if i in test_idx]
    return train, test


def cap_per_class(records: Sequence[Record], n: int, seed: int) -> list[Record]:
    """Keep a seeded random ``n`` records of each category, in input order."""
    by_class: dict[str, list[int]] = {}
    for i, r in enumerate(records):
        by_class.setdefault(r.category, []).append(i)
    rng = make_rng(seed)
    keep: set[int] = set()
    for cat in sorted(by_class):
        idx = by_class[cat]
        keep.update(idx[j] for j in rng.permutation(len(idx))[:n])
    return [r for i, r in enumerate(records) if i in keep]


@dataclass
class Example:
    label: int
    text: str
    ids: np.ndarray
    length: int


def make_examples(records: Iterable[Record], vocab: Vocabulary, max_len: int) -> list[Example]:
    """Encode labelled records, dropping (with a warning) those with no tokens."""
    out = []
    for r in records:
        toks = tokenize(r.text)
        if not toks:
            log.warning("dropping record with empty text (category %s)", r.category)
            continue
        ids, length = encode(toks, vocab, max_len)
        out.append(Example(r.label, r.text, ids, length))
    return out


@dataclass
class Batch:
    ids: np.ndarray      # [B, max_len]
    lengths: np.ndarray  # [B]
    labels: np.ndarray   # [B, K] one-hot

    @property
    def label_ids(self) -> np.ndarray:
        return self.labels.argmax(axis=1)

    def __len__(self) -> int:
        return self.ids.shape[0]


def make_batch(examples: Sequence[Example], num_classes: int) -> Batch:
    ids = np.stack([e.ids for e in examples])
    lengths = np.array([e.length for e in examples], dtype=np.int64)
    labels = np.zeros((len(examples), num_classes))
    labels[np.arange(len(examples)), [e.label for e in examples]] = 1.0
    return Batch(ids, lengths, labels)


def batch_iter(examples: Sequence[Example], batch_size: int, num_classes: int,
               shuffle: bool = False, seed: int | np.random.Generator = 0) -> Iterator[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not examples:
        raise EmptySequenceError("cannot iterate over an empty dataset")
    order = np.arange(len(examples))
    if shuffle:
        rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
        order = rng.permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield make_batch([examples[i] for i in order[start:start + batch_size]], num_classes)


def write_records(records: Iterable[Record], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")
