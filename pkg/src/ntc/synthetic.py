"""Small generated corpora used by the test-suite and the smoke scripts."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .tensor import make_rng


def bigram_corpus(n_sentences: int = 400, n_noise: int = 30, seed: int = 0) -> list[list[str]]:
    """Sentences in which ``x`` is always followed by ``y``, padded with noise words."""
    rng = make_rng(seed)
    noise = [f"n{i}" for i in range(n_noise)]
    out = []
    for _ in range(n_sentences):
        words = list(rng.choice(noise, size=rng.integers(2, 6)))
        pos = int(rng.integers(0, len(words) + 1))
        words[pos:pos] = ["x", "y"]
        out.append(words)
    return out


def separable_texts(n: int = 64, seed: int = 0) -> list[tuple[str, int]]:
    """Two classes distinguished by a marker word hidden among shared filler."""
    rng = make_rng(seed)
    filler = [f"w{i}" for i in range(20)]
    markers = (["alpha", "apple", "amber"], ["beta", "berry", "bronze"])
    out = []
    for i in range(n):
        label = i % 2
        words = list(rng.choice(filler, size=rng.integers(3, 9)))
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(markers[label])))
        out.append((" ".join(words), label))
    return out


TOPICS = {
    "POLITICS": "senate vote election congress bill president campaign democrats republicans policy",
    "WELLNESS": "health sleep stress exercise diet body mind doctors study habits",
    "ENTERTAINMENT": "movie star film music show actor album series award singer",
    "TRAVEL": "trip hotel beach city flight island vacation travelers tour destination",
    "STYLE & BEAUTY": "fashion dress makeup hair style beauty designer look runway skin",
    "PARENTING": "kids parents baby mom dad children school family toddler parenting",
}
COMMON = ("the a of to in and for on with is new how why what this you your about after "
          "year day people time world week first best just more").split()


def huffpost_lines(per_class: dict[str, int], seed: int = 0, topic_rate: float = 0.35,
                   malformed: int = 0) -> list[str]:
    """JSON lines shaped like the public HuffPost distribution."""
    rng = make_rng(seed)
    lines = []
    for cat, n in per_class.items():
        topic = TOPICS.get(cat, cat.lower()).split()
        for i in range(n):
            def sentence(k):
                return " ".join(str(rng.choice(topic)) if rng.random() < topic_rate else str(rng.choice(COMMON))
                                for _ in range(k))
            rec = {"link": f"https://example.invalid/{cat.lower()}/{i}", "headline": sentence(int(rng.integers(5, 10))),
                   "category": cat, "short_description": sentence(int(rng.integers(8, 18))),
                   "authors": "", "date": "2020-01-01"}
            lines.append(json.dumps(rec))
    order = rng.permutation(len(lines))
    lines = [lines[i] for i in order]
    for j in range(malformed):
        lines.insert(int(rng.integers(0, len(lines) + 1)), "{not json")
    return lines


def write_huffpost(path: str | Path, per_class: dict[str, int], seed: int = 0, **kw) -> Path:
    path = Path(path)
    path.write_text("\n".join(huffpost_lines(per_class, seed, **kw)) + "\n", encoding="utf-8")
    return path
