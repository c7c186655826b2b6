"""Skip-gram with negative sampling for pretraining the word vectors.

Training is plain sequential SGD over (center, context) pairs in corpus
order, one pair at a time, with the learning rate decayed linearly in
training progress.  The inner loop is compiled with numba; the pure-numpy
:func:`pair_objective` states the same per-pair objective and gradients.
"""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from .errors import IngestionError
from .tensor import Rng, make_rng, sigmoid
from .text import PAD, UNK, Vocabulary

log = logging.getLogger(__name__)

RESERVED = (PAD, UNK)


@dataclass
class SgnsConfig:
    dim: int = 200
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    min_lr: float = 1e-4
    subsample: float = 1e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dim < 1 or self.window < 1 or self.negatives < 1 or self.epochs < 1:
            raise ValueError("dim, window, negatives and epochs must all be >= 1")


@dataclass
class SgnsResult:
    table: np.ndarray
    output_table: np.ndarray
    epoch_loss: list[float] = field(default_factory=list)


def generate_pairs(ids, window: int, rng: Rng | None = None, fixed_window: int | None = None) -> np.ndarray:
    """``[P, 2]`` array of (center, context) ids.

    Reserved ids are removed first.  Each position draws its own window size
    uniformly from ``1..window`` unless ``fixed_window`` is given.  Pairs are
    ordered by center position, then by context position.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    ids = np.asarray(ids, dtype=np.int64)
    ids = ids[~np.isin(ids, RESERVED)]
    n = ids.size
    if n < 2:
        return np.empty((0, 2), dtype=np.int64)
    if fixed_window is not None:
        span = np.full(n, fixed_window)
    else:
        span = rng.integers(1, window + 1, size=n)
    pos = np.arange(n)
    centers, contexts = [], []
    for k in range(1, int(span.max()) + 1):
        for off in (-k, k):
            ok = (span >= k) & (pos + off >= 0) & (pos + off < n)
            centers.append(pos[ok])
            contexts.append(pos[ok] + off)
    c = np.concatenate(centers)
    o = np.concatenate(contexts)
    order = np.lexsort((o, c))
    return np.stack([ids[c[order]], ids[o[order]]], axis=1)


def pair_objective(center: np.ndarray, context: np.ndarray, negatives: np.ndarray):
    """Loss and gradients for one positive pair and its negative samples.

    ``loss = -log sig(v.u_o) - sum_k log sig(-v.u_k)``; returns
    ``(loss, d_center, d_context, d_negatives)``.
    """
    so = center @ context
    sn = negatives @ center
    loss = -np.log(sigmoid(np.array([so]))[0]) - np.log(sigmoid(-sn)).sum()
    go = sigmoid(np.array([so]))[0] - 1.0
    gn = sigmoid(sn)
    d_center = go * context + gn @ negatives
    return float(loss), d_center, go * center, gn[:, None] * center[None, :]


@njit(cache=True)
def _log_sigmoid(x):
    if x >= 0:
        return -np.log1p(np.exp(-x))
    return x - np.log1p(np.exp(x))


@njit(cache=True)
def _sgd_pairs(win, wout, centers, contexts, negs, lr0, lr_min, progress0, progress_step):
    dim = win.shape[1]
    grad = np.empty(dim)
    total = 0.0
    for p in range(centers.shape[0]):
        lr = lr0 - (lr0 - lr_min) * (progress0 + p * progress_step)
        if lr < lr_min:
            lr = lr_min
        c = centers[p]
        grad[:] = 0.0
        for j in range(negs.shape[1] + 1):
            if j == 0:
                o = contexts[p]
                label = 1.0
            else:
                o = negs[p, j - 1]
                label = 0.0
            s = 0.0
            for q in range(dim):
                s += win[c, q] * wout[o, q]
            if label == 1.0:
                total -= _log_sigmoid(s)
            else:
                total -= _log_sigmoid(-s)
            sig = 1.0 / (1.0 + np.exp(-s)) if s >= 0 else np.exp(s) / (1.0 + np.exp(s))
            g = sig - label
            for q in range(dim):
                grad[q] += g * wout[o, q]
                wout[o, q] -= lr * g * win[c, q]
        for q in range(dim):
            win[c, q] -= lr * grad[q]
    return total


def _keep_probability(counts: np.ndarray, threshold: float) -> np.ndarray:
    total = counts.sum()
    with np.errstate(divide="ignore", invalid="ignore"):
        f = counts / total
        keep = (np.sqrt(f / threshold) + 1.0) * threshold / f
    keep[counts == 0] = 0.0
    return np.minimum(keep, 1.0)


def sgns_train(corpus: Sequence[np.ndarray], vocab_size: int, config: SgnsConfig | None = None) -> SgnsResult:
    """Train skip-gram vectors on id sequences; returns the center table.

    Negative samples are drawn from the unigram distribution raised to the
    3/4 power; frequent tokens are subsampled with the classic word2vec rule.
    """
    config = config or SgnsConfig()
    if vocab_size < 2:
        raise ValueError("vocab_size must be >= 2")
    seqs = [np.asarray(s, dtype=np.int64) for s in corpus]
    seqs = [s[~np.isin(s, RESERVED)] for s in seqs]
    seqs = [s for s in seqs if s.size]
    if not seqs:
        raise IngestionError("embedding corpus is empty")
    flat = np.concatenate(seqs)
    if flat.max() >= vocab_size:
        raise IngestionError(f"token id {flat.max()} outside vocabulary of size {vocab_size}")
    counts = np.bincount(flat, minlength=vocab_size).astype(np.float64)
    noise = counts ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0
    keep_p = _keep_probability(counts, config.subsample) if config.subsample > 0 else np.ones(vocab_size)

    rng = make_rng(config.seed)
    win = (rng.random((vocab_size, config.dim)) - 0.5) / config.dim
    wout = np.zeros((vocab_size, config.dim))
    result = SgnsResult(win, wout)
    for epoch in range(config.epochs):
        pairs = []
        for s in seqs:
            kept = s[rng.random(s.size) < keep_p[s]]
            if kept.size > 1:
                pairs.append(generate_pairs(kept, config.window, rng))
        pairs = np.concatenate(pairs) if pairs else np.empty((0, 2), dtype=np.int64)
        n = pairs.shape[0]
        if n == 0:
            result.epoch_loss.append(float("nan"))
            continue
        negs = np.searchsorted(noise_cdf, rng.random((n, config.negatives)), side="right")
        negs = np.minimum(negs, vocab_size - 1)
        step = 1.0 / (n * config.epochs)
        total = _sgd_pairs(win, wout, np.ascontiguousarray(pairs[:, 0]), np.ascontiguousarray(pairs[:, 1]),
                           negs, config.lr, config.min_lr, epoch / config.epochs, step)
        result.epoch_loss.append(total / n)
        log.info("sgns epoch %d: %d pairs, mean loss %.4f", epoch + 1, n, total / n)
    return result


def nearest_neighbors(table: np.ndarray, token: str, k: int, vocab: Vocabulary) -> list[tuple[str, float]]:
    """Top-``k`` tokens by cosine similarity to ``token``.

    The query and the reserved pad/unknown entries are excluded; ties are
    broken by lower id.
    """
    if token not in vocab:
        raise KeyError(f"token {token!r} not in vocabulary")
    q = vocab.id(token)
    norms = np.linalg.norm(table, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = (table @ table[q]) / (safe * safe[q])
    cos[norms == 0] = 0.0
    ids = np.arange(table.shape[0])
    cand = ids[(ids != q) & ~np.isin(ids, RESERVED)]
    order = np.lexsort((cand, -cos[cand]))
    return [(vocab.token(int(i)), float(cos[i])) for i in cand[order][:k]]


def save_embeddings(path: str | Path, table: np.ndarray, tokens: Sequence[str]) -> None:
    if len(tokens) != table.shape[0]:
        raise ValueError(f"{len(tokens)} tokens for {table.shape[0]} rows")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{table.shape[0]} {table.shape[1]}\n")
        for tok, row in zip(tokens, table.tolist()):
            fh.write(tok + " " + " ".join(map(repr, row)) + "\n")


def load_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        try:
            count, dim = int(header[0]), int(header[1])
            assert len(header) == 2
        except (IndexError, ValueError, AssertionError):
            raise IngestionError(f"{path}: first line must be '<count> <dim>'") from None
        tokens: list[str] = []
        table = np.empty((count, dim))
        for lineno, line in enumerate(fh, 2):
            parts = line.rstrip("\n").split(" ")
            if len(tokens) >= count:
                raise IngestionError(f"{path}: more than the declared {count} rows")
            if len(parts) != dim + 1:
                raise IngestionError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
            try:
                table[len(tokens)] = [float(x) for x in parts[1:]]
            except ValueError:
                raise IngestionError(f"{path}:{lineno}: non-numeric value") from None
            tokens.append(parts[0])
    if len(tokens) != count:
        raise IngestionError(f"{path}: declared {count} rows, found {len(tokens)}")
    return tokens, table


def align_to_vocab(tokens: Sequence[str], table: np.ndarray, vocab: Vocabulary, rng: Rng) -> tuple[np.ndarray, int]:
    """Rows of a loaded table reordered to ``vocab`` ids.

    Tokens absent from the file get small uniform vectors; the pad row is
    zero.  Returns the table and the number of vocabulary hits.
    """
    dim = table.shape[1]
    out = (rng.random((len(vocab), dim)) - 0.5) / dim
    index = {t: i for i, t in enumerate(tokens)}
    hits = 0
    for tok, vid in vocab.stoi.items():
        j = index.get(tok)
        if j is not None:
            out[vid] = table[j]
            hits += 1
    out[PAD] = 0.0
    return out, hits
