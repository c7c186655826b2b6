"""Adam and the epoch loop with best-epoch checkpointing."""
from __future__ import annotations

import csv
import logging
import math
import os
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DivergenceError, NumericError
from .metrics import MetricsReport, confusion, precision_recall_f1
from .models import Model, save_checkpoint
from .tensor import make_rng
from .text import Example, Vocabulary, batch_iter

log = logging.getLogger(__name__)

THREADS_ENV = "NTC_THREADS"


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              names: Sequence[str] | None = None) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    All gradients are checked for finiteness before anything is modified.
    """
    names = list(params) if names is None else list(names)
    for name in names:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in parameter {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name in names:
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0
    checkpoint: str | None = None
    trace: str | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    metrics: MetricsReport | None


@dataclass
class LossTrace:
    steps: list[tuple[int, int, float]] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int | None = None

    def epoch_means(self) -> list[float]:
        return [e.train_loss for e in self.epochs]


def epoch_trace_path(trace: str | Path) -> Path:
    """Companion per-epoch CSV written next to the per-step trace."""
    p = Path(trace)
    return p.with_name(p.stem + "_epochs" + p.suffix)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def predict_all(model: Model, examples: Sequence[Example], batch_size: int = 256) -> np.ndarray:
    """Eval-mode predictions in input order (batches may run on ``NTC_THREADS`` threads)."""
    chunks = [examples[i:i + batch_size] for i in range(0, len(examples), batch_size)]

    def run(chunk):
        ids = np.stack([e.ids for e in chunk])
        lengths = np.array([e.length for e in chunk])
        return model.predict_batch(ids, lengths)[0]

    n = _threads()
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    return np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)


def evaluate(model: Model, examples: Sequence[Example], average: str = "macro") -> MetricsReport:
    preds = predict_all(model, examples)
    labels = np.array([e.label for e in examples])
    return precision_recall_f1(confusion(preds, labels, model.config.num_classes), average)


def train(model: Model, train_set: Sequence[Example], eval_set: Sequence[Example] | None,
          config: TrainConfig, vocab: Vocabulary | None = None, classes: list[str] | None = None,
          run_info: dict | None = None) -> tuple[Model, LossTrace]:
    """Train with Adam; keep the epoch with the best eval macro-F1.

    Ties go to the earlier epoch.  Without an eval set the last epoch is kept.
    The per-step and per-epoch CSVs are written as training proceeds, and the
    checkpoint (if configured, and ``vocab``/``classes`` are given) is
    rewritten whenever a new best epoch appears.  On return the model holds
    the best epoch's parameters.
    """
    if not train_set:
        raise ValueError("training set is empty")
    K = model.config.num_classes
    if any(not 0 <= e.label < K for e in train_set):
        raise ValueError(f"training labels must lie in [0, {K})")
    params = model.params
    state = AdamState(lr=config.lr)
    rng = make_rng(config.seed)
    shuffle_rng = make_rng(config.seed + 1)
    trace = LossTrace()
    best_f1 = -math.inf
    best_values = None
    written = None

    step_fh = epoch_fh = None
    if config.trace:
        step_fh = open(config.trace, "w", newline="")
        epoch_fh = open(epoch_trace_path(config.trace), "w", newline="")
    try:
        step_w = csv.writer(step_fh, lineterminator="\n") if step_fh else None
        epoch_w = csv.writer(epoch_fh, lineterminator="\n") if epoch_fh else None
        if step_w:
            step_w.writerow(["epoch", "step", "loss"])
            epoch_w.writerow(["epoch", "train_loss", "precision", "recall", "f1"])
        step = 0
        for epoch in range(1, config.epochs + 1):
            losses = []
            for batch in batch_iter(train_set, config.batch_size, K, shuffle=True, seed=shuffle_rng):
                params.zero_grad()
                probs, cache = model.forward(batch.ids, batch.lengths, "train", rng)
                loss = model.backward(cache, probs, batch.labels)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite loss at epoch {epoch}, step {step + 1}", written)
                try:
                    adam_step(params.values, params.grads, state, params.trainable())
                except NumericError as exc:
                    raise DivergenceError(str(exc), written) from exc
                step += 1
                losses.append(loss)
                trace.steps.append((epoch, step, loss))
                if step_w:
                    step_w.writerow([epoch, step, repr(float(loss))])
            mean_loss = float(np.mean(losses))
            metrics = evaluate(model, eval_set) if eval_set else None
            trace.epochs.append(EpochRecord(epoch, mean_loss, metrics))
            if epoch_w:
                scores = (metrics.precision, metrics.recall, metrics.f1) if metrics else ()
                epoch_w.writerow([epoch, repr(mean_loss), *(repr(float(s)) for s in scores)]
                                 + [""] * (3 - len(scores)))
                step_fh.flush()
                epoch_fh.flush()
            score = metrics.f1 if metrics else epoch
            log.info("epoch %d: train loss %.4f%s", epoch, mean_loss,
                     f", eval macro-F1 {metrics.f1:.4f}" if metrics else "")
            if score > best_f1:
                best_f1 = score
                best_values = params.copy_values()
                trace.best_epoch = epoch
                if config.checkpoint and vocab is not None and classes is not None:
                    save_checkpoint(config.checkpoint, model, vocab, classes,
                                    {**(run_info or {}), "best_epoch": epoch})
                    written = config.checkpoint
    finally:
        if step_fh:
            step_fh.close()
            epoch_fh.close()
    params.load_values(best_values)
    return model, trace
