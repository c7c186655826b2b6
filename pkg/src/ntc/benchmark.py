"""Desk-scale HuffPost experiment driven through the CLI commands.

Prepares a four-category subset, pretrains skip-gram vectors on the train
split, then trains each architecture for several seeds with the default
hyperparameters and scores the held-out split.
"""
from __future__ import annotations

import contextlib
import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cli import main
from .models import load_checkpoint
from .text import assign_labels, load_huffpost, make_examples
from .training import epoch_trace_path, evaluate

ARCHS = ("bilstm-attn", "bilstm", "lstm")
MIN_PER_CLASS = 2000
F1_FLOOR = 0.80
BUDGET_SECONDS = 30 * 60


@dataclass
class Run:
    arch: str
    seed: int
    f1: float
    epoch_losses: list[float]
    seconds: float

    @property
    def descends(self) -> bool:
        """Mean loss of the last five epochs is below that of the first five."""
        ls = self.epoch_losses
        return len(ls) >= 5 and float(np.mean(ls[-5:])) < float(np.mean(ls[:5]))


@dataclass
class BenchmarkResult:
    class_counts: dict[str, int]
    runs: list[Run] = field(default_factory=list)

    def f1(self, arch: str, seed: int) -> float:
        return next(r.f1 for r in self.runs if r.arch == arch and r.seed == seed)

    @property
    def seeds(self) -> list[int]:
        return sorted({r.seed for r in self.runs})

    def checks(self) -> dict[str, tuple[bool, str]]:
        seeds = self.seeds
        top = [self.f1("bilstm-attn", s) for s in seeds]
        ordered = [self.f1("bilstm-attn", s) >= self.f1("bilstm", s) >= self.f1("lstm", s) for s in seeds]
        need = (2 * len(seeds) + 2) // 3
        smallest = min(self.class_counts.values())
        slowest = max(r.seconds for r in self.runs)
        return {
            "size": (smallest >= MIN_PER_CLASS, f"smallest class has {smallest} records"),
            "f1": (float(np.mean(top)) >= F1_FLOOR,
                   f"bilstm-attn test macro-F1 mean {np.mean(top):.4f} over seeds ({', '.join(f'{x:.4f}' for x in top)})"),
            "ordering": (sum(ordered) >= need, f"ordering holds in {sum(ordered)} of {len(seeds)} seeds"),
            "descent": (all(r.descends for r in self.runs),
                        f"{sum(r.descends for r in self.runs)} of {len(self.runs)} runs descend"),
            "budget": (slowest <= BUDGET_SECONDS, f"slowest model took {slowest:.0f}s"),
        }

    def table(self) -> str:
        lines = ["arch\tseed\ttest_macro_f1\tfirst5_loss\tlast5_loss\tseconds"]
        for r in self.runs:
            lines.append(f"{r.arch}\t{r.seed}\t{r.f1:.4f}\t{np.mean(r.epoch_losses[:5]):.4f}\t"
                         f"{np.mean(r.epoch_losses[-5:]):.4f}\t{r.seconds:.0f}")
        return "\n".join(lines) + "\n"


def _cli(log, *argv) -> None:
    with contextlib.redirect_stdout(log):
        code = main([str(a) for a in argv])
    if code != 0:
        raise RuntimeError(f"'ntc {' '.join(map(str, argv))}' exited with {code}")


def _epoch_losses(trace: Path) -> list[float]:
    with open(epoch_trace_path(trace), newline="") as fh:
        return [float(row["train_loss"]) for row in csv.DictReader(fh)]


def run_benchmark(data: str | Path, workdir: str | Path, seeds=(0, 1, 2), archs=ARCHS,
                  per_class: int = 2500, extra_train_args: tuple[str, ...] = ()) -> BenchmarkResult:
    work = Path(workdir)
    work.mkdir(parents=True, exist_ok=True)
    prepared = work / "data"
    with open(work / "log.txt", "w", encoding="utf-8") as log:
        _cli(log, "prepare", "--data", data, "--classes", "4", "--test-fraction", "0.2", "--seed", 0,
             "--per-class", per_class, "--out-dir", prepared)
        _cli(log, "pretrain", "--data", prepared / "train.jsonl", "--dim", 200, "--seed", 0,
             "--out", work / "vectors.txt")
        rows = [l.split("\t") for l in (prepared / "summary.tsv").read_text(encoding="utf-8").splitlines()[1:]]
        counts = {r[0]: int(r[2]) + int(r[3]) for r in rows if len(r) == 4}
        result = BenchmarkResult(counts)
        classes = list(counts)
        for seed in seeds:
            for arch in archs:
                ckpt, trace = work / f"{arch}.s{seed}.ntc", work / f"{arch}.s{seed}.csv"
                start = time.perf_counter()
                _cli(log, "train", "--data-dir", prepared, "--arch", arch, "--embed", work / "vectors.txt",
                     "--seed", seed, "--out", ckpt, "--trace", trace, *extra_train_args)
                seconds = time.perf_counter() - start
                ck = load_checkpoint(ckpt)
                test = assign_labels(load_huffpost(prepared / "test.jsonl", classes), classes)
                f1 = evaluate(ck.model, make_examples(test, ck.vocab, ck.model.config.max_len)).f1
                result.runs.append(Run(arch, seed, f1, _epoch_losses(trace), seconds))
    (work / "results.tsv").write_text(result.table(), encoding="utf-8")
    return result
