"""Command-line driver: ``ntc {prepare,pretrain,train,eval,predict,gradcheck,plot}``.

Exit codes: 0 success, 1 check failure, 2 input or configuration error,
3 training divergence.  Any option may also come from a flat ``key=value``
file given with ``--config``; command-line flags take precedence.
"""
from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, DivergenceError, IngestionError, NTCError, StratificationError
from .gradcheck import run_suite
from .metrics import report
from .models import ARCHS, ModelConfig, build_model, load_checkpoint, predict
from .plotting import TraceFormatError, loss_svg, read_trace
from .tensor import make_rng
from .text import (Vocabulary, assign_labels, build_vocab, cap_per_class, load_huffpost, make_examples,
                   stratified_split, tokenize, top_categories, write_records)
from .training import TrainConfig, epoch_trace_path, evaluate, train
from .word2vec import SgnsConfig, align_to_vocab, load_embeddings, save_embeddings, sgns_train

log = logging.getLogger("ntc")

EXIT_OK, EXIT_CHECK, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3
# file locations are left out of checkpoints so identical runs in different directories match byte for byte
PATH_KEYS = ("func", "config", "verbose", "data_dir", "vocab", "out", "trace", "embed")


class InputError(Exception):
    """Bad input detected by a subcommand; maps to exit code 2."""


# ------------------------------------------------------------------ prepare

def cmd_prepare(args) -> int:
    try:
        records = load_huffpost(args.data)
    except (OSError, IngestionError) as exc:
        raise InputError(f"ingestion failed: {exc}") from exc
    if args.classes.isdigit():
        categories = top_categories(records, int(args.classes))
    else:
        categories = [c.strip() for c in args.classes.split(",") if c.strip()]
    records = assign_labels(records, categories)
    records = [r for r in records if tokenize(r.text)]
    if args.per_class:
        records = cap_per_class(records, args.per_class, args.seed)
    if not records:
        raise InputError("no records left after category filtering")
    try:
        train_recs, test_recs = stratified_split(records, args.test_fraction, args.seed)
    except StratificationError as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_records(train_recs, out / "train.jsonl")
    write_records(test_recs, out / "test.jsonl")
    vocab = build_vocab((tokenize(r.text) for r in train_recs), args.min_count, args.max_vocab)
    vocab.write(out / "vocab.tsv")
    lines = ["category\tlabel\ttrain\ttest"]
    for i, cat in enumerate(categories):
        n_tr = sum(r.label == i for r in train_recs)
        n_te = sum(r.label == i for r in test_recs)
        lines.append(f"{cat}\t{i}\t{n_tr}\t{n_te}")
    lines.append(f"vocabulary\t{len(vocab)}")
    summary = "\n".join(lines) + "\n"
    (out / "summary.tsv").write_text(summary, encoding="utf-8")
    print(summary, end="")
    return EXIT_OK


# ------------------------------------------------------------------ pretrain

def _vocab_for(data: str, vocab_path: str | None) -> Vocabulary:
    path = Path(vocab_path) if vocab_path else Path(data).parent / "vocab.tsv"
    if not path.exists():
        raise InputError(f"vocabulary file {path} not found (run 'prepare' first)")
    return Vocabulary.read(path)


def cmd_pretrain(args) -> int:
    vocab = _vocab_for(args.data, args.vocab)
    try:
        records = load_huffpost(args.data)
    except (OSError, IngestionError) as exc:
        raise InputError(str(exc)) from exc
    corpus = [np.array([vocab.id(t) for t in tokenize(r.text)], dtype=np.int64) for r in records]
    cfg = SgnsConfig(dim=args.dim, window=args.window, negatives=args.negatives, epochs=args.epochs,
                     lr=args.lr, subsample=args.subsample, seed=args.seed)
    try:
        result = sgns_train(corpus, len(vocab), cfg)
    except IngestionError as exc:
        raise InputError(str(exc)) from exc
    for i, loss in enumerate(result.epoch_loss, 1):
        print(f"epoch {i}: loss {loss:.6f}")
    save_embeddings(args.out, result.table, vocab.itos)
    print(f"wrote {len(vocab)} x {args.dim} embeddings to {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ train

def _load_split(path: Path, classes: list[str]):
    try:
        recs = load_huffpost(path, classes)
    except (OSError, IngestionError) as exc:
        raise InputError(str(exc)) from exc
    return assign_labels(recs, classes)


def _classes_from_summary(data_dir: Path) -> list[str]:
    summary = data_dir / "summary.tsv"
    if not summary.exists():
        raise InputError(f"{summary} not found (run 'prepare' first)")
    rows = [l.split("\t") for l in summary.read_text(encoding="utf-8").splitlines()[1:]]
    return [r[0] for r in rows if len(r) == 4]


def cmd_train(args) -> int:
    data_dir = Path(args.data_dir)
    classes = _classes_from_summary(data_dir)
    vocab = _vocab_for(str(data_dir / "train.jsonl"), args.vocab)
    train_recs = _load_split(data_dir / "train.jsonl", classes)
    test_recs = _load_split(data_dir / "test.jsonl", classes)
    if args.val_fraction > 0:
        try:
            train_recs, val_recs = stratified_split(train_recs, args.val_fraction, args.seed)
        except StratificationError as exc:
            raise InputError(str(exc)) from exc
    else:
        val_recs = test_recs
    train_ex = make_examples(train_recs, vocab, args.max_len)
    val_ex = make_examples(val_recs, vocab, args.max_len)
    test_ex = make_examples(test_recs, vocab, args.max_len)

    table = None
    if args.embed != "random":
        try:
            tokens, raw = load_embeddings(args.embed)
        except (OSError, IngestionError) as exc:
            raise InputError(str(exc)) from exc
        if raw.shape[1] != args.embed_dim:
            raise InputError(f"embedding file has dimension {raw.shape[1]}, --embed-dim is {args.embed_dim}")
        table, hits = align_to_vocab(tokens, raw, vocab, make_rng(args.seed))
        print(f"pretrained vectors cover {hits} of {len(vocab)} vocabulary entries")

    run_info = {k: v for k, v in sorted(vars(args).items()) if k not in PATH_KEYS}
    best = None
    for r in range(args.restarts):
        seed = args.seed + r
        suffix = "" if args.restarts == 1 else f".r{r}"
        ckpt = args.out + suffix
        trace_path = (args.trace + suffix) if args.trace else None
        try:
            cfg = ModelConfig(args.arch, len(vocab), len(classes), embed_dim=args.embed_dim, hidden=args.hidden,
                              attn_dim=args.attn_dim, max_len=args.max_len, dropout=args.dropout, l2=args.l2,
                              seed=seed, embed_init="random" if table is None else "pretrained",
                              embed_trainable=not args.freeze_embed,
                              cnn_widths=tuple(int(w) for w in args.cnn_widths.split(",")),
                              cnn_filters=args.cnn_filters, loss=args.loss, graph=args.graph)
        except ConfigError as exc:
            raise InputError(str(exc)) from exc
        model = build_model(cfg, embeddings=table)
        tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr, seed=seed,
                           checkpoint=ckpt, trace=trace_path)
        try:
            model, trace = train(model, train_ex, val_ex, tcfg, vocab, classes, run_info)
        except DivergenceError as exc:
            print(f"error: training diverged: {exc}", file=sys.stderr)
            print(f"last good checkpoint: {exc.checkpoint or 'none'}", file=sys.stderr)
            return EXIT_DIVERGED
        score = trace.epochs[trace.best_epoch - 1].metrics.f1
        print(f"restart {r}: best epoch {trace.best_epoch}, eval macro-F1 {score:.4f}")
        if best is None or score > best[0]:
            best = (score, model, ckpt, trace_path)
    _, model, ckpt, trace_path = best
    if args.restarts > 1:
        shutil.copyfile(ckpt, args.out)
        if args.trace:
            shutil.copyfile(trace_path, args.trace)
            shutil.copyfile(epoch_trace_path(trace_path), epoch_trace_path(args.trace))
    table_txt, _ = report([(args.arch, evaluate(model, test_ex))])
    print(table_txt, end="")
    return EXIT_OK


# ------------------------------------------------------------------ eval / predict

def _load_ckpt(path: str):
    try:
        return load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        raise InputError(f"cannot load checkpoint {path}: {exc}") from exc


def cmd_eval(args) -> int:
    rows = []
    for path in args.ckpt:
        ck = _load_ckpt(path)
        recs = _load_split(Path(args.data), ck.classes)
        examples = make_examples(recs, ck.vocab, ck.model.config.max_len)
        if not examples:
            raise InputError(f"{args.data} has no records in the checkpoint's categories")
        rows.append((Path(path).stem, evaluate(ck.model, examples, args.average)))
    table_txt, csv_txt = report(rows)
    print(table_txt, end="")
    if args.csv:
        Path(args.csv).write_text(csv_txt, encoding="utf-8")
    return EXIT_OK


def _units(probs, places: int = 4) -> list[int]:
    """Round a distribution to ``places`` decimals so the printed values still sum to one.

    Largest-remainder rounding: floor everything, then hand the leftover
    units to the largest fractional parts (earlier class on ties).
    """
    scaled = np.asarray(probs, dtype=np.float64) * 10**places
    units = np.floor(scaled).astype(np.int64)
    short = 10**places - int(units.sum())
    order = sorted(range(len(units)), key=lambda i: (-(scaled[i] - units[i]), i))
    for i in order[:short]:
        units[i] += 1
    return units.tolist()


def cmd_predict(args) -> int:
    ck = _load_ckpt(args.ckpt)
    if not tokenize(args.text):
        raise InputError("text is empty after tokenization")
    pred = predict(ck.model, args.text, ck.vocab)
    print(f"label: {ck.classes[pred.label]}")
    print("probabilities: " + " ".join(f"{c}={u / 10**4:.4f}" for c, u in zip(ck.classes, _units(pred.probs))))
    if args.show_attention:
        if pred.alpha is None:
            print("attention not available for this architecture")
        else:
            print("attention:")
            for tok, w in zip(pred.tokens, pred.alpha):
                print(f"  {tok}:{w:.4f}")
    return EXIT_OK


# ------------------------------------------------------------------ gradcheck / plot

def cmd_gradcheck(args) -> int:
    archs = ARCHS if args.arch == "all" else (args.arch,)
    results = run_suite(archs, range(args.seed, args.seed + args.n_seeds), args.tol, layers=not args.no_layers)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  worst_rel_err  tol      status")
    for r in results:
        print(f"{r.name:<{width}}  {r.worst:13.3e}  {r.tol:.0e}  {'PASS' if r.passed else 'FAIL'}")
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "gradient check FAILED")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_plot(args) -> int:
    try:
        points = read_trace(args.trace)
    except OSError as exc:
        raise InputError(str(exc)) from exc
    except TraceFormatError as exc:
        raise InputError(f"{args.trace}: {exc}") from exc
    Path(args.out).write_text(loss_svg(points), encoding="utf-8")
    print(f"wrote {args.out}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ntc", description="News text classification experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="flat key=value file of option defaults")
        p.set_defaults(func=func)
        return p

    p = command("prepare", cmd_prepare, "filter, split and index a HuffPost file")
    p.add_argument("--data", required=True)
    p.add_argument("--classes", default="4", help="count of most frequent categories, or a comma list")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-count", type=int, default=2)
    p.add_argument("--max-vocab", type=int, default=50000)
    p.add_argument("--per-class", type=int, default=0, help="keep at most this many records per category (0: all)")

    p = command("pretrain", cmd_pretrain, "train skip-gram word vectors")
    p.add_argument("--data", required=True, help="prepared train.jsonl")
    p.add_argument("--vocab", help="vocabulary file (default: vocab.tsv beside --data)")
    p.add_argument("--dim", type=int, default=200)
    p.add_argument("--window", type=int, default=5)
    p.add_argument("--negatives", type=int, default=5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.025)
    p.add_argument("--subsample", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train one architecture")
    p.add_argument("--data-dir", required=True, help="directory written by 'prepare'")
    p.add_argument("--vocab")
    p.add_argument("--arch", choices=ARCHS, default="bilstm-attn")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--embed-dim", type=int, default=200)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--attn-dim", type=int, default=None)
    p.add_argument("--max-len", type=int, default=64)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--cnn-widths", default="3,4,5")
    p.add_argument("--cnn-filters", type=int, default=64)
    p.add_argument("--embed", default="random", help="'random' or a text embedding file")
    p.add_argument("--freeze-embed", action="store_true")
    p.add_argument("--loss", choices=("ce", "mse"), default="ce")
    p.add_argument("--graph", action="store_true", help="experimental graph aggregation (bilstm-attn only)")
    p.add_argument("--val-fraction", type=float, default=0.1,
                   help="share of train held out for epoch selection; 0 selects on the test split")
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")

    p = command("eval", cmd_eval, "score checkpoints on a prepared split")
    p.add_argument("--ckpt", nargs="+", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--average", choices=("macro", "micro"), default="macro")
    p.add_argument("--csv")

    p = command("predict", cmd_predict, "classify one text")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--show-attention", action="store_true")

    p = command("gradcheck", cmd_gradcheck, "finite-difference check of all backward passes")
    p.add_argument("--arch", choices=ARCHS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--no-layers", action="store_true", help="skip the per-layer checks")

    p = command("plot", cmd_plot, "render a loss trace as SVG")
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    return parser


def _echo_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, list):
        return " ".join(map(str, v))
    return str(v)


def _read_config(path: str) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _config_path(argv: list[str]) -> str | None:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, command: str, path: str) -> None:
    """Install config-file values as subcommand defaults, rejecting unknown keys."""
    sp = _subparser(parser, command)
    cfg = _read_config(path)
    named = cfg.pop("command", command)
    if named != command:
        raise ConfigError(f"{path} is for '{named}', not '{command}'")
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(cfg) - set(actions))
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {', '.join(unknown)}")
    defaults = {}
    for k, v in cfg.items():
        a = actions[k]
        if v == "":  # unset in the echo; keep the parser default
            continue
        if isinstance(a, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes")
        elif a.nargs == "+":
            defaults[k] = v.split()
        else:
            defaults[k] = v
    for k in defaults:
        actions[k].required = False
    sp.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    command = next((a for a in argv if not a.startswith("-")), None)
    config = _config_path(argv)
    if config and command:
        try:
            _apply_config(parser, command, config)
        except (ConfigError, OSError, KeyError) as exc:
            print(f"error: config: {exc}", file=sys.stderr)
            return EXIT_INPUT
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    # the echo doubles as a --config file that reproduces the run
    print(f"# command={args.command}")
    for k, v in sorted(vars(args).items()):
        if k not in ("func", "command", "config", "verbose"):
            print(f"# {k}={_echo_value(v)}")
    try:
        return args.func(args)
    except (InputError, ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NTCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
