"""Run the HuffPost relative-ordering benchmark.

    python3 scripts/run_benchmark.py --data News_Category_Dataset_v3.json --workdir runs/bench

``--data`` defaults to the NTC_HUFFPOST environment variable.  ``--synthetic N``
generates an N-per-class stand-in corpus instead, which exercises the pipeline
but says nothing about the real result.
"""
import argparse
import os
import shlex
import sys
import tempfile
from pathlib import Path

from ntc.benchmark import run_benchmark
from ntc.synthetic import TOPICS, write_huffpost


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", default=os.environ.get("NTC_HUFFPOST"))
    ap.add_argument("--workdir", default=None, help="defaults to a fresh temporary directory")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--per-class", type=int, default=2500)
    ap.add_argument("--synthetic", type=int, metavar="N", help="use a generated corpus with N records per class")
    ap.add_argument("--train-args", default="", help="extra 'ntc train' flags, e.g. \"--epochs 3 --hidden 32\"")
    args = ap.parse_args()

    work = Path(args.workdir or tempfile.mkdtemp(prefix="ntc-bench-"))
    work.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        data = write_huffpost(work / "synthetic.json", {c: args.synthetic for c in list(TOPICS)[:4]}, seed=0)
    elif args.data:
        data = Path(args.data)
    else:
        print("no dataset: pass --data, set NTC_HUFFPOST, or use --synthetic N", file=sys.stderr)
        return 2

    result = run_benchmark(data, work, seeds=args.seeds, per_class=args.per_class,
                           extra_train_args=tuple(shlex.split(args.train_args)))
    print(result.table(), end="")
    ok = True
    for name, (passed, detail) in result.checks().items():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    print(f"artifacts in {work}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
