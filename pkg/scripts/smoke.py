"""Walk every subcommand once on a small generated corpus (a few seconds)."""
import sys
import tempfile
from pathlib import Path

from ntc.cli import main
from ntc.synthetic import write_huffpost


def step(*argv) -> None:
    argv = [str(a) for a in argv]
    print(f"\n$ ntc {' '.join(argv)}")
    code = main(argv)
    if code != 0:
        sys.exit(f"'{argv[0]}' exited with {code}")


def run(root: Path) -> None:
    root.mkdir(parents=True, exist_ok=True)
    raw = write_huffpost(root / "raw.json", {"POLITICS": 300, "WELLNESS": 250, "ENTERTAINMENT": 200,
                                             "TRAVEL": 150, "PARENTING": 50})
    data = root / "data"
    step("prepare", "--data", raw, "--classes", 4, "--out-dir", data)
    step("pretrain", "--data", data / "train.jsonl", "--dim", 32, "--epochs", 3, "--out", root / "vec.txt")
    small = ["--embed-dim", 32, "--hidden", 16, "--epochs", 4, "--lr", 0.005, "--embed", root / "vec.txt"]
    for arch in ("bilstm-attn", "lstm"):
        step("train", "--data-dir", data, "--arch", arch, *small,
             "--out", root / f"{arch}.ntc", "--trace", root / f"{arch}.csv")
    step("eval", "--ckpt", root / "bilstm-attn.ntc", root / "lstm.ntc", "--data", data / "test.jsonl",
         "--csv", root / "report.csv")
    step("predict", "--ckpt", root / "bilstm-attn.ntc", "--text", "senators vote on the new health bill",
         "--show-attention")
    step("plot", "--trace", root / "bilstm-attn.csv", "--out", root / "loss.svg")
    step("gradcheck", "--arch", "bilstm-attn", "--n-seeds", 1)
    print(f"\nartifacts in {root}")


if __name__ == "__main__":
    run(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="ntc-smoke-")))
