"""Train the planted 20x20 toy model and sweep both attacks over it.

    python scripts/attack_toy.py --out results/attack_toy
"""

import argparse
import os

from hiergcn.cli import main as cli
from hiergcn.synthetic import planted_blocks

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def run(out, epochs=300, seeds=20):
    os.makedirs(out, exist_ok=True)
    raw = os.path.join(out, "planted.txt")
    with open(raw, "w", encoding="utf-8") as fh:
        fh.writelines(f"{r.user_key}\t{r.item_key}\n" for r in planted_blocks(20, 20, 2, 0.1, seed=0))
    split = os.path.join(out, "split")
    train, test = os.path.join(split, "train.tsv"), os.path.join(split, "test.tsv")
    steps = [
        ["split", "--input", raw, "--out", split],
        ["train", "--train", train, "--test", test, "--K", "2", "--epochs", str(epochs), "--eval-every", "50",
         "--out", os.path.join(out, "model")],
        ["attack", "--checkpoint", os.path.join(out, "model", "model.ckpt"), "--train", train, "--test", test,
         "--sigmas", "0,0.05,0.1,0.2,0.5,1.0", "--keep-probs", "1,0.9,0.7,0.5", "--attack-seeds", str(seeds),
         "--out", os.path.join(out, "attack")],
    ]
    for argv in steps:
        if cli(argv):
            raise SystemExit(f"hiergcn {argv[0]} failed")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.path.join(ROOT, "results", "attack_toy"))
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    run(args.out, args.epochs, args.seeds)
