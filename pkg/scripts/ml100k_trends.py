"""Layer-depth and edge-dropout trends on MovieLens-100k via the `sweep` command.

Runs two sweeps (d=64, 50 epochs, float32):
  depth:   K in {1, 2} x p in {0.8, 0.9}, seed 0
  dropout: K = 3, p in {0.8, 0.9, 1.0}, seeds 0..2
The seed-0 K=3 rows of the second sweep complete the depth grid. Both
sweep.csv files and a trends.csv summary land under --out.

    python scripts/fetch_ml100k.py
    python scripts/ml100k_trends.py --out results/ml100k
"""

import argparse
import csv
import os
import sys
from collections import defaultdict

from hiergcn.cli import main as cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def read_sweep(path):
    with open(path, encoding="utf-8") as fh:
        return [dict(r, K=int(r["K"]), p=float(r["p"]), seed=int(r["seed"]), ndcg10=float(r["ndcg10"]))
                for r in csv.DictReader(fh)]


def summarize(depth_rows, drop_rows):
    """Return (best_deep, best_shallow, drop_mean, nodrop_mean, per-p means)."""
    best_k1 = max(r["ndcg10"] for r in depth_rows if r["K"] == 1)
    best_deep = max(r["ndcg10"] for r in depth_rows if r["K"] in (2, 3))
    by_p = defaultdict(list)
    for r in drop_rows:
        by_p[r["p"]].append(r["ndcg10"])
    means = {p: sum(v) / len(v) for p, v in by_p.items()}
    best_drop = max(means[p] for p in (0.8, 0.9))
    return best_deep, best_k1, best_drop, means[1.0], means


def run(out, data=os.path.join(ROOT, "data", "ml-100k.tsv"), epochs=50, threads=1):
    common = ["--epochs", str(epochs), "--d", "64", "--dtype", "float32", "--k", "10,20", "--threads", str(threads)]
    split = os.path.join(out, "split")
    steps = [
        ["split", "--input", data, "--out", split, "--seed", "0"],
        ["sweep", "--train", f"{split}/train.tsv", "--test", f"{split}/test.tsv", "--Ks", "1,2", "--ps", "0.8,0.9",
         "--seeds", "0", "--out", os.path.join(out, "depth")] + common,
        ["sweep", "--train", f"{split}/train.tsv", "--test", f"{split}/test.tsv", "--Ks", "3",
         "--ps", "0.8,0.9,1.0", "--seeds", "0,1,2", "--out", os.path.join(out, "dropout")] + common,
    ]
    for argv in steps:
        code = cli(argv)
        if code:
            raise SystemExit(f"hiergcn {argv[0]} failed with exit code {code}")
    drop = read_sweep(os.path.join(out, "dropout", "sweep.csv"))
    depth = read_sweep(os.path.join(out, "depth", "sweep.csv"))
    depth += [r for r in drop if r["seed"] == 0 and r["p"] in (0.8, 0.9)]
    deep, k1, best_drop, nodrop, means = summarize(depth, drop)
    with open(os.path.join(out, "trends.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["comparison", "lhs", "rhs", "holds"])
        w.writerow(["best ndcg10 K in {2,3} vs K=1", f"{deep:.4f}", f"{k1:.4f}", deep > k1])
        w.writerow(["K=3 mean ndcg10 best p in {0.8,0.9} vs p=1 (3 seeds)", f"{best_drop:.4f}", f"{nodrop:.4f}",
                    best_drop >= nodrop])
        for p in sorted(means):
            w.writerow([f"K=3 mean ndcg10 p={p}", f"{means[p]:.4f}", "", ""])
    return deep, k1, best_drop, nodrop


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.path.join(ROOT, "results", "ml100k"))
    ap.add_argument("--data", default=os.path.join(ROOT, "data", "ml-100k.tsv"))
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()
    deep, k1, drop, nodrop = run(args.out, args.data, args.epochs)
    print(f"depth:   best K>=2 ndcg@10 {deep:.4f} vs K=1 {k1:.4f}")
    print(f"dropout: best p<1 ndcg@10 {drop:.4f} vs p=1 {nodrop:.4f}")
    sys.exit(0)
