"""Convergence-ratio curves on a synthetic graph and on MovieLens-100k.

Writes ``<out>/synthetic`` and ``<out>/ml100k`` (convergence.csv + spectral.csv)
through the ``analyze`` command; plot ratio_mean against k per p with any tool.

    python scripts/convergence_curves.py --out results/convergence
"""

import argparse
import os
import sys

from hiergcn.cli import main as cli

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def run(out, data, k_max=40, trials=10):
    common = ["--ps", "1,0.9,0.7,0.5", "--k-max", str(k_max), "--trials", str(trials)]
    jobs = [["analyze", "--synthetic", "250,250,3000", "--out", os.path.join(out, "synthetic")] + common]
    if os.path.exists(data):
        split = os.path.join(out, "ml100k_split")
        jobs.insert(0, ["split", "--input", data, "--out", split])
        jobs.append(["analyze", "--train", os.path.join(split, "train.tsv"), "--out", os.path.join(out, "ml100k")]
                    + common)
    else:
        print(f"{data} not found, skipping MovieLens (run scripts/fetch_ml100k.py)", file=sys.stderr)
    for argv in jobs:
        if cli(argv):
            raise SystemExit(f"hiergcn {argv[0]} failed")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.path.join(ROOT, "results", "convergence"))
    ap.add_argument("--data", default=os.path.join(ROOT, "data", "ml-100k.tsv"))
    ap.add_argument("--k-max", type=int, default=40)
    ap.add_argument("--trials", type=int, default=10)
    args = ap.parse_args()
    run(args.out, args.data, args.k_max, args.trials)
