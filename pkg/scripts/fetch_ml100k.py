"""Extract MovieLens-100k from the recbole wheel into ``data/ml-100k.tsv``.

The wheel ships the ratings as ``ml-100k.inter``; this rewrites it as a
plain ``user item rating timestamp`` file without the typed header line.
MovieLens is distributed under GroupLens' own terms, so it is not vendored.

    python scripts/fetch_ml100k.py [--out data/ml-100k.tsv]
"""

import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k.tsv"))
    ap.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp,
                            "recbole==1.2.1"], check=True)
            wheel = glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]
        lines = zipfile.ZipFile(wheel).read(MEMBER).decode("utf-8").splitlines()

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for line in lines[1:]:
            if line.strip():
                fh.write(line + "\n")
    print(f"wrote {len(lines) - 1} interactions to {args.out}")


if __name__ == "__main__":
    main()
