#!/usr/bin/env python3
"""Fetch MovieLens 100K into data/ml-100k/.

Writes u.data (user, item, rating, timestamp; tab separated, original order),
items.csv (id,label = movie title) and users.csv (id,label = gender).

Tries the GroupLens archive first. If it is unreachable, falls back to the
copy bundled in the pytorch-widedeep 1.7.0 wheel (needs pandas + pyarrow).
"""

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
WHEEL = "pytorch-widedeep==1.7.0"


def write_labels(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "label"])
        w.writerows(rows)


def from_grouplens(out):
    with urllib.request.urlopen(GROUPLENS, timeout=30) as r:
        z = zipfile.ZipFile(io.BytesIO(r.read()))
    (out / "u.data").write_bytes(z.read("ml-100k/u.data"))
    items = z.read("ml-100k/u.item").decode("latin-1").splitlines()
    write_labels(out / "items.csv", (line.split("|")[:2] for line in items if line))
    users = z.read("ml-100k/u.user").decode("latin-1").splitlines()
    write_labels(out / "users.csv", ((f[0], f[2]) for f in (line.split("|") for line in users if line)))


def from_wheel(out):
    import pandas as pd

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--timeout", "120", "--no-deps", "-d", tmp, WHEEL],
            check=True,
        )
        wheel = next(Path(tmp).glob("*.whl"))
        z = zipfile.ZipFile(wheel)

        def read(name):
            raw = z.read(f"pytorch_widedeep/datasets/data/MovieLens100k_{name}.parquet.brotli")
            return pd.read_parquet(io.BytesIO(raw))

        read("data").to_csv(out / "u.data", sep="\t", header=False, index=False)
        items = read("items")
        write_labels(out / "items.csv", items[["movie_id", "movie_title"]].itertuples(index=False))
        users = read("users")
        write_labels(out / "users.csv", users[["user_id", "gender"]].itertuples(index=False))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=Path(__file__).resolve().parent.parent / "data" / "ml-100k", type=Path)
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        from_grouplens(args.out)
        print("fetched from GroupLens")
    except Exception as e:  # noqa: BLE001
        print(f"GroupLens unavailable ({e}); using the pytorch-widedeep wheel", file=sys.stderr)
        from_wheel(args.out)
    rows = sum(1 for _ in open(args.out / "u.data"))
    print(f"{rows} ratings written to {args.out}")


if __name__ == "__main__":
    main()
