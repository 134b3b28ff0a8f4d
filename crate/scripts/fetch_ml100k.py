#!/usr/bin/env python3
"""Materialize MovieLens-100k in the layout `cadvae prepare` expects.

The ratings and item table are taken from the copy bundled inside the
pytorch-widedeep wheel (fetched with pip, no other network access needed).

Outputs (default: data/ml-100k/):
  u.data      user<TAB>item<TAB>rating<TAB>timestamp, as in the original archive
  items.meta  item<TAB>year<TAB>director<TAB>genres<TAB>actors
              lists are ';'-separated, empty fields mean "unknown".
              ML-100k ships no director or actor ids, so those stay empty.
"""
import argparse
import io
import pathlib
import subprocess
import sys
import tempfile
import zipfile

import pandas as pd

WHEEL = "pytorch-widedeep==1.7.0"
PREFIX = "pytorch_widedeep/datasets/data/"


def fetch_wheel(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", WHEEL, "--no-deps",
         "--timeout", "120", "-d", str(workdir)],
        check=True,
    )
    return next(workdir.glob("pytorch_widedeep-*.whl"))


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data/ml-100k")
    ap.add_argument("--wheel", help="use an already downloaded wheel")
    args = ap.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheel = pathlib.Path(args.wheel) if args.wheel else fetch_wheel(pathlib.Path(tmp))
        with zipfile.ZipFile(wheel) as z:
            ratings = pd.read_parquet(io.BytesIO(z.read(PREFIX + "MovieLens100k_data.parquet.brotli")))
            items = pd.read_parquet(io.BytesIO(z.read(PREFIX + "MovieLens100k_items.parquet.brotli")))

    ratings = ratings[["user_id", "movie_id", "rating", "timestamp"]]
    ratings.to_csv(out / "u.data", sep="\t", header=False, index=False)

    genre_cols = list(items.columns[items.columns.get_loc("unknown"):])
    with open(out / "items.meta", "w") as f:
        for _, row in items.sort_values("movie_id").iterrows():
            date = row["release_date"]
            year = str(date)[-4:] if isinstance(date, str) and len(date) >= 4 else ""
            # genre column 0 is ML's own "unknown" flag; it maps to our UNKNOWN bucket
            genres = [str(i) for i, g in enumerate(genre_cols) if i > 0 and row[g] == 1]
            f.write(f"{row['movie_id']}\t{year}\t\t{';'.join(genres)}\t\n")
    print(f"wrote {len(ratings)} ratings and {len(items)} items to {out}")


if __name__ == "__main__":
    main()
