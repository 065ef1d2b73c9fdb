#!/usr/bin/env python3
"""Rebuild MovieLens-100K `u.data` and `u.item` under data/ml-100k/.

The GroupLens host is not always reachable, so this pulls the RecBole wheel
from PyPI (it bundles the ml-100k atomic files) and converts them back to the
original tab/pipe layouts. Release dates are restored as 01-Jan-<year> since
the atomic item file only keeps the year.
"""
import argparse
import io
import os
import subprocess
import sys
import tempfile
import zipfile

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy",
    "Crime", "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror",
    "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
PREFIX = "recbole/dataset_example/ml-100k/"


def fetch_wheel(workdir):
    subprocess.check_call(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet",
         "recbole==1.2.1", "-d", workdir])
    for name in os.listdir(workdir):
        if name.endswith(".whl"):
            return os.path.join(workdir, name)
    raise SystemExit("recbole wheel not found after download")


def convert(wheel, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with zipfile.ZipFile(wheel) as z:
        inter = z.read(PREFIX + "ml-100k.inter").decode("utf-8")
        item = z.read(PREFIX + "ml-100k.item").decode("utf-8")

    rows = inter.splitlines()[1:]
    with open(os.path.join(out_dir, "u.data"), "w", newline="\n") as f:
        for row in rows:
            u, i, r, t = row.split("\t")
            f.write(f"{u}\t{i}\t{int(float(r))}\t{int(float(t))}\n")

    with io.open(os.path.join(out_dir, "u.item"), "w", encoding="latin-1",
                 errors="replace", newline="\n") as f:
        for row in item.splitlines()[1:]:
            parts = row.split("\t")
            item_id, title, year = parts[0], parts[1], parts[2]
            classes = parts[3].split(" ") if len(parts) > 3 else []
            flags = ["1" if g in classes else "0" for g in GENRES]
            date = f"01-Jan-{year}" if year.strip() else ""
            f.write("|".join([item_id, title, date, "", ""] + flags) + "\n")
    print(f"wrote {len(rows)} ratings to {out_dir}")


def main():
    here = os.path.dirname(os.path.abspath(__file__))
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join(here, "..", "data", "ml-100k"))
    parser.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = parser.parse_args()
    if args.wheel:
        convert(args.wheel, args.out)
        return
    with tempfile.TemporaryDirectory() as tmp:
        convert(fetch_wheel(tmp), args.out)


if __name__ == "__main__":
    main()
