#!/usr/bin/env python3
"""Build data/adult.csv from the UCI Adult files.

The raw files are taken from the `responsibly` wheel on PyPI, which ships
adult.data and adult.test verbatim. Both files are merged, the trailing "."
on labels in adult.test is removed, and a seeded sample of 16,256 rows is
written with a header row.

Usage: python3 scripts/prepare_adult.py [--out data/adult.csv]
"""

import argparse
import csv
import glob
import io
import os
import random
import subprocess
import tempfile
import zipfile

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]
N_ROWS = 16256
SEED = 20230601


def read_rows(text):
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("|"):
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(COLUMNS):
            continue
        cells[-1] = cells[-1].rstrip(".")
        rows.append(cells)
    return rows


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=os.path.join("data", "adult.csv"))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            ["pip", "download", "--no-deps", "-q", "-d", tmp, "responsibly==0.1.2"],
            check=True,
        )
        wheel = glob.glob(os.path.join(tmp, "responsibly-*.whl"))[0]
        with zipfile.ZipFile(wheel) as z:
            rows = []
            for name in ("adult.data", "adult.test"):
                raw = z.read(f"responsibly/dataset/adult/{name}")
                rows.extend(read_rows(io.TextIOWrapper(io.BytesIO(raw), encoding="utf-8").read()))

    rng = random.Random(SEED)
    sample = rng.sample(rows, N_ROWS)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(sample)
    print(f"wrote {len(sample)} rows to {args.out}")


if __name__ == "__main__":
    main()
