"""Regenerate data/digits.csv from scikit-learn's bundled digits set.

One-shot generator: scikit-learn is needed to run this script but is
not a runtime dependency of the package. The output is 1797 rows of 64
integer pixel features (0..16) plus a `label` column.
"""

import csv
import pathlib

from sklearn.datasets import load_digits


def main():
    out = pathlib.Path(__file__).resolve().parents[1] / "data" / "digits.csv"
    digits = load_digits()
    header = [f"p{i:02d}" for i in range(digits.data.shape[1])] + ["label"]
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row, label in zip(digits.data, digits.target):
            writer.writerow([int(v) for v in row] + [int(label)])
    print(f"wrote {out} ({len(digits.target)} rows)")


if __name__ == "__main__":
    main()
