#!/usr/bin/env python3
"""Rebuild small ODDS benchmark tables as CSV files with a `label` column.

ODDS ships MATLAB files; this script reconstructs the same tables from
offline copies of their UCI sources:

  wine     sklearn.datasets.load_wine           classes 2,3 normal; 10 of class 1 as anomalies
  wbc      sklearn.datasets.load_breast_cancer  benign normal; 21 malignant as anomalies
  glass    MASS::fgl (pydataset resources)      type Tabl as anomalies
  lympho   KEEL lymphography-normal-fibrosis    normal/fibrosis as anomalies
  breastw  KEEL wisconsin                       malignant as anomalies
  pima     KEEL pima                            diabetic as anomalies

Usage:
  prepare_odds.py --fgl path/to/fgl.csv --keel path/to/imbalanced_databases.whl --out data/odds

For HTTP, convert http.mat from ODDS with scipy.io.loadmat and write
columns x0,x1,x2,label the same way (not bundled).
"""
import argparse
import csv
import os
import zipfile

import numpy as np
from sklearn.datasets import load_breast_cancer, load_wine


def write(path, X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"x{i}" for i in range(X.shape[1])]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(list(names) + ["label"])
        for row, lab in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])
    print(f"{path}: n={len(y)} d={X.shape[1]} anomalies={int(np.sum(y))}")


def keel(archive, name):
    with zipfile.ZipFile(archive) as z:
        text = z.read(f"imbalanced_databases/data/{name}/{name}.dat").decode()
    attrs, rows = [], []
    for line in text.splitlines():
        line = line.strip()
        if line.lower().startswith("@attribute"):
            body = line.split(None, 2)[2]
            if "{" in body:
                levels = [v.strip() for v in body[body.index("{") + 1 : body.index("}")].split(",")]
            else:
                levels = None
            attrs.append((line.split()[1], levels))
        elif line and not line.startswith("@"):
            rows.append([v.strip() for v in line.split(",")])
    X, y = [], []
    for r in rows:
        feats = []
        for (_, levels), v in zip(attrs[:-1], r[:-1]):
            # categorical levels map to their 1-based UCI codes
            feats.append(levels.index(v) + 1 if levels else float(v))
        X.append(feats)
        y.append(1 if r[-1] == "positive" else 0)
    return np.array(X, dtype=float), np.array(y), [a for a, _ in attrs[:-1]]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--fgl", required=True)
    ap.add_argument("--keel", required=True)
    ap.add_argument("--out", default="data/odds")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    os.makedirs(a.out, exist_ok=True)
    rng = np.random.default_rng(a.seed)

    w = load_wine()
    normal = np.where(w.target != 0)[0]
    anom = rng.choice(np.where(w.target == 0)[0], 10, replace=False)
    idx = np.sort(np.r_[normal, anom])
    write(f"{a.out}/wine.csv", w.data[idx], (w.target[idx] == 0).astype(int))

    b = load_breast_cancer()
    normal = np.where(b.target == 1)[0]
    anom = rng.choice(np.where(b.target == 0)[0], 21, replace=False)
    idx = np.sort(np.r_[normal, anom])
    write(f"{a.out}/wbc.csv", b.data[idx], (b.target[idx] == 0).astype(int))

    with open(a.fgl) as f:
        r = list(csv.reader(f))
    head, body = r[0], r[1:]
    cols = head[1:-1]
    X = [[float(v) for v in row[1:-1]] for row in body]
    for row in X:
        # MASS stores RI as (RI - 1.518) * 1000
        row[0] = 1.518 + row[0] / 1000.0
    y = [1 if row[-1] == "Tabl" else 0 for row in body]
    write(f"{a.out}/glass.csv", X, y, cols)

    for name, out in [("lymphography-normal-fibrosis", "lympho"), ("wisconsin", "breastw"), ("pima", "pima")]:
        X, y, names = keel(a.keel, name)
        write(f"{a.out}/{out}.csv", X, y, names)


if __name__ == "__main__":
    main()
