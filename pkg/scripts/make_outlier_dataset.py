"""Write a small 1-D dataset with planted outliers for ``robust-bo classify``.

    python scripts/make_outlier_dataset.py data.csv [--n 25] [--outliers 3] [--seed 0]
"""

import argparse
import csv

import numpy as np


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("path")
    ap.add_argument("--n", type=int, default=25)
    ap.add_argument("--outliers", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    x = np.linspace(0.0, 1.0, args.n)
    y = np.sin(6 * x) + 0.05 * rng.standard_normal(args.n)
    planted = rng.choice(np.arange(1, args.n - 1), size=args.outliers, replace=False)
    y[planted] += rng.choice([-1, 1], size=args.outliers) * rng.uniform(1.5, 3.0, args.outliers)
    with open(args.path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_0", "y"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in zip(x, y)])
    print("planted outliers at rows", sorted(int(i) for i in planted))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
