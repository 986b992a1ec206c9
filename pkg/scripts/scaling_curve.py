#!/usr/bin/env python3
"""mIoU against gallery size on the default synthetic benchmark (nested, seeded subsets).

Usage:
  python scripts/scaling_curve.py --sizes 1,5,10,20,40,80 --out results/scaling.csv
"""
import argparse
import csv
from pathlib import Path

from aoiseg.aggregate import RetrievalConfig
from aoiseg.bench import load_benchmark
from aoiseg.tune import scalability_curve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1,5,10,20,40,80")
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    bench = load_benchmark(pool=max(sizes))
    curve = scalability_curve(bench.pool, sizes, bench.eval, RetrievalConfig(k=args.k), bench.spec.patch_size,
                              seed=args.seed)
    for n, m in curve:
        print(f"N={n:<4d} mIoU={m * 100:.1f}")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["N", "miou"])
            w.writerows(curve)


if __name__ == "__main__":
    main()
