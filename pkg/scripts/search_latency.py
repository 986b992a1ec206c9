#!/usr/bin/env python3
"""Exact vs inverted-list search latency as the bank grows, on clustered synthetic keys.

Usage:
  python scripts/search_latency.py --sizes 10000,30000,100000 --queries 1024
"""
import argparse
import math
import time

import numpy as np

from aoiseg import membank as mb
from aoiseg.bench import clustered_keys


def timed(fn, repeat):
    fn()
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        runs.append(time.perf_counter() - t0)
    return float(np.median(runs)), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="10000,30000,100000")
    ap.add_argument("--queries", type=int, default=1024)
    ap.add_argument("--d", type=int, default=384)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    print(f"{'M':>8} {'nlist':>6} {'nprobe':>6} {'exact_s':>8} {'ivf_s':>8} {'recall':>7}")
    for M in (int(s) for s in args.sizes.split(",")):
        pts = clustered_keys(M + args.queries, args.d, seed=0)
        keys, q = pts[:M], pts[M:]
        bank = mb.build_arrays(keys, np.zeros((M, 1, 1), bool), [("k", j) for j in range(M)]).with_partition()
        nlist = bank.partition.nlist
        nprobe = max(4, nlist // 8)
        t_exact, exact = timed(lambda: mb.search_exact(bank, q, args.k, workers=args.workers), args.repeat)
        t_ivf, approx = timed(lambda: mb.search_partitioned(bank, q, args.k, nprobe), args.repeat)
        print(f"{M:>8} {nlist:>6} {nprobe:>6} {t_exact:>8.3f} {t_ivf:>8.3f} {mb.recall_at_k(approx, exact):>7.4f}")


if __name__ == "__main__":
    main()
