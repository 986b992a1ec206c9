#!/usr/bin/env python3
"""Patch-level vs image-level retrieval, similarity vs attention, on the default synthetic benchmark.

Each configuration is tuned (k, beta, per-class thresholds) by 5-fold CV on
the 42-image gallery and scored on the 24-image eval set.

Usage:
  python scripts/compare_strategies.py
  python scripts/compare_strategies.py --gallery 42 --eval 24 --out results/strategies.json
"""
import argparse
import json
import time
from pathlib import Path

from aoiseg.aggregate import RetrievalConfig
from aoiseg.bench import BenchmarkSpec, load_benchmark
from aoiseg.grid import CLASS_NAMES
from aoiseg.tune import TuneSpec, build_bank, evaluate, grid_search


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gallery", type=int, default=42)
    ap.add_argument("--eval", type=int, default=24)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    bench = load_benchmark(BenchmarkSpec(gallery=args.gallery, eval=args.eval))
    P = bench.spec.patch_size
    rows = []
    for name, template in (
        ("patch/similarity", RetrievalConfig()),
        ("patch/attention", RetrievalConfig(mode="attention")),
        ("image/similarity", RetrievalConfig(granularity="image")),
    ):
        t0 = time.perf_counter()
        res = grid_search(bench.gallery, template, TuneSpec(folds=args.folds), P)
        cfg = res.config(template)
        rep = evaluate(bench.eval, build_bank(bench.gallery, cfg, P), cfg)
        rows.append(dict(strategy=name, k=res.best_k, beta=res.best_beta, thresholds=res.best_thresholds,
                         cv_miou=res.best_score, eval_miou=rep.miou,
                         per_class=dict(zip(CLASS_NAMES, [None if x != x else float(x) for x in rep.iou])),
                         seconds=time.perf_counter() - t0))
        r = rows[-1]
        print(f"{name:18s} k={r['k']:<3d} beta={r['beta']}  thresholds={list(r['thresholds'])}  "
              f"cv={r['cv_miou'] * 100:.1f}  eval={r['eval_miou'] * 100:.1f}  ({r['seconds']:.0f}s)")
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
