"""Command-line entry point: ``aoiseg <command> [flags]``.

Commands: synth, encode, build, segment, tune, eval, bench, scaling.
Exit status is 0 on success, 2 for usage or validation errors and 1 for
runtime failures. ``--config FILE`` (JSON, keys named like the flags with
dashes as underscores) supplies values for flags not given on the command
line. ``AOISEG_THREADS`` caps search threads (0 = all CPUs).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import membank
from .aggregate import RetrievalConfig, segment_many
from .bench import channel_stats
from .embed import (
    PatchEmbeddingSet,
    ToyEncoderConfig,
    load_embeddings,
    load_embeddings_with_patch,
    save_embeddings,
    toy_encode,
)
from .errors import AOISegError, InvalidTemperatureError, SpecError
from .grid import CLASS_NAMES, PatchGridSpec, apply_crop, load_mask, load_raster, save_mask, zscore
from .metrics import apply_thresholds, dataset_report, finalize_miou
from .synth import SceneSpec, generate_dataset, read_manifest
from .tune import K_GRID, THRESHOLD_GRID, Sample, TuneResult, TuneSpec, grid_search, scalability_curve

# one RGB tint per class for overlays
OVERLAY_COLORS = np.array([[255, 64, 64], [64, 160, 255], [255, 200, 0], [80, 220, 80]], np.float32)


class UsageError(Exception):
    """Invalid or missing flags; reported with exit status 2."""


# -- helpers -----------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required flag(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _need_file(path, flag):
    if not Path(path).is_file():
        raise UsageError(f"{flag}: no such file {path}")


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def _print_config(args):
    cfg = {k: _jsonable(v) for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    print("config " + json.dumps(cfg, sort_keys=True))


def _pair(text_pair, flag):
    manifest, emb = text_pair
    _need_file(manifest, flag + " manifest")
    _need_file(emb, flag + " embeddings")
    return Path(manifest), Path(emb)


def _labeled(manifest: Path, emb_path: Path) -> tuple[list[Sample], int]:
    """Pair every manifest row with its embedding set by id, in manifest order."""
    sets, P = load_embeddings_with_patch(emb_path)
    by_id = {s.image_id: s for s in sets}
    out = []
    for ident, _, mask_path in read_manifest(manifest):
        if ident not in by_id:
            raise AOISegError(f"{emb_path}: no embeddings for manifest id {ident!r}")
        out.append(Sample(by_id[ident], load_mask(mask_path)))
    return out, P


def _retrieval_config(args, tuned: Optional[TuneResult] = None) -> RetrievalConfig:
    cfg = RetrievalConfig(
        granularity=args.mode,
        k=args.k,
        mode="attention" if args.agg == "attn" else "similarity",
        beta=args.beta,
        thresholds=args.thresholds,
        search=getattr(args, "search", "exact"),
        nprobe=getattr(args, "nprobe", 8),
    )
    return tuned.config(cfg) if tuned is not None else cfg


def _write_ppm(path: Path, img: np.ndarray, mask: np.ndarray):
    """Channel 1 (min-max scaled) as gray with each predicted class tinted on top."""
    ch = img[:, :, 0].astype(np.float64)
    lo, hi = ch.min(), ch.max()
    gray = (ch - lo) / (hi - lo) if hi > lo else np.zeros_like(ch)
    rgb = np.repeat(gray[:, :, None] * 255.0, 3, axis=2).astype(np.float32)
    for c in range(mask.shape[2]):
        m = mask[:, :, c]
        rgb[m] = 0.5 * rgb[m] + 0.5 * OVERLAY_COLORS[c % len(OVERLAY_COLORS)]
    rgb = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    h, w = mask.shape[:2]
    path.write_bytes(f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes())


# -- commands ----------------------------------------------------------------

def cmd_synth(args):
    _require(args, "out", "n")
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    spec = SceneSpec()
    if args.spec:
        _need_file(args.spec, "--spec")
        spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    spec.validate()
    _print_config(args)
    print("scene_spec " + json.dumps(spec.to_dict()))
    out = Path(args.out)
    rows = generate_dataset(spec, args.n, out, start=args.start)
    (out / "scene_spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    print(f"wrote {len(rows)} scenes and {out / 'manifest.tsv'}")


def cmd_encode(args):
    _require(args, "manifest", "out")
    _need_file(args.manifest, "--manifest")
    if args.d < 1 or args.p < 1:
        raise UsageError(f"--d and --p must be >= 1, got d={args.d}, p={args.p}")
    if args.encoder == "file":
        if not args.path or not Path(args.path).is_file():
            raise UsageError(f"--encoder file needs an existing --path, got {args.path!r}")
    if args.stats:
        _need_file(args.stats, "--stats")
    _print_config(args)
    rows = read_manifest(args.manifest)
    if args.encoder == "file":
        sets = _import_embeddings(Path(args.path), rows, args.p)
    else:
        enc = ToyEncoderConfig(seed=args.seed, d=args.d, P=args.p)
        rasters = [apply_crop(load_raster(r), args.crop) for _, r, _ in rows]
        if args.stats:
            st = json.loads(Path(args.stats).read_text())
            mean, std = np.asarray(st["mean"]), np.asarray(st["std"])
        else:
            mean, std = channel_stats(rasters)
            stats_path = Path(str(args.out) + ".stats.json")
            stats_path.write_text(json.dumps({"mean": mean.tolist(), "std": std.tolist()}, indent=2) + "\n")
            print(f"normalization statistics written to {stats_path}")
        sets = [toy_encode(zscore(img, mean, std), enc, ident) for (ident, _, _), img in zip(rows, rasters)]
    save_embeddings(sets, args.out, P=args.p)
    print(f"wrote {len(sets)} embedding sets (L={sets[0].L}, d={sets[0].d}, P={args.p}) to {args.out}")


def _import_embeddings(path: Path, rows, P: int) -> list[PatchEmbeddingSet]:
    """Embeddings from an external encoder: an ``.npz`` with one ``(L, d)`` array per id.

    An optional ``<id>.global`` array supplies the image embedding; otherwise
    the patch mean is used.
    """
    with np.load(path) as z:
        sets = []
        for ident, _, _ in rows:
            if ident not in z:
                raise AOISegError(f"{path}: no array for id {ident!r}")
            emb = np.asarray(z[ident], np.float32)
            g = z[ident + ".global"] if ident + ".global" in z else emb.astype(np.float64).mean(axis=0)
            sets.append(PatchEmbeddingSet(ident, emb, np.asarray(g, np.float32)))
    return sets


def cmd_build(args):
    _require(args, "embeddings", "manifest", "out")
    _need_file(args.embeddings, "--embeddings")
    _need_file(args.manifest, "--manifest")
    if args.index is not None and args.index < 0:
        raise UsageError("--index must be >= 0 (0 picks ceil(sqrt(M)))")
    _print_config(args)
    samples, P = _labeled(Path(args.manifest), Path(args.embeddings))
    sets, masks = [s.embeddings for s in samples], [s.mask for s in samples]
    if args.granularity == "image":
        bank = membank.build_image_bank(sets, masks)
    else:
        bank = membank.build_patch_bank(sets, masks, P)
    if args.index is not None:
        bank = bank.with_partition(args.index or None, seed=args.seed)
    membank.save(bank, args.out)
    nlist = bank.partition.nlist if bank.partition is not None else 0
    print(f"bank: M={bank.M} d={bank.d} P2={bank.P2} C={bank.C} nlist={nlist} "
          f"bytes={membank.estimate_memory(bank)} -> {args.out}")


def _check_bank_granularity(bank, P: int, L: int, mode: str):
    want = P * P if mode == "patch" else L * P * P
    if bank.P2 != want:
        kind = "patch" if bank.P2 == P * P else "image" if bank.P2 == L * P * P else "unknown"
        raise UsageError(f"--mode {mode} needs a bank with P2={want}, this is a {kind}-level bank (P2={bank.P2})")


def cmd_segment(args):
    _require(args, "bank", "embeddings", "out")
    _need_file(args.bank, "--bank")
    _need_file(args.embeddings, "--embeddings")
    tuned = None
    if args.tune:
        _need_file(args.tune, "--tune")
        tuned = TuneResult.from_json(Path(args.tune).read_text())
    if args.overlay and not args.manifest:
        raise UsageError("--overlay needs --manifest for the source rasters")
    cfg = _retrieval_config(args, tuned)
    _print_config(args)
    print("retrieval " + json.dumps(asdict(cfg)))
    bank = membank.load(args.bank)
    sets, P = load_embeddings_with_patch(args.embeddings)
    _check_bank_granularity(bank, P, sets[0].L, cfg.granularity)
    cfg = replace(cfg, workers=None)
    softs = segment_many(sets, bank, cfg)[(cfg.k, cfg.mode, cfg.beta)]
    t = cfg.threshold_vector(bank.C)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rasters = {}
    if args.overlay:
        rasters = {i: r for i, r, _ in read_manifest(args.manifest)}
    for s, soft in zip(sets, softs):
        pred = apply_thresholds(soft, t)
        save_mask(pred, out / f"{s.image_id}.aoim")
        if args.overlay:
            if s.image_id not in rasters:
                raise AOISegError(f"--manifest has no raster for {s.image_id!r}")
            img = apply_crop(load_raster(rasters[s.image_id]), pred.shape[0])
            _write_ppm(out / f"{s.image_id}.ppm", img, pred)
    print(f"wrote {len(sets)} predicted masks to {out}")


def cmd_tune(args):
    _require(args, "bank_source", "out")
    manifest, emb = _pair(args.bank_source, "--bank-source")
    spec = TuneSpec(k_grid=args.k_grid, threshold_grid=args.threshold_grid, beta_grid=args.beta_grid,
                    folds=args.folds, seed=args.seed)
    template = _retrieval_config(args)
    _print_config(args)
    samples, P = _labeled(manifest, emb)
    result = grid_search(samples, template, spec, P)
    Path(args.out).write_text(result.to_json() + "\n")
    print(f"best k={result.best_k} beta={result.best_beta} thresholds={list(result.best_thresholds)} "
          f"cv_miou={result.best_score:.4f} -> {args.out}")


def cmd_eval(args):
    _require(args, "pred", "gt")
    _need_file(args.gt, "--gt")
    if not Path(args.pred).is_dir():
        raise UsageError(f"--pred: no such directory {args.pred}")
    _print_config(args)
    rows = read_manifest(args.gt)
    preds, gts = [], []
    for ident, _, mask_path in rows:
        p = Path(args.pred) / f"{ident}.aoim"
        if not p.is_file():
            raise AOISegError(f"missing prediction {p}")
        preds.append(load_mask(p))
        gts.append(load_mask(mask_path))
    gts = [apply_crop(g, p.shape[0]) for g, p in zip(gts, preds)]
    report = dataset_report(preds, gts)
    names = CLASS_NAMES if report.C == len(CLASS_NAMES) else None
    if args.out:
        Path(args.out).write_text(report.to_json(names) + "\n")
    for name, row in report.to_dict(names)["classes"].items():
        iou = "undefined" if row["iou"] is None else f"{row['iou']:.4f}"
        print(f"{name:>8}  IoU {iou}  ({row['intersection']}/{row['union']})")
    print(f"mIoU {finalize_miou(report):.4f} over {len(rows)} images")


def cmd_bench(args):
    _require(args, "bank", "queries")
    _need_file(args.bank, "--bank")
    _need_file(args.queries, "--queries")
    if args.k < 1 or args.repeat < 1 or args.nprobe < 1 or args.max_queries < 1:
        raise UsageError("--k, --repeat, --nprobe and --max-queries must be >= 1")
    _print_config(args)
    bank = membank.load(args.bank)
    sets = load_embeddings(args.queries, expect_d=bank.d)
    q = np.concatenate([s.patch_embeddings for s in sets])[: args.max_queries]

    def run():
        if args.mode == "partitioned":
            return membank.search_partitioned(bank, q, args.k, args.nprobe)
        return membank.search_exact(bank, q, args.k)

    result = run()  # warm-up; also builds the lazily sorted list keys
    times = []
    for _ in range(args.repeat):
        t0 = time.perf_counter()
        result = run()
        times.append(time.perf_counter() - t0)
    times = np.asarray(times)
    stats = {
        "mode": args.mode,
        "queries": int(len(q)),
        "k": args.k,
        "M": bank.M,
        "median_s": float(np.median(times)),
        "p95_s": float(np.percentile(times, 95)),
        "qps": float(len(q) / np.median(times)),
        "threads": membank.resolve_workers(),
    }
    if args.mode == "partitioned":
        stats["nprobe"] = args.nprobe
        stats["nlist"] = bank.partition.nlist
        stats["recall"] = membank.recall_at_k(result, membank.search_exact(bank, q, args.k))
    if args.out:
        Path(args.out).write_text(json.dumps(stats, indent=2) + "\n")
    print(" ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in stats.items()))


def cmd_scaling(args):
    _require(args, "pool", "eval", "sizes", "out")
    pool_m, pool_e = _pair(args.pool, "--pool")
    eval_m, eval_e = _pair(args.eval, "--eval")
    sizes = list(args.sizes)
    if not sizes or sizes != sorted(sizes) or sizes[0] < 1:
        raise UsageError(f"--sizes must be ascending positive counts, got {sizes}")
    cfg = _retrieval_config(args)
    _print_config(args)
    pool, P = _labeled(pool_m, pool_e)
    evals, _ = _labeled(eval_m, eval_e)
    curve = scalability_curve(pool, sizes, evals, cfg, P, seed=args.seed)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["N", "miou"])
        for n, m in curve:
            w.writerow([n, f"{m:.6f}"])
    for n, m in curve:
        print(f"N={n:<5d} mIoU={m:.4f}")
    print(f"wrote {args.out}")


# -- parser ------------------------------------------------------------------

def _add_retrieval(p, granularity=True):
    if granularity:
        p.add_argument("--mode", choices=("patch", "image"), default="patch", help="retrieval granularity")
    p.add_argument("--agg", choices=("sim", "attn"), default="sim", help="neighbor combination")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--beta", type=float, default=0.07, help="attention temperature")
    p.add_argument("--thresholds", type=_floats, default=None,
                   help="per-class thresholds, comma-separated (default 0.5 each)")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="aoiseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, func, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", type=Path, help="JSON file with flag values")
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("synth", cmd_synth, "generate a synthetic labeled dataset")
    p.add_argument("--spec", type=Path, help="SceneSpec JSON")
    p.add_argument("--n", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("--seed", type=int, default=None, help="overrides the spec seed")
    p.add_argument("--start", type=int, default=0, help="first scene index")

    p = add("encode", cmd_encode, "embed every raster of a manifest")
    p.add_argument("--manifest", type=Path)
    p.add_argument("--encoder", choices=("toy", "file"), default="toy")
    p.add_argument("--path", type=Path, help="precomputed .npz for --encoder file")
    p.add_argument("--d", type=int, default=384)
    p.add_argument("--p", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--crop", type=int, default=None, help="center-crop rasters to this side first")
    p.add_argument("--stats", type=Path, help="normalization statistics JSON (default: computed here)")
    p.add_argument("--out", type=Path)

    p = add("build", cmd_build, "build a memory bank file")
    p.add_argument("--embeddings", type=Path)
    p.add_argument("--manifest", type=Path)
    p.add_argument("--granularity", choices=("patch", "image"), default="patch")
    p.add_argument("--index", type=int, default=None, help="add an inverted-list index with this many lists")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = add("segment", cmd_segment, "predict masks by retrieval")
    p.add_argument("--bank", type=Path)
    p.add_argument("--embeddings", type=Path)
    _add_retrieval(p)
    p.add_argument("--search", choices=("exact", "partitioned"), default="exact")
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--tune", type=Path, help="TuneResult JSON supplying k, beta and thresholds")
    p.add_argument("--manifest", type=Path, help="source rasters, for --overlay")
    p.add_argument("--overlay", action="store_true", help="also write PPM overlays")
    p.add_argument("--out", type=Path)

    p = add("tune", cmd_tune, "cross-validated grid search")
    p.add_argument("--bank-source", nargs=2, metavar=("MANIFEST", "AOIE"))
    _add_retrieval(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--k-grid", type=_ints, default=K_GRID)
    p.add_argument("--threshold-grid", type=_floats, default=THRESHOLD_GRID)
    p.add_argument("--beta-grid", type=_floats, default=(0.02, 0.07, 0.2, 1.0))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)

    p = add("eval", cmd_eval, "score predicted masks against ground truth")
    p.add_argument("--pred", type=Path)
    p.add_argument("--gt", type=Path)
    p.add_argument("--out", type=Path)

    p = add("bench", cmd_bench, "search latency and throughput")
    p.add_argument("--bank", type=Path)
    p.add_argument("--queries", type=Path)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--mode", choices=("exact", "partitioned"), default="exact")
    p.add_argument("--nprobe", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--max-queries", type=int, default=1024)
    p.add_argument("--out", type=Path)

    p = add("scaling", cmd_scaling, "mIoU against gallery size")
    p.add_argument("--pool", nargs=2, metavar=("MANIFEST", "AOIE"))
    p.add_argument("--eval", nargs=2, metavar=("MANIFEST", "AOIE"))
    p.add_argument("--sizes", type=_ints, default=(5, 10, 20, 40, 80))
    _add_retrieval(p, granularity=False)
    p.set_defaults(mode="patch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    return parser, subs


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        if not args.config.is_file():
            parser.error(f"--config: no such file {args.config}")
        try:
            overrides = json.loads(args.config.read_text())
        except json.JSONDecodeError as e:
            parser.error(f"--config: {e}")
        p = subs[args.command]
        known = {a.dest for a in p._actions}
        unknown = set(overrides) - known
        if unknown:
            parser.error(f"--config: unknown keys {sorted(unknown)}")
        # config values become defaults, so explicit flags still win
        types = {a.dest: a.type for a in p._actions}
        for k, v in overrides.items():
            if isinstance(v, str) and types.get(k) is not None:
                v = types[k](v)
            elif isinstance(v, list):
                v = tuple(v)
            p.set_defaults(**{k: v})
        args = parser.parse_args(argv)
    return args


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except (UsageError, SpecError, InvalidTemperatureError, argparse.ArgumentTypeError) as e:
        print(f"aoiseg {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (AOISegError, OSError, ValueError) as e:
        print(f"aoiseg {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
