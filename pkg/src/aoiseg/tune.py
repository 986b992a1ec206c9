"""Cross-validated grid search over k, beta and per-class thresholds; gallery scaling."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .aggregate import BETA_GRID, RetrievalConfig, segment_many
from .errors import InsufficientDataError, SpecError, UndefinedMetricError
from .membank import MemoryBank, build_image_bank, build_patch_bank
from .metrics import IoUReport, apply_thresholds, dataset_report, finalize_miou, threshold_sweep

K_GRID = (1, 3, 5, 10, 20)
THRESHOLD_GRID = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass
class Sample:
    """One labeled image: its embeddings and full-resolution ground-truth mask."""
    embeddings: object  # PatchEmbeddingSet
    mask: np.ndarray  # (H, W, C) bool

    @property
    def image_id(self) -> str:
        return self.embeddings.image_id


@dataclass(frozen=True)
class TuneSpec:
    k_grid: tuple[int, ...] = K_GRID
    # one grid for every class, or one grid per class
    threshold_grid: tuple = THRESHOLD_GRID
    beta_grid: tuple[float, ...] = BETA_GRID
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.k_grid or not self.threshold_grid or not self.beta_grid:
            raise SpecError("tuning grids must be nonempty")
        if self.folds < 2:
            raise SpecError(f"need at least 2 folds, got {self.folds}")
        if min(self.k_grid) < 1:
            raise SpecError("k values must be >= 1")
        flat = np.ravel(np.concatenate([np.ravel(g) for g in self._grids(None)]))
        if not np.all((flat > 0) & (flat < 1)):
            raise SpecError("thresholds must lie in (0, 1)")
        if min(self.beta_grid) <= 0:
            raise SpecError("beta values must be > 0")

    def _grids(self, C: Optional[int]) -> list[np.ndarray]:
        g = self.threshold_grid
        if len(g) and np.ndim(g[0]) == 1:
            grids = [np.asarray(sorted(x), np.float64) for x in g]
            if C is not None and len(grids) != C:
                raise SpecError(f"{len(grids)} per-class threshold grids for {C} classes")
            return grids
        base = np.asarray(sorted(g), np.float64)
        return [base] * (C or 1)


@dataclass
class TuneResult:
    best_k: int
    best_thresholds: tuple[float, ...]
    best_beta: Optional[float]
    best_score: float
    table: list[dict] = field(default_factory=list)
    folds: list[list[int]] = field(default_factory=list)

    def config(self, template: RetrievalConfig) -> RetrievalConfig:
        return replace(template, k=self.best_k, thresholds=self.best_thresholds,
                       beta=self.best_beta if self.best_beta is not None else template.beta)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TuneResult":
        d = json.loads(text)
        d["best_thresholds"] = tuple(d["best_thresholds"])
        return cls(**d)


def kfold_split(n: int, folds: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded shuffle then contiguous split; the first ``n % folds`` folds get one extra index."""
    if folds < 1 or n < folds:
        raise InsufficientDataError(f"cannot split {n} items into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    sizes = [n // folds + (i < n % folds) for i in range(folds)]
    bounds = np.cumsum([0] + sizes)
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def build_bank(samples: Sequence[Sample], cfg: RetrievalConfig, patch_size: int) -> MemoryBank:
    sets = [s.embeddings for s in samples]
    masks = [s.mask for s in samples]
    if cfg.granularity == "image":
        return build_image_bank(sets, masks)
    bank = build_patch_bank(sets, masks, patch_size)
    if cfg.search == "partitioned":
        bank = bank.with_partition()
    return bank


def _fold_split(samples, fold_idx, f):
    held = [samples[i] for i in fold_idx[f]]
    train = [samples[i] for g, idx in enumerate(fold_idx) if g != f for i in idx]
    return train, held


def _select_thresholds(inter: np.ndarray, union: np.ndarray, grids: list[np.ndarray]):
    """Per class, the lowest grid threshold maximizing the mean over folds of that class's IoU.

    ``inter``/``union`` are ``(folds, C, T)``; folds where the union is zero are skipped.
    """
    chosen = []
    for c, grid in enumerate(grids):
        u = union[:, c, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(u > 0, inter[:, c, :] / np.maximum(u, 1), np.nan)
        defined = (u > 0).sum(axis=0)
        mean = np.where(defined > 0, np.nansum(iou, axis=0) / np.maximum(defined, 1), -1.0)
        chosen.append(int(np.argmax(mean)))
    return [float(grids[c][t]) for c, t in enumerate(chosen)], chosen


def _score(inter, union, chosen) -> tuple[float, list[float]]:
    per_fold = []
    for f in range(inter.shape[0]):
        C = inter.shape[1]
        rep = IoUReport(inter[f, np.arange(C), chosen], union[f, np.arange(C), chosen])
        per_fold.append(finalize_miou(rep))
    return float(np.mean(per_fold)), per_fold


def grid_search(samples: Sequence[Sample], template: RetrievalConfig, spec: TuneSpec,
                patch_size: int) -> TuneResult:
    """Pick k (and beta) by mean CV mIoU, then each class's threshold independently.

    For every fold the bank is built from the other folds and the held-out
    images are retrieved once at the largest k; soft masks are cached per
    (fold, k, beta) and every threshold is scored from pixel histograms.
    """
    if len(samples) < spec.folds:
        raise InsufficientDataError(f"{len(samples)} samples for {spec.folds} folds")
    C = samples[0].mask.shape[2]
    grids = spec._grids(C)
    T = len(grids[0])
    if any(len(g) != T for g in grids):
        padded = max(len(g) for g in grids)
        grids = [np.concatenate([g, np.full(padded - len(g), g[-1])]) for g in grids]
        T = padded
    grid_mat = np.stack(grids)
    fold_idx = kfold_split(len(samples), spec.folds, spec.seed)
    betas = tuple(sorted(spec.beta_grid)) if template.mode == "attention" else (None,)
    modes = [(template.mode, b if b is not None else template.beta) for b in betas]
    ks = sorted(set(spec.k_grid))
    counts: dict[tuple, list] = {}
    for f in range(spec.folds):
        train, held = _fold_split(samples, fold_idx, f)
        bank = build_bank(train, template, patch_size)
        usable = [k for k in ks if k <= bank.M]
        if not usable:
            raise InsufficientDataError(f"fold {f}: bank of {bank.M} entries is smaller than every k")
        softs = segment_many([s.embeddings for s in held], bank, template, usable, modes)
        for k in ks:
            for (mode, beta), b in zip(modes, betas):
                if k not in usable:
                    counts.setdefault((k, b), []).append(None)
                    continue
                inter = np.zeros((C, T), np.int64)
                union = np.zeros((C, T), np.int64)
                for soft, s in zip(softs[(k, mode, beta)], held):
                    i, u = threshold_sweep(soft, s.mask, grid_mat)
                    inter += i
                    union += u
                counts.setdefault((k, b), []).append((inter, union))

    table = []
    best = None
    for k in ks:
        for b in betas:
            per = counts[(k, b)]
            if any(p is None for p in per):
                continue
            inter = np.stack([p[0] for p in per])
            union = np.stack([p[1] for p in per])
            thresholds, chosen = _select_thresholds(inter, union, grids)
            try:
                score, per_fold = _score(inter, union, chosen)
            except UndefinedMetricError:
                continue
            table.append(dict(k=k, beta=b, thresholds=thresholds, score=score, per_fold=per_fold))
            # strict > keeps the smaller k / lower beta on ties (iteration is ascending)
            if best is None or score > best["score"]:
                best = table[-1]
    if best is None:
        raise UndefinedMetricError("no configuration produced a defined mIoU")
    return TuneResult(best["k"], tuple(best["thresholds"]), best["beta"], best["score"], table,
                      [list(map(int, f)) for f in fold_idx])


def evaluate(eval_set: Sequence[Sample], bank: MemoryBank, cfg: RetrievalConfig) -> IoUReport:
    """Segment every sample against ``bank`` and accumulate a dataset-level report."""
    C = eval_set[0].mask.shape[2]
    t = cfg.threshold_vector(C)
    softs = segment_many([s.embeddings for s in eval_set], bank, cfg)[(cfg.k, cfg.mode, cfg.beta)]
    return dataset_report((apply_thresholds(p, t) for p in softs), (s.mask for s in eval_set))


def evaluate_cv(samples: Sequence[Sample], cfg: RetrievalConfig, folds: Sequence[Sequence[int]],
                patch_size: int) -> float:
    """Mean over folds of the held-out mIoU for one fixed configuration."""
    scores = []
    for f in range(len(folds)):
        train, held = _fold_split(samples, folds, f)
        bank = build_bank(train, cfg, patch_size)
        scores.append(finalize_miou(evaluate(held, bank, cfg)))
    return float(np.mean(scores))


def scalability_curve(pool: Sequence[Sample], sizes: Sequence[int], eval_set: Sequence[Sample],
                      cfg: RetrievalConfig, patch_size: int, seed: Optional[int] = 0) -> list[tuple[int, float]]:
    """mIoU on a fixed eval set for banks built from nested gallery subsets.

    The pool is shuffled once with ``seed`` (kept in order if ``None``) and the
    bank for size N uses its first N images, so smaller galleries are subsets
    of larger ones.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes) or not sizes or sizes[0] < 1:
        raise SpecError(f"sizes must be ascending positive counts, got {sizes}")
    if sizes[-1] > len(pool):
        raise InsufficientDataError(f"size {sizes[-1]} exceeds a pool of {len(pool)}")
    order = np.arange(len(pool)) if seed is None else np.random.default_rng(seed).permutation(len(pool))
    out = []
    for n in sizes:
        bank = build_bank([pool[i] for i in order[:n]], cfg, patch_size)
        out.append((n, finalize_miou(evaluate(eval_set, bank, replace(cfg, k=min(cfg.k, bank.M))))))
    return out
