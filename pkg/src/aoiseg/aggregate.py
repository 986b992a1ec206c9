"""Neighbor label mixing and the patch-/image-level segmentation pipelines."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .errors import (
    DimensionError,
    EmptyNeighborhoodError,
    InvalidTemperatureError,
    SpecError,
)
from .grid import PatchGridSpec, reassemble
from .membank import MemoryBank, NeighborSet, search_exact, search_partitioned

DEFAULT_BETA = 0.07
BETA_GRID = (0.02, 0.07, 0.2, 1.0)
# patches combined per step; bounds the (patches, k, P2, C) float64 expansion
_COMBINE_CHUNK = 256


@dataclass(frozen=True)
class RetrievalConfig:
    granularity: Literal["patch", "image"] = "patch"
    k: int = 5
    mode: Literal["similarity", "attention"] = "similarity"
    beta: float = DEFAULT_BETA
    thresholds: Optional[tuple[float, ...]] = None  # None: 0.5 for every class
    search: Literal["exact", "partitioned"] = "exact"
    nprobe: int = 8
    workers: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        if self.granularity not in ("patch", "image"):
            raise SpecError(f"unknown granularity {self.granularity!r}")
        if self.mode not in ("similarity", "attention"):
            raise SpecError(f"unknown aggregation mode {self.mode!r}")
        if self.search not in ("exact", "partitioned"):
            raise SpecError(f"unknown search {self.search!r}")
        if self.k < 1:
            raise SpecError(f"k must be >= 1, got {self.k}")
        if self.mode == "attention" and not self.beta > 0:
            raise InvalidTemperatureError(f"beta must be > 0, got {self.beta}")
        if self.granularity == "image" and self.mode != "similarity":
            raise SpecError("image-level retrieval only supports similarity combination")
        if self.thresholds is not None:
            object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
            if not all(0.0 < t < 1.0 for t in self.thresholds):
                raise SpecError(f"thresholds must lie in (0, 1), got {self.thresholds}")

    def threshold_vector(self, C: int) -> np.ndarray:
        if self.thresholds is None:
            return np.full(C, 0.5)
        if len(self.thresholds) != C:
            raise DimensionError(f"{len(self.thresholds)} thresholds for {C} classes")
        return np.asarray(self.thresholds, dtype=np.float64)


def similarity_weights(sims: np.ndarray) -> np.ndarray:
    """Weights proportional to the similarities, negatives clamped to zero.

    If no neighbor has a positive similarity the weights fall back to uniform.
    """
    sims = np.asarray(sims, dtype=np.float64)
    if sims.shape[-1] == 0:
        raise EmptyNeighborhoodError("cannot combine an empty neighborhood")
    pos = np.maximum(sims, 0.0)
    total = pos.sum(axis=-1, keepdims=True)
    uniform = np.full_like(pos, 1.0 / sims.shape[-1])
    return np.where(total > 0, pos / np.where(total > 0, total, 1.0), uniform)


def attention_weights(sims: np.ndarray, beta: float) -> np.ndarray:
    """Softmax of ``sims / beta`` over the neighbor axis (max-subtracted)."""
    if not beta > 0:
        raise InvalidTemperatureError(f"beta must be > 0, got {beta}")
    sims = np.asarray(sims, dtype=np.float64)
    if sims.shape[-1] == 0:
        raise EmptyNeighborhoodError("cannot combine an empty neighborhood")
    z = sims / beta
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _mix(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    if values.shape[: weights.ndim] != weights.shape:
        raise DimensionError(f"weights {weights.shape} do not match values {values.shape}")
    w = weights.reshape(weights.shape + (1,) * (values.ndim - weights.ndim))
    out = (w * values.astype(np.float64)).sum(axis=weights.ndim - 1)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def combine_similarity(sims: np.ndarray, values: np.ndarray) -> np.ndarray:
    """``sum_j w_j V_j`` with similarity weights; ``values`` is ``(..., k, P2, C)``."""
    return _mix(similarity_weights(sims), values)


def combine_attention(sims: np.ndarray, values: np.ndarray, beta: float) -> np.ndarray:
    return _mix(attention_weights(sims, beta), values)


def weights_for(sims: np.ndarray, mode: str, beta: float = DEFAULT_BETA) -> np.ndarray:
    if mode == "similarity":
        return similarity_weights(sims)
    if mode == "attention":
        return attention_weights(sims, beta)
    raise SpecError(f"unknown aggregation mode {mode!r}")


def combine_neighbors(neighbors: NeighborSet, bank: MemoryBank, mode: str, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Combine bank values for every query row into ``(L, P2, C)`` soft predictions."""
    L = len(neighbors)
    out = np.empty((L, bank.P2, bank.C), np.float32)
    w_all = weights_for(neighbors.sims, mode, beta)
    for s in range(0, L, _COMBINE_CHUNK):
        idx = neighbors.indices[s:s + _COMBINE_CHUNK]
        out[s:s + _COMBINE_CHUNK] = _mix(w_all[s:s + _COMBINE_CHUNK], bank.value_bits(idx))
    return out


def retrieve(bank: MemoryBank, queries: np.ndarray, cfg: RetrievalConfig, k: Optional[int] = None) -> NeighborSet:
    k = cfg.k if k is None else k
    if cfg.search == "partitioned":
        return search_partitioned(bank, queries, k, cfg.nprobe)
    return search_exact(bank, queries, k, workers=cfg.workers)


def _grid_for(bank: MemoryBank, L: int, grid: Optional[PatchGridSpec]) -> PatchGridSpec:
    if grid is None:
        p = int(round(bank.P2 ** 0.5))
        if p * p != bank.P2:
            raise DimensionError(f"bank patch size P2={bank.P2} is not a square")
        grid = PatchGridSpec.square(L, p)
    if grid.patch_count != L or grid.patch_size ** 2 != bank.P2:
        raise DimensionError(
            f"grid {grid} does not match {L} embeddings and bank patch size P2={bank.P2}"
        )
    return grid


def segment_patch_level(embs, bank: MemoryBank, cfg: RetrievalConfig,
                        grid: Optional[PatchGridSpec] = None) -> np.ndarray:
    """Soft ``(H, W, C)`` mask for one image from its patch embeddings."""
    if embs.d != bank.d:
        raise DimensionError(f"embeddings have d={embs.d}, bank has d={bank.d}")
    grid = _grid_for(bank, embs.L, grid)
    neighbors = retrieve(bank, embs.patch_embeddings, cfg)
    return reassemble(combine_neighbors(neighbors, bank, cfg.mode, cfg.beta), grid)


def segment_image_level(global_emb: np.ndarray, ibank: MemoryBank, k: int,
                        shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Similarity-weighted mean of the ``k`` nearest gallery masks, as ``(H, W, C)``."""
    global_emb = np.asarray(global_emb, dtype=np.float32)
    if global_emb.shape != (ibank.d,):
        raise DimensionError(f"global embedding of shape {global_emb.shape} for a d={ibank.d} bank")
    if shape is None:
        side = int(round(ibank.P2 ** 0.5))
        shape = (side, side)
    if shape[0] * shape[1] != ibank.P2:
        raise DimensionError(f"image shape {shape} does not match bank mask size {ibank.P2}")
    neighbors = search_exact(ibank, global_emb[None], k)
    soft = combine_neighbors(neighbors, ibank, "similarity")[0]
    return soft.reshape(shape[0], shape[1], ibank.C)


def segment(embs, bank: MemoryBank, cfg: RetrievalConfig, grid: Optional[PatchGridSpec] = None) -> np.ndarray:
    if cfg.granularity == "image":
        if embs.global_embedding is None:
            raise DimensionError(f"{embs.image_id}: image-level retrieval needs a global embedding")
        shape = (grid.height, grid.width) if grid is not None else None
        return segment_image_level(embs.global_embedding, bank, cfg.k, shape)
    return segment_patch_level(embs, bank, cfg, grid)


def segment_many(sets: Sequence, bank: MemoryBank, cfg: RetrievalConfig, k_values: Sequence[int] = (),
                 modes: Sequence[tuple[str, float]] = ()):
    """Soft masks for many images with one batched search.

    Returns ``{(k, mode, beta): [soft masks]}``. Each search is done once at
    the largest requested k; smaller k reuse the leading neighbors, which is
    exact because result lists are prefix-consistent.
    """
    k_values = tuple(k_values) or (cfg.k,)
    modes = tuple(modes) or ((cfg.mode, cfg.beta),)
    kmax = max(k_values)
    if cfg.granularity == "image":
        queries = np.stack([s.global_embedding for s in sets])
        counts = [1] * len(sets)
    else:
        queries = np.concatenate([s.patch_embeddings for s in sets])
        counts = [s.L for s in sets]
    if queries.shape[1] != bank.d:
        raise DimensionError(f"embeddings have d={queries.shape[1]}, bank has d={bank.d}")
    neighbors = retrieve(bank, queries, cfg, k=kmax)
    bounds = np.cumsum([0] + counts)
    out = {}
    for k in k_values:
        top = neighbors.top(k)
        for mode, beta in modes:
            soft = combine_neighbors(top, bank, mode, beta)
            masks = []
            for s, lo, hi in zip(sets, bounds[:-1], bounds[1:]):
                if cfg.granularity == "image":
                    side = int(round(bank.P2 ** 0.5))
                    masks.append(soft[lo].reshape(side, side, bank.C))
                else:
                    masks.append(reassemble(soft[lo:hi], _grid_for(bank, s.L, None)))
            out[(k, mode, beta)] = masks
    return out
