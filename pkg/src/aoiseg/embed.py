"""Patch/global embeddings: a seeded toy encoder and the AOIE embedding file.

The toy encoder stands in for a trained ViT. Each ``P x P`` two-channel patch
becomes the feature vector ``[pixels..., mean_c0, mean_c1, std_c0, std_c1]``
which is multiplied by a fixed random projection with unit-norm rows.
Embeddings are left unnormalized; the memory bank normalizes keys.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._binio import Reader, le_bytes
from .errors import DimensionError, FormatError, InconsistentDimensionError, NonFiniteError
from .grid import DEFAULT_PATCH, PatchGridSpec, as_raster, patchify

DEFAULT_DIM = 384


@dataclass
class PatchEmbeddingSet:
    image_id: str
    patch_embeddings: np.ndarray  # (L, d) float32
    global_embedding: Optional[np.ndarray] = None  # (d,) float32

    def __post_init__(self):
        self.patch_embeddings = np.ascontiguousarray(self.patch_embeddings, dtype=np.float32)
        if self.patch_embeddings.ndim != 2:
            raise DimensionError(f"patch embeddings must be (L, d), got {self.patch_embeddings.shape}")
        if self.global_embedding is not None:
            self.global_embedding = np.ascontiguousarray(self.global_embedding, dtype=np.float32)
            if self.global_embedding.shape != (self.d,):
                raise InconsistentDimensionError(
                    f"{self.image_id}: global embedding has shape {self.global_embedding.shape}, "
                    f"patches have d={self.d}"
                )

    @property
    def L(self) -> int:
        return self.patch_embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.patch_embeddings.shape[1]


@dataclass(frozen=True)
class ToyEncoderConfig:
    seed: int = 0
    d: int = DEFAULT_DIM
    P: int = DEFAULT_PATCH
    channels: int = field(default=2, repr=False)

    @property
    def feature_dim(self) -> int:
        return self.channels * self.P * self.P + 2 * self.channels

    @cached_property
    def projection(self) -> np.ndarray:
        """``(d, feature_dim)`` float32 matrix, uniform(-1, 1) with unit-norm rows."""
        if self.d < 1 or self.P < 1:
            raise DimensionError(f"toy encoder needs d >= 1 and P >= 1, got d={self.d}, P={self.P}")
        rng = np.random.default_rng(self.seed)
        w = rng.uniform(-1.0, 1.0, size=(self.d, self.feature_dim))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return w.astype(np.float32)


def patch_features(img: np.ndarray, P: int) -> np.ndarray:
    img = as_raster(img)
    spec = PatchGridSpec.for_shape(img.shape[0], img.shape[1], P)
    patches = patchify(img, spec).astype(np.float64)
    L, ch = spec.patch_count, img.shape[2]
    flat = patches.transpose(0, 3, 1, 2).reshape(L, ch * P * P)
    per_ch = patches.reshape(L, P * P, ch)
    return np.concatenate([flat, per_ch.mean(axis=1), per_ch.std(axis=1)], axis=1)


def toy_encode(img: np.ndarray, cfg: ToyEncoderConfig, image_id: str = "") -> PatchEmbeddingSet:
    img = as_raster(img)
    if img.shape[2] != cfg.channels:
        raise DimensionError(f"toy encoder expects {cfg.channels} channels, got {img.shape[2]}")
    feats = patch_features(img, cfg.P)
    emb = (feats @ cfg.projection.astype(np.float64).T).astype(np.float32)
    glob = emb.astype(np.float64).mean(axis=0).astype(np.float32)
    return PatchEmbeddingSet(image_id, emb, glob)


def channel_adapt(img: np.ndarray) -> np.ndarray:
    """Append the per-pixel mean of the two channels as a third (RGB-style) channel."""
    img = as_raster(img)
    if img.shape[2] != 2:
        raise DimensionError(f"channel_adapt expects 2 channels, got {img.shape[2]}")
    third = (img[:, :, 0] + img[:, :, 1]) / np.float32(2)
    return np.concatenate([img, third[:, :, None]], axis=2)


# -- AOIE file ---------------------------------------------------------------

def embeddings_to_bytes(sets: Sequence[PatchEmbeddingSet], P: int) -> bytes:
    dims = {s.d for s in sets}
    if len(dims) > 1:
        raise InconsistentDimensionError(f"embedding sets disagree on d: {sorted(dims)}")
    d = dims.pop() if dims else 0
    out = [b"AOIE", np.array([1], "<u2").tobytes(), np.array([len(sets), d, P], "<u4").tobytes()]
    for s in sets:
        ident = s.image_id.encode("utf-8")
        out.append(np.array([len(ident)], "<u2").tobytes() + ident)
        out.append(np.array([s.L], "<u4").tobytes())
        out.append(bytes([s.global_embedding is not None]))
        out.append(le_bytes(s.patch_embeddings, np.float32))
        if s.global_embedding is not None:
            out.append(le_bytes(s.global_embedding, np.float32))
    return b"".join(out)


def embeddings_from_bytes(buf: bytes) -> tuple[list[PatchEmbeddingSet], int]:
    r = Reader(buf, "AOIE")
    r.expect_magic(b"AOIE")
    count, d, P = r.unpack("III")
    sets = []
    for _ in range(count):
        id_len = r.unpack("H")
        ident = bytes(r.take(id_len)).decode("utf-8")
        L = r.unpack("I")
        has_global = r.unpack("B")
        if has_global not in (0, 1):
            raise FormatError(f"AOIE: bad has_global flag {has_global} for {ident!r}")
        emb = r.array(np.float32, L * d).reshape(L, d)
        glob = r.array(np.float32, d) if has_global else None
        if not np.all(np.isfinite(emb)) or (glob is not None and not np.all(np.isfinite(glob))):
            raise NonFiniteError(f"AOIE: non-finite values in embeddings of {ident!r}")
        sets.append(PatchEmbeddingSet(ident, emb, glob))
    if not r.done():
        raise FormatError(f"AOIE: {len(buf) - r.pos} trailing bytes after {count} records")
    return sets, P


def save_embeddings(sets: Sequence[PatchEmbeddingSet], path, P: int = DEFAULT_PATCH) -> None:
    Path(path).write_bytes(embeddings_to_bytes(sets, P))


def load_embeddings(path, expect_d: Optional[int] = None) -> list[PatchEmbeddingSet]:
    sets, _ = embeddings_from_bytes(Path(path).read_bytes())
    if expect_d is not None and sets and sets[0].d != expect_d:
        raise InconsistentDimensionError(f"{path}: embeddings have d={sets[0].d}, expected {expect_d}")
    return sets


def load_embeddings_with_patch(path) -> tuple[list[PatchEmbeddingSet], int]:
    return embeddings_from_bytes(Path(path).read_bytes())
