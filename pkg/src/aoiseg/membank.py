"""Key-value patch memory with exact and inverted-list top-k cosine search.

Keys are stored as unit-norm float32 rows. Values are the raw multi-label
masks of the stored patches, bit-packed one bit per (pixel, class) with the
pixel as the major axis and bits LSB-first.

Similarity of a query ``q`` and key ``k`` is defined as the float64 dot
product of the float32 unit vectors (``(q64 * k64).sum()``). Searches first
screen every key with a float32 GEMM, keep every entry whose screened score
lies within a provable rounding margin of the k-th best, and re-score only
those in float64. The result is therefore the exact top-k under the float64
definition, with ties broken by lower bank index, independent of how the
query batch is chunked or threaded.
"""
from __future__ import annotations

import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from ._binio import Reader, le_bytes
from .errors import (
    ChecksumError,
    DegenerateKeyError,
    DegenerateQueryError,
    DimensionError,
    EmptyBankError,
    FormatError,
    InsufficientEntriesError,
    NonFiniteError,
    NotIndexedError,
)

KMEANS_ITERS = 25
HEADER_BYTES = 29
# slack beyond k kept by argpartition before falling back to a full-row scan
_SCREEN_SLACK = 8
_CHUNK_BYTES = 256 << 20
_BLOCK = 64


def resolve_workers(workers: Optional[int] = None) -> int:
    """Worker count: explicit value, else ``AOISEG_THREADS``, where 0 means all CPUs."""
    if workers is None:
        workers = int(os.environ.get("AOISEG_THREADS", "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def normalize_rows(x: np.ndarray, what: str = "vector") -> tuple[np.ndarray, np.ndarray]:
    """Return (float32 unit rows, float64 norms). Zero rows come back as zeros."""
    x64 = np.asarray(x, dtype=np.float64)
    norms = np.sqrt((x64 * x64).sum(axis=-1))
    safe = np.where(norms > 0, norms, 1.0)
    return (x64 / safe[..., None]).astype(np.float32), norms


@dataclass
class NeighborSet:
    indices: np.ndarray  # (L, k) int64, most similar first
    sims: np.ndarray  # (L, k) float32

    def __len__(self):
        return self.indices.shape[0]

    def __eq__(self, other):
        return (
            isinstance(other, NeighborSet)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.sims, other.sims)
        )

    def top(self, k: int) -> "NeighborSet":
        return NeighborSet(self.indices[:, :k], self.sims[:, :k])


@dataclass
class PartitionIndex:
    centroids: np.ndarray  # (nlist, d) float32, unit rows
    offsets: np.ndarray  # (nlist + 1,) int64 into ``order``
    order: np.ndarray  # (M,) int64 bank indices grouped by list, ascending within a list
    _sorted_keys: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def nlist(self) -> int:
        return self.centroids.shape[0]

    def list_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


@dataclass(eq=False)
class MemoryBank:
    keys: np.ndarray  # (M, d) float32 unit rows
    values: np.ndarray  # (M, ceil(P2*C/8)) uint8
    P2: int
    C: int
    image_ids: list[str]
    provenance: np.ndarray  # (M, 2) uint32: image index into image_ids, patch index
    partition: Optional[PartitionIndex] = None

    @property
    def M(self) -> int:
        return self.keys.shape[0]

    @property
    def d(self) -> int:
        return self.keys.shape[1]

    @property
    def value_bytes(self) -> int:
        return (self.P2 * self.C + 7) // 8

    def entry_provenance(self, j: int) -> tuple[str, int]:
        img, patch = self.provenance[j]
        return self.image_ids[img], int(patch)

    def value_bits(self, idx) -> np.ndarray:
        """Unpack values of ``idx`` (any int array shape) into bool ``(..., P2, C)``."""
        idx = np.asarray(idx)
        bits = np.unpackbits(self.values[idx.ravel()], axis=-1, count=self.P2 * self.C, bitorder="little")
        return bits.reshape(idx.shape + (self.P2, self.C)).astype(bool)

    def bit_identical(self, other: "MemoryBank") -> bool:
        return bank_to_bytes(self) == bank_to_bytes(other)

    def with_partition(self, nlist: Optional[int] = None, seed: int = 0) -> "MemoryBank":
        if self.M == 0:
            raise EmptyBankError("cannot partition an empty bank")
        nlist = nlist or math.ceil(math.sqrt(self.M))
        nlist = max(1, min(nlist, self.M))
        return replace(self, partition=build_partition(self.keys, nlist, seed))


# -- build -------------------------------------------------------------------

def build_arrays(
    embeddings: np.ndarray,
    values: np.ndarray,
    provenance: Sequence[tuple[str, int]],
    d: Optional[int] = None,
) -> MemoryBank:
    """Build from stacked ``(M, d)`` embeddings and ``(M, P2, C)`` bool values."""
    embeddings = np.asarray(embeddings, dtype=np.float32)
    values = np.asarray(values, dtype=bool)
    if embeddings.ndim != 2 or values.ndim != 3 or values.shape[0] != embeddings.shape[0]:
        raise DimensionError(
            f"need (M, d) embeddings and (M, P2, C) values, got {embeddings.shape} and {values.shape}"
        )
    if len(provenance) != embeddings.shape[0]:
        raise DimensionError(f"{len(provenance)} provenance records for {embeddings.shape[0]} entries")
    if d is not None and embeddings.shape[1] != d:
        raise DimensionError(f"embeddings have d={embeddings.shape[1]}, expected {d}")
    if not np.all(np.isfinite(embeddings)):
        bad = int(np.nonzero(~np.isfinite(embeddings).all(axis=1))[0][0])
        raise NonFiniteError(f"non-finite embedding for entry {tuple(provenance[bad])!r}")
    keys, norms = normalize_rows(embeddings)
    if np.any(norms == 0):
        bad = int(np.nonzero(norms == 0)[0][0])
        raise DegenerateKeyError(tuple(provenance[bad]))
    M, P2, C = values.shape
    packed = np.packbits(values.reshape(M, P2 * C), axis=1, bitorder="little")
    ids: dict[str, int] = {}
    prov = np.empty((M, 2), dtype=np.uint32)
    for j, (image_id, patch) in enumerate(provenance):
        prov[j] = ids.setdefault(image_id, len(ids)), patch
    return MemoryBank(keys, packed, P2, C, list(ids), prov)


def build(
    entries: Iterable[tuple[np.ndarray, np.ndarray, tuple[str, int]]],
    d: int = 0,
    P2: int = 0,
    C: int = 0,
) -> MemoryBank:
    """Build a bank from ``(embedding, value (P2, C) bool, (image_id, patch_index))`` triples.

    ``d``/``P2``/``C`` only matter for an empty entry list.
    """
    entries = list(entries)
    if not entries:
        return MemoryBank(
            np.zeros((0, d), np.float32), np.zeros((0, (P2 * C + 7) // 8), np.uint8),
            P2, C, [], np.zeros((0, 2), np.uint32),
        )
    emb_shapes = {np.shape(e[0]) for e in entries}
    val_shapes = {np.shape(e[1]) for e in entries}
    if len(emb_shapes) != 1 or len(val_shapes) != 1:
        raise DimensionError(f"inconsistent entry shapes: {emb_shapes} / {val_shapes}")
    emb = np.stack([e[0] for e in entries])
    vals = np.stack([np.asarray(e[1], bool) for e in entries])
    if vals.ndim == 2:
        vals = vals[:, :, None]
    return build_arrays(emb, vals, [tuple(e[2]) for e in entries])


def build_patch_bank(sets, masks, patch_size: int) -> MemoryBank:
    """Bank with one entry per patch of every (embedding set, full mask) pair."""
    from .grid import PatchGridSpec, patchify_mask

    embs, vals, prov = [], [], []
    for s, m in zip(sets, masks, strict=True):
        spec = PatchGridSpec.for_shape(m.shape[0], m.shape[1], patch_size)
        if spec.patch_count != s.L:
            raise DimensionError(f"{s.image_id}: {s.L} embeddings for a {spec.patch_count}-patch mask")
        embs.append(s.patch_embeddings)
        vals.append(patchify_mask(m, spec))
        prov.extend((s.image_id, i) for i in range(s.L))
    return build_arrays(np.concatenate(embs), np.concatenate(vals), prov)


def build_image_bank(sets, masks) -> MemoryBank:
    """Image-level bank: global embeddings as keys, whole ``H*W x C`` masks as values."""
    masks = [np.asarray(m, bool) for m in masks]
    shapes = {m.shape for m in masks}
    if len(shapes) != 1:
        raise DimensionError(f"gallery masks differ in shape: {shapes}")
    for s in sets:
        if s.global_embedding is None:
            raise DimensionError(f"{s.image_id}: no global embedding")
    h, w, c = masks[0].shape
    return build_arrays(
        np.stack([s.global_embedding for s in sets]),
        np.stack([m.reshape(h * w, c) for m in masks]),
        [(s.image_id, 0) for s in sets],
    )


# -- k-means partition ---------------------------------------------------------

def _centroid_scores(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    return x.astype(np.float64) @ centroids.astype(np.float64).T


def _assign(x: np.ndarray, centroids: np.ndarray, chunk: int = 16384, exact: bool = True):
    score = _centroid_scores if exact else (lambda a, c: a @ c.T)
    labels = np.empty(len(x), np.int64)
    best = np.empty(len(x), np.float64)
    for s in range(0, len(x), chunk):
        sc = score(x[s:s + chunk], centroids)
        labels[s:s + chunk] = sc.argmax(axis=1)
        best[s:s + chunk] = sc[np.arange(len(sc)), labels[s:s + chunk]]
    return labels, best


def spherical_kmeans(x: np.ndarray, nlist: int, seed: int = 0, iters: int = KMEANS_ITERS,
                     max_points_per_list: int = 64):
    """Seeded cosine k-means. Returns (unit float32 centroids, labels of every row of ``x``).

    Training runs on a seeded subsample of at most ``max_points_per_list *
    nlist`` rows; the final labels come from one exact pass over all rows
    with the probing score, so every key lands in its best-scoring list.
    """
    rng = np.random.default_rng(seed)
    n_train = min(len(x), max_points_per_list * nlist)
    train = x if n_train == len(x) else x[np.sort(rng.choice(len(x), n_train, replace=False))]
    cents = train[np.sort(rng.choice(len(train), size=nlist, replace=False))].astype(np.float32)
    labels = None
    for _ in range(iters):
        new_labels, best = _assign(train, cents, exact=False)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        onehot = sp.csr_matrix(
            (np.ones(len(train)), (labels, np.arange(len(train)))), shape=(nlist, len(train))
        )
        sums = np.asarray(onehot @ train.astype(np.float64))
        counts = np.bincount(labels, minlength=nlist)
        empty = np.nonzero(counts == 0)[0]
        if len(empty):
            # reseed empty lists with the worst-fitting points, deterministically
            worst = np.argsort(best, kind="stable")[: len(empty)]
            sums[empty] = train[worst]
        cents, _ = normalize_rows(sums)
    labels, _ = _assign(x, cents)
    return cents, labels


def build_partition(keys: np.ndarray, nlist: int, seed: int = 0) -> PartitionIndex:
    cents, labels = spherical_kmeans(keys, nlist, seed)
    order = np.argsort(labels, kind="stable").astype(np.int64)
    offsets = np.zeros(nlist + 1, np.int64)
    np.cumsum(np.bincount(labels, minlength=nlist), out=offsets[1:])
    return PartitionIndex(cents, offsets, order)


# -- search ------------------------------------------------------------------

def _margin(d: int) -> float:
    # two-sided bound on float32 dot-product error for unit vectors, plus float64 slop
    return 2.0 * (1.01 * d * 2.0 ** -24 + 1e-7) + 1e-12


def _screen(S: np.ndarray, k: int, margin: float):
    """Candidate (row, column, screened score) triples that contain each row's true top-k."""
    n = S.shape[1]
    if n <= k + _SCREEN_SLACK:
        rows, cols = np.nonzero(np.ones(S.shape, bool))
        return rows, cols, S[rows, cols]
    kk = k + _SCREEN_SLACK
    part = np.argpartition(S, n - kk, axis=1)[:, n - kk:]
    vals = np.take_along_axis(S, part, axis=1)
    kth = -np.partition(-vals, k - 1, axis=1)[:, k - 1]
    thr = kth - margin
    keep = vals >= thr[:, None]
    rows, cols = np.nonzero(keep)
    svals = vals[rows, cols]
    cols = part[rows, cols]
    # rows whose whole selection sits inside the margin may have more candidates outside it
    spill = np.nonzero(vals.min(axis=1) >= thr)[0]
    if len(spill):
        sel = ~np.isin(rows, spill)
        rows, cols, svals = rows[sel], cols[sel], svals[sel]
        r2, c2 = np.nonzero(S[spill] >= thr[spill, None])
        rows = np.concatenate([rows, spill[r2]])
        cols = np.concatenate([cols, c2])
        svals = np.concatenate([svals, S[spill[r2], c2]])
    return rows, cols, svals


def _screen_blocks(S: np.ndarray, k: int, margin: float, block: int = _BLOCK):
    """Same contract as :func:`_screen` for wide rows, driven by per-group maxima.

    Column ``c < nfull`` belongs to group ``c % ng``; the k-th largest group
    maximum lower-bounds the k-th largest score, so only groups whose maximum
    clears it (minus the margin) can hold candidates.
    """
    B, n = S.shape
    ng = n // block
    nfull = ng * block
    gmax = S[:, :nfull].reshape(B, block, ng).max(axis=1)
    if nfull < n:
        gmax = np.concatenate([gmax, S[:, nfull:].max(axis=1, keepdims=True)], axis=1)
    t0 = -np.partition(-gmax, k - 1, axis=1)[:, k - 1] - margin
    rows, groups = np.nonzero(gmax >= t0[:, None])
    cols = np.where(
        (groups == ng)[:, None],
        nfull + np.arange(block)[None, :],
        groups[:, None] + ng * np.arange(block)[None, :],
    )
    valid = cols < n
    cols = np.where(valid, cols, 0)
    vals = np.where(valid, S[rows[:, None], cols], -np.inf)
    rows = np.broadcast_to(rows[:, None], cols.shape)
    keep = vals >= t0[rows]
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    order = np.lexsort((-vals, rows))
    rows, cols, vals = rows[order], cols[order], vals[order]
    starts = np.searchsorted(rows, np.arange(B))
    kth = vals[starts + k - 1]
    keep = vals >= (kth - margin)[rows]
    return rows[keep], cols[keep], vals[keep]


def _rescreen(rows, idx, svals, k: int, nq: int, margin: float):
    """Drop merged candidates that fall below their row's k-th best screened score."""
    order = np.lexsort((-svals, rows))
    rows, idx, svals = rows[order], idx[order], svals[order]
    starts = np.searchsorted(rows, np.arange(nq))
    counts = np.diff(np.append(starts, len(rows)))
    if np.any(counts < k):
        raise InsufficientEntriesError(f"fewer than k={k} candidates for some queries")
    kth = svals[starts + k - 1]
    keep = svals >= (kth - margin)[rows]
    return rows[keep], idx[keep]


def _rescore(q: np.ndarray, keys: np.ndarray, rows, idx, chunk: int = 1 << 17) -> np.ndarray:
    sims = np.empty(len(rows), np.float64)
    for s in range(0, len(rows), chunk):
        r, i = rows[s:s + chunk], idx[s:s + chunk]
        sims[s:s + chunk] = (keys[i].astype(np.float64) * q[r].astype(np.float64)).sum(axis=1)
    return sims


def _rescore_select(q: np.ndarray, keys: np.ndarray, rows, idx, k: int, nq: int) -> NeighborSet:
    sims = _rescore(q, keys, rows, idx)
    order = np.lexsort((idx, -sims, rows))
    rows, idx, sims = rows[order], idx[order], sims[order]
    starts = np.searchsorted(rows, np.arange(nq))
    counts = np.diff(np.append(starts, len(rows)))
    if np.any(counts < k):
        raise InsufficientEntriesError(f"fewer than k={k} candidates for some queries")
    take = (starts[:, None] + np.arange(k)).ravel()
    return NeighborSet(idx[take].reshape(nq, k).astype(np.int64), sims[take].reshape(nq, k).astype(np.float32))


def _prepare_queries(bank: MemoryBank, queries: np.ndarray, k: int) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim == 1:
        queries = queries[None]
    if bank.M == 0:
        raise EmptyBankError("memory bank is empty")
    if queries.ndim != 2 or queries.shape[1] != bank.d:
        raise DimensionError(f"queries of shape {queries.shape} against a d={bank.d} bank")
    if k < 1 or k > bank.M:
        raise InsufficientEntriesError(f"k={k} with only {bank.M} entries")
    if not np.all(np.isfinite(queries)):
        raise NonFiniteError("queries contain NaN/Inf")
    q, norms = normalize_rows(queries)
    if np.any(norms == 0):
        raise DegenerateQueryError(f"zero-norm query at row {int(np.nonzero(norms == 0)[0][0])}")
    return q


def _exact_chunk(q: np.ndarray, keys: np.ndarray, k: int) -> NeighborSet:
    S = q @ keys.T
    screen = _screen_blocks if S.shape[1] >= 16 * _BLOCK else _screen
    rows, cols, _ = screen(S, k, _margin(keys.shape[1]))
    del S
    return _rescore_select(q, keys, rows, cols, k, len(q))


def _concat(parts: Sequence[NeighborSet]) -> NeighborSet:
    return NeighborSet(np.concatenate([p.indices for p in parts]), np.concatenate([p.sims for p in parts]))


def search_exact(bank: MemoryBank, queries: np.ndarray, k: int, workers: Optional[int] = None) -> NeighborSet:
    """Exact top-k by cosine similarity; ties go to the lower bank index.

    ``workers`` threads each take contiguous query chunks (BLAS pinned to one
    thread per worker); output order and values do not depend on it.
    """
    q = _prepare_queries(bank, queries, k)
    workers = resolve_workers(workers)
    rows = max(1, min(len(q), _CHUNK_BYTES // max(1, 4 * bank.M * workers)))
    if workers > 1:
        rows = min(rows, math.ceil(len(q) / workers))
    chunks = [q[s:s + rows] for s in range(0, len(q), rows)]
    with threadpool_limits(limits=1, user_api="blas"):
        if workers == 1 or len(chunks) == 1:
            parts = [_exact_chunk(c, bank.keys, k) for c in chunks]
        else:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(lambda c: _exact_chunk(c, bank.keys, k), chunks))
    return _concat(parts)


def probe_order(bank: MemoryBank, q_unit: np.ndarray) -> np.ndarray:
    """Partitions ranked by centroid similarity per query, ties to the lower list id."""
    sc = _centroid_scores(q_unit, bank.partition.centroids)
    return np.argsort(-sc, axis=1, kind="stable")


def search_partitioned(bank: MemoryBank, queries: np.ndarray, k: int, nprobe: int) -> NeighborSet:
    """Top-k restricted to the ``nprobe`` inverted lists nearest each query.

    Queries whose probed lists hold fewer than ``k`` entries keep probing in
    rank order until they do. With ``nprobe == nlist`` the output equals
    :func:`search_exact` exactly.
    """
    part = bank.partition
    if part is None:
        raise NotIndexedError("bank has no partition index; build one with with_partition()")
    q = _prepare_queries(bank, queries, k)
    if not 1 <= nprobe <= part.nlist:
        raise ValueError(f"nprobe must be in [1, {part.nlist}], got {nprobe}")
    if part._sorted_keys is None:
        part._sorted_keys = np.ascontiguousarray(bank.keys[part.order])
    ranked = probe_order(bank, q)
    sizes = part.list_sizes()
    reach = np.cumsum(sizes[ranked], axis=1)
    needed = np.maximum(nprobe, (reach < k).sum(axis=1) + 1)
    rank_of = np.empty_like(ranked)
    np.put_along_axis(rank_of, ranked, np.arange(part.nlist)[None, :].repeat(len(q), 0), axis=1)
    probed = rank_of < needed[:, None]
    margin = _margin(bank.d)
    all_rows, all_idx, all_vals = [], [], []
    with threadpool_limits(limits=1, user_api="blas"):
        for p in range(part.nlist):
            lo, hi = part.offsets[p], part.offsets[p + 1]
            if hi == lo:
                continue
            qrows = np.nonzero(probed[:, p])[0]
            if not len(qrows):
                continue
            S = q[qrows] @ part._sorted_keys[lo:hi].T
            r, c, v = _screen(S, min(k, hi - lo), margin)
            all_rows.append(qrows[r])
            all_idx.append(part.order[lo + c])
            all_vals.append(v)
    rows, idx = _rescreen(
        np.concatenate(all_rows), np.concatenate(all_idx), np.concatenate(all_vals), k, len(q), margin
    )
    return _rescore_select(q, bank.keys, rows, idx, k, len(q))


def search_naive(bank: MemoryBank, queries: np.ndarray, k: int) -> NeighborSet:
    """Full float64 scan and sort; the reference the fast paths are tested against."""
    q = _prepare_queries(bank, queries, k)
    keys64 = bank.keys.astype(np.float64)
    idx = np.empty((len(q), k), np.int64)
    sims = np.empty((len(q), k), np.float32)
    for i, qi in enumerate(q.astype(np.float64)):
        s = (keys64 * qi).sum(axis=1)
        order = np.lexsort((np.arange(bank.M), -s))[:k]
        idx[i], sims[i] = order, s[order]
    return NeighborSet(idx, sims)


def recall_at_k(approx: NeighborSet, exact: NeighborSet) -> float:
    k = exact.indices.shape[1]
    hits = sum(len(np.intersect1d(a, e)) for a, e in zip(approx.indices, exact.indices))
    return hits / (k * len(exact))


# -- AOIB persistence ----------------------------------------------------------

def _payload(bank: MemoryBank) -> bytes:
    out = [le_bytes(bank.keys, np.float32), np.ascontiguousarray(bank.values, np.uint8).tobytes()]
    for ident in bank.image_ids:
        b = ident.encode("utf-8")
        out.append(np.array([len(b)], "<u2").tobytes() + b)
    out.append(le_bytes(bank.provenance, np.uint32))
    if bank.partition is not None:
        p = bank.partition
        out.append(np.array([p.nlist], "<u4").tobytes())
        out.append(le_bytes(p.centroids, np.float32))
        out.append(le_bytes(p.offsets, np.uint32))
        out.append(le_bytes(p.order, np.uint32))
    return b"".join(out)


def bank_to_bytes(bank: MemoryBank) -> bytes:
    payload = _payload(bank)
    header = (
        b"AOIB"
        + np.array([1], "<u2").tobytes()
        + np.array([bank.M, bank.d, bank.P2], "<u4").tobytes()
        + np.array([bank.C], "<u2").tobytes()
        + bytes([bank.partition is not None])
        + np.array([len(bank.image_ids), zlib.crc32(payload)], "<u4").tobytes()
    )
    assert len(header) == HEADER_BYTES
    return header + payload


def bank_from_bytes(buf: bytes) -> MemoryBank:
    r = Reader(buf, "AOIB")
    r.expect_magic(b"AOIB")
    M, d, P2 = r.unpack("III")
    C = r.unpack("H")
    has_part = r.unpack("B")
    n_ids, crc = r.unpack("II")
    if has_part not in (0, 1):
        raise FormatError(f"AOIB: bad partition flag {has_part}")
    if zlib.crc32(buf[HEADER_BYTES:]) != crc:
        raise ChecksumError("AOIB: payload checksum mismatch")
    keys = r.array(np.float32, M * d).reshape(M, d)
    nb = (P2 * C + 7) // 8
    values = r.array(np.uint8, M * nb).reshape(M, nb)
    ids = []
    for _ in range(n_ids):
        ids.append(bytes(r.take(r.unpack("H"))).decode("utf-8"))
    prov = r.array(np.uint32, 2 * M).reshape(M, 2)
    partition = None
    if has_part:
        nlist = r.unpack("I")
        cents = r.array(np.float32, nlist * d).reshape(nlist, d)
        offsets = r.array(np.uint32, nlist + 1).astype(np.int64)
        order = r.array(np.uint32, M).astype(np.int64)
        partition = PartitionIndex(cents, offsets, order)
    if not r.done():
        raise FormatError(f"AOIB: {len(buf) - r.pos} trailing bytes")
    return MemoryBank(keys, values, P2, C, ids, prov, partition)


def save(bank: MemoryBank, path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def load(path) -> MemoryBank:
    return bank_from_bytes(Path(path).read_bytes())


def estimate_memory(bank: MemoryBank) -> int:
    """Exact byte size of the bank under the AOIB layout (header included)."""
    size = HEADER_BYTES + bank.M * bank.d * 4 + bank.M * bank.value_bytes
    size += sum(2 + len(i.encode("utf-8")) for i in bank.image_ids) + bank.M * 8
    if bank.partition is not None:
        p = bank.partition
        size += 4 + p.nlist * bank.d * 4 + (p.nlist + 1) * 4 + bank.M * 4
    return size
