"""Conversions between full-resolution rasters/masks and row-major patch sequences.

Rasters are ``(H, W, channels)`` float32 arrays and multi-label masks are
``(H, W, C)`` bool arrays. A patch value is the ``(P*P, C)`` block of a mask
with pixels in row-major order and classes as the minor axis; all patch
sequences enumerate the grid row-major, so patch ``i`` sits at grid cell
``(i // cols, i % cols)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._binio import Reader, le_bytes
from .errors import DimensionError, InvalidStatisticsError, NonFiniteError

DEFAULT_PATCH = 16
CLASS_NAMES = ("wire", "ball", "wedge", "epoxy")


@dataclass(frozen=True)
class PatchGridSpec:
    patch_size: int
    rows: int
    cols: int

    @property
    def patch_count(self) -> int:
        return self.rows * self.cols

    @property
    def height(self) -> int:
        return self.rows * self.patch_size

    @property
    def width(self) -> int:
        return self.cols * self.patch_size

    @classmethod
    def for_shape(cls, height: int, width: int, patch_size: int = DEFAULT_PATCH) -> "PatchGridSpec":
        if patch_size < 1 or height % patch_size or width % patch_size:
            raise DimensionError(
                f"{height}x{width} is not divisible into {patch_size}x{patch_size} patches"
            )
        return cls(patch_size, height // patch_size, width // patch_size)

    @classmethod
    def square(cls, patch_count: int, patch_size: int) -> "PatchGridSpec":
        side = math.isqrt(patch_count)
        if side * side != patch_count:
            raise DimensionError(f"{patch_count} patches do not form a square grid")
        return cls(patch_size, side, side)


def as_raster(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError(f"raster must be (H, W, channels), got shape {img.shape}")
    return img


def as_mask(mask) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim == 2:
        mask = mask[:, :, None]
    if mask.ndim != 3:
        raise DimensionError(f"mask must be (H, W, C), got shape {mask.shape}")
    return mask.astype(bool, copy=False)


def center_crop(img: np.ndarray, side: int) -> np.ndarray:
    """Return the ``side x side`` window centred on ``img``.

    Works on rasters and masks alike; odd remainders put the extra row/column
    on the bottom/right.
    """
    h, w = img.shape[:2]
    if side < 1 or side > min(h, w):
        raise DimensionError(f"crop side {side} exceeds image {h}x{w}")
    top, left = (h - side) // 2, (w - side) // 2
    return img[top:top + side, left:left + side].copy()


def apply_crop(img: np.ndarray, side: int | None) -> np.ndarray:
    """:func:`center_crop` unless ``side`` is None or already the image size."""
    if side is None or img.shape[:2] == (side, side):
        return img
    return center_crop(img, side)


def zscore(img: np.ndarray, mean, std) -> np.ndarray:
    img = as_raster(img)
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float32), (img.shape[2],))
    std = np.broadcast_to(np.asarray(std, dtype=np.float32), (img.shape[2],))
    if not np.all(std > 0):
        raise InvalidStatisticsError(f"standard deviations must be positive, got {std}")
    return ((img - mean) / std).astype(np.float32)


def _check_grid(shape, spec: PatchGridSpec):
    if shape[0] != spec.height or shape[1] != spec.width:
        raise DimensionError(
            f"array {shape[0]}x{shape[1]} does not match grid "
            f"{spec.rows}x{spec.cols} of {spec.patch_size}px patches"
        )


def patchify(img: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    """Split a raster into ``(L, P, P, channels)`` patches, row-major over the grid."""
    img = as_raster(img)
    p = spec.patch_size
    return _blocks(img, spec).reshape(spec.patch_count, p, p, img.shape[2])


def patchify_mask(mask: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    """Split a mask into ``(L, P*P, C)`` patch values."""
    mask = as_mask(mask)
    p, c = spec.patch_size, mask.shape[2]
    return _blocks(mask, spec).reshape(spec.patch_count, p * p, c)


def _blocks(arr: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    _check_grid(arr.shape, spec)
    p = spec.patch_size
    b = arr.reshape(spec.rows, p, spec.cols, p, arr.shape[2]).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(b)


def reassemble(patch_preds: np.ndarray, spec: PatchGridSpec) -> np.ndarray:
    """Inverse of :func:`patchify_mask` on soft ``(L, P*P, C)`` values."""
    patch_preds = np.asarray(patch_preds)
    p = spec.patch_size
    if patch_preds.ndim != 3 or patch_preds.shape[:2] != (spec.patch_count, p * p):
        raise DimensionError(
            f"expected ({spec.patch_count}, {p * p}, C) patch predictions, got {patch_preds.shape}"
        )
    c = patch_preds.shape[2]
    out = patch_preds.reshape(spec.rows, spec.cols, p, p, c).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(out.reshape(spec.height, spec.width, c))


# -- AOIR / AOIM files -------------------------------------------------------

def raster_to_bytes(img: np.ndarray) -> bytes:
    img = as_raster(img)
    h, w, ch = img.shape
    return b"AOIR" + np.array([1], "<u2").tobytes() + np.array([h, w], "<u4").tobytes() \
        + np.array([ch], "<u2").tobytes() + le_bytes(img, np.float32)


def raster_from_bytes(buf: bytes) -> np.ndarray:
    r = Reader(buf, "AOIR")
    r.expect_magic(b"AOIR")
    h, w, ch = r.unpack("IIH")
    data = r.array(np.float32, h * w * ch)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("AOIR raster contains NaN/Inf values")
    return data.reshape(h, w, ch)


def mask_to_bytes(mask: np.ndarray) -> bytes:
    mask = as_mask(mask)
    h, w, c = mask.shape
    planes = np.packbits(mask.transpose(2, 0, 1).reshape(c, h * w), axis=1, bitorder="little")
    return b"AOIM" + np.array([1], "<u2").tobytes() + np.array([h, w], "<u4").tobytes() \
        + np.array([c], "<u2").tobytes() + planes.tobytes()


def mask_from_bytes(buf: bytes) -> np.ndarray:
    r = Reader(buf, "AOIM")
    r.expect_magic(b"AOIM")
    h, w, c = r.unpack("IIH")
    nbytes = (h * w + 7) // 8
    planes = r.array(np.uint8, c * nbytes).reshape(c, nbytes)
    bits = np.unpackbits(planes, axis=1, count=h * w, bitorder="little").astype(bool)
    return np.ascontiguousarray(bits.reshape(c, h, w).transpose(1, 2, 0))


def save_raster(img: np.ndarray, path) -> None:
    Path(path).write_bytes(raster_to_bytes(img))


def load_raster(path) -> np.ndarray:
    return raster_from_bytes(Path(path).read_bytes())


def save_mask(mask: np.ndarray, path) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def load_mask(path) -> np.ndarray:
    return mask_from_bytes(Path(path).read_bytes())
