import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aoiseg import grid
from aoiseg.errors import DimensionError, InvalidStatisticsError, NonFiniteError, FormatError, TruncatedFileError
from aoiseg.grid import PatchGridSpec


def test_center_crop_identity():
    img = np.random.default_rng(0).random((512, 512, 2)).astype(np.float32)
    out = grid.center_crop(img, 512)
    assert out.shape == (512, 512, 2)
    assert np.array_equal(out, img)


def test_center_crop_offsets_by_hand():
    r, c = np.mgrid[0:6, 0:6]
    img = (10 * r + c).astype(np.float32)[:, :, None]
    out = grid.center_crop(img, 4)[:, :, 0]
    assert out[0, 0] == 11 and out[-1, -1] == 44
    assert np.array_equal(out, img[1:5, 1:5, 0])


def test_center_crop_odd_remainder_uses_floor():
    img = np.arange(7 * 5, dtype=np.float32).reshape(7, 5, 1)
    out = grid.center_crop(img, 4)
    # offsets floor(3/2)=1, floor(1/2)=0
    assert np.array_equal(out, img[1:5, 0:4])


def test_center_crop_mask_uses_same_offsets():
    rng = np.random.default_rng(1)
    img = rng.random((9, 11, 2)).astype(np.float32)
    mask = rng.random((9, 11, 3)) < 0.5
    assert np.array_equal(grid.center_crop(mask, 6), mask[1:7, 2:8])
    assert np.array_equal(grid.center_crop(img, 6), img[1:7, 2:8])


def test_center_crop_too_large():
    with pytest.raises(DimensionError):
        grid.center_crop(np.zeros((4, 8, 2), np.float32), 5)


@given(hnp.arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(2)),
                  elements=st.floats(-10, 10, width=32)), st.integers(1, 12))
def test_center_crop_idempotent(img, side):
    side = min(side, *img.shape[:2])
    once = grid.center_crop(img, side)
    assert np.array_equal(grid.center_crop(once, side), once)


def test_zscore_identity_and_constant():
    img = np.random.default_rng(2).random((4, 4, 2)).astype(np.float32)
    assert np.array_equal(grid.zscore(img, 0.0, 1.0), img)
    const = np.full((3, 3, 2), 5.0, np.float32)
    assert np.all(grid.zscore(const, 5.0, 2.0) == 0)


def test_zscore_arithmetic():
    img = np.array([[[1.0, 1.0], [3.0, 3.0]]], np.float32)
    out = grid.zscore(img, [2.0, 2.0], [1.0, 1.0])
    assert np.array_equal(out[0, :, 0], [-1.0, 1.0])


def test_zscore_rejects_bad_std():
    with pytest.raises(InvalidStatisticsError):
        grid.zscore(np.zeros((2, 2, 2), np.float32), [0, 0], [1.0, 0.0])


@given(hnp.arrays(np.float32, (5, 4, 2), elements=st.floats(-100, 100, width=32)),
       st.floats(-5, 5), st.floats(0.1, 10))
def test_zscore_inverse_affine(img, mean, std):
    z = grid.zscore(img, [mean, mean], [std, std])
    back = z.astype(np.float64) * np.float32(std) + np.float32(mean)
    assert np.max(np.abs(back - img)) <= 1e-6 * max(1.0, np.abs(img).max()) + 1e-6


def test_patchify_canonical_geometry():
    spec = PatchGridSpec.for_shape(512, 512, 16)
    assert (spec.rows, spec.cols, spec.patch_count) == (32, 32, 1024)
    patches = grid.patchify(np.zeros((512, 512, 2), np.float32), spec)
    assert patches.shape == (1024, 16, 16, 2)


def test_patchify_single_patch():
    img = np.random.default_rng(3).random((8, 8, 2)).astype(np.float32)
    p = grid.patchify(img, PatchGridSpec.for_shape(8, 8, 8))
    assert p.shape == (1, 8, 8, 2) and np.array_equal(p[0], img)


def test_patchify_block_sums_bruteforce():
    img = np.arange(16, dtype=np.float32).reshape(4, 4, 1).repeat(2, axis=2)
    p = grid.patchify(img, PatchGridSpec.for_shape(4, 4, 2))
    expected = [sum(img[r, c, 0] for r in range(br, br + 2) for c in range(bc, bc + 2))
                for br in (0, 2) for bc in (0, 2)]
    assert [float(x[:, :, 0].sum()) for x in p] == expected


def test_patchify_indivisible():
    with pytest.raises(DimensionError):
        PatchGridSpec.for_shape(10, 16, 4)
    with pytest.raises(DimensionError):
        grid.patchify(np.zeros((12, 12, 2), np.float32), PatchGridSpec(4, 2, 2))


def test_patchify_mask_cases():
    spec = PatchGridSpec.for_shape(4, 4, 2)
    assert not grid.patchify_mask(np.zeros((4, 4, 3), bool), spec).any()
    m = np.zeros((4, 4, 3), bool)
    m[0, 0, 1] = True
    v = grid.patchify_mask(m, spec)
    assert v.shape == (4, 4, 3)
    assert np.argwhere(v).tolist() == [[0, 0, 1]]
    full = np.zeros((4, 4, 3), bool)
    full[:, :, 2] = True
    v = grid.patchify_mask(full, spec)
    assert v[:, :, 2].all() and not v[:, :, :2].any()


@pytest.mark.parametrize("rows,cols,P", [(1, 1, 3), (2, 3, 2), (3, 2, 4)])
def test_patch_ordering_exhaustive(rows, cols, P):
    spec = PatchGridSpec(P, rows, cols)
    H, W = spec.height, spec.width
    C = 2
    ident = np.arange(H * W * C).reshape(H, W, C)
    for c in range(C):
        for pix in range(H * W):
            m = np.zeros((H, W, C), bool)
            m.reshape(-1, C)[pix, c] = True
            v = grid.patchify_mask(m, spec)
            (i, p, cc), = np.argwhere(v)
            assert cc == c
            r = (i // cols) * P + p // P
            col = (i % cols) * P + p % P
            assert ident[r, col, c] == ident.reshape(-1, C)[pix, c]


@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_reassemble_roundtrip(rows, cols, P, C, seed):
    spec = PatchGridSpec(P, rows, cols)
    m = np.random.default_rng(seed).random((spec.height, spec.width, C)) < 0.5
    back = grid.reassemble(grid.patchify_mask(m, spec).astype(np.float32), spec)
    assert np.array_equal(back.astype(bool), m) and set(np.unique(back)) <= {0.0, 1.0}


def test_reassemble_block_geometry():
    spec = PatchGridSpec(4, 2, 3)
    preds = np.zeros((6, 16, 2), np.float32)
    preds[4, :, 0] = 0.5
    out = grid.reassemble(preds, spec)
    expected = np.zeros((8, 12, 2), np.float32)
    expected[4:8, 4:8, 0] = 0.5
    assert np.array_equal(out, expected)


def test_reassemble_single_patch_and_errors():
    spec = PatchGridSpec(3, 1, 1)
    p = np.random.default_rng(0).random((1, 9, 2)).astype(np.float32)
    assert np.array_equal(grid.reassemble(p, spec), p[0].reshape(3, 3, 2))
    with pytest.raises(DimensionError):
        grid.reassemble(np.zeros((2, 9, 2)), spec)
    with pytest.raises(DimensionError):
        grid.reassemble(np.zeros((1, 8, 2)), spec)


def test_raster_and_mask_files_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.standard_normal((7, 9, 2)).astype(np.float32)
    mask = rng.random((7, 9, 4)) < 0.3
    grid.save_raster(img, tmp_path / "a.aoir")
    grid.save_mask(mask, tmp_path / "a.aoim")
    assert grid.load_raster(tmp_path / "a.aoir").tobytes() == img.tobytes()
    assert np.array_equal(grid.load_mask(tmp_path / "a.aoim"), mask)
    assert (tmp_path / "a.aoir").read_bytes() == grid.raster_to_bytes(grid.load_raster(tmp_path / "a.aoir"))


def test_mask_file_bit_layout():
    mask = np.zeros((3, 3, 2), bool)
    mask[0, 1, 0] = True  # pixel 1 of plane 0
    mask[2, 2, 1] = True  # pixel 8 of plane 1
    raw = grid.mask_to_bytes(mask)
    assert raw[:4] == b"AOIM" and len(raw) == 4 + 2 + 8 + 2 + 2 * 2
    planes = raw[16:]
    assert planes == bytes([0b10, 0, 0, 0b1])


def test_raster_file_errors():
    raw = grid.raster_to_bytes(np.zeros((2, 2, 2), np.float32))
    with pytest.raises(FormatError):
        grid.raster_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(TruncatedFileError):
        grid.raster_from_bytes(raw[:-1])
    bad = np.full((1, 1, 2), np.nan, np.float32)
    with pytest.raises(NonFiniteError):
        grid.raster_from_bytes(grid.raster_to_bytes(bad))
