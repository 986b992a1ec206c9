import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aoiseg import embed
from aoiseg.embed import PatchEmbeddingSet, ToyEncoderConfig
from aoiseg.errors import DimensionError, FormatError, InconsistentDimensionError, NonFiniteError, TruncatedFileError

SMALL = ToyEncoderConfig(seed=3, d=32, P=4)


def _img(seed, h=16, w=16):
    return np.random.default_rng(seed).random((h, w, 2)).astype(np.float32)


def test_projection_shape_norm_and_determinism():
    cfg = ToyEncoderConfig()
    assert cfg.projection.shape == (384, 2 * 16 * 16 + 4)
    assert np.allclose(np.linalg.norm(cfg.projection.astype(np.float64), axis=1), 1.0, atol=1e-6)
    assert ToyEncoderConfig(seed=0).projection.tobytes() == cfg.projection.tobytes()
    assert ToyEncoderConfig(seed=1).projection.tobytes() != cfg.projection.tobytes()


def test_feature_vector_layout():
    img = np.zeros((2, 2, 2), np.float32)
    img[:, :, 0] = [[1, 2], [3, 4]]
    img[:, :, 1] = 5
    f = embed.patch_features(img, 2)[0]
    assert f.tolist() == [1, 2, 3, 4, 5, 5, 5, 5, 2.5, 5, np.std([1, 2, 3, 4]), 0]


def test_toy_encode_matches_explicit_projection():
    img = _img(0)
    out = embed.toy_encode(img, SMALL, "x")
    feats = embed.patch_features(img, 4)
    ref = (feats @ SMALL.projection.astype(np.float64).T).astype(np.float32)
    assert out.patch_embeddings.tobytes() == ref.tobytes()
    assert (out.L, out.d, out.image_id) == (16, 32, "x")


def test_toy_encode_deterministic():
    a = embed.toy_encode(_img(1), SMALL)
    b = embed.toy_encode(_img(1), SMALL)
    assert a.patch_embeddings.tobytes() == b.patch_embeddings.tobytes()
    assert a.global_embedding.tobytes() == b.global_embedding.tobytes()


def test_identical_patches_identical_embeddings():
    img = _img(2)
    img[4:8, 8:12] = img[0:4, 0:4]  # patch 6 copies patch 0
    out = embed.toy_encode(img, SMALL).patch_embeddings
    assert np.array_equal(out[0], out[6])


def test_all_zero_image_gives_zero_embeddings():
    out = embed.toy_encode(np.zeros((16, 16, 2), np.float32), SMALL)
    assert not out.patch_embeddings.any() and not out.global_embedding.any()


def test_patch_embedding_depends_only_on_its_patch():
    img = _img(3)
    other = img.copy()
    other[8:, 8:] = 0  # changes patches 10, 11, 14, 15 only
    a = embed.toy_encode(img, SMALL).patch_embeddings
    b = embed.toy_encode(other, SMALL).patch_embeddings
    same = [i for i in range(16) if i not in (10, 11, 14, 15)]
    assert np.array_equal(a[same], b[same])


@given(st.integers(0, 2**32 - 1))
def test_global_is_patch_mean(seed):
    out = embed.toy_encode(_img(seed), SMALL)
    mean = out.patch_embeddings.astype(np.float64).mean(axis=0)
    assert np.max(np.abs(out.global_embedding - mean)) <= 1e-6


def test_toy_encode_errors():
    with pytest.raises(DimensionError):
        embed.toy_encode(np.zeros((10, 16, 2), np.float32), SMALL)
    with pytest.raises(DimensionError):
        embed.toy_encode(np.zeros((16, 16, 3), np.float32), SMALL)


def test_channel_adapt():
    img = np.zeros((2, 3, 2), np.float32)
    img[:, :, 1] = 1
    out = embed.channel_adapt(img)
    assert out.shape == (2, 3, 3) and np.all(out[:, :, 2] == 0.5)
    same = _img(4)[:, :, :1].repeat(2, axis=2)
    assert np.array_equal(embed.channel_adapt(same)[:, :, 2], same[:, :, 0])
    a = _img(5)
    assert np.allclose(embed.channel_adapt(a)[:, :, 2], (a[:, :, 0] + a[:, :, 1]) / 2)
    with pytest.raises(DimensionError):
        embed.channel_adapt(np.zeros((2, 2, 3), np.float32))


def _sets(rng, n=3, d=8, with_global=True):
    return [
        PatchEmbeddingSet(f"img-{i}é", rng.standard_normal((4 + i, d)).astype(np.float32),
                          rng.standard_normal(d).astype(np.float32) if with_global and i % 2 == 0 else None)
        for i in range(n)
    ]


def test_aoie_roundtrip_bit_identical(tmp_path, rng):
    sets = _sets(rng)
    path = tmp_path / "e.aoie"
    embed.save_embeddings(sets, path, P=14)
    back, P = embed.load_embeddings_with_patch(path)
    assert P == 14 and len(back) == 3
    for a, b in zip(sets, back):
        assert a.image_id == b.image_id
        assert a.patch_embeddings.tobytes() == b.patch_embeddings.tobytes()
        assert (a.global_embedding is None) == (b.global_embedding is None)
        if a.global_embedding is not None:
            assert a.global_embedding.tobytes() == b.global_embedding.tobytes()
    assert embed.embeddings_to_bytes(back, 14) == path.read_bytes()


def test_aoie_header_layout(rng):
    raw = embed.embeddings_to_bytes(_sets(rng, n=1, d=2, with_global=False), 16)
    assert raw[:4] == b"AOIE"
    assert np.frombuffer(raw[4:6], "<u2")[0] == 1
    assert np.frombuffer(raw[6:18], "<u4").tolist() == [1, 2, 16]
    assert len(raw) == 18 + 2 + len("img-0é".encode()) + 4 + 1 + 4 * 2 * 4


def test_aoie_varying_d_rejected(rng):
    sets = [PatchEmbeddingSet("a", np.ones((2, 4), np.float32)), PatchEmbeddingSet("b", np.ones((2, 5), np.float32))]
    with pytest.raises(InconsistentDimensionError):
        embed.embeddings_to_bytes(sets, 16)


def test_aoie_expect_d(tmp_path, rng):
    path = tmp_path / "e.aoie"
    embed.save_embeddings(_sets(rng, d=8), path)
    with pytest.raises(InconsistentDimensionError):
        embed.load_embeddings(path, expect_d=16)


def test_aoie_truncated_and_corrupt(rng):
    raw = embed.embeddings_to_bytes(_sets(rng), 16)
    for cut in (3, 10, len(raw) - 1):
        with pytest.raises(TruncatedFileError):
            embed.embeddings_from_bytes(raw[:cut])
    with pytest.raises(FormatError):
        embed.embeddings_from_bytes(b"AOIX" + raw[4:])
    with pytest.raises(FormatError):
        embed.embeddings_from_bytes(raw[:4] + b"\x02\x00" + raw[6:])
    with pytest.raises(FormatError):
        embed.embeddings_from_bytes(raw + b"\x00")
    bad = [PatchEmbeddingSet("n", np.array([[np.inf, 0.0]], np.float32))]
    with pytest.raises(NonFiniteError):
        embed.embeddings_from_bytes(embed.embeddings_to_bytes(bad, 16))


@given(hnp.arrays(np.float32, st.tuples(st.integers(0, 5), st.integers(1, 6)),
                  elements=st.floats(-1e6, 1e6, width=32)), st.text(max_size=8))
def test_aoie_roundtrip_property(arr, ident):
    sets = [PatchEmbeddingSet(ident, arr)]
    back, _ = embed.embeddings_from_bytes(embed.embeddings_to_bytes(sets, 16))
    assert back[0].image_id == ident and back[0].patch_embeddings.tobytes() == arr.tobytes()
