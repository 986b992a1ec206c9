import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aoiseg import aggregate as ag
from aoiseg import membank as mb
from aoiseg.aggregate import RetrievalConfig
from aoiseg.embed import PatchEmbeddingSet
from aoiseg.errors import (
    DimensionError, EmptyBankError, EmptyNeighborhoodError, InvalidTemperatureError, SpecError,
)
from aoiseg.grid import PatchGridSpec, patchify_mask
from aoiseg.metrics import apply_thresholds

sims_st = hnp.arrays(np.float64, st.integers(1, 12), elements=st.floats(-1, 1))


def test_similarity_weights_hand_cases():
    assert np.allclose(ag.similarity_weights(np.array([0.8, 0.2])), [0.8, 0.2])
    assert np.allclose(ag.similarity_weights(np.array([0.5, -0.5])), [1.0, 0.0])
    assert np.allclose(ag.similarity_weights(np.array([-0.1, -0.3, 0.0])), [1 / 3] * 3)


def test_combine_similarity_cases():
    v = np.zeros((2, 4, 1), bool)
    v[0] = True
    out = ag.combine_similarity(np.array([0.8, 0.2]), v)
    assert np.allclose(out, 0.8) and out.dtype == np.float32
    one = np.random.default_rng(0).random((1, 9, 3)) < 0.5
    assert np.array_equal(ag.combine_similarity(np.array([0.3]), one), one[0].astype(np.float32))
    three = np.random.default_rng(1).random((3, 9, 3)) < 0.5
    assert np.allclose(ag.combine_similarity(np.full(3, 0.4), three), three.mean(axis=0), atol=1e-7)


def test_combine_attention_cases():
    rng = np.random.default_rng(2)
    one = rng.random((1, 9, 3)) < 0.5
    assert np.array_equal(ag.combine_attention(np.array([0.1]), one, 0.07), one[0].astype(np.float32))
    two = rng.random((2, 16, 2)) < 0.5
    big = ag.combine_attention(np.array([1.0, 0.0]), two, 1e6)
    assert np.max(np.abs(big - two.mean(axis=0))) <= 1e-3
    w = ag.attention_weights(np.array([1.0, 0.0]), 0.01)
    assert w[0] >= 1 - 1e-9
    assert np.max(np.abs(ag.combine_attention(np.array([1.0, 0.0]), two, 0.01) - two[0])) <= 1e-6


def test_errors():
    with pytest.raises(EmptyNeighborhoodError):
        ag.similarity_weights(np.zeros(0))
    with pytest.raises(EmptyNeighborhoodError):
        ag.attention_weights(np.zeros(0), 1.0)
    with pytest.raises(InvalidTemperatureError):
        ag.attention_weights(np.ones(2), 0.0)
    with pytest.raises(InvalidTemperatureError):
        RetrievalConfig(mode="attention", beta=-1)
    with pytest.raises(SpecError):
        RetrievalConfig(k=0)
    with pytest.raises(SpecError):
        RetrievalConfig(thresholds=(0.5, 1.0))
    with pytest.raises(SpecError):
        RetrievalConfig(granularity="image", mode="attention")
    with pytest.raises(DimensionError):
        RetrievalConfig(thresholds=(0.5, 0.5)).threshold_vector(3)


@given(sims_st)
def test_weights_sum_to_one(s):
    for w in (ag.similarity_weights(s), ag.attention_weights(s, 0.07), ag.attention_weights(s, 1e-3)):
        assert abs(w.sum() - 1) <= 1e-5 and np.all(w >= 0)


@given(sims_st, st.integers(0, 2**32 - 1), st.sampled_from(["similarity", "attention"]))
def test_permutation_invariance_and_range(s, seed, mode):
    rng = np.random.default_rng(seed)
    v = rng.random((len(s), 4, 2)) < 0.5
    perm = rng.permutation(len(s))
    w = ag.weights_for(s, mode, 0.2)
    wp = ag.weights_for(s[perm], mode, 0.2)
    a, b = ag._mix(w, v), ag._mix(wp, v[perm])
    assert np.max(np.abs(a - b)) <= 1e-6
    assert np.all((a >= 0) & (a <= 1))


@given(hnp.arrays(np.float64, st.integers(2, 10), elements=st.floats(-1, 1), unique=True))
def test_attention_small_beta_is_top1_indicator(s):
    s = np.sort(s)[::-1]
    if s[0] - s[1] < 0.05:
        s[1:] -= 0.05  # a visible gap; at beta=1e-3 it gives exp(-50)
    w = ag.attention_weights(s, 1e-3)
    assert w[0] >= 1 - 1e-6


def test_attention_exact_tie_splits_top_weight():
    w = ag.attention_weights(np.array([0.9, 0.9, 0.1]), 1e-3)
    assert np.allclose(w, [0.5, 0.5, 0.0])


def _toy_bank(rng, n_img=3, side=8, P=4, d=10):
    spec = PatchGridSpec.for_shape(side, side, P)
    sets, masks = [], []
    for i in range(n_img):
        sets.append(PatchEmbeddingSet(f"g{i}", rng.standard_normal((spec.patch_count, d)).astype(np.float32),
                                      rng.standard_normal(d).astype(np.float32)))
        masks.append(rng.random((side, side, 3)) < 0.4)
    return sets, masks, spec


def test_patch_level_self_retrieval_exact(rng):
    sets, masks, spec = _toy_bank(rng)
    bank = mb.build_patch_bank(sets, masks, 4)
    cfg = RetrievalConfig(k=1)
    for s, m in zip(sets, masks):
        soft = ag.segment_patch_level(s, bank, cfg)
        assert np.array_equal(soft, m.astype(np.float32))
        assert np.array_equal(apply_thresholds(soft, cfg.threshold_vector(3)), m)


def test_patch_level_manual_pipeline(rng):
    sets, masks, spec = _toy_bank(rng)
    bank = mb.build_patch_bank(sets[:2], masks[:2], 4)
    q = sets[2]
    for mode in ("similarity", "attention"):
        cfg = RetrievalConfig(k=3, mode=mode, beta=0.2)
        soft = ag.segment_patch_level(q, bank, cfg)
        nb = mb.search_naive(bank, q.patch_embeddings, 3)
        stored = np.concatenate([patchify_mask(m, spec) for m in masks[:2]]).astype(np.float64)
        w = ag.weights_for(nb.sims.astype(np.float64), mode, 0.2)
        ref = np.einsum("lk,lkpc->lpc", w, stored[nb.indices])
        from aoiseg.grid import reassemble
        assert np.max(np.abs(soft - reassemble(ref, spec))) <= 1e-6


def test_patch_level_errors(rng):
    sets, masks, spec = _toy_bank(rng)
    bank = mb.build_patch_bank(sets, masks, 4)
    with pytest.raises(DimensionError):
        ag.segment_patch_level(PatchEmbeddingSet("x", np.ones((4, 7))), bank, RetrievalConfig())
    empty = mb.build([], d=10, P2=16, C=3)
    with pytest.raises(EmptyBankError):
        ag.segment_patch_level(sets[0], empty, RetrievalConfig(k=1))


@given(st.floats(1e-2, 1e2), st.integers(0, 1000))
def test_query_scale_invariance_of_final_mask(c, seed):
    rng = np.random.default_rng(seed)
    sets, masks, spec = _toy_bank(rng)
    bank = mb.build_patch_bank(sets[:2], masks[:2], 4)
    q = sets[2]
    qc = PatchEmbeddingSet("q", q.patch_embeddings.astype(np.float64) * c)
    for mode in ("similarity", "attention"):
        cfg = RetrievalConfig(k=3, mode=mode)
        t = cfg.threshold_vector(3)
        a = apply_thresholds(ag.segment_patch_level(q, bank, cfg), t)
        b = apply_thresholds(ag.segment_patch_level(qc, bank, cfg), t)
        assert np.array_equal(a, b)


def test_image_level(rng):
    sets, masks, spec = _toy_bank(rng, n_img=4)
    ib = mb.build_image_bank(sets, masks)
    soft = ag.segment_image_level(sets[1].global_embedding, ib, 1)
    assert np.array_equal(soft, masks[1].astype(np.float32))
    # equal similarities over the whole gallery: pixelwise mean
    g = np.eye(4, dtype=np.float32)
    eq_sets = [PatchEmbeddingSet(str(i), np.ones((4, 4)), g[i]) for i in range(4)]
    ib2 = mb.build_image_bank(eq_sets, masks)
    out = ag.segment_image_level(np.ones(4), ib2, 4)
    assert np.allclose(out, np.mean(masks, axis=0), atol=1e-7)
    with pytest.raises(DimensionError):
        ag.segment_image_level(np.ones(3), ib2, 1)


def test_segment_many_matches_single(rng):
    sets, masks, spec = _toy_bank(rng, n_img=4)
    bank = mb.build_patch_bank(sets[:2], masks[:2], 4)
    cfg = RetrievalConfig(k=5)
    out = ag.segment_many(sets[2:], bank, cfg, k_values=(1, 5), modes=(("similarity", 0.07), ("attention", 0.2)))
    for k in (1, 5):
        for mode, beta in (("similarity", 0.07), ("attention", 0.2)):
            single = [ag.segment_patch_level(s, bank, RetrievalConfig(k=k, mode=mode, beta=beta)) for s in sets[2:]]
            assert all(np.array_equal(a, b) for a, b in zip(out[(k, mode, beta)], single))
    ib = mb.build_image_bank(sets[:2], masks[:2])
    icfg = RetrievalConfig(granularity="image", k=2)
    many = ag.segment_many(sets[2:], ib, icfg)[(2, "similarity", 0.07)]
    assert np.array_equal(many[0], ag.segment(sets[2], ib, icfg))


def test_similarity_close_to_attention_on_benchmark(tuned):
    sim = tuned["similarity"][1].miou
    attn = tuned["attention"][1].miou
    assert abs(sim - attn) * 100 <= 1.5


def test_image_level_below_patch_level_on_benchmark(tuned):
    assert tuned["image"][1].miou < tuned["similarity"][1].miou
