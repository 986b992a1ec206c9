"""The default synthetic benchmark and synthetic key sets for search benchmarks.

The benchmark is a gallery of scenes ``0..pool-1`` (the first ``gallery`` of
them form the default gallery) and a disjoint eval set starting at index
``eval_start``. All rasters are z-scored with per-channel statistics of the
default gallery and encoded with the toy encoder.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .embed import ToyEncoderConfig, toy_encode
from .grid import zscore
from .synth import SceneSpec, generate_scene, scene_id
from .tune import Sample


@dataclass(frozen=True)
class BenchmarkSpec:
    scene: SceneSpec = field(default_factory=SceneSpec)
    encoder: ToyEncoderConfig = field(default_factory=ToyEncoderConfig)
    gallery: int = 42
    eval: int = 24
    eval_start: int = 10000

    @property
    def patch_size(self) -> int:
        return self.encoder.P


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    stats: tuple[np.ndarray, np.ndarray]
    pool: list[Sample]
    eval: list[Sample]

    @property
    def gallery(self) -> list[Sample]:
        return self.pool[: self.spec.gallery]


def channel_stats(rasters) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation over a collection of rasters (float64)."""
    total = None
    sq = None
    n = 0
    for r in rasters:
        x = np.asarray(r, np.float64).reshape(-1, r.shape[2])
        s, q = x.sum(axis=0), (x * x).sum(axis=0)
        total, sq = (s, q) if total is None else (total + s, sq + q)
        n += len(x)
    mean = total / n
    return mean, np.sqrt(np.maximum(sq / n - mean * mean, 0.0))


@lru_cache(maxsize=8)
def _scenes(scene: SceneSpec, start: int, n: int):
    return tuple(generate_scene(scene, i) for i in range(start, start + n))


def _encode(spec: BenchmarkSpec, scenes, start: int, stats) -> list[Sample]:
    mean, std = stats
    return [
        Sample(toy_encode(zscore(img, mean, std), spec.encoder, scene_id(start + i)), mask)
        for i, (img, mask) in enumerate(scenes)
    ]


@lru_cache(maxsize=4)
def load_benchmark(spec: BenchmarkSpec = BenchmarkSpec(), pool: Optional[int] = None) -> Benchmark:
    """Generate and encode the benchmark; ``pool`` extends the gallery range for scaling runs."""
    pool = max(pool or spec.gallery, spec.gallery)
    scenes = _scenes(spec.scene, 0, pool)
    stats = channel_stats(img for img, _ in scenes[: spec.gallery])
    evals = _scenes(spec.scene, spec.eval_start, spec.eval)
    return Benchmark(spec, stats, _encode(spec, scenes, 0, stats), _encode(spec, evals, spec.eval_start, stats))


def clustered_keys(M: int, d: int, clusters: int = 256, spread: float = 0.35, seed: int = 0) -> np.ndarray:
    """``M`` float32 keys drawn around ``clusters`` random unit centers.

    Cluster sizes are uneven (Dirichlet weights) and ``spread`` is the noise
    norm relative to the unit center.
    """
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((clusters, d))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.choice(clusters, size=M, p=rng.dirichlet(np.full(clusters, 2.0)))
    noise = rng.standard_normal((M, d)) * (spread / np.sqrt(d))
    return (centers[labels] + noise).astype(np.float32)


def perturbed_queries(keys: np.ndarray, n: int, spread: float = 0.1, seed: int = 1) -> np.ndarray:
    """Queries near randomly chosen keys, as in retrieving a slightly changed patch."""
    rng = np.random.default_rng(seed)
    base = keys[rng.integers(0, len(keys), n)].astype(np.float64)
    scale = np.linalg.norm(base, axis=1, keepdims=True) * spread / np.sqrt(keys.shape[1])
    return (base + rng.standard_normal(base.shape) * scale).astype(np.float32)
