import time

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_bench():
    """Default synthetic benchmark with an 80-image pool (first 42 are the gallery)."""
    from aoiseg.bench import load_benchmark

    t0 = time.perf_counter()
    b = load_benchmark(pool=80)
    b.load_seconds = time.perf_counter() - t0
    return b


@pytest.fixture(scope="session")
def tuned(default_bench):
    """Per mode: (TuneResult, held-out IoUReport) with k, beta and thresholds tuned on the gallery."""
    from aoiseg.aggregate import RetrievalConfig
    from aoiseg.tune import TuneSpec, build_bank, evaluate, grid_search

    P = default_bench.spec.patch_size
    out = {"seconds": {}}
    for name, template in (
        ("similarity", RetrievalConfig(mode="similarity")),
        ("attention", RetrievalConfig(mode="attention")),
        ("image", RetrievalConfig(granularity="image")),
    ):
        t0 = time.perf_counter()
        result = grid_search(default_bench.gallery, template, TuneSpec(), P)
        cfg = result.config(template)
        bank = build_bank(default_bench.gallery, cfg, P)
        out[name] = (result, evaluate(default_bench.eval, bank, cfg))
        out["seconds"][name] = time.perf_counter() - t0
    return out


SCALING_SIZES = (1, 5, 10, 20, 40, 80)


@pytest.fixture(scope="session")
def scaling(default_bench):
    """mIoU over nested gallery sizes on the default benchmark (similarity, k=5, thresholds 0.5)."""
    from aoiseg.aggregate import RetrievalConfig
    from aoiseg.tune import scalability_curve

    return dict(scalability_curve(default_bench.pool, SCALING_SIZES, default_bench.eval, RetrievalConfig(k=5),
                                  default_bench.spec.patch_size))


def tiny_dataset(n=6, side=32, P=8, d=24, seed=0):
    """Two classes in every image: thin diagonal-ish lines (0) and square blobs (1)."""
    from aoiseg.embed import ToyEncoderConfig, toy_encode
    from aoiseg.tune import Sample

    rng = np.random.default_rng(seed)
    enc = ToyEncoderConfig(seed=seed, d=d, P=P)
    out = []
    for i in range(n):
        mask = np.zeros((side, side, 2), bool)
        r = int(rng.integers(2, side - 2))
        mask[r, :, 0] = True
        c = int(rng.integers(2, side - 2))
        mask[:, c, 0] = True
        y, x = rng.integers(0, side - 12, 2)
        s = int(rng.integers(8, 12))
        mask[y:y + s, x:x + s, 1] = True
        img = np.zeros((side, side, 2), np.float32)
        img[mask[:, :, 1]] = 0.4
        img[mask[:, :, 0]] = 0.9
        img += rng.normal(0, 0.05, img.shape).astype(np.float32)
        out.append(Sample(toy_encode(img, enc, f"t{i}"), mask))
    return out, P


ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
