"""Retrieval-based multi-label segmentation of two-channel inspection images.

Patch embeddings of a labeled gallery are stored with their masks in a
memory bank; a query image is segmented by combining the masks of the
nearest stored patches.
"""
from .aggregate import RetrievalConfig, segment, segment_image_level, segment_patch_level
from .embed import PatchEmbeddingSet, ToyEncoderConfig, toy_encode
from .grid import PatchGridSpec, center_crop, patchify, reassemble, zscore
from .membank import MemoryBank, NeighborSet, search_exact, search_partitioned
from .metrics import IoUReport, apply_thresholds, finalize_miou
from .synth import SceneSpec, generate_scene
from .tune import TuneResult, TuneSpec, grid_search

__version__ = "0.1.0"
