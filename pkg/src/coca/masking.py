"""Patch-mask generation, masked encoding through a frozen encoder, and the
teacher-student mask consistency loss.

Masks use the pinned splitmix64 / Fisher-Yates rule from coca.prng so that
externally precomputed masked features (extracted by a bridge in another
language) line up bit-for-bit with the masks generated here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import TeacherHead, soft_consistency_loss
from .linalg import l2_normalize, l2_normalize_rows
from .prng import select_cells, select_cells_batch, select_cells_indices_batch
from .store import FeatureStore

DEFAULT_GRID = 14  # patch granularity of a 224px ViT-B/16 input


@dataclass
class PatchGridImage:
    patches: np.ndarray  # (P, P, d)
    sample_id: int

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 3 or self.patches.shape[0] != self.patches.shape[1]:
            raise ValueError("patches must form a square grid")
        if self.patches.shape[0] < 2:
            raise ValueError("grid size must be >= 2")
        if not np.all(np.isfinite(self.patches)):
            raise ValueError("non-finite patch embeddings")


@dataclass
class PatchMask:
    kept: np.ndarray  # (P, P) bools, True = patch visible
    ratio: float
    seed: int


def masked_cell_count(grid: int, ratio: float) -> int:
    if not 0.0 <= ratio < 1.0:
        raise ValueError("mask ratio must be in [0, 1)")
    count = int(np.floor(ratio * grid * grid + 0.5))
    if count >= grid * grid:
        raise ValueError("fully masked")
    return count


def generate_mask(grid: int, ratio: float, seed: int) -> PatchMask:
    """Mask exactly round(ratio * grid^2) cells, chosen without replacement."""
    m = masked_cell_count(grid, ratio)
    kept = np.ones(grid * grid, dtype=bool)
    kept[select_cells(grid * grid, m, seed)] = False
    return PatchMask(kept.reshape(grid, grid), ratio, seed)


def generate_masks_batch(grid: int, ratio: float, seeds: np.ndarray) -> np.ndarray:
    """Kept bitmaps (len(seeds), grid*grid); row i equals generate_mask(..., seeds[i])."""
    m = masked_cell_count(grid, ratio)
    return ~select_cells_batch(grid * grid, m, seeds)


def masked_indices_batch(grid: int, ratio: float, seeds: np.ndarray) -> np.ndarray:
    """Masked cell indices (len(seeds), round(ratio*grid^2)), matching generate_mask."""
    m = masked_cell_count(grid, ratio)
    return select_cells_indices_batch(grid * grid, m, seeds)


class ToyEncoder:
    """Frozen stand-in for a real image encoder.

    Encodes a patch grid as the unit-normalized projection of the mean of
    the kept patches. The projection matrix is drawn once from the seed and
    then frozen (write-protected).
    """

    kind = "toy"

    def __init__(self, patch_dim: int, feature_dim: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        if patch_dim < feature_dim:
            raise ValueError("patch dim must be >= feature dim for grid synthesis")
        self.proj = rng.standard_normal((feature_dim, patch_dim)) / np.sqrt(patch_dim)
        self.proj.setflags(write=False)
        self._pinv = np.linalg.pinv(self.proj)
        self._pinv.setflags(write=False)

    @property
    def patch_dim(self) -> int:
        return self.proj.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.proj.shape[0]

    def encode(self, img: PatchGridImage, mask: PatchMask) -> np.ndarray:
        if mask.kept.shape != img.patches.shape[:2]:
            raise ValueError("mask shape does not match patch grid")
        flat = img.patches.reshape(-1, img.patches.shape[2])
        mean = flat[mask.kept.reshape(-1)].mean(axis=0)
        return l2_normalize(self.proj @ mean)

    def encode_batch(self, grids: np.ndarray, kept: np.ndarray) -> np.ndarray:
        """grids (S, cells, d), kept (S, cells) -> unit features (S, D)."""
        counts = kept.sum(axis=1).astype(np.float64)
        means = np.einsum("scd,sc->sd", grids, kept.astype(np.float64)) / counts[:, None]
        return self.project_means(means)

    def project_means(self, means: np.ndarray) -> np.ndarray:
        return l2_normalize_rows(means @ self.proj.T)

    def encode_batch_complement(
        self, grids: np.ndarray, grid_sums: np.ndarray, masked_idx: np.ndarray
    ) -> np.ndarray:
        """Fast path: subtract the masked cells from precomputed full sums.

        Exactly sums the same kept cells as encode_batch (tested equal), but
        gathers only the masked minority instead of reducing the whole grid.
        """
        s, cells, d = grids.shape
        m = masked_idx.shape[1]
        if m == 0:
            means = grid_sums / cells
        else:
            flat_rows = (np.arange(s, dtype=np.int64)[:, None] * cells + masked_idx).ravel()
            gathered = grids.reshape(s * cells, d)[flat_rows].reshape(s, m, d)
            removed = gathered.sum(axis=1, dtype=np.float64)
            means = (grid_sums - removed) / (cells - m)
        return self.project_means(means)

    def synthesize_grids(
        self, features: np.ndarray, grid: int, noise: float, seed: int
    ) -> np.ndarray:
        """Per-sample patch grids whose unmasked encoding reproduces the feature.

        The grid mean is the projection pre-image of the feature; per-cell
        noise is centered within each grid so the full-grid mean is exact.
        """
        x = np.asarray(features, dtype=np.float64)
        base = x @ self._pinv.T  # (S, d)
        rng = np.random.default_rng(seed)
        eta = noise * rng.standard_normal((x.shape[0], grid * grid, self.patch_dim))
        eta -= eta.mean(axis=1, keepdims=True)
        # float32 like on-disk features; encoders accumulate in float64
        return (base[:, None, :] + eta).astype(np.float32)


class ExternalEncoder:
    """Lookup of precomputed masked features keyed by (row, mask seed)."""

    kind = "external"

    def __init__(self, store: FeatureStore):
        if not store.masked:
            raise ValueError("masked feature not ingested")
        self.store = store

    def encode(self, img: PatchGridImage, mask: PatchMask) -> np.ndarray:
        return self.store.masked_feature(img.sample_id, mask.seed)


def encode_masked(img: PatchGridImage, mask: PatchMask, encoder) -> np.ndarray:
    return encoder.encode(img, mask)


def mask_loss(teacher: TeacherHead, student_head, z_full: np.ndarray, z_masked: np.ndarray):
    """Consistency loss: teacher sees the full feature, student the masked one."""
    return soft_consistency_loss(teacher.head, student_head, z_full, z_masked)
