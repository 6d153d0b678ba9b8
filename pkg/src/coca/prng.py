"""splitmix64 generator and the cell-selection rule built on it.

Patch masks must be reproducible bit-for-bit by external feature extractors
written in other languages, so mask randomness is pinned to this exact
algorithm instead of numpy's RNG:

  state_{n+1} = (state_n + 0x9E3779B97F4A7C15) mod 2^64
  out = mix(state_{n+1}) with the standard splitmix64 finalizer

Cell selection is a partial Fisher-Yates shuffle over [0, n): step t swaps
position t with position t + (next_u64() % (n - t)); the first m entries of
the permuted array are the selected cells. The modulo bias is irrelevant at
patch-grid sizes and keeps the cross-language contract trivial.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Splitmix64:
    """Scalar reference implementation."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)


def select_cells(n: int, m: int, seed: int) -> list[int]:
    """Choose m distinct cells from [0, n) via the pinned partial shuffle."""
    if not 0 <= m <= n:
        raise ValueError("cannot select more cells than exist")
    rng = Splitmix64(seed)
    cells = list(range(n))
    for t in range(m):
        j = t + rng.next_u64() % (n - t)
        cells[t], cells[j] = cells[j], cells[t]
    return cells[:m]


def derive_seed(*parts: int) -> int:
    """Stateless seed combiner: folds integers through the splitmix stream."""
    acc = 0
    for p in parts:
        rng = Splitmix64((acc ^ p) & _MASK64)
        acc = rng.next_u64()
    return acc


def derive_seeds_vec(base: int, parts: np.ndarray) -> np.ndarray:
    """Vectorized final fold: element i equals derive_seed-ing part i onto base."""
    state = (np.uint64(base) ^ np.asarray(parts, dtype=np.uint64)).copy()
    with np.errstate(over="ignore"):
        state += np.uint64(_GAMMA)
        z = state
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))


def select_cells_indices_batch(n: int, m: int, seeds: np.ndarray) -> np.ndarray:
    """Vectorized select_cells across many seeds.

    Returns an int array of shape (len(seeds), m); row i holds the same cell
    set as select_cells(n, m, seeds[i]) (tested for exact agreement).
    """
    seeds = np.asarray(seeds, dtype=np.uint64)
    s = seeds.shape[0]
    state = seeds.copy()
    cells = np.broadcast_to(np.arange(n, dtype=np.int64), (s, n)).copy()
    rows = np.arange(s)
    with np.errstate(over="ignore"):
        for t in range(m):
            state += np.uint64(_GAMMA)
            z = state.copy()
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
            j = t + (z % np.uint64(n - t)).astype(np.int64)
            picked = cells[rows, j]
            cells[rows, j] = cells[:, t]
            cells[:, t] = picked
    return cells[:, :m]


def select_cells_batch(n: int, m: int, seeds: np.ndarray) -> np.ndarray:
    """Boolean-mask variant of select_cells_indices_batch (True = selected)."""
    idx = select_cells_indices_batch(n, m, seeds)
    out = np.zeros((idx.shape[0], n), dtype=bool)
    out[np.arange(idx.shape[0])[:, None], idx] = True
    return out
