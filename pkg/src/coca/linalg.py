"""Dense vector/matrix primitives shared by every other module.

All core math runs in float64 even though features live on disk in float32;
cluster validity indices and finite-difference gradient checks need the
headroom. Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import numpy as np

# Clamp applied inside logs so saturated softmax outputs never produce -inf.
LOG_EPS = 1e-12


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit Euclidean norm, preserving direction."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite feature")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ValueError("degenerate feature")
    return v / n


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise unit normalization of a feature matrix."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite feature")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("degenerate feature")
    return m / norms[:, None]


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two pre-normalized vectors, clipped to [-1, 1].

    Normalization is enforced at ingestion, not here, so this stays a plain
    dot product in the inner loops.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    return float(np.clip(np.dot(a, b), -1.0, 1.0))


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax over a 1-D logit vector."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite logits")
    z = np.exp(x - np.max(x))
    return z / np.sum(z)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax over a 2-D logit matrix."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite logits")
    z = np.exp(x - np.max(x, axis=1, keepdims=True))
    return z / np.sum(z, axis=1, keepdims=True)


def cross_entropy(target: np.ndarray, predicted: np.ndarray) -> float:
    """H(target, predicted) = -sum_c target_c * log(predicted_c)."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    if t.shape != p.shape:
        raise ValueError("dimension mismatch")
    return float(-np.sum(t * np.log(np.maximum(p, LOG_EPS))))


def entropy(p: np.ndarray) -> float:
    return cross_entropy(p, p)


def normalized_entropy(p: np.ndarray) -> float:
    """Shannon entropy divided by ln(C), so the result lives in [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    c = p.shape[-1]
    if c < 2:
        raise ValueError("need at least two classes")
    return float(np.clip(entropy(p) / np.log(c), 0.0, 1.0))


def one_hot(index: int, num_classes: int) -> np.ndarray:
    out = np.zeros(num_classes, dtype=np.float64)
    out[index] = 1.0
    return out
