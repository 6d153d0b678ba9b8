"""Textual-prototype matching and pseudo-labeling of target samples.

Each source class owns one textual prototype (its prompt embedding). After
clustering the target features once, the image prototype most similar to a
class's textual prototype becomes that class's positive; the remaining K-1
act as its negatives. A sample is pseudo-labeled with its best textual
class when the textual similarity beats every negative-prototype
similarity of that class, and UNKNOWN otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .clustering import ClusterModel
from .linalg import l2_normalize, l2_normalize_rows

UNKNOWN = -1


@dataclass
class TextualPrototypeSet:
    prototypes: np.ndarray  # (|Cs|, D), unit rows
    class_names: list[str]

    def __post_init__(self):
        self.prototypes = l2_normalize_rows(np.asarray(self.prototypes, dtype=np.float64))
        if len(self.class_names) != self.prototypes.shape[0]:
            raise ValueError("class name count must match prototype rows")

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]


@dataclass
class PrototypeAssignment:
    positive_index: np.ndarray  # (|Cs|,) prototype index per class
    negatives: list[np.ndarray]  # per class, the other K-1 prototype indices
    prototype_count: int


@dataclass
class PseudoLabel:
    label: int  # class index, or UNKNOWN
    margin: float  # positive similarity minus best negative similarity

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


def assign_prototypes(textual: TextualPrototypeSet, model: ClusterModel) -> PrototypeAssignment:
    """Match each class to its most similar image prototype (ties: lowest index)."""
    k = model.k
    if k < 2:
        raise ValueError("no negatives available")
    centroids = l2_normalize_rows(model.centroids)  # means leave the sphere
    sims = textual.prototypes @ centroids.T  # (|Cs|, K)
    positive = np.argmax(sims, axis=1).astype(np.int64)
    negatives = [
        np.array([j for j in range(k) if j != pos], dtype=np.int64) for pos in positive
    ]
    return PrototypeAssignment(positive, negatives, k)


def pseudo_label(
    z: np.ndarray,
    textual: TextualPrototypeSet,
    assignment: PrototypeAssignment,
    model: ClusterModel,
) -> PseudoLabel:
    """Label one target feature as a source class or UNKNOWN.

    The class is the textual-similarity argmax; it is accepted iff its
    textual similarity is >= the sample's best similarity to that class's
    negative prototypes (ties go to the class).
    """
    z = l2_normalize(np.asarray(z, dtype=np.float64))
    centroids = l2_normalize_rows(model.centroids)
    text_sims = textual.prototypes @ z
    c_hat = int(np.argmax(text_sims))
    s_pos = float(text_sims[c_hat])
    s_neg = float(np.max(centroids[assignment.negatives[c_hat]] @ z))
    margin = s_pos - s_neg
    return PseudoLabel(c_hat if s_pos >= s_neg else UNKNOWN, margin)


def pseudo_label_all(
    features: np.ndarray,
    textual: TextualPrototypeSet,
    assignment: PrototypeAssignment,
    model: ClusterModel,
) -> list[PseudoLabel]:
    """Vectorized element-wise pseudo-labeling, order-preserving."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[0] == 0:
        return []
    x = l2_normalize_rows(x)
    centroids = l2_normalize_rows(model.centroids)
    text_sims = x @ textual.prototypes.T  # (N, |Cs|)
    c_hat = np.argmax(text_sims, axis=1)
    s_pos = text_sims[np.arange(x.shape[0]), c_hat]

    proto_sims = x @ centroids.T  # (N, K)
    masked = proto_sims.copy()
    masked[np.arange(x.shape[0]), assignment.positive_index[c_hat]] = -np.inf
    s_neg = masked.max(axis=1)

    margins = s_pos - s_neg
    labels = np.where(s_pos >= s_neg, c_hat, UNKNOWN)
    return [PseudoLabel(int(l), float(m)) for l, m in zip(labels, margins)]
