"""Synthetic benchmark generator: domain shift on the unit sphere plus all
four category-shift regimes at desk scale.

Class anchors are uniform unit directions. Textual prototypes equal the
clean anchors (text features act as domain-free class descriptions). The
target domain applies a rotation in one random 2-plane, a per-class mean
jitter, and per-sample Gaussian noise; all three are norm-preserving after
re-normalization and sweepable to vary shift severity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .linalg import l2_normalize, l2_normalize_rows
from .store import DatasetManifest, FeatureStore, DEFAULT_PROMPT, regime_for_counts, split_regime

UNKNOWN_TRUTH = -1


@dataclass
class SyntheticConfig:
    dim: int = 64
    common_count: int = 5
    source_private_count: int = 5
    target_private_count: int = 5
    shots_per_class: int = 16
    samples_per_class: int = 200
    rotation_deg: float = 25.0
    mean_jitter: float = 0.02
    noise: float = 0.08
    cluster_spread: float = 0.10
    prompt_template: str = DEFAULT_PROMPT
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        if self.common_count < 1:
            raise ValueError("common_count must be >= 1")
        if min(self.source_private_count, self.target_private_count) < 0:
            raise ValueError("class counts must be >= 0")
        if self.shots_per_class < 2:
            raise ValueError("need at least 2 shots per class for a validation split")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be >= 1")


@dataclass
class SyntheticDataset:
    source: FeatureStore
    target: FeatureStore
    text: FeatureStore
    manifest: DatasetManifest
    target_truth: np.ndarray  # per target row: common class id or -1


def _rotate_in_plane(vectors: np.ndarray, e1: np.ndarray, e2: np.ndarray, theta: float) -> np.ndarray:
    a = vectors @ e1
    b = vectors @ e2
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    return (
        vectors
        + np.outer(a * (cos_t - 1.0) - b * sin_t, e1)
        + np.outer(b * (cos_t - 1.0) + a * sin_t, e2)
    )


def gen_synthetic(cfg: SyntheticConfig) -> SyntheticDataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    regime = regime_for_counts(cfg.source_private_count, cfg.target_private_count)
    source_classes, target_classes, common = split_regime(
        cfg.common_count, cfg.source_private_count, cfg.target_private_count, regime
    )
    n_classes = cfg.common_count + cfg.source_private_count + cfg.target_private_count

    anchors = l2_normalize_rows(rng.standard_normal((n_classes, cfg.dim)))

    # One random 2-plane defines the whole domain's rotation.
    e1 = l2_normalize(rng.standard_normal(cfg.dim))
    raw = rng.standard_normal(cfg.dim)
    e2 = l2_normalize(raw - np.dot(raw, e1) * e1)
    theta = np.deg2rad(cfg.rotation_deg)

    src_rows, src_labels = [], []
    for c in source_classes:
        pts = anchors[c] + cfg.cluster_spread * rng.standard_normal((cfg.shots_per_class, cfg.dim))
        src_rows.append(pts)
        src_labels.extend([c] * cfg.shots_per_class)
    source = FeatureStore.from_features(np.vstack(src_rows), labels=src_labels)

    tgt_rows, truth = [], []
    jitter = cfg.mean_jitter * rng.standard_normal((n_classes, cfg.dim))
    for c in target_classes:
        center = _rotate_in_plane(anchors[c][None, :], e1, e2, theta)[0] + jitter[c]
        pts = center + cfg.noise * rng.standard_normal((cfg.samples_per_class, cfg.dim))
        tgt_rows.append(pts)
        truth.extend([c if c in common else UNKNOWN_TRUTH] * cfg.samples_per_class)
    target = FeatureStore.from_features(np.vstack(tgt_rows))

    text = FeatureStore.from_features(anchors[source_classes])
    manifest = DatasetManifest(
        class_names=[f"class{i:02d}" for i in range(n_classes)],
        source_classes=source_classes,
        target_classes=target_classes,
        regime=regime,
        prompt_template=cfg.prompt_template,
    )
    return SyntheticDataset(source, target, text, manifest, np.asarray(truth, dtype=np.int64))


def write_truth_csv(path, truth: np.ndarray, header_lines: list[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "class"])
        for i, c in enumerate(truth):
            writer.writerow([i, int(c)])


def read_truth_csv(path) -> dict[int, int]:
    out: dict[int, int] = {}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
    for row in rows[1:]:
        if row:
            out[int(row[0])] = int(row[1])
    return out
