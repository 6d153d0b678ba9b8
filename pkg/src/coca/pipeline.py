"""End-to-end target adaptation and uncertainty-thresholded inference.

The adaptation run is: select K over the candidate list, reuse the winning
clustering as the single canonical clustering, match prototypes, pseudo-label
every sample once, then run the epoch loop combining the image, text, and
mask losses with an EMA teacher. Pseudo-labels, prototype assignment, and K
never change after epoch 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .clustering import ClusterModel, KCandidateSet, kmeans, select_k
from .heads import AdamW, TeacherHead, image_loss, text_loss, soft_consistency_loss
from .linalg import softmax_rows
from .masking import ToyEncoder, masked_cell_count, masked_indices_batch, DEFAULT_GRID
from .prng import derive_seed, derive_seeds_vec
from .prototypes import (
    UNKNOWN,
    PrototypeAssignment,
    PseudoLabel,
    TextualPrototypeSet,
    assign_prototypes,
    pseudo_label,
    pseudo_label_all,
)
from .store import DatasetManifest, FeatureStore


@dataclass
class AdaptConfig:
    k_method: str = "silhouette"
    tau: float = 0.5
    mask_ratio: float = 0.25
    ema_alpha: float = 0.98
    max_epochs: int = 50
    lr: float = 0.1
    weight_decay: float = 0.01
    use_image_loss: bool = True
    use_text_loss: bool = True
    use_mask_loss: bool = True
    seed: int = 0
    forced_k: int | None = None
    encoder: str = "toy"  # "toy" or "external"
    grid_size: int = DEFAULT_GRID
    patch_noise: float = 2.0
    kmeans_iters: int = 100

    def validate(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must be in [0, 1]")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask ratio must be in [0, 1)")
        if not 0.0 < self.ema_alpha < 1.0:
            raise ValueError("ema alpha must be in (0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not (self.use_image_loss or self.use_text_loss or self.use_mask_loss):
            raise ValueError("at least one loss must be enabled")
        if self.encoder not in ("toy", "external"):
            raise ValueError("encoder must be 'toy' or 'external'")


@dataclass
class Prediction:
    label: int  # class index, or UNKNOWN
    uncertainty: float
    probabilities: np.ndarray

    @property
    def is_unknown(self) -> bool:
        return self.label == UNKNOWN


@dataclass
class EpochStats:
    epoch: int
    loss_image: float
    loss_text: float
    loss_mask: float
    lr: float


@dataclass
class AdaptResult:
    head: object
    teacher: TeacherHead
    k: int
    candidates: list[int]
    k_scores: list
    cluster_model: ClusterModel
    assignment: PrototypeAssignment
    pseudo_labels: tuple[PseudoLabel, ...]
    epochs: list[EpochStats] = field(default_factory=list)
    kmeans_calls_sweep: int = 0
    post_sweep_clusterings: int = 0
    teacher_initial: dict = field(default_factory=dict)
    student_trajectory: list[dict] = field(default_factory=list)


def pseudo_targets(labels: tuple[PseudoLabel, ...], num_classes: int) -> np.ndarray:
    """Training targets: one-hot for a common class, uniform for UNKNOWN.

    Uniform targets push the predictive entropy of unknown-looking samples
    up, which is what the entropy threshold separates at inference time.
    """
    out = np.full((len(labels), num_classes), 1.0 / num_classes)
    for i, pl in enumerate(labels):
        if pl.label != UNKNOWN:
            out[i] = 0.0
            out[i, pl.label] = 1.0
    return out


def run_adaptation(
    target_store: FeatureStore,
    textual: TextualPrototypeSet,
    source_head,
    config: AdaptConfig,
) -> AdaptResult:
    config.validate()
    if source_head.num_classes != textual.num_classes:
        raise ValueError("class-count mismatch between head and textual prototypes")
    features = target_store.features
    if features.shape[1] != textual.dim:
        raise ValueError("dimension mismatch between target store and prototypes")

    if config.forced_k is not None:
        model = kmeans(features, config.forced_k, max_iters=config.kmeans_iters, seed=config.seed)
        k, candidates, scores, sweep_calls = config.forced_k, [config.forced_k], [None], 0
    else:
        cand = KCandidateSet.from_source_classes(textual.num_classes)
        sel = select_k(features, cand, method=config.k_method, seed=config.seed,
                       max_iters=config.kmeans_iters)
        # The winning sweep model doubles as the canonical clustering: rerunning
        # kmeans at bestK with the same seed would reproduce it exactly.
        model = sel.model
        k, candidates, scores, sweep_calls = sel.k, sel.candidates, sel.scores, sel.kmeans_calls

    assignment = assign_prototypes(textual, model)
    labels = tuple(pseudo_label_all(features, textual, assignment, model))
    targets = pseudo_targets(labels, textual.num_classes)

    head = source_head.clone()
    teacher = TeacherHead.from_student(head, config.ema_alpha)
    result = AdaptResult(
        head=head,
        teacher=teacher,
        k=k,
        candidates=candidates,
        k_scores=scores,
        cluster_model=model,
        assignment=assignment,
        pseudo_labels=labels,
        kmeans_calls_sweep=sweep_calls,
        post_sweep_clusterings=1,
        teacher_initial={n: p.copy() for n, p in teacher.head.params().items()},
    )

    opt = AdamW(head.params(), config.lr, config.weight_decay)
    n = features.shape[0]

    enc = grids = grid_sums = None
    ext_seeds = None
    if config.use_mask_loss:
        if config.encoder == "toy":
            enc = ToyEncoder(features.shape[1], features.shape[1],
                             seed=derive_seed(config.seed, 0xE7C0DE))
            grids = enc.synthesize_grids(features, config.grid_size, config.patch_noise,
                                         seed=derive_seed(config.seed, 0x981D5))
            grid_sums = grids.sum(axis=1, dtype=np.float64)
            masked_cell_count(config.grid_size, config.mask_ratio)  # fail fast
        else:
            ext_seeds = [target_store.mask_seeds_for_row(i) for i in range(n)]
            if any(not s for s in ext_seeds):
                raise KeyError("masked feature not ingested")

    for epoch in range(1, config.max_epochs + 1):
        grads = {name: np.zeros_like(p) for name, p in head.params().items()}
        l_img = l_text = l_mask = 0.0
        if config.use_image_loss:
            l_img, g = image_loss(head, features, targets)
            for name in grads:
                grads[name] += g[name]
        if config.use_text_loss:
            l_text, g = text_loss(head, textual)
            for name in grads:
                grads[name] += g[name]
        if config.use_mask_loss:
            if config.encoder == "toy":
                # one fresh mask per sample per epoch
                seeds = derive_seeds_vec(
                    derive_seed(config.seed, epoch), np.arange(n, dtype=np.uint64)
                )
                midx = masked_indices_batch(config.grid_size, config.mask_ratio, seeds)
                z_masked = enc.encode_batch_complement(grids, grid_sums, midx)
            else:
                z_masked = np.stack(
                    [
                        target_store.masked_feature(i, ext_seeds[i][(epoch - 1) % len(ext_seeds[i])])
                        for i in range(n)
                    ]
                )
            l_mask, g = soft_consistency_loss(teacher.head, head, features, z_masked)
            for name in grads:
                grads[name] += g[name]

        opt.step(grads)
        teacher.update(head)
        result.student_trajectory.append({n_: p.copy() for n_, p in head.params().items()})
        result.epochs.append(EpochStats(epoch, l_img, l_text, l_mask, config.lr))

    return result


# ---------------------------------------------------------------------------
# inference

def infer(z: np.ndarray, head, tau: float) -> Prediction:
    """Classify one feature; UNKNOWN iff normalized entropy exceeds tau."""
    return predict_batch(np.asarray(z, dtype=np.float64)[None, :], head, tau)[0]


def predict_batch(features: np.ndarray, head, tau: float) -> list[Prediction]:
    probs = softmax_rows(head.forward(np.asarray(features, dtype=np.float64)))
    c = probs.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = -np.sum(probs * np.log(np.maximum(probs, 1e-12)), axis=1)
    unc = np.clip(ent / np.log(c), 0.0, 1.0)
    top = np.argmax(probs, axis=1)  # ties resolve to the lowest class index
    labels = np.where(unc <= tau, top, UNKNOWN)
    return [
        Prediction(int(l), float(u), p) for l, u, p in zip(labels, unc, probs)
    ]


def zero_shot_label(
    z: np.ndarray,
    textual: TextualPrototypeSet,
    assignment: PrototypeAssignment,
    model: ClusterModel,
) -> Prediction:
    """Prototype-rule classification with no trained head."""
    pl = pseudo_label(z, textual, assignment, model)
    probs = softmax_rows((np.asarray(z, dtype=np.float64) @ textual.prototypes.T)[None, :] * 100.0)[0]
    return Prediction(pl.label, 0.0 if pl.label != UNKNOWN else 1.0, probs)


def zero_shot_batch(
    features: np.ndarray,
    textual: TextualPrototypeSet,
    assignment: PrototypeAssignment,
    model: ClusterModel,
) -> list[Prediction]:
    pls = pseudo_label_all(features, textual, assignment, model)
    probs = softmax_rows(np.asarray(features, dtype=np.float64) @ textual.prototypes.T * 100.0)
    return [
        Prediction(pl.label, 0.0 if pl.label != UNKNOWN else 1.0, p)
        for pl, p in zip(pls, probs)
    ]


def effective_tau(tau: float, manifest: DatasetManifest) -> float:
    """Partial-shift mode: no target-private classes disables the unknown channel."""
    if len(manifest.target_classes) == len(manifest.common_classes):
        return 1.0
    return tau


# ---------------------------------------------------------------------------
# CSV surfaces

def write_runlog_csv(path, epochs: list[EpochStats], header_lines=None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss_image", "loss_text", "loss_mask", "lr"])
        for e in epochs:
            writer.writerow([e.epoch, f"{e.loss_image:.10g}", f"{e.loss_text:.10g}",
                             f"{e.loss_mask:.10g}", f"{e.lr:.10g}"])


def write_predictions_csv(path, predictions: list[Prediction], header_lines=None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label", "uncertainty"])
        for i, p in enumerate(predictions):
            writer.writerow([i, p.label, f"{p.uncertainty:.10g}"])


def read_predictions_csv(path) -> dict[int, tuple[int, float]]:
    out: dict[int, tuple[int, float]] = {}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(ln for ln in fh if not ln.startswith("#"))]
    for row in rows[1:]:
        if row:
            out[int(row[0])] = (int(row[1]), float(row[2]))
    return out
