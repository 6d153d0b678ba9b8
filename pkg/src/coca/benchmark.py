"""Shared harness for the default synthetic open-partial benchmark.

Used by the experiment scripts and the acceptance suite so both run the
exact same pipeline variants: the full method, the no-mask-consistency
ablation, the prototype-rule-only pathway, and the thresholded source-only
baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .heads import TrainSchedule, batch_size_for, train_source
from .metrics import EvalReport, evaluate
from .pipeline import (
    AdaptConfig,
    AdaptResult,
    predict_batch,
    run_adaptation,
    zero_shot_batch,
)
from .prototypes import TextualPrototypeSet
from .synth import SyntheticConfig, SyntheticDataset, gen_synthetic

DEFAULT_SEEDS = (0, 1, 2, 3, 4)


def default_benchmark_config(seed: int) -> SyntheticConfig:
    return SyntheticConfig(seed=seed)


def split_validation(labels: np.ndarray, per_class: int = 4) -> np.ndarray:
    """Boolean mask holding out the last `per_class` shots of each class."""
    if per_class < 1:
        raise ValueError("validation split empty")
    val = np.zeros(labels.shape[0], dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if idx.size < 2:
            raise ValueError("validation split empty")
        val[idx[-min(per_class, idx.size - 1):]] = True
    return val


@dataclass
class BenchmarkInstance:
    dataset: SyntheticDataset
    textual: TextualPrototypeSet
    source_head: object
    seed: int

    @property
    def truth(self) -> dict[int, int]:
        return {i: int(c) for i, c in enumerate(self.dataset.target_truth)}


def prepare_instance(seed: int, cfg: SyntheticConfig | None = None,
                     model_kind: str = "cross_modal") -> BenchmarkInstance:
    cfg = replace(cfg, seed=seed) if cfg is not None else default_benchmark_config(seed)
    ds = gen_synthetic(cfg)
    textual = TextualPrototypeSet(ds.text.features, ds.manifest.source_class_names())
    x, y = ds.source.features, ds.source.labels.astype(np.int64)
    val = split_validation(y)
    result = train_source(
        x[~val], y[~val], x[val], y[val], textual, model_kind,
        TrainSchedule(), batch_size_for(textual.num_classes), seed=seed,
    )
    return BenchmarkInstance(ds, textual, result.head, seed)


def score(inst: BenchmarkInstance, predictions) -> EvalReport:
    preds = {i: (p.label, p.uncertainty) for i, p in enumerate(predictions)}
    return evaluate(preds, inst.truth, inst.dataset.manifest)


def adapt(inst: BenchmarkInstance, config: AdaptConfig | None = None, **overrides) -> AdaptResult:
    cfg = config if config is not None else AdaptConfig(seed=inst.seed)
    if overrides:
        cfg = replace(cfg, **overrides)
    return run_adaptation(inst.dataset.target, inst.textual, inst.source_head, cfg)


def evaluate_adapted(inst: BenchmarkInstance, result: AdaptResult, tau: float = 0.5) -> EvalReport:
    return score(inst, predict_batch(inst.dataset.target.features, result.head, tau))


def evaluate_zero_shot(inst: BenchmarkInstance, result: AdaptResult) -> EvalReport:
    preds = zero_shot_batch(
        inst.dataset.target.features, inst.textual, result.assignment, result.cluster_model
    )
    return score(inst, preds)


def evaluate_source_only(inst: BenchmarkInstance, tau: float = 0.5) -> EvalReport:
    return score(inst, predict_batch(inst.dataset.target.features, inst.source_head, tau))


@dataclass
class VariantResults:
    """HOS per seed for each pipeline variant."""

    coca: list[float] = field(default_factory=list)
    no_mask: list[float] = field(default_factory=list)
    zero_shot: list[float] = field(default_factory=list)
    source_only: list[float] = field(default_factory=list)

    def medians(self) -> dict[str, float]:
        return {
            name: float(np.median(vals))
            for name, vals in (
                ("coca", self.coca),
                ("no_mask", self.no_mask),
                ("zero_shot", self.zero_shot),
                ("source_only", self.source_only),
            )
        }


def run_variants(instances: list[BenchmarkInstance], tau: float = 0.5) -> VariantResults:
    out = VariantResults()
    for inst in instances:
        full = adapt(inst)
        out.coca.append(evaluate_adapted(inst, full, tau).hos)
        bare = adapt(inst, use_mask_loss=False)
        out.no_mask.append(evaluate_adapted(inst, bare, tau).hos)
        out.zero_shot.append(evaluate_zero_shot(inst, full).hos)
        out.source_only.append(evaluate_source_only(inst, tau).hos)
    return out
