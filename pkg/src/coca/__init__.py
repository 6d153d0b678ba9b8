"""Adapt a frozen vision-language classifier head to an unlabeled target
domain under unknown category shift, using precomputed embedding features."""

__version__ = "0.1.0"

from .clustering import KCandidateSet, kmeans, select_k
from .heads import (
    AdapterHead,
    LinearHead,
    TeacherHead,
    TrainSchedule,
    batch_size_for,
    train_source,
)
from .pipeline import AdaptConfig, run_adaptation, infer, predict_batch
from .prototypes import UNKNOWN, TextualPrototypeSet, assign_prototypes, pseudo_label_all
from .store import DatasetManifest, FeatureStore, read_store, write_store
from .synth import SyntheticConfig, gen_synthetic
from .metrics import EvalReport, evaluate

__all__ = [
    "AdaptConfig",
    "AdapterHead",
    "DatasetManifest",
    "EvalReport",
    "FeatureStore",
    "KCandidateSet",
    "LinearHead",
    "SyntheticConfig",
    "TeacherHead",
    "TextualPrototypeSet",
    "TrainSchedule",
    "UNKNOWN",
    "assign_prototypes",
    "batch_size_for",
    "evaluate",
    "gen_synthetic",
    "infer",
    "kmeans",
    "predict_batch",
    "pseudo_label_all",
    "read_store",
    "run_adaptation",
    "select_k",
    "train_source",
    "write_store",
]
