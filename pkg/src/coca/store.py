"""On-disk feature store and dataset manifest.

Store layout (all little-endian):

    magic    8 bytes  b"COCAFEAT"
    version  u32      currently 1
    N        u64      row count
    D        u64      feature dimension
    flags    u32      bit 0: label block present, bit 1: masked block present
    payload  N*D f32  row-major features
    labels   N i32    optional; -1 = unlabeled / withheld ground truth
    masked   u64 count, then count * (row u64, mask_seed u64, D f32)

Features are float32 on disk (matches typical embedding dumps) and promoted
to float64 in memory. The raw float32 payload is kept verbatim so a
read-write cycle is byte-exact; the float64 working copy is re-normalized.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .linalg import l2_normalize_rows

MAGIC = b"COCAFEAT"
VERSION = 1
_FLAG_LABELS = 1
_FLAG_MASKED = 2
_HEADER = struct.Struct("<8sIQQI")

NORM_TOLERANCE = 1e-5

REGIMES = ("CDA", "PDA", "OSDA", "OPDA")
DEFAULT_PROMPT = "a photo of a {CLS}"


class StoreFormatError(ValueError):
    pass


class BadMagicError(StoreFormatError):
    pass


class UnsupportedVersionError(StoreFormatError):
    pass


class TruncatedPayloadError(StoreFormatError):
    pass


class SizeMismatchError(StoreFormatError):
    pass


class FeatureStore:
    """In-memory image of one store file."""

    def __init__(self, payload: np.ndarray, labels=None, masked=None):
        payload = np.asarray(payload, dtype=np.float32)
        if payload.ndim != 2:
            raise ValueError("payload must be a 2-D matrix")
        self.payload = np.ascontiguousarray(payload)
        self.labels = None if labels is None else np.asarray(labels, dtype=np.int32)
        if self.labels is not None and self.labels.shape != (payload.shape[0],):
            raise ValueError("label block length must equal row count")
        self.masked: dict[tuple[int, int], np.ndarray] = dict(masked or {})
        self._features: np.ndarray | None = None

    @classmethod
    def from_features(cls, features: np.ndarray, labels=None) -> "FeatureStore":
        """Build a store from fresh float64 features, normalizing on ingest."""
        rows = np.asarray(features, dtype=np.float64)
        if rows.size:
            rows = l2_normalize_rows(rows)
        return cls(rows.astype(np.float32), labels=labels)

    @property
    def n(self) -> int:
        return self.payload.shape[0]

    @property
    def dim(self) -> int:
        return self.payload.shape[1]

    @property
    def features(self) -> np.ndarray:
        """Float64 working copy, re-normalized to exact unit rows."""
        if self._features is None:
            f = self.payload.astype(np.float64)
            if f.size:
                f = l2_normalize_rows(f)
            self._features = f
        return self._features

    def add_masked(self, row: int, mask_seed: int, feature: np.ndarray) -> None:
        vec = np.asarray(feature, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError("masked feature dimension mismatch")
        self.masked[(int(row), int(mask_seed))] = vec

    def masked_feature(self, row: int, mask_seed: int) -> np.ndarray:
        try:
            raw = self.masked[(int(row), int(mask_seed))]
        except KeyError:
            raise KeyError("masked feature not ingested") from None
        from .linalg import l2_normalize

        return l2_normalize(raw.astype(np.float64))

    def mask_seeds_for_row(self, row: int) -> list[int]:
        return sorted(seed for (r, seed) in self.masked if r == int(row))


def _check_norms(rows: np.ndarray, what: str) -> None:
    if rows.size == 0:
        return
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    if np.any(np.abs(norms - 1.0) > NORM_TOLERANCE):
        raise ValueError(f"{what} rows not unit-normalized")


def write_store(path, store: FeatureStore) -> None:
    flags = 0
    if store.labels is not None:
        flags |= _FLAG_LABELS
    if store.masked:
        flags |= _FLAG_MASKED
    chunks = [_HEADER.pack(MAGIC, VERSION, store.n, store.dim, flags)]
    chunks.append(store.payload.astype("<f4").tobytes())
    if store.labels is not None:
        chunks.append(store.labels.astype("<i4").tobytes())
    if store.masked:
        chunks.append(struct.pack("<Q", len(store.masked)))
        for (row, seed) in sorted(store.masked):
            chunks.append(struct.pack("<QQ", row, seed))
            chunks.append(store.masked[(row, seed)].astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def read_store(path) -> FeatureStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC):
        raise TruncatedPayloadError("truncated payload")
    if blob[: len(MAGIC)] != MAGIC:
        raise BadMagicError("bad magic")
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError("truncated payload")
    _, version, n, dim, flags = _HEADER.unpack_from(blob, 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}")
    cursor = _HEADER.size

    def take(nbytes: int) -> bytes:
        nonlocal cursor
        end = cursor + nbytes
        if end > len(blob):
            raise TruncatedPayloadError("truncated payload")
        piece = blob[cursor:end]
        cursor = end
        return piece

    payload = np.frombuffer(take(n * dim * 4), dtype="<f4").reshape(n, dim).copy()
    labels = None
    if flags & _FLAG_LABELS:
        labels = np.frombuffer(take(n * 4), dtype="<i4").copy()
    masked = {}
    if flags & _FLAG_MASKED:
        (count,) = struct.unpack("<Q", take(8))
        for _ in range(count):
            row, seed = struct.unpack("<QQ", take(16))
            vec = np.frombuffer(take(dim * 4), dtype="<f4").copy()
            masked[(row, seed)] = vec
    if cursor != len(blob):
        raise SizeMismatchError("size mismatch: trailing bytes after payload")

    _check_norms(payload, "feature")
    if masked:
        _check_norms(np.stack(list(masked.values())), "masked feature")
    return FeatureStore(payload, labels=labels, masked=masked)


def split_regime(common: int, source_private: int, target_private: int, regime: str):
    """Index sets (source, target, common) for a category-shift regime.

    Classes are laid out common-first, then source-private, then
    target-private, so source classes always occupy [0, |Cs|).
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if common < 1:
        raise ValueError("impossible regime: no common classes")
    if source_private < 0 or target_private < 0:
        raise ValueError("impossible regime: negative class count")
    ok = {
        "CDA": source_private == 0 and target_private == 0,
        "PDA": source_private > 0 and target_private == 0,
        "OSDA": source_private == 0 and target_private > 0,
        "OPDA": source_private > 0 and target_private > 0,
    }[regime]
    if not ok:
        raise ValueError(f"impossible regime: counts do not match {regime}")
    source = list(range(common + source_private))
    target = list(range(common)) + list(
        range(common + source_private, common + source_private + target_private)
    )
    return source, target, list(range(common))


def regime_for_counts(source_private: int, target_private: int) -> str:
    if source_private > 0 and target_private > 0:
        return "OPDA"
    if source_private > 0:
        return "PDA"
    if target_private > 0:
        return "OSDA"
    return "CDA"


@dataclass
class DatasetManifest:
    class_names: list[str]
    source_classes: list[int]
    target_classes: list[int]
    regime: str
    prompt_template: str = DEFAULT_PROMPT
    common_classes: list[int] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        derived = sorted(set(self.source_classes) & set(self.target_classes))
        if self.common_classes and list(self.common_classes) != derived:
            raise ValueError("common classes must equal source/target intersection")
        self.common_classes = derived
        src_private = len(self.source_classes) - len(derived)
        tgt_private = len(self.target_classes) - len(derived)
        if self.regime != regime_for_counts(src_private, tgt_private):
            raise ValueError(f"regime {self.regime} inconsistent with class sets")
        if self.prompt_template.count("{CLS}") != 1:
            raise ValueError("prompt template must contain {CLS} exactly once")

    @property
    def source_class_count(self) -> int:
        return len(self.source_classes)

    def source_class_names(self) -> list[str]:
        return [self.class_names[i] for i in self.source_classes]

    def to_json_dict(self) -> dict:
        out = {
            "class_names": list(self.class_names),
            "source_classes": list(map(int, self.source_classes)),
            "target_classes": list(map(int, self.target_classes)),
            "common_classes": list(map(int, self.common_classes)),
            "regime": self.regime,
            "prompt_template": self.prompt_template,
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(
            class_names=raw["class_names"],
            source_classes=raw["source_classes"],
            target_classes=raw["target_classes"],
            regime=raw["regime"],
            prompt_template=raw.get("prompt_template", DEFAULT_PROMPT),
            common_classes=raw.get("common_classes", []),
            provenance=raw.get("provenance", {}),
        )
