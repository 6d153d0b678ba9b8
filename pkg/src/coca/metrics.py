"""Open-set evaluation: OS*, UNK, OS, HOS, per-class accuracy, and the
uncertainty histogram split by common vs. private ground truth.

Ground truth uses -1 for target-private samples. OS* averages per-class
accuracy over the common classes actually present in the target (absent
classes are excluded rather than scored 0/0); a sample predicted UNKNOWN
counts as wrong for its common class. When the target has no private
samples at all, UNK and HOS are undefined and OS falls back to OS*.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .prototypes import UNKNOWN
from .store import DatasetManifest


@dataclass
class UncertaintyHistogram:
    bins: int
    edges: np.ndarray
    common_counts: np.ndarray
    private_counts: np.ndarray


@dataclass
class EvalReport:
    os_star: float | None
    unk: float | None
    os: float | None
    hos: float | None
    per_class: dict[int, float]
    n_common: int
    n_private: int
    source_class_count: int
    histogram: UncertaintyHistogram | None = None
    provenance: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        out = {
            "os_star": self.os_star,
            "unk": self.unk,
            "os": self.os,
            "hos": self.hos,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "n_common": self.n_common,
            "n_private": self.n_private,
            "source_class_count": self.source_class_count,
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    @staticmethod
    def csv_header() -> list[str]:
        return ["os_star", "unk", "os", "hos", "n_common", "n_private"]

    def csv_row(self) -> list[str]:
        def fmt(x):
            return "NA" if x is None else f"{x:.6f}"

        return [fmt(self.os_star), fmt(self.unk), fmt(self.os), fmt(self.hos),
                str(self.n_common), str(self.n_private)]


def harmonic(a: float, b: float) -> float:
    if a <= 0.0 or b <= 0.0:
        return 0.0
    return 2.0 * a * b / (a + b)


def evaluate(
    predictions: dict[int, tuple[int, float]],
    ground_truth: dict[int, int],
    manifest: DatasetManifest,
    hist_bins: int = 20,
) -> EvalReport:
    """Score aligned predictions against the ground-truth sidecar."""
    if set(predictions) != set(ground_truth):
        raise ValueError("misaligned ids between predictions and ground truth")
    common = set(manifest.common_classes)
    cs = manifest.source_class_count

    ids = sorted(predictions)
    pred = np.array([predictions[i][0] for i in ids], dtype=np.int64)
    unc = np.array([predictions[i][1] for i in ids], dtype=np.float64)
    truth = np.array([ground_truth[i] for i in ids], dtype=np.int64)
    bad = set(truth[truth >= 0].tolist()) - common
    if bad:
        raise ValueError(f"ground-truth classes outside the common set: {sorted(bad)}")

    is_private = truth == UNKNOWN
    n_private = int(is_private.sum())
    n_common = int(len(ids) - n_private)

    per_class: dict[int, float] = {}
    for c in sorted(common):
        members = truth == c
        if members.any():
            per_class[c] = float(np.mean(pred[members] == c))

    os_star = float(np.mean(list(per_class.values()))) if per_class else None
    unk = float(np.mean(pred[is_private] == UNKNOWN)) if n_private else None

    if n_private == 0:
        os_value, hos = os_star, None
    else:
        os_value = None
        if os_star is not None:
            os_value = (cs * os_star + unk) / (cs + 1)
        hos = harmonic(os_star or 0.0, unk)

    return EvalReport(
        os_star=os_star,
        unk=unk,
        os=os_value,
        hos=hos,
        per_class=per_class,
        n_common=n_common,
        n_private=n_private,
        source_class_count=cs,
        histogram=uncertainty_histogram(unc, is_private, hist_bins),
    )


def uncertainty_histogram(uncertainties: np.ndarray, is_private: np.ndarray, bins: int) -> UncertaintyHistogram:
    if bins < 2:
        raise ValueError("need at least 2 bins")
    u = np.asarray(uncertainties, dtype=np.float64)
    if u.size and (u.min() < 0.0 or u.max() > 1.0):
        raise ValueError("uncertainties must lie in [0, 1]")
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((u * bins).astype(np.int64), bins - 1)
    common_counts = np.bincount(idx[~is_private], minlength=bins)
    private_counts = np.bincount(idx[is_private], minlength=bins)
    return UncertaintyHistogram(bins, edges, common_counts, private_counts)


def uncertainty_export(
    predictions: dict[int, tuple[int, float]],
    ground_truth: dict[int, int],
    bins: int,
) -> list[tuple[float, float, int, int]]:
    """Histogram rows (bin_lo, bin_hi, common_count, private_count)."""
    if set(predictions) != set(ground_truth):
        raise ValueError("misaligned ids between predictions and ground truth")
    ids = sorted(predictions)
    unc = np.array([predictions[i][1] for i in ids], dtype=np.float64)
    is_private = np.array([ground_truth[i] == UNKNOWN for i in ids], dtype=bool)
    h = uncertainty_histogram(unc, is_private, bins)
    return [
        (float(h.edges[b]), float(h.edges[b + 1]), int(h.common_counts[b]), int(h.private_counts[b]))
        for b in range(bins)
    ]


def write_report_json(path, report: EvalReport) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")


def write_report_csv(path, report: EvalReport, header_lines=None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(EvalReport.csv_header())
        writer.writerow(report.csv_row())


def write_histogram_csv(path, rows, header_lines=None) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines or []:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "common_count", "private_count"])
        for lo, hi, c, p in rows:
            writer.writerow([f"{lo:.6f}", f"{hi:.6f}", c, p])
