"""Command-line surface: gen-synth, train-source, select-k, adapt, eval.

Every command is deterministic given --seed (default from COCA_SEED), and
stamps a provenance header (package version, seed, config hash) into its
CSV/JSON outputs. Config files are flat key=value lines with '#' comments;
command-line flags override file values; unknown keys are rejected.

Exit codes: 2 config error, 3 missing validation split, 4 class-count
mismatch, 5 prediction/ground-truth id misalignment.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .benchmark import split_validation
from .clustering import KCandidateSet, select_k
from .heads import TrainSchedule, batch_size_for, load_head, save_head, train_source
from .metrics import (
    evaluate,
    uncertainty_export,
    write_histogram_csv,
    write_report_csv,
    write_report_json,
)
from .pipeline import (
    AdaptConfig,
    effective_tau,
    predict_batch,
    read_predictions_csv,
    run_adaptation,
    write_predictions_csv,
    write_runlog_csv,
    zero_shot_batch,
)
from .prototypes import TextualPrototypeSet
from .store import DatasetManifest, read_store, write_store
from .synth import SyntheticConfig, gen_synthetic, read_truth_csv, write_truth_csv

EXIT_CONFIG = 2
EXIT_NO_VALIDATION = 3
EXIT_CLASS_MISMATCH = 4
EXIT_MISALIGNED = 5

K_METHOD_ALIASES = {
    "silhouette": "silhouette",
    "ch": "calinski_harabasz",
    "calinski_harabasz": "calinski_harabasz",
    "db": "davies_bouldin",
    "davies_bouldin": "davies_bouldin",
}


def fail(code: int, message: str) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(code)


def default_seed() -> int:
    return int(os.environ.get("COCA_SEED", "0"))


def parse_kv_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = line.split("=", 1)
        values[key.strip()] = val.strip()
    return values


def build_dataclass(cls, file_values: dict[str, str], overrides: dict):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in file_values.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        ftype = fields[key].type
        if "bool" in str(ftype):
            kwargs[key] = raw.lower() in ("1", "true", "yes", "on")
        elif "int" in str(ftype):
            kwargs[key] = int(raw)
        elif "float" in str(ftype):
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    for key, val in overrides.items():
        if val is not None:
            kwargs[key] = val
    return cls(**kwargs)


def provenance_lines(seed: int, config_obj) -> list[str]:
    payload = json.dumps(dataclasses.asdict(config_obj), sort_keys=True, default=str)
    digest = hashlib.sha256(payload.encode()).hexdigest()[:16]
    return [
        f"coca {__version__}",
        f"seed={seed}",
        f"config_hash={digest}",
    ]


def provenance_dict(seed: int, config_obj) -> dict:
    payload = json.dumps(dataclasses.asdict(config_obj), sort_keys=True, default=str)
    return {
        "version": __version__,
        "seed": seed,
        "config_hash": hashlib.sha256(payload.encode()).hexdigest()[:16],
    }


def print_table(headers: list[str], rows: list[list], as_csv: bool) -> None:
    if as_csv:
        print(",".join(headers))
        for row in rows:
            print(",".join(str(c) for c in row))
        return
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    print("  ".join(str(h).ljust(w) for h, w in zip(headers, widths)))
    for row in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))


# ---------------------------------------------------------------------------
# gen-synth

def cmd_gen_synth(args) -> int:
    file_values = parse_kv_file(args.config) if args.config else {}
    try:
        cfg = build_dataclass(SyntheticConfig, file_values, {"seed": args.seed})
        cfg.validate()
        ds = gen_synthetic(cfg)
    except (ValueError, TypeError) as exc:
        raise fail(EXIT_CONFIG, str(exc))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_store(out / "source.feat", ds.source)
    write_store(out / "target.feat", ds.target)
    write_store(out / "text.feat", ds.text)
    ds.manifest.provenance = provenance_dict(cfg.seed, cfg)
    ds.manifest.save(out / "manifest.json")
    write_truth_csv(out / "target_truth.csv", ds.target_truth,
                    provenance_lines(cfg.seed, cfg))
    print_table(
        ["file", "rows", "dim", "note"],
        [
            ["source.feat", ds.source.n, ds.source.dim, f"{cfg.shots_per_class} shots/class, labeled"],
            ["target.feat", ds.target.n, ds.target.dim, f"regime {ds.manifest.regime}, unlabeled"],
            ["text.feat", ds.text.n, ds.text.dim, f"{ds.text.n} textual prototypes"],
            ["manifest.json", "-", "-", f"{len(ds.manifest.common_classes)} common classes"],
            ["target_truth.csv", ds.target.n, "-", "ground-truth sidecar (never read by adapt)"],
        ],
        args.csv,
    )
    return 0


# ---------------------------------------------------------------------------
# train-source

def cmd_train_source(args) -> int:
    file_values = parse_kv_file(args.config) if args.config else {}
    try:
        schedule = build_dataclass(TrainSchedule, file_values, {})
    except (ValueError, TypeError) as exc:
        raise fail(EXIT_CONFIG, str(exc))
    source = read_store(args.source)
    text = read_store(args.text)
    manifest = DatasetManifest.load(args.manifest)
    if source.labels is None:
        raise fail(EXIT_CONFIG, "source store carries no labels")
    textual = TextualPrototypeSet(text.features, manifest.source_class_names())

    # labels in the store are global class ids; heads use source-class positions
    position = {c: i for i, c in enumerate(manifest.source_classes)}
    try:
        y = np.array([position[int(c)] for c in source.labels], dtype=np.int64)
    except KeyError as exc:
        raise fail(EXIT_CONFIG, f"source label {exc} not in manifest source classes")

    x = source.features
    try:
        val = split_validation(y, per_class=args.val_shots)
    except ValueError as exc:
        raise fail(EXIT_NO_VALIDATION, str(exc))
    batch = batch_size_for(textual.num_classes)
    print(f"training {args.model} head: batch size {batch}"
          + (f" ({batch // 2} image + {batch - batch // 2} text rows per step)"
             if args.model == "cross_modal" else ""))
    try:
        result = train_source(x[~val], y[~val], x[val], y[val], textual,
                              args.model, schedule, batch, seed=args.seed)
    except ValueError as exc:
        if "validation split" in str(exc):
            raise fail(EXIT_NO_VALIDATION, str(exc))
        raise fail(EXIT_CONFIG, str(exc))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_head(out, result.head, manifest.source_class_names())
    curve_path = out.with_name(out.stem + "_valcurve.csv")
    with open(curve_path, "w") as fh:
        for line in provenance_lines(args.seed, schedule):
            fh.write(f"# {line}\n")
        fh.write("iteration,val_accuracy,lr\n")
        for it, acc, lr in result.history:
            fh.write(f"{it},{acc:.6f},{lr:.10g}\n")
    print_table(
        ["best_iteration", "best_accuracy", "stopped_at", "batch_size"],
        [[result.best_iteration, f"{result.best_accuracy:.4f}", result.stopped_iteration,
          result.batch_size]],
        args.csv,
    )
    return 0


# ---------------------------------------------------------------------------
# select-k

def cmd_select_k(args) -> int:
    target = read_store(args.target)
    method = K_METHOD_ALIASES[args.method]
    candidates = KCandidateSet.from_source_classes(args.cs)
    try:
        sel = select_k(target.features, candidates, method=method, seed=args.seed)
    except ValueError as exc:
        raise fail(EXIT_CONFIG, str(exc))
    direction = "lower is better" if method == "davies_bouldin" else "higher is better"
    pick = "argmin" if method == "davies_bouldin" else "argmax"
    print(f"method: {method} ({direction}; chosen K = {pick} score)")
    rows = [
        [k, "n/a" if s is None else f"{s:.6f}", "*" if k == sel.k else ""]
        for k, s in zip(sel.candidates, sel.scores)
    ]
    print_table(["candidate_k", "score", "chosen"], rows, args.csv)
    print(f"chosen K: {sel.k}")
    return 0


# ---------------------------------------------------------------------------
# adapt

def _adapt_point(point: dict) -> int:
    args = argparse.Namespace(**point)
    target = read_store(args.target)
    text = read_store(args.text)
    head, class_names = load_head(args.head)
    manifest = DatasetManifest.load(args.manifest) if args.manifest else None
    if head.num_classes != text.n:
        raise fail(EXIT_CLASS_MISMATCH,
                   f"head expects {head.num_classes} classes, text store has {text.n}")
    textual = TextualPrototypeSet(text.features, class_names)

    file_values = parse_kv_file(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "tau": args.tau,
        "mask_ratio": args.mask_ratio,
        "k_method": K_METHOD_ALIASES[args.k_method] if args.k_method else None,
        "forced_k": args.force_k,
        "max_epochs": args.epochs,
        "lr": args.lr,
        "encoder": args.encoder,
    }
    if args.no_mieci:
        overrides["use_mask_loss"] = False
    try:
        config = build_dataclass(AdaptConfig, file_values, overrides)
        config.validate()
    except (ValueError, TypeError) as exc:
        raise fail(EXIT_CONFIG, str(exc))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = provenance_lines(config.seed, config)
    tau = effective_tau(config.tau, manifest) if manifest else config.tau
    if tau != config.tau:
        print(f"partial-shift manifest: unknown channel disabled (tau {config.tau} -> {tau})")

    if args.zero_shot:
        from .clustering import kmeans

        if config.forced_k is not None:
            model = kmeans(target.features, config.forced_k, seed=config.seed)
            k = config.forced_k
        else:
            sel = select_k(target.features, KCandidateSet.from_source_classes(textual.num_classes),
                           method=config.k_method, seed=config.seed)
            model, k = sel.model, sel.k
        from .prototypes import assign_prototypes

        assignment = assign_prototypes(textual, model)
        preds = zero_shot_batch(target.features, textual, assignment, model)
        write_predictions_csv(out / "predictions.csv", preds, header)
        write_runlog_csv(out / "runlog.csv", [], header + [f"zero_shot k={k}"])
        print(f"zero-shot pathway: K={k}, wrote {out / 'predictions.csv'}")
        return 0

    try:
        result = run_adaptation(target, textual, head, config)
    except ValueError as exc:
        if "class-count mismatch" in str(exc):
            raise fail(EXIT_CLASS_MISMATCH, str(exc))
        raise fail(EXIT_CONFIG, str(exc))
    save_head(out / "adapted_head.bin", result.head, class_names)
    write_runlog_csv(out / "runlog.csv", result.epochs, header + [f"k={result.k}"])
    preds = predict_batch(target.features, result.head, tau)
    write_predictions_csv(out / "predictions.csv", preds, header)
    n_unknown = sum(1 for p in preds if p.is_unknown)
    print(f"adapted: K={result.k}, {len(preds)} predictions "
          f"({n_unknown} unknown), artifacts in {out}")
    return 0


def cmd_adapt(args) -> int:
    base = vars(args).copy()
    base.pop("func", None)
    sweep = base.pop("sweep", None)
    jobs = base.pop("jobs", 1)
    if not sweep:
        return _adapt_point(base)

    key, _, raw_values = sweep.partition("=")
    if not raw_values:
        raise fail(EXIT_CONFIG, "sweep must look like key=v1,v2,...")
    points = []
    for raw in raw_values.split(","):
        point = base.copy()
        if key in ("tau", "mask_ratio", "lr"):
            point[key] = float(raw)
        elif key in ("force_k", "epochs", "seed"):
            point[key] = int(raw)
        else:
            raise fail(EXIT_CONFIG, f"unsweepable key {key!r}")
        point["out"] = f"{base['out']}-{key}{raw}"
        points.append(point)
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            codes = list(pool.map(_adapt_point, points))
    else:
        codes = [_adapt_point(p) for p in points]
    return max(codes)


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args) -> int:
    predictions = read_predictions_csv(args.pred)
    truth = read_truth_csv(args.truth)
    manifest = DatasetManifest.load(args.manifest)
    try:
        report = evaluate(predictions, truth, manifest, hist_bins=args.hist_bins)
        hist_rows = uncertainty_export(predictions, truth, args.hist_bins)
    except ValueError as exc:
        if "misaligned" in str(exc):
            raise fail(EXIT_MISALIGNED, str(exc))
        raise fail(EXIT_CONFIG, str(exc))
    report.provenance = provenance_dict(args.seed, manifest)

    def pct(x):
        return "N/A" if x is None else f"{100.0 * x:.1f}"

    print_table(
        ["OS*", "UNK", "OS", "HOS", "n_common", "n_private"],
        [[pct(report.os_star), pct(report.unk), pct(report.os), pct(report.hos),
          report.n_common, report.n_private]],
        args.csv,
    )
    out = Path(args.out) if args.out else Path(args.pred).parent
    out.mkdir(parents=True, exist_ok=True)
    header = provenance_lines(args.seed, manifest)
    write_report_json(out / "report.json", report)
    write_report_csv(out / "report_row.csv", report, header)
    write_histogram_csv(out / "histogram.csv", hist_rows, header)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coca",
        description="Adapt a frozen vision-language classifier head to an "
                    "unlabeled target domain under unknown category shift.",
    )
    parser.add_argument("--version", action="version", version=f"coca {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic benchmark")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train-source", help="train the source classifier head")
    p.add_argument("--source", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True, choices=["linear_probe", "adapter", "cross_modal"])
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value schedule overrides")
    p.add_argument("--val-shots", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("select-k", help="score the cluster-count candidates")
    p.add_argument("--target", required=True)
    p.add_argument("--cs", type=int, required=True, help="source class count")
    p.add_argument("--method", default="silhouette", choices=sorted(K_METHOD_ALIASES))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_select_k)

    p = sub.add_parser("adapt", help="adapt a source head to a target store")
    p.add_argument("--target", required=True)
    p.add_argument("--head", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value adaptation config")
    p.add_argument("--no-mieci", action="store_true", help="disable the mask consistency loss")
    p.add_argument("--zero-shot", action="store_true", help="prototype rule only, no head training")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--mask-ratio", type=float, default=None)
    p.add_argument("--k-method", default=None, choices=sorted(K_METHOD_ALIASES))
    p.add_argument("--force-k", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--encoder", default=None, choices=["toy", "external"])
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sweep", help="key=v1,v2,... run one adaptation per value")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="score predictions against the sidecar")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--hist-bins", type=int, default=20)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = default_seed()
    try:
        return args.func(args)
    except SystemExit:
        raise
    except FileNotFoundError as exc:
        raise fail(EXIT_CONFIG, str(exc))


if __name__ == "__main__":
    sys.exit(main())
