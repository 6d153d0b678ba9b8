"""Acceptance suite: one test per exit criterion, each printing a PASS line.

The end-to-end criteria share one session-scoped benchmark fixture (5 seeds
of the default synthetic open-partial dataset) so the whole suite stays
inside its wall-clock budget. Run with `pytest tests/test_acceptance.py -v -s`
to see the per-criterion lines.
"""

import itertools
import time

import numpy as np
import pytest

from coca.benchmark import (
    DEFAULT_SEEDS,
    adapt,
    evaluate_adapted,
    evaluate_source_only,
    evaluate_zero_shot,
    prepare_instance,
    run_variants,
)
from coca.clustering import (
    KCandidateSet,
    calinski_harabasz,
    davies_bouldin,
    kmeans,
    select_k,
    silhouette_mean,
)
from coca.heads import (
    AdapterHead,
    LinearHead,
    TeacherHead,
    TrainSchedule,
    batch_size_for,
    ema_update,
    image_loss,
    lr_at,
    soft_consistency_loss,
    text_loss,
)
from coca.linalg import l2_normalize_rows
from coca.metrics import evaluate, harmonic
from coca.prototypes import UNKNOWN, TextualPrototypeSet
from coca.store import (
    BadMagicError,
    DatasetManifest,
    FeatureStore,
    SizeMismatchError,
    TruncatedPayloadError,
    read_store,
    write_store,
)

from test_clustering import (
    model_from_assignments,
    oracle_calinski_harabasz,
    oracle_davies_bouldin,
    oracle_silhouette,
    random_instance,
)
from test_heads import finite_difference, make_textual, relative_error, unit_rows


def report(name):
    print(f"[ACCEPTANCE] {name}: PASS", flush=True)


# ---------------------------------------------------------------------------
# clustering criteria


def test_clustering_validity_oracles():
    start = time.perf_counter()
    for seed in range(20):
        x, assign = random_instance(seed, max_points=32)
        model = model_from_assignments(x, assign)
        assert silhouette_mean(x, model) == pytest.approx(
            oracle_silhouette(x, assign), abs=1e-9
        )
        assert calinski_harabasz(x, model) == pytest.approx(
            oracle_calinski_harabasz(x, assign), rel=1e-9
        )
        assert davies_bouldin(x, model) == pytest.approx(
            oracle_davies_bouldin(x, assign), abs=1e-9
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    report(f"clustering oracle (20 instances, {elapsed:.2f}s)")


def test_single_clustering_invocation(monkeypatch):
    import coca.clustering as cmod
    import coca.pipeline as pmod
    from coca.pipeline import AdaptConfig, run_adaptation
    from coca.synth import SyntheticConfig, gen_synthetic

    calls = []
    original = cmod.kmeans

    def counting(*args, **kwargs):
        calls.append(1)
        return original(*args, **kwargs)

    monkeypatch.setattr(cmod, "kmeans", counting)
    monkeypatch.setattr(pmod, "kmeans", counting)

    ds = gen_synthetic(SyntheticConfig(
        dim=12, common_count=2, source_private_count=1, target_private_count=1,
        shots_per_class=4, samples_per_class=30, seed=0,
    ))
    textual = TextualPrototypeSet(ds.text.features, ds.manifest.source_class_names())
    head = LinearHead.init(textual.num_classes, 12, seed=0)
    result = run_adaptation(ds.target, textual, head,
                            AdaptConfig(seed=0, max_epochs=3, grid_size=4))
    sweep_size = len(KCandidateSet.from_source_classes(textual.num_classes).candidates)
    assert len(calls) == sweep_size  # no kmeans runs beyond the selection sweep
    assert result.kmeans_calls_sweep == sweep_size
    assert result.post_sweep_clusterings == 1  # the reused winning model
    report("single post-sweep clustering (counter exact)")


def test_k_recovery_six_clusters():
    start = time.perf_counter()
    rng_spread = 0.05
    hits = 0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        centers = l2_normalize_rows(rng.standard_normal((6, 12)))
        pts = np.vstack(
            [c + rng_spread * rng.standard_normal((50, 12)) for c in centers]
        )
        pts = l2_normalize_rows(pts)
        sel = select_k(pts, KCandidateSet.from_source_classes(6), "silhouette", seed=seed)
        hits += sel.k == 6
    elapsed = time.perf_counter() - start
    assert hits >= 4
    assert elapsed < 30.0
    report(f"K recovery ({hits}/5 seeds, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# gradient criterion


def test_gradient_checks_all_losses_both_heads():
    start = time.perf_counter()
    for seed in range(10):
        rng = np.random.default_rng(seed)
        textual = make_textual(rng, 3, 8)
        heads = {
            "linear": LinearHead.init(3, 8, seed=seed),
            "adapter": AdapterHead.init(textual, seed=seed),
            # soft temperature keeps the softmax away from the clamp so the
            # full adapter chain rule is exercised, not just the zero branch
            "adapter_soft": AdapterHead.init(textual, seed=seed, logit_scale=12.0),
        }
        z = unit_rows(rng, 5, 8)
        targets = np.eye(3)[rng.integers(0, 3, size=5)]
        z_masked = l2_normalize_rows(z + 0.15 * rng.standard_normal((5, 8)))
        teacher = TeacherHead.from_student(LinearHead.init(3, 8, seed=seed + 1), 0.9)
        for head in heads.values():
            _, g = image_loss(head, z, targets)
            n = finite_difference(lambda: image_loss(head, z, targets)[0], head)
            assert relative_error(g, n) < 1e-6
            _, g = text_loss(head, textual)
            n = finite_difference(lambda: text_loss(head, textual)[0], head)
            assert relative_error(g, n) < 1e-6
            _, g = soft_consistency_loss(teacher.head, head, z, z_masked)
            n = finite_difference(
                lambda: soft_consistency_loss(teacher.head, head, z, z_masked)[0], head
            )
            assert relative_error(g, n) < 1e-6
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0
    report(f"gradient checks (10 batches x 3 losses x both head kinds, {elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# schedule / EMA / batch-size criterion


def test_schedule_ema_batch_table_exact():
    s = TrainSchedule(base_lr=0.001)
    assert lr_at(s, 0) == pytest.approx(1e-5, abs=0)
    assert lr_at(s, 50) == pytest.approx(0.001, abs=0)
    s2 = TrainSchedule(base_lr=0.37)
    assert lr_at(s2, 50) == 0.37

    # bitwise replay of a seeded trajectory through the EMA update
    rng = np.random.default_rng(0)
    student = LinearHead.init(4, 6, seed=0)
    teacher = TeacherHead.from_student(student, alpha=0.97)
    mirror = {k: v.copy() for k, v in teacher.head.params().items()}
    for _ in range(25):
        student.weight += rng.standard_normal(student.weight.shape)
        student.bias += rng.standard_normal(student.bias.shape)
        teacher.update(student)
        for k, v in student.params().items():
            mirror[k] *= 0.97
            mirror[k] += (1.0 - 0.97) * v
    for k, v in teacher.head.params().items():
        assert np.array_equal(mirror[k], v)

    for cs, expected in [(4, 8), (7, 8), (8, 16), (15, 16), (16, 32), (31, 32),
                         (32, 64), (200, 64)]:
        assert batch_size_for(cs) == expected
    with pytest.raises(ValueError):
        batch_size_for(3)
    report("schedule endpoints, bitwise EMA replay, batch-size table")


# ---------------------------------------------------------------------------
# metric criteria


def opda_manifest(cs=9, common=5, tp=3):
    n = cs + tp
    return DatasetManifest(
        [f"c{i}" for i in range(n)],
        list(range(cs)),
        list(range(common)) + list(range(cs, n)),
        "OPDA",
    )


def test_metric_formula_values():
    m = opda_manifest()
    truth = {i: c for i, c in enumerate([0] * 5 + [1] * 5 + [-1] * 2)}
    pred_labels = [0] * 5 + [1, 1, 1, 1, 0] + [UNKNOWN, 3]
    preds = {i: (l, 0.0) for i, l in enumerate(pred_labels)}
    r = evaluate(preds, truth, m)
    assert r.os_star == pytest.approx(0.9, abs=1e-12)
    assert r.unk == pytest.approx(0.5, abs=1e-12)
    assert r.os == pytest.approx(0.86, abs=1e-9)
    assert harmonic(0.8, 0.6) == pytest.approx(0.685714285714286, abs=1e-9)
    report("metric formulas (OS 0.86, HOS 0.685714...)")


def test_harmonic_mean_true_bounds():
    rng = np.random.default_rng(0)
    pairs = rng.uniform(0.01, 1.0, size=(1000, 2))
    for a, b in pairs:
        h = harmonic(a, b)
        lo, hi = min(a, b), max(a, b)
        assert lo - 1e-12 <= h <= 2 * lo + 1e-12
        assert h <= hi + 1e-12
    report("harmonic-mean bounds min <= hos <= 2*min over 1000 pairs")


@pytest.mark.xfail(
    strict=True,
    reason="hos <= min(os_star, unk) is not a property of harmonic means: "
    "hos exceeds the smaller rate whenever the two rates differ (e.g. "
    "hos(0.8, 0.6) = 0.6857 > 0.6). The true bounds are asserted in "
    "test_harmonic_mean_true_bounds; see the decisions ledger.",
)
def test_harmonic_mean_bound_as_stated():
    rng = np.random.default_rng(0)
    pairs = rng.uniform(0.01, 1.0, size=(1000, 2))
    for a, b in pairs:
        assert harmonic(a, b) <= min(a, b) + 1e-12


# ---------------------------------------------------------------------------
# end-to-end criteria (shared fixture)


@pytest.fixture(scope="session")
def bench():
    start = time.perf_counter()
    instances = [prepare_instance(seed) for seed in DEFAULT_SEEDS]
    variants = run_variants(instances)

    default_runs = [adapt(inst) for inst in instances]
    tau_medians = {
        tau: float(np.median([
            evaluate_adapted(inst, run, tau).hos
            for inst, run in zip(instances, default_runs)
        ]))
        for tau in (0.4, 0.5, 0.6)
    }
    ratio_medians = {0.25: tau_medians[0.5]}
    for v in (0.15, 0.35):
        ratio_medians[v] = float(np.median([
            evaluate_adapted(inst, adapt(inst, mask_ratio=v), 0.5).hos
            for inst in instances
        ]))
    k_medians = {}
    for k in (2, 3, 5, 10, 15):
        k_medians[k] = float(np.median([
            evaluate_adapted(inst, adapt(inst, forced_k=k), 0.5).hos
            for inst in instances
        ]))
    elapsed = time.perf_counter() - start
    return {
        "variants": variants,
        "tau_medians": tau_medians,
        "ratio_medians": ratio_medians,
        "k_medians": k_medians,
        "elapsed": elapsed,
    }


def test_ablation_ordering_and_source_gap(bench):
    meds = bench["variants"].medians()
    assert meds["coca"] >= meds["no_mask"] >= meds["zero_shot"]
    assert meds["coca"] - meds["source_only"] >= 0.10
    assert bench["elapsed"] < 300.0
    report(
        "ablation ordering: coca {coca:.3f} >= no-mask {no_mask:.3f} >= "
        "zero-shot {zero_shot:.3f}; gap over source-only {gap:.1f} pts; "
        "benchmark wall time {t:.0f}s".format(
            gap=100 * (meds["coca"] - meds["source_only"]), t=bench["elapsed"], **meds
        )
    )


def test_sensitivity_flatness(bench):
    base = bench["tau_medians"][0.5]
    for tau, med in bench["tau_medians"].items():
        assert abs(med - base) < 0.05, f"tau={tau} moved median by {abs(med - base):.3f}"
    for v, med in bench["ratio_medians"].items():
        assert abs(med - base) < 0.05, f"v={v} moved median by {abs(med - base):.3f}"
    spread_tau = max(bench["tau_medians"].values()) - min(bench["tau_medians"].values())
    spread_v = max(bench["ratio_medians"].values()) - min(bench["ratio_medians"].values())
    report(f"sensitivity flatness (tau spread {100*spread_tau:.1f} pts, "
           f"mask-ratio spread {100*spread_v:.1f} pts, both < 5)")


def test_k_robustness(bench):
    base = bench["tau_medians"][0.5]
    for k, med in bench["k_medians"].items():
        assert abs(med - base) < 0.08, f"forced K={k} moved median by {abs(med - base):.3f}"
    worst = max(abs(m - base) for m in bench["k_medians"].values())
    report(f"K robustness over {{2,3,5,10,15}} (worst median shift {100*worst:.1f} pts < 8)")


# ---------------------------------------------------------------------------
# format criterion


def test_store_format_robustness(tmp_path):
    rng = np.random.default_rng(0)
    store = FeatureStore.from_features(rng.standard_normal((12, 6)),
                                       labels=list(range(6)) * 2)
    store.add_masked(2, 7, store.payload[2])
    path = tmp_path / "a.feat"
    write_store(path, store)
    round1 = read_store(path)
    path2 = tmp_path / "b.feat"
    write_store(path2, round1)
    assert path.read_bytes() == path2.read_bytes()

    blob = path.read_bytes()
    corrupted = tmp_path / "bad_magic.feat"
    corrupted.write_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(BadMagicError):
        read_store(corrupted)

    truncated = tmp_path / "short.feat"
    truncated.write_bytes(blob[:-3])
    with pytest.raises(TruncatedPayloadError):
        read_store(truncated)

    padded = tmp_path / "long.feat"
    padded.write_bytes(blob + b"\x01\x02")
    with pytest.raises(SizeMismatchError):
        read_store(padded)

    assert not issubclass(BadMagicError, TruncatedPayloadError)
    assert not issubclass(TruncatedPayloadError, SizeMismatchError)
    report("store format: bitwise round trip, three distinct corruption errors")
