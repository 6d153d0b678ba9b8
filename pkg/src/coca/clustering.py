"""K-means clustering, cluster-validity scoring, and automatic selection of
the cluster count from the candidate list [|Cs|/3, |Cs|/2, |Cs|, 2|Cs|, 3|Cs|].

Distances are Euclidean; on unit-normalized features this is monotone in
cosine distance. All validity indices recompute cluster means from the
assignments so they also apply to models whose centroids were not produced
by a converged run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

K_METHODS = ("silhouette", "calinski_harabasz", "davies_bouldin")
CH_SENTINEL = 1e18  # zero within-cluster dispersion; preserves argmax semantics


@dataclass
class ClusterModel:
    centroids: np.ndarray  # (K, D)
    assignments: np.ndarray  # (N,) ints in [0, K)
    inertia: float
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


@dataclass
class KCandidateSet:
    source_class_count: int
    candidates: list[int]

    @classmethod
    def from_source_classes(cls, source_class_count: int) -> "KCandidateSet":
        if source_class_count < 1:
            raise ValueError("source class count must be >= 1")
        multiples = (1.0 / 3.0, 0.5, 1.0, 2.0, 3.0)
        seen: list[int] = []
        for m in multiples:
            # round half up, floor 2
            k = max(2, int(np.floor(m * source_class_count + 0.5)))
            if k not in seen:
                seen.append(k)
        return cls(source_class_count, sorted(seen))


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ c.T
        + np.sum(c * c, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plus_plus_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total == 0.0:
            raise ValueError("degenerate clustering: fewer distinct points than clusters")
        centers[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def kmeans(features: np.ndarray, k: int, max_iters: int = 100, seed: int = 0) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed.

    Stops when no assignment changes or at max_iters. Empty clusters are
    repaired by moving the point currently farthest from its own centroid
    into the empty cluster.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("expected a 2-D feature matrix")
    n = x.shape[0]
    if k > n:
        raise ValueError("more clusters than points")
    if k < 2:
        raise ValueError("need at least 2 clusters")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus_seeds(x, k, rng)

    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iters):
        iterations += 1
        d2 = _pairwise_sq_dists(x, centroids)
        new_assign = np.argmin(d2, axis=1)

        counts = np.bincount(new_assign, minlength=k)
        for empty in np.flatnonzero(counts == 0):
            dist_own = d2[np.arange(n), new_assign]
            # only points from clusters that can spare one
            dist_own = np.where(counts[new_assign] > 1, dist_own, -np.inf)
            victim = int(np.argmax(dist_own))
            counts[new_assign[victim]] -= 1
            new_assign[victim] = empty
            counts[empty] = 1

        changed = not np.array_equal(new_assign, assignments)
        assignments = new_assign
        for j in range(k):
            centroids[j] = x[assignments == j].mean(axis=0)
        inertia = float(np.sum((x - centroids[assignments]) ** 2))
        history.append(inertia)
        if not changed:
            break

    return ClusterModel(
        centroids=centroids,
        assignments=assignments,
        inertia=history[-1],
        iterations_run=iterations,
        inertia_history=history,
    )


def _cluster_means(x: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    means = np.empty((k, x.shape[1]), dtype=np.float64)
    for j in range(k):
        members = x[assign == j]
        if members.shape[0] == 0:
            raise ValueError("empty cluster in model")
        means[j] = members.mean(axis=0)
    return means


def silhouette_mean(features: np.ndarray, model: ClusterModel) -> float:
    """Mean of s(z) = (b - a) / max(a, b) over all points.

    a is the mean distance to same-cluster points, b the smallest mean
    distance to any other cluster. Points in singleton clusters score 0.
    """
    x = np.asarray(features, dtype=np.float64)
    assign = model.assignments
    k = model.k
    if k < 2:
        raise ValueError("silhouette requires at least 2 clusters")
    n = x.shape[0]
    dists = np.sqrt(_pairwise_sq_dists(x, x))
    counts = np.bincount(assign, minlength=k)
    # sums[i, j] = total distance from point i to members of cluster j
    sums = np.zeros((n, k), dtype=np.float64)
    for j in range(k):
        sums[:, j] = dists[:, assign == j].sum(axis=1)

    own = counts[assign]
    scores = np.zeros(n, dtype=np.float64)
    for i in range(n):
        if own[i] == 1:
            continue  # convention: a(z) undefined for singletons
        a = sums[i, assign[i]] / (own[i] - 1)
        other = [sums[i, j] / counts[j] for j in range(k) if j != assign[i]]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def calinski_harabasz(features: np.ndarray, model: ClusterModel) -> float:
    """(between dispersion / (K-1)) / (within dispersion / (N-K)); higher is better."""
    x = np.asarray(features, dtype=np.float64)
    assign = model.assignments
    k = model.k
    n = x.shape[0]
    if not 2 <= k < n:
        raise ValueError("requires 2 <= K < N")
    means = _cluster_means(x, assign, k)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    overall = x.mean(axis=0)
    between = float(np.sum(counts * np.sum((means - overall) ** 2, axis=1)))
    within = float(np.sum((x - means[assign]) ** 2))
    if within == 0.0:
        return CH_SENTINEL
    return (between / (k - 1)) / (within / (n - k))


def davies_bouldin(features: np.ndarray, model: ClusterModel) -> float:
    """Mean over clusters of max_j (sigma_i + sigma_j) / d(c_i, c_j); lower is better."""
    x = np.asarray(features, dtype=np.float64)
    assign = model.assignments
    k = model.k
    if k < 2:
        raise ValueError("requires at least 2 clusters")
    means = _cluster_means(x, assign, k)
    sigma = np.array(
        [np.mean(np.linalg.norm(x[assign == j] - means[j], axis=1)) for j in range(k)]
    )
    sep = np.sqrt(_pairwise_sq_dists(means, means))
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] == 0.0:
                raise ValueError("degenerate centroids")
            worst[i] = max(worst[i], (sigma[i] + sigma[j]) / sep[i, j])
    return float(worst.mean())


_SCORERS = {
    "silhouette": silhouette_mean,
    "calinski_harabasz": calinski_harabasz,
    "davies_bouldin": davies_bouldin,
}


def pick_best_candidate(candidates: list[int], scores: list[float], minimize: bool) -> int:
    """Index of the winning candidate; ties resolve toward the smaller K."""
    best = None
    best_score = None
    for idx, (k, s) in enumerate(zip(candidates, scores)):
        if s is None:
            continue
        better = (
            best_score is None
            or (s < best_score if minimize else s > best_score)
        )
        if better:
            best, best_score = idx, s
    if best is None:
        raise ValueError("all candidates invalid")
    return best


@dataclass
class KSelection:
    k: int
    model: ClusterModel
    method: str
    candidates: list[int]
    scores: list[float | None]
    kmeans_calls: int


def select_k(
    features: np.ndarray,
    candidates: KCandidateSet,
    method: str = "silhouette",
    seed: int = 0,
    max_iters: int = 100,
) -> KSelection:
    """Cluster once per candidate K, score each run, return the winner.

    Candidates larger than N are skipped; degenerate runs score None. The
    winning model is returned so callers can reuse it instead of
    re-clustering at the chosen K.
    """
    if method not in _SCORERS:
        raise ValueError(f"unknown method {method!r}")
    x = np.asarray(features, dtype=np.float64)
    scorer = _SCORERS[method]
    scores: list[float | None] = []
    models: list[ClusterModel | None] = []
    calls = 0
    for k in candidates.candidates:
        if k > x.shape[0]:
            scores.append(None)
            models.append(None)
            continue
        try:
            model = kmeans(x, k, max_iters=max_iters, seed=seed)
            calls += 1
            scores.append(scorer(x, model))
            models.append(model)
        except ValueError:
            scores.append(None)
            models.append(None)
    best = pick_best_candidate(
        candidates.candidates, scores, minimize=(method == "davies_bouldin")
    )
    return KSelection(
        k=candidates.candidates[best],
        model=models[best],
        method=method,
        candidates=list(candidates.candidates),
        scores=scores,
        kmeans_calls=calls,
    )
