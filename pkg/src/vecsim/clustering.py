"""Capacity clustering: standardization, k-means, and elbow-based k selection.

Implemented directly (Lloyd iterations with k-means++ seeding) so the tests
can observe per-iteration objective values and assignment optimality rather
than trusting a library. Cluster indices are renumbered after every fit by
ascending first centroid component, which keeps numbering stable across
re-fits of the same data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .fleet import CapacityVector, ConfigurationError

DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 300
DEFAULT_K_RANGE = range(1, 9)

# Re-cluster when the fleet has grown by this fraction since the last fit.
RECLUSTER_GROWTH_NUM = 11
RECLUSTER_GROWTH_DEN = 10


@dataclass(frozen=True)
class Standardizer:
    """Per-feature affine map to mean 0 / variance 1.

    For a degenerate feature (zero spread) the stored stddev is 1.0, so the
    transform maps every training value of that feature to exactly 0 instead
    of dividing by zero.
    """

    means: np.ndarray
    stddevs: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.means) / self.stddevs

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.stddevs + self.means


def _as_matrix(points: Sequence[CapacityVector] | np.ndarray) -> np.ndarray:
    if isinstance(points, np.ndarray):
        mat = np.asarray(points, dtype=float)
    else:
        mat = np.array([p.as_array() for p in points], dtype=float)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise ConfigurationError("need a non-empty 2-d point matrix")
    return mat


def fit_standardizer(points: Sequence[CapacityVector] | np.ndarray) -> Standardizer:
    mat = _as_matrix(points)
    means = mat.mean(axis=0)
    stds = mat.std(axis=0)  # population std, ddof=0
    stds = np.where(stds == 0.0, 1.0, stds)
    return Standardizer(means=means, stddevs=stds)


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray  # (k, p), standardized space
    assignments: dict[int, int]  # point/node id -> cluster index
    ssd: float
    node_count_at_fit: int
    iteration_ssd: list[float] = field(default_factory=list)

    def members(self, cluster: int) -> list[int]:
        return sorted(i for i, c in self.assignments.items() if c == cluster)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances."""
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkp,nkp->nk", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = _sq_dists(points, centroids[:1]).min(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining points coincide with chosen centroids.
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = _sq_dists(points, centroids)
    labels = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
    return labels, d2[np.arange(points.shape[0]), labels]


def _repair_empty(
    points: np.ndarray, centroids: np.ndarray, labels: np.ndarray, own_d2: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Reseed each empty cluster at the point farthest from its centroid.

    The reseeded cluster claims that point outright, so every pass fills at
    least one empty cluster and the loop terminates. If every point already
    sits exactly on its centroid (duplicate-point input with k larger than
    the number of distinct points) no repair is possible and empties remain.
    """
    k = centroids.shape[0]
    while True:
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0 or own_d2.max() <= 0.0:
            return labels, own_d2
        far = int(np.argmax(own_d2))
        centroids[empty[0]] = points[far]
        labels, own_d2 = _assign(points, centroids)
        labels[far] = empty[0]
        own_d2[far] = 0.0


def kmeans_fit(
    points: Sequence[CapacityVector] | np.ndarray,
    k: int,
    seed: int,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    ids: Sequence[int] | None = None,
    init_centroids: np.ndarray | None = None,
) -> ClusterModel:
    """Lloyd k-means over standardized points.

    Args:
        points: raw point matrix (n, p) in *standardized* space, or capacity
            vectors already transformed by the caller.
        k: cluster count, 1 <= k <= n.
        seed: seeds k-means++ centroid selection.
        ids: optional external ids for the rows (defaults to 0..n-1).
        init_centroids: optional (k, p) starting centroids, bypassing
            k-means++ (used by the elbow sweep to warm-start from k-1).

    Returns:
        ClusterModel with final centroids, assignments, total SSD, and the
        per-iteration SSD history (recorded after each assignment phase;
        non-increasing by construction of Lloyd's algorithm).
    """
    mat = _as_matrix(points)
    n = mat.shape[0]
    if not (1 <= k <= n):
        raise ConfigurationError(f"k must satisfy 1 <= k <= n={n}, got {k}")
    if ids is None:
        ids = range(n)
    ids = list(ids)
    if len(ids) != n:
        raise ConfigurationError("ids length must match point count")

    if init_centroids is not None:
        centroids = np.array(init_centroids, dtype=float)
        if centroids.shape != (k, mat.shape[1]):
            raise ConfigurationError(f"init_centroids must have shape ({k}, {mat.shape[1]})")
    else:
        rng = np.random.default_rng([seed, k])
        centroids = _kmeanspp_init(mat, k, rng)

    history: list[float] = []
    labels, own_d2 = _assign(mat, centroids)
    labels, own_d2 = _repair_empty(mat, centroids, labels, own_d2)
    history.append(float(own_d2.sum()))
    for _ in range(max_iter):
        new_centroids = centroids.copy()
        for c in range(k):
            mask = labels == c
            if mask.any():  # unrepairable empty clusters keep their centroid
                new_centroids[c] = mat[mask].mean(axis=0)
        shift = float(np.sqrt(((new_centroids - centroids) ** 2).sum(axis=1)).max())
        centroids = new_centroids
        labels, own_d2 = _assign(mat, centroids)
        labels, own_d2 = _repair_empty(mat, centroids, labels, own_d2)
        history.append(float(own_d2.sum()))
        if shift < tol:
            break

    # Stable numbering: sort clusters by centroid coordinates ascending.
    order = sorted(range(k), key=lambda c: tuple(centroids[c]))
    remap = {old: new for new, old in enumerate(order)}
    centroids = centroids[order]
    labels = np.array([remap[int(l)] for l in labels])

    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments={ids[i]: int(labels[i]) for i in range(n)},
        ssd=float(own_d2.sum()),
        node_count_at_fit=n,
        iteration_ssd=history,
    )


@dataclass(frozen=True)
class ElbowResult:
    k_optimal: int
    curve: tuple[tuple[int, float], ...]  # (k, ssd), ascending k
    warnings: tuple[str, ...] = ()


def elbow_select_k(
    points: Sequence[CapacityVector] | np.ndarray,
    k_range: Iterable[int] = DEFAULT_K_RANGE,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ElbowResult:
    """Sweep k over k_range and pick the knee of the SSD curve.

    The knee is the interior k whose point (k, ssd_k) lies farthest
    (perpendicular distance) from the chord joining the curve's endpoints;
    ties go to the lowest k. With fewer than three curve points there is no
    interior, and the smallest k is returned.

    Each k is fit twice: a fresh k-means++ run, and a warm start seeded from
    the previous k's centroids plus the points farthest from them. The better
    of the two is kept, which makes the reported curve non-increasing in k
    (a larger k never loses to the solution it was grown from).
    """
    mat = _as_matrix(points)
    n = mat.shape[0]
    ks = sorted(set(int(k) for k in k_range))
    if not ks or ks[0] < 1:
        raise ConfigurationError("k_range must contain positive integers")
    warnings: list[str] = []
    feasible = [k for k in ks if k <= n]
    if len(feasible) < len(ks):
        warnings.append(f"k range truncated to <= {n} (point count)")
    if not feasible:
        raise ConfigurationError(f"no feasible k in range for n={n}")

    curve = []
    prev: ClusterModel | None = None
    for k in feasible:
        model = kmeans_fit(mat, k, seed=seed, tol=tol, max_iter=max_iter)
        if prev is not None and prev.k < k:
            seeded = prev.centroids.copy()
            while seeded.shape[0] < k:
                d2 = ((mat[:, None, :] - seeded[None, :, :]) ** 2).sum(axis=2).min(axis=1)
                seeded = np.vstack([seeded, mat[int(np.argmax(d2))]])
            warm = kmeans_fit(mat, k, seed=seed, tol=tol, max_iter=max_iter, init_centroids=seeded)
            if warm.ssd < model.ssd:
                model = warm
        curve.append((k, model.ssd))
        prev = model

    if len(curve) < 3:
        return ElbowResult(k_optimal=curve[0][0], curve=tuple(curve), warnings=tuple(warnings))

    a = np.array(curve[0], dtype=float)
    b = np.array(curve[-1], dtype=float)
    chord = b - a
    norm = float(np.hypot(*chord))
    best_k, best_dist = curve[0][0], -1.0
    for k, ssd in curve[1:-1]:
        p = np.array([k, ssd], dtype=float) - a
        dist = abs(chord[0] * p[1] - chord[1] * p[0]) / norm
        if dist > best_dist + 1e-12:
            best_k, best_dist = k, dist
    return ElbowResult(k_optimal=best_k, curve=tuple(curve), warnings=tuple(warnings))


def assign_cluster(model: ClusterModel, standardizer: Standardizer, point: CapacityVector) -> int:
    """Nearest-centroid cluster for a raw capacity point (ties -> lowest index)."""
    z = standardizer.transform(point.as_array())
    d2 = ((model.centroids - z) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def maybe_recluster(model: ClusterModel, current_node_count: int) -> bool:
    """True iff the fleet grew to >= 1.1x the size at fit time.

    Integer arithmetic avoids float-representation surprises at the boundary
    (e.g. 55 vs 50 * 1.1).
    """
    return current_node_count * RECLUSTER_GROWTH_DEN >= model.node_count_at_fit * RECLUSTER_GROWTH_NUM


# ---------------------------------------------------------------------------
# Serialization: versioned flat text, stable formatting.
# ---------------------------------------------------------------------------

_MODEL_FORMAT = "vecsim-cluster-model"
_MODEL_VERSION = 1


def save_model(path: str, model: ClusterModel, standardizer: Standardizer) -> None:
    lines = [f"# {_MODEL_FORMAT} v{_MODEL_VERSION}"]
    lines.append(f"k={model.k}")
    lines.append(f"node_count_at_fit={model.node_count_at_fit}")
    lines.append("means=" + " ".join(f"{v:.17g}" for v in standardizer.means))
    lines.append("stddevs=" + " ".join(f"{v:.17g}" for v in standardizer.stddevs))
    for c in range(model.k):
        lines.append(f"centroid{c}=" + " ".join(f"{v:.17g}" for v in model.centroids[c]))
    lines.append("assignments=" + " ".join(f"{i}:{c}" for i, c in sorted(model.assignments.items())))
    lines.append(f"ssd={model.ssd:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path: str) -> tuple[ClusterModel, Standardizer]:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith(f"# {_MODEL_FORMAT} v"):
            raise ConfigurationError(f"{path} is not a cluster model file")
        version = int(header.rsplit("v", 1)[1])
        if version != _MODEL_VERSION:
            raise ConfigurationError(f"unsupported cluster model version {version}")
        fields = {}
        for line in fh:
            key, _, value = line.strip().partition("=")
            fields[key] = value
    k = int(fields["k"])
    means = np.array([float(v) for v in fields["means"].split()])
    stddevs = np.array([float(v) for v in fields["stddevs"].split()])
    centroids = np.array([[float(v) for v in fields[f"centroid{c}"].split()] for c in range(k)])
    assignments = {}
    if fields.get("assignments"):
        for pair in fields["assignments"].split():
            i, _, c = pair.partition(":")
            assignments[int(i)] = int(c)
    model = ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        ssd=float(fields["ssd"]),
        node_count_at_fit=int(fields["node_count_at_fit"]),
    )
    return model, Standardizer(means=means, stddevs=stddevs)


def write_elbow_csv(path: str, result: ElbowResult, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(header_comment.rstrip("\n") + "\n")
        fh.write("k,ssd\n")
        for k, ssd in result.curve:
            fh.write(f"{k},{ssd:.10g}\n")
