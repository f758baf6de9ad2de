"""Per-family DBSCAN in latent space, parameter heuristics, and the frozen
centroid/threshold model used for drift detection."""

import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import as_matrix, check_positive_int

NOISE = -1


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    labels: np.ndarray
    eps: float
    min_pts: int
    core_mask: np.ndarray

    @property
    def n_clusters(self):
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @property
    def noise_mask(self):
        return self.labels == NOISE


def neighborhoods(points, eps):
    """Sorted index arrays of every point within ``eps`` (inclusive), self included."""
    tree = cKDTree(points)
    return [np.sort(np.asarray(nb, dtype=np.intp)) for nb in tree.query_ball_point(points, r=eps)]


def dbscan(points, eps, min_pts):
    """Classic DBSCAN with Euclidean distance.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps``. Points are scanned in index order; each new core point
    seeds a cluster that is expanded breadth-first before the scan resumes,
    so a border point reachable from several clusters joins the one with the
    lowest seeding index. Unreached points get label ``NOISE`` (-1).
    """
    X = as_matrix(points, "points")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    min_pts = check_positive_int(min_pts, "min_pts")
    n = X.shape[0]
    if n == 0:
        raise ValueError("dbscan needs at least one point")

    nbrs = neighborhoods(X, eps)
    core = np.array([nb.size >= min_pts for nb in nbrs], dtype=bool)
    labels = np.full(n, NOISE, dtype=np.int64)
    cluster = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cluster
        queue = deque([i])
        while queue:
            j = queue.popleft()
            for k in nbrs[j]:
                if labels[k] == NOISE:
                    labels[k] = cluster
                    if core[k]:
                        queue.append(k)
        cluster += 1
    return ClusterAssignment(labels, float(eps), min_pts, core)


def estimate_min_pts(latent_dim, class_size):
    """``2 * latent_dim`` clamped to ``[4, class_size // 2]``; 4 for classes under 8."""
    latent_dim = check_positive_int(latent_dim, "latent_dim")
    class_size = check_positive_int(class_size, "class_size")
    if class_size < 8:
        return 4
    return max(4, min(2 * latent_dim, class_size // 2))


def k_distances(points, k):
    """Distance from each point to its k-th nearest other point."""
    X = as_matrix(points, "points")
    k = check_positive_int(k, "k")
    if X.shape[0] <= k:
        raise ValueError(f"need more than k={k} points, got {X.shape[0]}")
    dist, _ = cKDTree(X).query(X, k=k + 1)
    return dist[:, k]


def elbow_index(curve):
    """Index of the point farthest from the chord joining the curve's ends.

    Only interior points are candidates; ties go to the lowest index.
    """
    y = np.asarray(curve, dtype=np.float64)
    n = y.size
    if n < 3:
        return n - 1
    x = np.arange(n, dtype=np.float64)
    dy = y[-1] - y[0]
    dx = float(n - 1)
    # perpendicular distance up to the constant chord length
    dist = np.abs(dy * x - dx * (y - y[0]))
    return 1 + int(np.argmax(dist[1:-1]))


def estimate_eps(points, k):
    """DBSCAN radius from the elbow of the descending k-distance curve."""
    kd = np.sort(k_distances(points, k))[::-1]
    eps = float(kd[elbow_index(kd)])
    if eps > 0:
        return eps
    positive = kd[kd > 0]
    if positive.size:
        warnings.warn("k-distance elbow at 0; using the smallest positive k-distance", stacklevel=2)
        return float(positive.min())
    X = np.asarray(points, dtype=np.float64)
    fallback = np.finfo(np.float64).eps * max(1.0, float(np.abs(X).max()))
    warnings.warn("all k-distances are zero; using a machine-epsilon radius", stacklevel=2)
    return fallback


def compute_centroid(members):
    X = as_matrix(members, "members")
    if X.shape[0] == 0:
        raise ValueError("cannot take the centroid of an empty cluster")
    return X.mean(axis=0)


def centroid_distances(centroids, Z, chunk=4096):
    """Euclidean distances, shape ``(len(Z), len(centroids))``.

    Detection and threshold fitting both go through here so a training
    member's distance is bit-identical in the two places.
    """
    out = np.empty((Z.shape[0], centroids.shape[0]))
    for s in range(0, Z.shape[0], chunk):
        diff = Z[s : s + chunk, None, :] - centroids[None, :, :]
        out[s : s + chunk] = np.sqrt(np.sum(diff * diff, axis=2))
    return out


def member_distances(members, centroid):
    X = as_matrix(members, "members")
    c = np.asarray(centroid, dtype=np.float64).reshape(1, -1)
    return centroid_distances(c, X)[:, 0]


def compute_threshold(members, centroid):
    """Largest Euclidean distance from the centroid to a member."""
    d = member_distances(members, centroid)
    if d.size == 0:
        raise ValueError("cannot take the threshold of an empty cluster")
    return float(d.max())


@dataclass(frozen=True, eq=False)
class ClusterSummary:
    family: str
    cluster_id: int
    centroid: np.ndarray
    threshold: float
    member_count: int
    noise_excluded: int
    eps: float
    min_pts: int
    member_distances: np.ndarray
    fallback: bool = False

    def same_as(self, other):
        return (
            self.family == other.family
            and self.cluster_id == other.cluster_id
            and np.array_equal(self.centroid, other.centroid)
            and self.threshold == other.threshold
            and self.member_count == other.member_count
            and self.noise_excluded == other.noise_excluded
            and np.array_equal(self.member_distances, other.member_distances)
        )


@dataclass(frozen=True, eq=False)
class FamilyModel:
    clusters: tuple
    latent_dim: int
    network_hash: str = ""
    config: dict = field(default_factory=dict)
    warnings: tuple = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.clusters, key=lambda c: (c.family, c.cluster_id)))
        object.__setattr__(self, "clusters", ordered)
        for c in ordered:
            if c.centroid.shape != (self.latent_dim,):
                raise ValueError(
                    f"centroid of {c.family}/{c.cluster_id} has shape {c.centroid.shape}, "
                    f"expected ({self.latent_dim},)"
                )

    @property
    def families(self):
        return sorted({c.family for c in self.clusters})

    @property
    def centroids(self):
        return np.vstack([c.centroid for c in self.clusters])

    @property
    def thresholds(self):
        return np.array([c.threshold for c in self.clusters])

    def clusters_of(self, family):
        return [c for c in self.clusters if c.family == family]

    def report(self):
        lines = []
        for c in self.clusters:
            lines.append(
                f"{c.family}\tcluster={c.cluster_id}\tmembers={c.member_count}\t"
                f"noise={c.noise_excluded}\tthreshold={c.threshold:.6g}\t"
                f"eps={c.eps:.6g}\tmin_pts={c.min_pts}" + ("\tfallback" if c.fallback else "")
            )
        return "\n".join(lines)


def summarize_clusters(family, points, assignment, fallback=False):
    """One :class:`ClusterSummary` per non-noise cluster of ``assignment``."""
    n_noise = int(np.sum(assignment.labels == NOISE))
    out = []
    for cid in range(assignment.n_clusters):
        members = points[assignment.labels == cid]
        centroid = compute_centroid(members)
        dist = member_distances(members, centroid)
        out.append(
            ClusterSummary(
                family=family,
                cluster_id=cid,
                centroid=centroid,
                threshold=float(dist.max()),
                member_count=int(members.shape[0]),
                noise_excluded=n_noise,
                eps=assignment.eps,
                min_pts=assignment.min_pts,
                member_distances=dist,
                fallback=fallback,
            )
        )
    return out


def cluster_family(family, points, latent_dim, eps=None, min_pts=None):
    """Cluster one family's embeddings. Returns ``(summaries, warning or None)``."""
    X = as_matrix(points, "points")
    n = X.shape[0]
    m = min_pts if min_pts is not None else estimate_min_pts(latent_dim, n)
    note = None
    if eps is None and n <= m - 1:
        note = f"{family}: {n} samples is too few for min_pts={m}; using one cluster"
        assignment = None
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            e = eps if eps is not None else estimate_eps(X, m - 1)
        if caught:
            note = f"{family}: {caught[0].message}"
        assignment = dbscan(X, e, m)
        if assignment.n_clusters == 0:
            note = f"{family}: DBSCAN found no cluster (eps={e:.6g}, min_pts={m}); using one cluster"
            assignment = None
    if assignment is None:
        single = ClusterAssignment(np.zeros(n, dtype=np.int64), float(eps or 0.0), m, np.zeros(n, bool))
        return summarize_clusters(family, X, single, fallback=True), note
    return summarize_clusters(family, X, assignment), note


def build_family_model(embeddings, labels, latent_dim=None, eps=None, min_pts=None,
                       network_hash="", config=None):
    """Cluster each family separately and freeze centroids and radii.

    ``eps``/``min_pts`` override the heuristics for every family when given.
    A family for which DBSCAN finds no cluster is kept as one cluster of
    all its points, and a warning is recorded on the model.
    """
    Z = as_matrix(embeddings, "embeddings")
    labels = np.asarray(labels).astype(str)
    if Z.shape[0] == 0:
        raise ValueError("no embeddings to cluster")
    if labels.shape[0] != Z.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {Z.shape[0]} embeddings")
    latent_dim = Z.shape[1] if latent_dim is None else latent_dim
    if Z.shape[1] != latent_dim:
        raise ValueError(f"embedding width {Z.shape[1]} != latent_dim {latent_dim}")

    clusters, notes = [], []
    for fam in sorted(set(labels.tolist())):
        summaries, note = cluster_family(fam, Z[labels == fam], latent_dim, eps, min_pts)
        clusters += summaries
        if note:
            notes.append(note)
            warnings.warn(note, stacklevel=2)
    for c in clusters:
        assert np.all(c.member_distances <= c.threshold)
    return FamilyModel(tuple(clusters), int(latent_dim), network_hash, dict(config or {}), tuple(notes))


def mean_member_distance(model):
    """Mean distance from each clustered point to its own centroid."""
    total = sum(float(c.member_distances.sum()) for c in model.clusters)
    count = sum(c.member_count for c in model.clusters)
    return total / count


class DBSCAN(ClusterMixin, BaseEstimator):
    """Estimator front for :func:`dbscan`.

    ``eps="auto"`` picks the k-distance elbow with ``k = min_pts - 1``;
    ``min_pts="auto"`` applies :func:`estimate_min_pts` with the data width.
    """

    def __init__(self, eps="auto", min_pts="auto"):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        X = as_matrix(X)
        m = estimate_min_pts(X.shape[1], X.shape[0]) if self.min_pts == "auto" else self.min_pts
        e = estimate_eps(X, m - 1) if self.eps == "auto" else self.eps
        result = dbscan(X, e, m)
        self.eps_ = result.eps
        self.min_pts_ = result.min_pts
        self.labels_ = result.labels
        self.core_sample_indices_ = np.flatnonzero(result.core_mask)
        self.n_features_in_ = X.shape[1]
        return self
