"""Nearest-centroid drift detection with DBSCAN radii or a MAD baseline."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix
from .clusterer import build_family_model, centroid_distances

KNOWN = "KNOWN"
DRIFT = "DRIFT"


@dataclass(frozen=True)
class DetectionVerdict:
    verdict: str
    nearest_family: str
    nearest_cluster_id: int
    distance: float
    threshold_used: float

    @property
    def is_drift(self):
        return self.verdict == DRIFT

    @property
    def family(self):
        """Assigned family, or ``None`` for a drifting sample."""
        return None if self.is_drift else self.nearest_family


def _check_model(fm):
    if not fm.clusters:
        raise ValueError("family model has no clusters")


def nearest_centroids(fm, embeddings):
    """Vectorised nearest cluster: returns ``(cluster_index, distance)`` arrays.

    Cluster indices refer to ``fm.clusters``, which is ordered by
    (family, cluster_id), so ``argmin`` resolves ties in that order.
    """
    _check_model(fm)
    Z = as_matrix(embeddings, "embeddings", n_columns=fm.latent_dim)
    D = centroid_distances(fm.centroids, Z)
    idx = np.argmin(D, axis=1)
    return idx, D[np.arange(Z.shape[0]), idx]


def nearest_centroid(fm, embedding):
    z = np.asarray(embedding, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected one embedding vector, got shape {z.shape}")
    idx, dist = nearest_centroids(fm, z[None, :])
    c = fm.clusters[int(idx[0])]
    return c.family, c.cluster_id, float(dist[0])


def _verdicts(fm, idx, dist, thresholds):
    out = []
    for i, d in zip(idx.tolist(), dist.tolist()):
        c = fm.clusters[i]
        t = float(thresholds[i])
        out.append(DetectionVerdict(KNOWN if d <= t else DRIFT, c.family, c.cluster_id, d, t))
    return out


def classify_batch(fm, embeddings, mad=None):
    """Verdicts for many embeddings; uses MAD thresholds when ``mad`` is given."""
    idx, dist = nearest_centroids(fm, embeddings)
    thresholds = fm.thresholds if mad is None else _aligned_thresholds(fm, mad)
    return _verdicts(fm, idx, dist, thresholds)


def classify(fm, embedding):
    """KNOWN when the nearest centroid is within its cluster's radius (closed ball)."""
    z = np.asarray(embedding, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected one embedding vector, got shape {z.shape}")
    return classify_batch(fm, z[None, :])[0]


@dataclass(frozen=True, eq=False)
class MadModel:
    """Per-cluster ``median + coefficient * MAD`` of member-to-centroid distances."""

    medians: np.ndarray
    mads: np.ndarray
    coefficient: float
    keys: tuple = ()

    @property
    def thresholds(self):
        # c * 0 stays 0 even for very large c
        return self.medians + np.where(self.mads > 0, self.coefficient * self.mads, 0.0)

    def __len__(self):
        return self.medians.shape[0]


def median_absolute_deviation(x):
    x = np.asarray(x, dtype=np.float64)
    med = np.median(x)
    return float(med), float(np.median(np.abs(x - med)))


def mad_fit(distances, coefficient=3.5, keys=()):
    """Fit MAD thresholds from one distance array per cluster."""
    if not (coefficient >= 0 and np.isfinite(coefficient)):
        raise ValueError(f"coefficient must be finite and >= 0, got {coefficient}")
    medians, mads = [], []
    for i, d in enumerate(distances):
        d = np.asarray(d, dtype=np.float64).reshape(-1)
        if d.size == 0:
            raise ValueError(f"cluster {i} has no distances")
        m, mad = median_absolute_deviation(d)
        medians.append(m)
        mads.append(mad)
    if not medians:
        raise ValueError("no clusters to fit")
    return MadModel(np.array(medians), np.array(mads), float(coefficient), tuple(keys))


def fit_mad_model(fm, coefficient=3.5):
    """MAD thresholds from the member distances stored in a family model."""
    return mad_fit(
        [c.member_distances for c in fm.clusters],
        coefficient,
        keys=tuple((c.family, c.cluster_id) for c in fm.clusters),
    )


def _aligned_thresholds(fm, mad):
    if len(mad) != len(fm.clusters):
        raise ValueError(f"MAD model has {len(mad)} clusters, family model has {len(fm.clusters)}")
    if mad.keys and mad.keys != tuple((c.family, c.cluster_id) for c in fm.clusters):
        raise ValueError("MAD model clusters do not match the family model")
    return mad.thresholds


def classify_mad(fm, mad, embedding):
    z = np.asarray(embedding, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError(f"expected one embedding vector, got shape {z.shape}")
    return classify_batch(fm, z[None, :], mad=mad)[0]


class CentroidDriftDetector(ClassifierMixin, BaseEstimator):
    """Open-set classifier over latent embeddings.

    ``fit(Z, y)`` clusters each family with DBSCAN; ``predict(Z)`` returns
    the nearest family name, or ``"DRIFT"`` when the sample falls outside
    that cluster's threshold.
    """

    def __init__(self, threshold_mode="dbscan", mad_coefficient=3.5, eps=None, min_pts=None):
        self.threshold_mode = threshold_mode
        self.mad_coefficient = mad_coefficient
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, Z, y):
        if self.threshold_mode not in ("dbscan", "mad"):
            raise ValueError(f"threshold_mode must be 'dbscan' or 'mad', got {self.threshold_mode!r}")
        Z = as_matrix(Z)
        self.family_model_ = build_family_model(Z, y, Z.shape[1], eps=self.eps, min_pts=self.min_pts)
        self.mad_model_ = fit_mad_model(self.family_model_, self.mad_coefficient)
        self.classes_ = np.array(self.family_model_.families)
        self.n_features_in_ = Z.shape[1]
        return self

    def verdicts(self, Z):
        check_is_fitted(self, "family_model_")
        mad = self.mad_model_ if self.threshold_mode == "mad" else None
        return classify_batch(self.family_model_, as_matrix(Z, n_columns=self.n_features_in_), mad)

    def predict(self, Z):
        return np.array([v.nearest_family if not v.is_drift else DRIFT for v in self.verdicts(Z)], dtype=object)

    def decision_function(self, Z):
        """Distance to the nearest centroid minus its threshold; positive means drift."""
        return np.array([v.distance - v.threshold_used for v in self.verdicts(Z)])
