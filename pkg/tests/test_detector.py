import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_median
from tripdrift.clusterer import ClusterSummary, FamilyModel, build_family_model
from tripdrift.detector import (
    DRIFT,
    KNOWN,
    CentroidDriftDetector,
    MadModel,
    classify,
    classify_batch,
    classify_mad,
    fit_mad_model,
    mad_fit,
    median_absolute_deviation,
    nearest_centroid,
    nearest_centroids,
)


def summary(family, cid, centroid, threshold, dists=None):
    centroid = np.asarray(centroid, dtype=float)
    dists = np.asarray(dists if dists is not None else [threshold], dtype=float)
    return ClusterSummary(family, cid, centroid, float(threshold), dists.size, 0, 1.0, 4, dists)


def two_centroids():
    return FamilyModel((summary("a", 0, [0, 0], 2.0), summary("b", 0, [10, 0], 3.0)), 2)


def test_query_at_centroid():
    fam, cid, d = nearest_centroid(two_centroids(), np.array([10.0, 0.0]))
    assert (fam, cid, d) == ("b", 0, 0.0)


def test_query_between_centroids():
    assert nearest_centroid(two_centroids(), np.array([1.0, 0.0])) == ("a", 0, 1.0)


def test_ties_go_to_lowest_family_then_cluster():
    fm = FamilyModel((summary("b", 0, [1, 0], 1.0), summary("a", 1, [-1, 0], 1.0),
                      summary("a", 0, [0, 1], 1.0)), 2)
    # (0,0) is at distance 1 from all three centroids
    assert nearest_centroid(fm, np.zeros(2))[:2] == ("a", 0)


def test_nearest_matches_linear_scan(rng):
    cents = rng.normal(size=(12, 4))
    fm = FamilyModel(tuple(summary(f"f{i // 3}", i % 3, c, 1.0) for i, c in enumerate(cents)), 4)
    Q = rng.normal(size=(1000, 4))
    idx, dist = nearest_centroids(fm, Q)
    ordered = fm.centroids
    for q, i, d in zip(Q, idx, dist):
        best, best_j = np.inf, -1
        for j, c in enumerate(ordered):
            dj = np.sqrt(sum((a - b) ** 2 for a, b in zip(q, c)))
            if dj < best:
                best, best_j = dj, j
        assert i == best_j
        assert abs(d - best) <= 1e-12


def test_detection_errors():
    with pytest.raises(ValueError):
        nearest_centroid(two_centroids(), np.zeros(3))
    with pytest.raises(ValueError):
        nearest_centroid(FamilyModel((), 2), np.zeros(2))


def test_classify_boundaries():
    fm = two_centroids()
    assert classify(fm, np.array([0.0, 0.0])).verdict == KNOWN
    assert classify(fm, np.array([2.0, 0.0])).verdict == KNOWN  # exactly on the radius
    v = classify(fm, np.array([0.0, np.nextafter(2.0, 3.0)]))
    assert v.verdict == DRIFT and v.is_drift and v.family is None
    assert v.nearest_family == "a" and v.threshold_used == 2.0


def test_mad_hand_values():
    assert median_absolute_deviation([1, 2, 3, 4, 5]) == (3.0, 1.0)
    m = mad_fit([[1, 2, 3, 4, 5]], coefficient=2)
    assert m.thresholds.tolist() == [5.0]
    m = mad_fit([[2, 2, 2]], coefficient=1e6)
    assert m.mads.tolist() == [0.0] and m.thresholds.tolist() == [2.0]
    m = mad_fit([[7.0]], coefficient=3)
    assert (m.medians[0], m.mads[0], m.thresholds[0]) == (7.0, 0.0, 7.0)


def test_mad_matches_naive(rng):
    for _ in range(50):
        x = rng.exponential(size=int(rng.integers(1, 40)))
        med = naive_median(x)
        mad = naive_median([abs(v - med) for v in x])
        assert median_absolute_deviation(x) == pytest.approx((med, mad), abs=1e-12)


def test_mad_errors():
    with pytest.raises(ValueError):
        mad_fit([[]])
    with pytest.raises(ValueError):
        mad_fit([[1.0]], coefficient=-1)
    with pytest.raises(ValueError):
        mad_fit([[1.0]], coefficient=np.inf)


def test_mad_extremes(rng):
    Z = rng.normal(size=(60, 2))
    fm = build_family_model(Z, ["a"] * 60, eps=10.0, min_pts=2)
    far = np.array([[500.0, 500.0]])
    assert classify_batch(fm, far, fit_mad_model(fm, 1e12))[0].verdict == KNOWN
    c = fm.clusters[0]
    beyond = c.centroid + np.array([np.median(c.member_distances) * 1.01, 0.0])
    assert classify_mad(fm, fit_mad_model(fm, 0.0), beyond).verdict == DRIFT


def test_mad_and_dbscan_share_nearest(rng):
    Z = np.vstack([rng.normal(0, 1, (50, 3)), rng.normal(8, 1, (50, 3))])
    fm = build_family_model(Z, ["a"] * 50 + ["b"] * 50, 3)
    Q = rng.normal(4, 4, size=(200, 3))
    for x, y in zip(classify_batch(fm, Q), classify_batch(fm, Q, fit_mad_model(fm))):
        assert (x.nearest_family, x.nearest_cluster_id, x.distance) == (y.nearest_family, y.nearest_cluster_id, y.distance)


def test_misaligned_mad_model():
    fm = two_centroids()
    with pytest.raises(ValueError):
        classify_batch(fm, np.zeros((1, 2)), MadModel(np.zeros(1), np.zeros(1), 1.0))
    bad = MadModel(np.zeros(2), np.zeros(2), 1.0, keys=(("a", 0), ("c", 0)))
    with pytest.raises(ValueError, match="do not match"):
        classify_batch(fm, np.zeros((1, 2)), bad)


def test_training_members_are_known(rng):
    Z = np.vstack([rng.normal(0, 1, (80, 4)), rng.normal(6, 1, (80, 4))])
    labels = np.array(["a"] * 80 + ["b"] * 80)
    det = CentroidDriftDetector().fit(Z, labels)
    fm = det.family_model_
    known = np.array([v.verdict == KNOWN for v in det.verdicts(Z)])
    # members keep their bit-exact member distance as long as their own
    # centroid is the nearest one, which holds for well-separated families
    assert known.sum() >= sum(c.member_count for c in fm.clusters)


def test_detector_estimator(rng):
    from sklearn.base import clone
    Z = np.vstack([rng.normal(0, 1, (40, 2)), rng.normal(10, 1, (40, 2))])
    y = ["a"] * 40 + ["b"] * 40
    det = CentroidDriftDetector(threshold_mode="mad")
    assert clone(det).get_params() == det.get_params()
    det.fit(Z, y)
    assert det.classes_.tolist() == ["a", "b"]
    pred = det.predict(np.array([[0.0, 0.0], [10.0, 10.0], [100.0, -100.0]]))
    assert pred.tolist() == ["a", "b", DRIFT]
    assert det.decision_function(np.array([[100.0, -100.0]]))[0] > 0
    with pytest.raises(ValueError):
        CentroidDriftDetector(threshold_mode="x").fit(Z, y)


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
def test_raising_threshold_never_rejects(seed, t, bump):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(20, 2)) * 3
    low = FamilyModel((summary("a", 0, [0, 0], t), summary("b", 0, [3, 0], t)), 2)
    high = FamilyModel((summary("a", 0, [0, 0], t + bump), summary("b", 0, [3, 0], t + bump)), 2)
    for x, y in zip(classify_batch(low, q), classify_batch(high, q)):
        assert not (x.verdict == KNOWN and y.verdict == DRIFT)
