"""Labeled feature datasets: CSV I/O, variance filtering, temporal splits,
leave-one-family-out scenarios and synthetic Gaussian families."""

import csv
import io
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_positive_int
from .exceptions import DatasetError

LABEL_COLUMN = "family"
TIMESTAMP_COLUMN = "timestamp"

# 2010-01-01 .. 2013-01-01, roughly the collection window of public Android corpora.
_SYNTH_TIME_RANGE = (1_262_304_000, 1_356_998_400)


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Feature matrix with one family label and one timestamp per row."""

    features: np.ndarray
    labels: np.ndarray
    timestamps: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {X.shape}")
        labels = np.asarray(self.labels, dtype=str).reshape(-1)
        ts = np.asarray(self.timestamps)
        if ts.size and not np.issubdtype(ts.dtype, np.integer):
            raise DatasetError("timestamps must be integers")
        ts = ts.astype(np.int64).reshape(-1)
        if not (X.shape[0] == labels.shape[0] == ts.shape[0]):
            raise DatasetError(
                f"row count mismatch: {X.shape[0]} feature rows, "
                f"{labels.shape[0]} labels, {ts.shape[0]} timestamps"
            )
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain NaN or infinite values")
        if labels.size and np.any(np.char.str_len(labels) == 0):
            raise DatasetError("family labels must be non-empty strings")
        names = tuple(str(n) for n in self.feature_names) or tuple(
            f"f{i}" for i in range(X.shape[1])
        )
        if len(names) != X.shape[1]:
            raise DatasetError(
                f"{len(names)} feature names for {X.shape[1]} feature columns"
            )
        X.setflags(write=False)
        labels.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def families(self):
        return sorted(set(self.labels.tolist()))

    def family_counts(self):
        fams, counts = np.unique(self.labels, return_counts=True)
        return {str(f): int(c) for f, c in zip(fams, counts)}

    def take(self, index):
        index = np.asarray(index, dtype=np.intp)
        return LabeledDataset(
            self.features[index],
            self.labels[index],
            self.timestamps[index],
            self.feature_names,
        )

    def equals(self, other):
        return (
            self.feature_names == other.feature_names
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.timestamps, other.timestamps)
        )


def concat_datasets(first, *others):
    parts = (first,) + others
    for p in others:
        if p.feature_names != first.feature_names:
            raise DatasetError("cannot concatenate datasets with different columns")
    return LabeledDataset(
        np.concatenate([p.features for p in parts], axis=0),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.timestamps for p in parts]),
        first.feature_names,
    )


@dataclass(frozen=True)
class CsvSchema:
    """Which columns carry the label and the timestamp; everything else is a feature."""

    label_column: str = LABEL_COLUMN
    timestamp_column: str = TIMESTAMP_COLUMN


def load_dataset(path, schema=None):
    """Read a labeled CSV file.

    Rows keep file order. Errors name the offending 1-based line number.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        return _parse_csv(fh, schema)


def read_dataset_text(text, schema=None):
    return _parse_csv(io.StringIO(text), schema or CsvSchema())


def _parse_csv(fh, schema):
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetError("empty file") from None
    header = [h.strip() for h in header]
    try:
        label_col = header.index(schema.label_column)
        ts_col = header.index(schema.timestamp_column)
    except ValueError:
        raise DatasetError(
            f"header must contain {schema.label_column!r} and "
            f"{schema.timestamp_column!r} columns",
            line=1,
        ) from None
    feat_cols = [i for i in range(len(header)) if i not in (label_col, ts_col)]
    if not feat_cols:
        raise DatasetError("no feature columns", line=1)
    width = len(header)

    rows, labels, stamps = [], [], []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != width:
            raise DatasetError(f"expected {width} fields, found {len(row)}", line=line)
        label = row[label_col].strip()
        if not label:
            raise DatasetError("missing family label", line=line)
        try:
            stamp = int(row[ts_col])
        except ValueError:
            raise DatasetError(
                f"timestamp {row[ts_col]!r} is not an integer", line=line
            ) from None
        try:
            values = np.array([row[i] for i in feat_cols], dtype=np.float64)
        except ValueError:
            raise DatasetError("non-numeric feature value", line=line) from None
        if not np.all(np.isfinite(values)):
            raise DatasetError("NaN or infinite feature value", line=line)
        rows.append(values)
        labels.append(label)
        stamps.append(stamp)
    if not rows:
        raise DatasetError("file has a header but no data rows")
    return LabeledDataset(
        np.vstack(rows),
        np.array(labels, dtype=str),
        np.array(stamps, dtype=np.int64),
        tuple(header[i] for i in feat_cols),
    )


def save_dataset(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(dataset_to_text(ds))


def dataset_to_text(ds):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([LABEL_COLUMN, TIMESTAMP_COLUMN, *ds.feature_names])
    for label, stamp, row in zip(ds.labels, ds.timestamps, ds.features):
        writer.writerow([label, int(stamp), *(repr(float(v)) for v in row)])
    return buf.getvalue()


@dataclass(frozen=True)
class FeatureMask:
    kept_indices: tuple
    min_variance: float = 0.0

    def __post_init__(self):
        kept = tuple(int(i) for i in self.kept_indices)
        if any(b <= a for a, b in zip(kept, kept[1:])):
            raise ValueError("kept_indices must be strictly increasing")
        if kept and kept[0] < 0:
            raise ValueError("kept_indices must be non-negative")
        object.__setattr__(self, "kept_indices", kept)
        object.__setattr__(self, "min_variance", float(self.min_variance))

    @property
    def width(self):
        return len(self.kept_indices)

    @classmethod
    def identity(cls, n_features):
        return cls(tuple(range(n_features)), 0.0)


def fit_variance_mask(ds, min_variance=0.0):
    """Keep the columns whose population variance is at least ``min_variance``."""
    if len(ds) == 0:
        raise DatasetError("cannot fit a variance mask on an empty dataset")
    if not min_variance >= 0:
        raise ValueError(f"min_variance must be >= 0, got {min_variance}")
    var = ds.features.var(axis=0, ddof=0)
    kept = np.flatnonzero(var >= min_variance)
    if kept.size == 0:
        raise DatasetError(
            f"no column has variance >= {min_variance}; dataset is degenerate"
        )
    return FeatureMask(tuple(kept.tolist()), min_variance)


def apply_mask(ds, mask):
    idx = np.asarray(mask.kept_indices, dtype=np.intp)
    if idx.size and idx[-1] >= ds.n_features:
        raise IndexError(
            f"mask index {int(idx[-1])} out of range for width {ds.n_features}"
        )
    return LabeledDataset(
        ds.features[:, idx],
        ds.labels,
        ds.timestamps,
        tuple(ds.feature_names[i] for i in idx),
    )


def save_mask(mask, path):
    lines = [f"min_variance={mask.min_variance!r}"]
    lines += [str(i) for i in mask.kept_indices]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_mask(path):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("min_variance="):
        raise DatasetError("mask file must start with 'min_variance=<value>'", line=1)
    try:
        min_var = float(lines[0].split("=", 1)[1])
        kept = [int(s) for s in lines[1:]]
    except ValueError as exc:
        raise DatasetError(f"malformed mask file: {exc}") from None
    return FeatureMask(tuple(kept), min_var)


class VarianceMask(TransformerMixin, BaseEstimator):
    """Drop low-variance columns; a transformer front for :func:`fit_variance_mask`."""

    def __init__(self, min_variance=0.0):
        self.min_variance = min_variance

    def fit(self, X, y=None):
        X = as_matrix(X)
        ds = LabeledDataset(X, np.full(X.shape[0], "_"), np.zeros(X.shape[0], np.int64))
        self.mask_ = fit_variance_mask(ds, self.min_variance)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "mask_")
        X = as_matrix(X, n_columns=self.n_features_in_)
        return X[:, list(self.mask_.kept_indices)]

    def get_support(self, indices=False):
        check_is_fitted(self, "mask_")
        if indices:
            return np.asarray(self.mask_.kept_indices)
        support = np.zeros(self.n_features_in_, dtype=bool)
        support[list(self.mask_.kept_indices)] = True
        return support


def temporal_split(ds, train_fraction=0.8):
    """Oldest ``ceil(train_fraction * n)`` samples train, the rest test.

    Sorting is stable, so equal timestamps keep their original row order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(ds)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    # decimal-exact so that e.g. 0.8 * 10 is 8, not 9
    n_train = math.ceil(Fraction(str(train_fraction)) * n)
    order = np.argsort(ds.timestamps, kind="stable")
    return ds.take(order[:n_train]), ds.take(order[n_train:])


@dataclass(frozen=True, eq=False)
class DriftScenario:
    train: LabeledDataset
    test_known: LabeledDataset
    test_unknown: LabeledDataset
    holdout_family: str


def build_drift_scenario(train, test, holdout_family):
    """Remove one family from training and pool all of its rows as unknowns."""
    available = sorted(set(train.families) | set(test.families))
    if holdout_family not in available:
        raise DatasetError(
            f"unknown family {holdout_family!r}; available: {', '.join(available)}"
        )
    tr_out = train.labels == holdout_family
    te_out = test.labels == holdout_family
    kept_train = train.take(np.flatnonzero(~tr_out))
    if len(kept_train.families) < 2:
        warnings.warn(
            f"holding out {holdout_family!r} leaves {len(kept_train.families)} "
            "family in training",
            stacklevel=2,
        )
    return DriftScenario(
        train=kept_train,
        test_known=test.take(np.flatnonzero(~te_out)),
        test_unknown=concat_datasets(
            train.take(np.flatnonzero(tr_out)), test.take(np.flatnonzero(te_out))
        ),
        holdout_family=holdout_family,
    )


@dataclass(frozen=True)
class SyntheticSpec:
    n_families: int
    dim: int
    samples_per_family: int
    centroid_separation: float
    clusters_per_family: int = 1

    def __post_init__(self):
        for name in ("n_families", "dim", "samples_per_family", "clusters_per_family"):
            check_positive_int(getattr(self, name), name)
        if not (self.centroid_separation > 0 and math.isfinite(self.centroid_separation)):
            raise ValueError("centroid_separation must be positive and finite")


def _place_centroids(k, dim, separation, rng, retries=200, max_growth=60):
    # Gaussian proposals scaled so a typical pairwise gap is about `separation`;
    # the scale grows by 10% each time `retries` proposals in a row are rejected.
    scale = separation / math.sqrt(2 * dim)
    centroids = []
    growth = 0
    while len(centroids) < k:
        for _ in range(retries):
            cand = rng.normal(scale=scale, size=dim)
            if all(np.linalg.norm(cand - c) >= separation for c in centroids):
                centroids.append(cand)
                break
        else:
            growth += 1
            if growth > max_growth:
                raise DatasetError(
                    f"could not place {k} centroids {separation} apart in {dim} dimensions"
                )
            scale *= 1.1
    return np.array(centroids)


def generate_synthetic(spec, seed=0):
    """Isotropic unit-variance Gaussian blobs, ``clusters_per_family`` per family.

    Returns rows ordered by ascending random timestamp. Blob centroids are
    available as ``generate_synthetic_with_centroids``.
    """
    return generate_synthetic_with_centroids(spec, seed)[0]


def generate_synthetic_with_centroids(spec, seed=0):
    rng = np.random.default_rng(seed)
    n_blobs = spec.n_families * spec.clusters_per_family
    centroids = _place_centroids(n_blobs, spec.dim, spec.centroid_separation, rng)
    width = len(str(spec.n_families - 1))
    names = [f"family{f:0{width}d}" for f in range(spec.n_families)]

    feats, labels, blob_ids = [], [], []
    for f in range(spec.n_families):
        # split samples across the family's blobs as evenly as possible
        sizes = np.full(spec.clusters_per_family, spec.samples_per_family // spec.clusters_per_family)
        sizes[: spec.samples_per_family % spec.clusters_per_family] += 1
        for c, size in enumerate(sizes):
            b = f * spec.clusters_per_family + c
            feats.append(centroids[b] + rng.standard_normal((size, spec.dim)))
            labels += [names[f]] * int(size)
            blob_ids += [b] * int(size)
    X = np.vstack(feats)
    stamps = rng.integers(*_SYNTH_TIME_RANGE, size=X.shape[0])
    order = np.argsort(stamps, kind="stable")
    ds = LabeledDataset(
        X[order],
        np.array(labels, dtype=str)[order],
        stamps[order],
        tuple(f"x{i}" for i in range(spec.dim)),
    )
    return ds, centroids, np.array(blob_ids)[order]
