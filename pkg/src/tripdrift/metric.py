"""Triplet sampling, triplet loss and the autoencoder training loops."""

from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_matrix, check_positive_int
from .dataio import FeatureMask, LabeledDataset
from .exceptions import DatasetError, TrainingDivergedError
from .neuralnet import (
    AdamState,
    adam_step,
    backward,
    encode,
    forward,
    init_network,
    mse_loss,
)

DEFAULT_HIDDEN_DIMS = (1024, 256, 32)


@dataclass(frozen=True)
class Triplet:
    anchor_idx: int
    positive_idx: int
    negative_idx: int


def _as_generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_triplet_indices(labels, count, seed=None):
    """Vectorised triplet draw; returns an ``(count, 3)`` int array of
    anchor, positive and negative row indices.

    The anchor family is uniform over the families that have at least two
    members (a singleton family cannot supply a distinct positive), the
    anchor and positive are uniform within it, and the negative is uniform
    over every row of the other families.
    """
    labels = np.asarray(labels)
    count = check_positive_int(count, "count")
    rng = _as_generator(seed)
    fams, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if fams.size < 2:
        raise DatasetError(f"triplets need at least 2 families, found {fams.size}")
    eligible = np.flatnonzero(sizes >= 2)
    if eligible.size == 0:
        raise DatasetError("no family has the 2 samples needed for an anchor/positive pair")

    # rows grouped by family: family f occupies order[starts[f]:starts[f] + sizes[f]]
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n = labels.shape[0]

    fam = eligible[rng.integers(0, eligible.size, size=count)]
    a_pos = rng.integers(0, sizes[fam])
    p_pos = rng.integers(0, sizes[fam] - 1)
    p_pos = p_pos + (p_pos >= a_pos)
    n_pos = rng.integers(0, n - sizes[fam])
    # skip over the anchor family's block in the grouped ordering
    n_pos = n_pos + np.where(n_pos >= starts[fam], sizes[fam], 0)

    out = np.empty((count, 3), dtype=np.intp)
    out[:, 0] = order[starts[fam] + a_pos]
    out[:, 1] = order[starts[fam] + p_pos]
    out[:, 2] = order[n_pos]
    return out


def sample_triplets(ds, count, seed=None):
    """Draw ``count`` independent random triplets from a labeled dataset."""
    idx = sample_triplet_indices(ds.labels, count, seed)
    return [Triplet(int(a), int(p), int(n)) for a, p, n in idx]


def triplet_loss(emb_a, emb_p, emb_n, margin=1.0):
    """Hinge on squared Euclidean distances.

    Returns ``(loss, (grad_a, grad_p, grad_n))``. When the hinge argument is
    zero or negative all gradients are zero.
    """
    a = np.asarray(emb_a, dtype=np.float64)
    p = np.asarray(emb_p, dtype=np.float64)
    n = np.asarray(emb_n, dtype=np.float64)
    if not (a.shape == p.shape == n.shape) or a.ndim != 1:
        raise ValueError(f"embedding shapes differ: {a.shape}, {p.shape}, {n.shape}")
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin}")
    d_ap = float(np.sum((a - p) ** 2))
    d_an = float(np.sum((a - n) ** 2))
    value = d_ap - d_an + margin
    if value <= 0.0:
        z = np.zeros_like(a)
        return 0.0, (z, z.copy(), z.copy())
    return value, (2.0 * (n - p), -2.0 * (a - p), 2.0 * (a - n))


def batch_triplet_loss(anchors, positives, negatives, margin=1.0):
    """Mean triplet loss over a batch; gradients carry the ``1/N`` factor.

    Returns ``(loss, (grad_anchors, grad_positives, grad_negatives))`` with
    each gradient shaped like its input.
    """
    A = np.asarray(anchors, dtype=np.float64)
    P = np.asarray(positives, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64)
    if A.ndim != 2 or not (A.shape == P.shape == N.shape):
        raise ValueError(f"batch shapes differ: {A.shape}, {P.shape}, {N.shape}")
    if A.shape[0] == 0:
        raise ValueError("empty triplet batch")
    if not margin > 0:
        raise ValueError(f"margin must be positive, got {margin}")
    d_ap = np.sum((A - P) ** 2, axis=1)
    d_an = np.sum((A - N) ** 2, axis=1)
    value = d_ap - d_an + margin
    active = (value > 0.0)[:, None]
    count = A.shape[0]
    loss = float(np.sum(np.where(value > 0.0, value, 0.0)) / count)
    scale = 2.0 / count
    return loss, (
        np.where(active, scale * (N - P), 0.0),
        np.where(active, -scale * (A - P), 0.0),
        np.where(active, scale * (A - N), 0.0),
    )


class CompositeObjective:
    """``mse + triplet_weight * mean triplet loss`` over a stacked batch.

    The batch holds ``3N`` rows: N anchors, then N positives, then N
    negatives. The reconstruction term averages over all ``3N`` rows; the
    triplet gradient enters at the bottleneck.

    Calling the object returns ``(total_loss, ParamGrads)`` so it can be
    handed to :func:`tripdrift.neuralnet.grad_check`.
    """

    def __init__(self, triplet_weight=1.0, margin=1.0):
        self.triplet_weight = triplet_weight
        self.margin = margin

    def evaluate(self, net, batch, with_triplet=True):
        trace = forward(net, batch)
        recon, g_recon = mse_loss(trace.reconstruction, trace.inputs)
        trip = 0.0
        g_bottleneck = None
        if with_triplet:
            z = trace.bottleneck
            if z.shape[0] % 3:
                raise ValueError("triplet batch must have a multiple of 3 rows")
            k = z.shape[0] // 3
            trip, (ga, gp, gn) = batch_triplet_loss(z[:k], z[k : 2 * k], z[2 * k :], self.margin)
            if self.triplet_weight != 0:
                g_bottleneck = self.triplet_weight * np.concatenate([ga, gp, gn])
        grads = backward(net, trace, grad_bottleneck=g_bottleneck, grad_reconstruction=g_recon)
        return recon + self.triplet_weight * trip, recon, trip, grads

    def __call__(self, net, batch):
        total, _, _, grads = self.evaluate(net, batch, with_triplet=self.triplet_weight != 0)
        return total, grads


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters. ``layer_dims=None`` means input width
    followed by :data:`DEFAULT_HIDDEN_DIMS`; ``triplets_per_epoch=None``
    means one triplet per training row."""

    layer_dims: tuple = None
    margin: float = 1.0
    triplet_weight: float = 1.0
    epochs: int = 100
    batch_size: int = 64
    triplets_per_epoch: int = None
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.layer_dims is not None:
            object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        check_positive_int(self.epochs, "epochs")
        check_positive_int(self.batch_size, "batch_size")
        if self.triplets_per_epoch is not None:
            check_positive_int(self.triplets_per_epoch, "triplets_per_epoch")
        if not (self.margin > 0 and np.isfinite(self.margin)):
            raise ValueError(f"margin must be positive and finite, got {self.margin}")
        if not self.triplet_weight >= 0:
            raise ValueError(f"triplet_weight must be >= 0, got {self.triplet_weight}")
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")

    def resolve_dims(self, n_features):
        if self.layer_dims is None:
            return (int(n_features),) + DEFAULT_HIDDEN_DIMS
        return self.layer_dims

    def to_dict(self):
        d = asdict(self)
        if d["layer_dims"] is not None:
            d["layer_dims"] = list(d["layer_dims"])
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True, eq=False)
class TrainedModel:
    network: object
    feature_mask: FeatureMask
    config: TrainConfig
    mode: str
    loss_curve: np.ndarray  # rows: (epoch, reconstruction_loss, triplet_loss)

    @property
    def latent_dim(self):
        return self.network.latent_dim

    def loss_curve_csv(self):
        lines = ["epoch,recon_loss,triplet_loss"]
        lines += [f"{int(e)},{r!r},{t!r}" for e, r, t in self.loss_curve.tolist()]
        return "\n".join(lines) + "\n"


def _can_sample_triplets(labels):
    _, counts = np.unique(labels, return_counts=True)
    return counts.size >= 2 and np.any(counts >= 2)


def _fit(train, cfg, mode, mask):
    X = train.features
    dims = cfg.resolve_dims(X.shape[1])
    if dims[0] != X.shape[1]:
        raise ValueError(f"dataset width {X.shape[1]} != network input dim {dims[0]}")
    if len(train) == 0:
        raise DatasetError("empty training set")
    mask = mask if mask is not None else FeatureMask.identity(X.shape[1])
    if mask.width != X.shape[1]:
        raise ValueError(f"mask keeps {mask.width} columns but data has {X.shape[1]}")

    use_triplets = _can_sample_triplets(train.labels)
    if mode == "triplet" and not use_triplets:
        raise DatasetError("triplet training needs at least 2 families and a family of size >= 2")

    net = init_network(dims, seed=cfg.seed)
    state = AdamState.zeros_like(
        net,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        epsilon=cfg.epsilon,
    )
    # independent stream from the one that initialised the weights
    rng = np.random.default_rng([cfg.seed, 1])
    weight = cfg.triplet_weight if mode == "triplet" else 0.0
    objective = CompositeObjective(weight, cfg.margin)
    per_epoch = cfg.triplets_per_epoch or len(train)

    curve = []
    for epoch in range(1, cfg.epochs + 1):
        if use_triplets:
            schedule = sample_triplet_indices(train.labels, per_epoch, rng)
        else:
            schedule = rng.integers(0, len(train), size=(per_epoch, 3))
        recon_sum = trip_sum = 0.0
        for start in range(0, per_epoch, cfg.batch_size):
            idx = schedule[start : start + cfg.batch_size]
            rows = np.concatenate([idx[:, 0], idx[:, 1], idx[:, 2]])
            total, recon, trip, grads = objective.evaluate(net, X[rows], with_triplet=use_triplets)
            if not np.isfinite(total):
                raise TrainingDivergedError("non-finite loss", epoch=epoch)
            try:
                net, state = adam_step(net, grads, state)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(str(exc), epoch=epoch) from None
            recon_sum += recon * len(idx)
            trip_sum += trip * len(idx)
        curve.append((epoch, recon_sum / per_epoch, trip_sum / per_epoch))
        if not all(np.isfinite(curve[-1][1:])):
            raise TrainingDivergedError("non-finite epoch loss", epoch=epoch)
    return TrainedModel(net, mask, replace(cfg, layer_dims=dims), mode, np.array(curve, dtype=np.float64))


def train_vanilla(train, cfg=None, mask=None):
    """Reconstruction-only autoencoder.

    Batches are drawn from the same triplet schedule as :func:`train_triplet`
    (when the data has two or more families), so with ``triplet_weight=0``
    both produce bit-identical networks. The triplet column of the loss
    curve is still reported, for monitoring only.
    """
    return _fit(train, cfg or TrainConfig(), "vanilla", mask)


def train_triplet(train, cfg=None, mask=None):
    """Autoencoder trained on ``mse + triplet_weight * batch triplet loss``."""
    cfg = cfg or TrainConfig()
    if len(train.families) < 2:
        raise DatasetError("triplet training needs at least 2 families")
    return _fit(train, cfg, "triplet", mask)


def _model_input(model, features):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D feature matrix, got shape {X.shape}")
    width = model.network.input_dim
    if X.shape[1] == width:
        return X
    kept = model.feature_mask.kept_indices
    if model.feature_mask.width == width and kept and kept[-1] < X.shape[1]:
        return X[:, list(kept)]
    raise ValueError(f"data width {X.shape[1]} does not match model input {width}")


def embed(model, ds):
    """Latent (bottleneck) coordinates of each row.

    Accepts either already-masked data or raw data the model's feature mask
    can be applied to.
    """
    features = ds.features if isinstance(ds, LabeledDataset) else ds
    return encode(model.network, _model_input(model, features))


class TripletAutoencoder(TransformerMixin, BaseEstimator):
    """Estimator front for the triplet (or vanilla) autoencoder.

    ``fit(X, y)`` trains on rows ``X`` with family labels ``y``;
    ``transform(X)`` returns bottleneck embeddings.
    """

    def __init__(
        self,
        hidden_dims=DEFAULT_HIDDEN_DIMS,
        mode="triplet",
        margin=1.0,
        triplet_weight=1.0,
        epochs=100,
        batch_size=64,
        triplets_per_epoch=None,
        learning_rate=1e-3,
        random_state=42,
    ):
        self.hidden_dims = hidden_dims
        self.mode = mode
        self.margin = margin
        self.triplet_weight = triplet_weight
        self.epochs = epochs
        self.batch_size = batch_size
        self.triplets_per_epoch = triplets_per_epoch
        self.learning_rate = learning_rate
        self.random_state = random_state

    def _config(self, n_features):
        return TrainConfig(
            layer_dims=(n_features, *self.hidden_dims),
            margin=self.margin,
            triplet_weight=self.triplet_weight,
            epochs=self.epochs,
            batch_size=self.batch_size,
            triplets_per_epoch=self.triplets_per_epoch,
            learning_rate=self.learning_rate,
            seed=self.random_state,
        )

    def fit(self, X, y=None):
        if self.mode not in ("triplet", "vanilla"):
            raise ValueError(f"mode must be 'triplet' or 'vanilla', got {self.mode!r}")
        X = as_matrix(X)
        if y is None:
            if self.mode == "triplet":
                raise ValueError("triplet mode needs family labels y")
            y = np.full(X.shape[0], "_")
        ds = LabeledDataset(X, np.asarray(y).astype(str), np.zeros(X.shape[0], np.int64))
        cfg = self._config(X.shape[1])
        train = train_triplet if self.mode == "triplet" else train_vanilla
        self.model_ = train(ds, cfg)
        self.n_features_in_ = X.shape[1]
        self.loss_curve_ = self.model_.loss_curve
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return embed(self.model_, as_matrix(X, n_columns=self.n_features_in_))
