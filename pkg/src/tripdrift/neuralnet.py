"""Dense symmetric autoencoder with hand-written forward/backward passes and Adam.

Everything runs in float64. Parameters are stored per layer as ``W`` with
shape ``(out, in)`` and ``b`` with shape ``(out,)``. The decoder mirrors the
encoder widths, so encoder dims ``[d0, d1, ..., dk]`` give the full layer
sequence ``d0 -> d1 -> ... -> dk -> ... -> d1 -> d0``.

Hidden layers use ReLU; the bottleneck and the output layer are linear.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix
from .exceptions import TrainingDivergedError


@dataclass(frozen=True, eq=False)
class NetworkParams:
    layer_dims: tuple
    weights: tuple
    biases: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        full = self.full_dims
        if len(self.weights) != len(full) - 1 or len(self.biases) != len(full) - 1:
            raise ValueError("parameter count does not match layer_dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (full[i + 1], full[i]) or b.shape != (full[i + 1],):
                raise ValueError(
                    f"layer {i}: expected W {(full[i + 1], full[i])} and b "
                    f"{(full[i + 1],)}, got {W.shape} and {b.shape}"
                )

    @property
    def full_dims(self):
        return self.layer_dims + self.layer_dims[-2::-1]

    @property
    def n_layers(self):
        return 2 * (len(self.layer_dims) - 1)

    @property
    def n_encoder_layers(self):
        return len(self.layer_dims) - 1

    @property
    def input_dim(self):
        return self.layer_dims[0]

    @property
    def latent_dim(self):
        return self.layer_dims[-1]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def is_relu(self, layer):
        return layer not in (self.n_encoder_layers - 1, self.n_layers - 1)

    def flatten(self):
        """All parameters as one vector, ordered W0, b0, W1, b1, ..."""
        return _flatten(self.weights, self.biases)

    @classmethod
    def from_flat(cls, layer_dims, flat):
        weights, biases = _unflatten(tuple(layer_dims), np.asarray(flat, dtype=np.float64))
        return cls(tuple(layer_dims), weights, biases)

    def copy(self):
        return NetworkParams(
            self.layer_dims,
            tuple(W.copy() for W in self.weights),
            tuple(b.copy() for b in self.biases),
        )


@dataclass(frozen=True, eq=False)
class ParamGrads:
    weights: tuple
    biases: tuple

    def flatten(self):
        return _flatten(self.weights, self.biases)

    def __add__(self, other):
        return ParamGrads(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def scale(self, factor):
        return ParamGrads(
            tuple(factor * W for W in self.weights), tuple(factor * b for b in self.biases)
        )


@dataclass(frozen=True, eq=False)
class ActivationTrace:
    inputs: np.ndarray
    pre_activations: tuple
    activations: tuple
    bottleneck_layer: int

    @property
    def bottleneck(self):
        return self.activations[self.bottleneck_layer]

    @property
    def reconstruction(self):
        return self.activations[-1]


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: tuple
    second_moment: tuple
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, net, **hyper):
        shapes = _param_arrays(net.weights, net.biases)
        return cls(
            tuple(np.zeros_like(p) for p in shapes),
            tuple(np.zeros_like(p) for p in shapes),
            0,
            **hyper,
        )


def _param_arrays(weights, biases):
    out = []
    for W, b in zip(weights, biases):
        out += [W, b]
    return out


def _flatten(weights, biases):
    return np.concatenate([p.ravel() for p in _param_arrays(weights, biases)])


def _unflatten(layer_dims, flat):
    full = layer_dims + layer_dims[-2::-1]
    weights, biases, pos = [], [], 0
    for d_in, d_out in zip(full[:-1], full[1:]):
        weights.append(flat[pos : pos + d_out * d_in].reshape(d_out, d_in).copy())
        pos += d_out * d_in
        biases.append(flat[pos : pos + d_out].copy())
        pos += d_out
    if pos != flat.size:
        raise ValueError(f"expected {pos} parameters, got {flat.size}")
    return tuple(weights), tuple(biases)


def count_parameters(layer_dims):
    """Closed-form parameter count of the symmetric autoencoder."""
    enc = sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))
    rev = list(layer_dims[::-1])
    dec = sum(a * b + b for a, b in zip(rev[:-1], rev[1:]))
    return enc + dec


def init_network(layer_dims, seed=0):
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(
            f"layer_dims needs at least two positive entries, got {list(layer_dims)}"
        )
    rng = np.random.default_rng(seed)
    full = dims + dims[-2::-1]
    weights, biases = [], []
    for d_in, d_out in zip(full[:-1], full[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_out, d_in)))
        biases.append(np.zeros(d_out))
    return NetworkParams(tuple(dims), tuple(weights), tuple(biases))


def forward(net, batch):
    x = as_matrix(batch, "batch", n_columns=net.input_dim)
    pre, post = [], []
    a = x
    for i, (W, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ W.T + b
        a = np.maximum(z, 0.0) if net.is_relu(i) else z
        pre.append(z)
        post.append(a)
    return ActivationTrace(x, tuple(pre), tuple(post), net.n_encoder_layers - 1)


def encode(net, batch):
    """Bottleneck activations only; skips the decoder."""
    a = as_matrix(batch, "batch", n_columns=net.input_dim)
    for i in range(net.n_encoder_layers):
        z = a @ net.weights[i].T + net.biases[i]
        a = np.maximum(z, 0.0) if net.is_relu(i) else z
    return a


def mse_loss(reconstruction, target):
    """Mean squared error over every entry, and its gradient w.r.t. ``reconstruction``."""
    r = np.asarray(reconstruction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {t.shape}")
    diff = r - t
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def backward(net, trace, grad_bottleneck=None, grad_reconstruction=None):
    """Reverse-mode gradients of a loss given its gradient at the bottleneck
    and/or at the reconstruction. Contributions from both entry points add up
    in the shared encoder layers.
    """
    k = trace.bottleneck_layer
    if grad_reconstruction is not None:
        delta = np.asarray(grad_reconstruction, dtype=np.float64)
        if delta.shape != trace.reconstruction.shape:
            raise ValueError(
                f"reconstruction grad shape {delta.shape} != {trace.reconstruction.shape}"
            )
    else:
        delta = None
    if grad_bottleneck is not None:
        grad_bottleneck = np.asarray(grad_bottleneck, dtype=np.float64)
        if grad_bottleneck.shape != trace.bottleneck.shape:
            raise ValueError(
                f"bottleneck grad shape {grad_bottleneck.shape} != {trace.bottleneck.shape}"
            )

    gW = [None] * net.n_layers
    gb = [None] * net.n_layers
    for i in range(net.n_layers - 1, -1, -1):
        if i == k and grad_bottleneck is not None:
            delta = grad_bottleneck if delta is None else delta + grad_bottleneck
        W = net.weights[i]
        if delta is None:
            # nothing flows into this layer yet
            gW[i] = np.zeros_like(W)
            gb[i] = np.zeros_like(net.biases[i])
            continue
        if net.is_relu(i):
            delta = delta * (trace.pre_activations[i] > 0)
        a_prev = trace.activations[i - 1] if i > 0 else trace.inputs
        gW[i] = delta.T @ a_prev
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ W
    return ParamGrads(tuple(gW), tuple(gb))


def mse_objective(net, batch):
    """Reconstruction-only objective: returns ``(loss, ParamGrads)``."""
    trace = forward(net, batch)
    loss, grad = mse_loss(trace.reconstruction, trace.inputs)
    return loss, backward(net, trace, grad_reconstruction=grad)


def adam_step(net, grads, state):
    """One bias-corrected Adam update. Returns new ``(net, state)``."""
    g_list = _param_arrays(grads.weights, grads.biases)
    if not all(np.all(np.isfinite(g)) for g in g_list):
        raise TrainingDivergedError("non-finite gradient")
    p_list = _param_arrays(net.weights, net.biases)
    if len(g_list) != len(p_list) or any(g.shape != p.shape for g, p in zip(g_list, p_list)):
        raise ValueError("gradient shapes do not match parameters")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_list, g_list, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_p.append(p - step)
        new_m.append(m)
        new_v.append(v)
    new_net = NetworkParams(net.layer_dims, tuple(new_p[0::2]), tuple(new_p[1::2]))
    new_state = AdamState(
        tuple(new_m),
        tuple(new_v),
        t,
        state.learning_rate,
        state.beta1,
        state.beta2,
        state.epsilon,
    )
    return new_net, new_state


def grad_check(net, batch, objective=mse_objective, step=1e-5, max_params=None, seed=0):
    """Worst relative error between analytic and central-difference gradients.

    ``objective(net, batch)`` must return ``(loss, ParamGrads)``. When
    ``max_params`` is given and smaller than the parameter count, a seeded
    random subset of that many parameters is checked.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``, where the floor
    keeps exactly-zero gradients (dead ReLU units, inactive hinge) from
    dividing by zero.
    """
    _, grads = objective(net, batch)
    analytic = grads.flatten()
    theta = net.flatten()
    idx = np.arange(theta.size)
    if max_params is not None and max_params < theta.size:
        idx = np.sort(np.random.default_rng(seed).choice(theta.size, max_params, replace=False))

    worst = 0.0
    for j in idx:
        plus = theta.copy()
        plus[j] += step
        minus = theta.copy()
        minus[j] -= step
        f_plus = objective(NetworkParams.from_flat(net.layer_dims, plus), batch)[0]
        f_minus = objective(NetworkParams.from_flat(net.layer_dims, minus), batch)[0]
        numeric = (f_plus - f_minus) / (2.0 * step)
        a = analytic[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst
