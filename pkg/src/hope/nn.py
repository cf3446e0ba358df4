"""HOPE layers as neural-network layers.

A :class:`HopeLayer` is a projection U followed by a movMF "model layer": for
an input x it computes z = U x (optionally unit-normalized), the per-component
scores phi_k = b_k + z . mu_k and the rectified outputs eta_k = max(0, phi_k - eps).
With the exact vMF bias, b_k = ln pi_k + ln C_M(|mu_k|); with a free bias b_k is
an unconstrained parameter.  When z is not normalized the layer is a low-rank
factorization of a rectified dense layer, and :func:`collapse` returns that
dense layer.

Networks are stacks of HOPE and dense layers under a linear softmax output,
described by architecture strings such as ``"784-[100-1000]-10"``.
"""

import re
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .bessel import mean_resultant_length
from .errors import InvalidArgumentError, StateError, TrainingDivergedError
from .movmf import KAPPA_FLOOR, MovMf, normalize_projections
from .projection import (
    check_projection,
    correlation_sum,
    init_projection,
    normalize_rows,
    penalty,
    penalty_gradient,
)
from .trainer import WEIGHT_FLOOR, TrainConfig, TrainReport, lr_at, minibatches, momentum_at

__all__ = [
    "HopeLayer",
    "DenseLayer",
    "Network",
    "NetEpochRecord",
    "hope_forward",
    "hope_scores",
    "dense_forward",
    "collapse",
    "parse_arch",
    "arch_string",
    "stack",
    "build_network",
    "ce_objective",
    "ce_backprop",
    "predict",
    "error_rate",
    "train_supervised",
]


def glorot_uniform(n_in, n_out, rng, gamma=0.5):
    """(n_out, n_in) weights uniform in +-gamma*sqrt(6)/sqrt(n_in + n_out)."""
    bound = gamma * np.sqrt(6.0) / np.sqrt(n_in + n_out)
    return rng.uniform(-bound, bound, size=(n_out, n_in))


@dataclass
class HopeLayer:
    """Projection (M x D), movMF means (K x M) and either mixture weights pi
    (exact vMF bias) or a free bias vector.

    Exactly one of ``weights`` and ``bias`` is set.  ``threshold`` is the
    pruning level eps; ``normalize_z`` projects z onto the unit sphere before
    scoring (unsupervised feature extraction does, supervised training does not).
    """

    projection: np.ndarray
    means: np.ndarray
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    threshold: float = 0.0
    normalize_z: bool = False

    def __post_init__(self):
        self.projection = check_projection(np.asarray(self.projection, dtype=float))
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if self.means.shape[1] != self.projection.shape[0]:
            raise InvalidArgumentError(
                f"means have dimension {self.means.shape[1]} but the projection "
                f"has M={self.projection.shape[0]} rows"
            )
        if (self.weights is None) == (self.bias is None):
            raise InvalidArgumentError("HopeLayer needs exactly one of weights or bias")
        K = self.means.shape[0]
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (K,):
                raise InvalidArgumentError(f"weights shape {self.weights.shape} != ({K},)")
        else:
            self.bias = np.asarray(self.bias, dtype=float)
            if self.bias.shape != (K,):
                raise InvalidArgumentError(f"bias shape {self.bias.shape} != ({K},)")

    @property
    def n_input(self):
        return self.projection.shape[1]

    @property
    def n_latent(self):
        return self.projection.shape[0]

    @property
    def n_output(self):
        return self.means.shape[0]

    @property
    def bias_mode(self):
        return "exact" if self.weights is not None else "free"

    @classmethod
    def from_model(cls, model, threshold=0.0, normalize_z=None):
        """Wrap a trained movMF :class:`~hope.model.HopeModel` as a layer."""
        if model.kind != "movmf":
            raise InvalidArgumentError("only movMF HOPE models map onto network layers")
        nz = model.normalize_z if normalize_z is None else normalize_z
        return cls(
            model.projection.copy(),
            model.mixture.means.copy(),
            weights=model.mixture.weights.copy(),
            threshold=threshold,
            normalize_z=nz,
        )

    def component_bias(self):
        """b_k: ln pi_k + ln C_M(|mu_k|) in exact mode, the free bias otherwise."""
        if self.bias is not None:
            return self.bias
        return MovMf(self.weights, self.means).log_biases()

    def params(self):
        p = {"projection": self.projection, "means": self.means}
        if self.bias is not None:
            p["bias"] = self.bias
        else:
            p["weights"] = self.weights
        return p

    def set_params(self, params):
        for name, value in params.items():
            setattr(self, name, value)

    def copy(self):
        return HopeLayer(
            self.projection.copy(),
            self.means.copy(),
            None if self.weights is None else self.weights.copy(),
            None if self.bias is None else self.bias.copy(),
            self.threshold,
            self.normalize_z,
        )


@dataclass
class DenseLayer:
    """y = act(W x + b) with W of shape (K, D); act is "relu" or "linear"."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=float))
        self.bias = np.asarray(self.bias, dtype=float)
        if self.bias.shape != (self.weights.shape[0],):
            raise InvalidArgumentError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} units"
            )
        if self.activation not in ("relu", "linear"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise InvalidArgumentError("dense layer parameters must be finite")

    @property
    def n_input(self):
        return self.weights.shape[1]

    @property
    def n_output(self):
        return self.weights.shape[0]

    def params(self):
        return {"weights": self.weights, "bias": self.bias}

    def set_params(self, params):
        for name, value in params.items():
            setattr(self, name, value)

    def copy(self):
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


def _latent(layer, X):
    Zt = X @ layer.projection.T
    if layer.normalize_z:
        Z, norms = normalize_projections(Zt)
        return Z, norms
    return Zt, None


def hope_scores(layer, x):
    """phi_k = b_k + z . mu_k for one input (K-vector) or a batch (N x K)."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    if X.shape[1] != layer.n_input:
        raise InvalidArgumentError(f"input dimension {X.shape[1]} != D={layer.n_input}")
    Z, _ = _latent(layer, X)
    phi = Z @ layer.means.T + layer.component_bias()
    return phi[0] if x.ndim == 1 else phi


def hope_forward(layer, x):
    """eta_k = max(0, phi_k - eps) for one input or a batch."""
    return np.maximum(hope_scores(layer, x) - layer.threshold, 0.0)


def dense_forward(layer, x):
    x = np.asarray(x, dtype=float)
    a = x @ layer.weights.T + layer.bias
    return np.maximum(a, 0.0) if layer.activation == "relu" else a


def collapse(layer):
    """Merge projection and model layers: w_k = U^T mu_k, b_k = bias_k - eps.

    Exact only when z is not unit-normalized, because normalization makes the
    score a nonlinear function of x.
    """
    if layer.normalize_z:
        raise StateError(
            "collapse is exact only for layers without z normalization; "
            "set normalize_z=False first"
        )
    W = layer.means @ layer.projection
    b = layer.component_bias() - layer.threshold
    return DenseLayer(W, b, "relu")


@dataclass
class Network:
    """Hidden layers (HopeLayer | DenseLayer) followed by a linear softmax output."""

    layers: list
    output: DenseLayer

    def __post_init__(self):
        if self.output.activation != "linear":
            raise InvalidArgumentError("the output layer must be linear")
        _check_chain(self.layers + [self.output])

    @property
    def n_input(self):
        return (self.layers[0] if self.layers else self.output).n_input

    @property
    def n_classes(self):
        return self.output.n_output

    @property
    def hope_layers(self):
        return [layer for layer in self.layers if isinstance(layer, HopeLayer)]

    def all_layers(self):
        return self.layers + [self.output]

    def copy(self):
        return Network([layer.copy() for layer in self.layers], self.output.copy())

    def logits(self, X):
        h = np.asarray(X, dtype=float)
        for layer in self.layers:
            h = hope_forward(layer, h) if isinstance(layer, HopeLayer) else dense_forward(layer, h)
        return dense_forward(self.output, h)

    def penalty(self):
        return float(sum(penalty(layer.projection) for layer in self.hope_layers))

    def correlation_sum(self):
        return float(sum(correlation_sum(layer.projection) for layer in self.hope_layers))

    def collapsed(self):
        """Same network with every HOPE layer replaced by its dense collapse."""
        layers = [collapse(l) if isinstance(l, HopeLayer) else l.copy() for l in self.layers]
        return Network(layers, self.output.copy())


def _check_chain(layers):
    for i in range(1, len(layers)):
        prev, cur = layers[i - 1], layers[i]
        if prev.n_output != cur.n_input:
            raise InvalidArgumentError(
                f"dimension mismatch between layer {i - 1} ({type(prev).__name__}, "
                f"{prev.n_output} outputs) and layer {i} ({type(cur).__name__}, "
                f"{cur.n_input} inputs)"
            )


_ARCH_TOKEN = re.compile(r"\[(\d+)-(\d+)\]|(\d+)")


def parse_arch(text):
    """Parse an architecture string into ``(n_input, hidden, n_classes)``.

    ``hidden`` is a list of ``("hope", M, K)`` and ``("dense", K)`` tuples.
    Grammar: ``dim ('-' (dim | '[' dim '-' dim ']'))* '-' dim``.
    """
    if not isinstance(text, str) or not re.fullmatch(r"\d+(-(\d+|\[\d+-\d+\]))*-\d+", text):
        raise InvalidArgumentError(f"malformed architecture string {text!r}")
    tokens = []
    for m in _ARCH_TOKEN.finditer(text):
        if m.group(3) is not None:
            tokens.append(("dense", int(m.group(3))))
        else:
            tokens.append(("hope", int(m.group(1)), int(m.group(2))))
    dims = [t[-1] for t in tokens if t[0] == "dense"] + [t[1] for t in tokens if t[0] == "hope"]
    if any(d <= 0 for d in dims):
        raise InvalidArgumentError(f"architecture {text!r} contains a zero dimension")
    return tokens[0][1], tokens[1:-1], tokens[-1][1]


def arch_string(net):
    parts = [str(net.n_input)]
    for layer in net.layers:
        if isinstance(layer, HopeLayer):
            parts.append(f"[{layer.n_latent}-{layer.n_output}]")
        else:
            parts.append(str(layer.n_output))
    parts.append(str(net.n_classes))
    return "-".join(parts)


def stack(*layers, output):
    """Compose hidden layers and an output layer, checking every boundary."""
    return Network(list(layers), output)


def build_network(arch, rng, gamma=0.5, bias_mode="free", threshold=0.0):
    """Randomly initialized network for an architecture string.

    Weights use the scaled Glorot range gamma*sqrt(6)/sqrt(n_in + n_out);
    projection rows are then normalized.  HOPE layers start with a zero free
    bias, or uniform pi in exact mode.
    """
    if bias_mode not in ("free", "exact"):
        raise InvalidArgumentError(f"bias_mode must be 'free' or 'exact', got {bias_mode!r}")
    n_in, hidden, n_classes = parse_arch(arch)
    layers = []
    width = n_in
    for spec in hidden:
        if spec[0] == "hope":
            _, M, K = spec
            if M > width:
                raise InvalidArgumentError(
                    f"HOPE layer [{M}-{K}] projects {width} inputs up to M={M}"
                )
            U = init_projection(M, width, rng, gamma)
            mu = glorot_uniform(M, K, rng, gamma)
            if bias_mode == "free":
                layers.append(HopeLayer(U, mu, bias=np.zeros(K), threshold=threshold))
            else:
                layers.append(HopeLayer(U, mu, weights=np.full(K, 1.0 / K), threshold=threshold))
            width = K
        else:
            K = spec[1]
            layers.append(DenseLayer(glorot_uniform(width, K, rng, gamma), np.zeros(K)))
            width = K
    output = DenseLayer(glorot_uniform(width, n_classes, rng, gamma), np.zeros(n_classes), "linear")
    return Network(layers, output)


def _check_labels(y, n_classes, n):
    y = np.asarray(y)
    if y.shape != (n,):
        raise InvalidArgumentError(f"labels shape {y.shape} does not match {n} samples")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidArgumentError("labels must be integers")
    if n and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidArgumentError(f"labels must lie in [0, {n_classes})")
    return y


def ce_objective(net, X, y):
    """Mean negative log-likelihood of the true classes under the softmax output."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = _check_labels(y, net.n_classes, len(X))
    logits = net.logits(X)
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    return float(-logp[np.arange(len(X)), y].mean())


def _forward_cache(net, X):
    caches = []
    h = X
    for layer in net.layers:
        if isinstance(layer, HopeLayer):
            Z, norms = _latent(layer, h)
            a = Z @ layer.means.T + layer.component_bias() - layer.threshold
            caches.append((h, Z, norms, a))
            h = np.maximum(a, 0.0)
        else:
            a = h @ layer.weights.T + layer.bias
            caches.append((h, a))
            h = np.maximum(a, 0.0)
    logits = h @ net.output.weights.T + net.output.bias
    return caches, h, logits


def _hope_backward(layer, cache, dH, beta):
    X, Z, norms, a = cache
    dA = dH * (a > 0)
    grads = {"means": dA.T @ Z}
    colsum = dA.sum(axis=0)
    if layer.bias is not None:
        grads["bias"] = colsum
    else:
        kappa = np.sqrt(np.einsum("ij,ij->i", layer.means, layer.means))
        A = mean_resultant_length(layer.n_latent, kappa)
        # d ln C_M(|mu|) / d mu = -A(kappa) mu / kappa
        grads["means"] -= (colsum * A / kappa)[:, None] * layer.means
        g = colsum / layer.weights
        grads["weights"] = g - g.mean()  # tangent of the simplex
    dZ = dA @ layer.means
    if layer.normalize_z:
        dZ = (dZ - Z * np.einsum("ij,ij->i", Z, dZ)[:, None]) / norms[:, None]
    grads["projection"] = dZ.T @ X
    if beta:
        grads["projection"] = grads["projection"] + beta * penalty_gradient(layer.projection)
    return grads, dZ @ layer.projection


def ce_backprop(net, X, y, beta=0.0):
    """Gradients of ce_objective + beta * sum D(U) for every layer.

    Returns ``(loss, grads)`` where ``grads[i]`` is a dict keyed like
    ``layer.params()`` for ``net.all_layers()[i]``.  The pi gradient of an
    exact-bias HOPE layer is projected onto the simplex tangent (zero sum).
    The returned loss is the cross-entropy part only.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = _check_labels(y, net.n_classes, len(X))
    loss, grads, _ = _backprop(net, X, y, beta)
    return loss, grads


def _backprop(net, X, y, beta):
    N = len(X)
    caches, h, logits = _forward_cache(net, X)
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = float(-logp[np.arange(N), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(N), y] -= 1.0
    dlogits /= N
    grads = [{"weights": dlogits.T @ h, "bias": dlogits.sum(axis=0)}]
    dH = dlogits @ net.output.weights
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        if isinstance(layer, HopeLayer):
            g, dH = _hope_backward(layer, cache, dH, beta)
        else:
            h_in, a = cache
            dA = dH * (a > 0)
            g = {"weights": dA.T @ h_in, "bias": dA.sum(axis=0)}
            dH = dA @ layer.weights
        grads.append(g)
    grads.reverse()
    return loss, grads, logits


def predict(net, X, batch_size=2000):
    X = np.asarray(X)
    out = [np.argmax(net.logits(X[i:i + batch_size]), axis=1) for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def error_rate(net, X, y):
    y = np.asarray(y)
    return float(np.mean(predict(net, X) != y))


@dataclass
class NetEpochRecord:
    epoch: int
    lr: float
    momentum: float
    train_loss: float
    train_error: float
    dev_error: float
    correlation_sum: float
    seconds: float

    def key(self):
        d = asdict(self)
        d.pop("seconds")
        return tuple(d.values())


def _apply_constraints(net):
    for layer in net.hope_layers:
        layer.projection = normalize_rows(layer.projection)
        if layer.weights is not None:
            w = np.maximum(layer.weights, WEIGHT_FLOOR)
            layer.weights = w / w.sum()
            kappa = np.sqrt(np.einsum("ij,ij->i", layer.means, layer.means))
            small = kappa < KAPPA_FLOOR
            if np.any(small):
                layer.means[small] *= (KAPPA_FLOOR / kappa[small])[:, None]


def _check_finite(layers, epoch, batch):
    for i, layer in enumerate(layers):
        for name, value in layer.params().items():
            if not np.all(np.isfinite(value)):
                raise TrainingDivergedError(
                    f"non-finite {name} in layer {i} at epoch {epoch}, minibatch {batch}",
                    epoch, batch,
                )
        if isinstance(layer, HopeLayer):
            norms = np.linalg.norm(layer.projection, axis=1)
            if np.any(norms < 1e-12):
                raise TrainingDivergedError(
                    f"projection rows collapsed to zero in layer {i} at epoch {epoch}, "
                    f"minibatch {batch}; lower the learning rate",
                    epoch, batch,
                )


def _decayed(name, layer):
    """Weight decay applies to dense weight matrices only, not to HOPE layers."""
    return isinstance(layer, DenseLayer) and name == "weights"


@dataclass
class _HalvingState:
    best: float = np.inf
    prev: float = np.inf
    halving: bool = False
    small_steps: int = 0
    factor: float = 1.0
    history: list = field(default_factory=list)


def _update_halving(state, dev_error):
    """Keep lr while dev error improves, then halve every epoch; signal a stop
    once the improvement has been below 0.1% for two epochs in a row."""
    improvement = state.prev - dev_error
    if state.halving:
        state.small_steps = state.small_steps + 1 if improvement < 1e-3 else 0
    elif dev_error >= state.best:
        state.halving = True
    state.best = min(state.best, dev_error)
    state.prev = dev_error
    if state.halving:
        state.factor *= 0.5
    return state.small_steps >= 2


def train_supervised(net, X, y, X_dev, y_dev, config=None, callback=None):
    """Minibatch SGD with momentum on cross-entropy + beta * sum D(U).

    ``config.schedule`` selects ``"exponential"`` (lr0 * lr_decay^t) or
    ``"dev-halving"``.  Projection rows are renormalized after every
    minibatch.  ``callback(net, epoch, batch)`` runs after each update.
    Returns ``(trained_net, report)``.
    """
    config = config or TrainConfig.supervised()
    X = np.asarray(X, dtype=float)
    X_dev = np.asarray(X_dev, dtype=float)
    y = _check_labels(y, net.n_classes, len(X))
    y_dev = _check_labels(y_dev, net.n_classes, len(X_dev))
    if X.shape[1] != net.n_input or X_dev.shape[1] != net.n_input:
        raise InvalidArgumentError(f"data dimension does not match network input {net.n_input}")
    if len(X_dev) == 0:
        raise InvalidArgumentError("dev set must be nonempty")
    net = net.copy()
    _apply_constraints(net)
    rng = np.random.default_rng(config.seed)
    layers = net.all_layers()
    velocity = [{k: np.zeros_like(v) for k, v in layer.params().items()} for layer in layers]
    halving = _HalvingState()
    report = TrainReport(seed=config.seed)

    for epoch in range(config.epochs):
        start = time.perf_counter()
        if config.schedule == "exponential":
            lr = lr_at(config, epoch)
        else:
            lr = config.lr0 * halving.factor
        mom = momentum_at(config, epoch)
        loss_sum, wrong = 0.0, 0
        for b, idx in enumerate(minibatches(len(X), config.minibatch_size, rng)):
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads, logits = _backprop(net, X[idx], y[idx], config.penalty_weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, minibatch {b}", epoch, b
                )
            loss_sum += loss * len(idx)
            wrong += int(np.sum(np.argmax(logits, axis=1) != y[idx]))
            for layer, g, v in zip(layers, grads, velocity):
                params = layer.params()
                new = {}
                for name, grad in g.items():
                    if config.weight_decay and _decayed(name, layer):
                        grad = grad + config.weight_decay * params[name]
                    v[name] = mom * v[name] - lr * grad
                    new[name] = params[name] + v[name]
                layer.set_params(new)
            _check_finite(layers, epoch, b)
            _apply_constraints(net)
            if callback is not None:
                callback(net, epoch, b)
        dev_error = error_rate(net, X_dev, y_dev)
        record = NetEpochRecord(
            epoch, lr, mom, loss_sum / len(X), wrong / len(X), dev_error,
            net.correlation_sum(), time.perf_counter() - start,
        )
        report.append(record)
        if config.schedule == "dev-halving" and _update_halving(halving, dev_error):
            break
    return net, report
