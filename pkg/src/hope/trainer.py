"""SGD maximum-likelihood training of HOPE models, plus the learning-rate and
momentum schedules shared with supervised training.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import InvalidArgumentError, TrainingDivergedError
from .gmm import VARIANCE_FLOOR
from .movmf import KAPPA_FLOOR
from .noise import SIGMA2_FLOOR, jacobian_term, l2_gradient_u, sigma2_update
from .projection import correlation_sum, normalize_rows, penalty, penalty_gradient

__all__ = [
    "WEIGHT_FLOOR",
    "TrainConfig",
    "EpochRecord",
    "TrainReport",
    "lr_at",
    "momentum_at",
    "minibatches",
    "project_constraints",
    "train_unsupervised",
]

logger = logging.getLogger(__name__)

WEIGHT_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for both training modes.

    The field defaults are the unsupervised settings: lr 0.002 decaying by
    0.95 per epoch, minibatch 100, beta 1.0, momentum 0.5 -> 0.9, and sigma^2
    re-estimated in closed form after every minibatch.  :meth:`patch_features`
    gives the patch-model settings with sigma^2 pinned at 0.1 and
    :meth:`supervised` the network training settings.
    """

    epochs: int = 50
    minibatch_size: int = 100
    lr0: float = 0.002
    lr_decay: float = 0.95
    momentum_initial: float = 0.5
    momentum_final: float = 0.9
    momentum_epochs: int | None = None
    penalty_weight: float = 1.0
    mixture_lr_scale: float = 1.0
    sigma2_mode: str = "learned"
    sigma2_value: float = 0.1
    sigma2_ema: float | None = None
    freeze_projection: bool = False
    weight_decay: float = 0.0
    init_gamma: float = 0.5
    schedule: str = "exponential"
    seed: int = 0
    deterministic_reduction: bool = True

    def __post_init__(self):
        if not 0.0 <= self.momentum_initial <= self.momentum_final < 1.0:
            raise InvalidArgumentError("need 0 <= momentum_initial <= momentum_final < 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise InvalidArgumentError("lr_decay must be in (0, 1]")
        if self.lr0 <= 0:
            raise InvalidArgumentError("lr0 must be > 0")
        if self.minibatch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("minibatch_size must be >= 1 and epochs >= 0")
        if self.penalty_weight < 0:
            raise InvalidArgumentError("penalty_weight must be >= 0")
        if self.mixture_lr_scale <= 0:
            raise InvalidArgumentError("mixture_lr_scale must be > 0")
        if self.sigma2_mode not in ("fixed", "learned"):
            raise InvalidArgumentError("sigma2_mode must be 'fixed' or 'learned'")
        if self.schedule not in ("exponential", "dev-halving"):
            raise InvalidArgumentError(f"unknown schedule {self.schedule!r}")

    @classmethod
    def patch_features(cls, **overrides):
        """HOPE-movMF patch model settings: fixed sigma^2 = 0.1, constant lr 0.002.

        The mixture rate is scaled by the minibatch size, so the means and
        weights take summed-gradient steps (rate times batch sum) while
        U keeps the batch-mean step (summed steps collapse U on patch data).
        """
        base = cls(lr_decay=1.0, momentum_final=0.5, sigma2_mode="fixed", sigma2_value=0.1,
                   mixture_lr_scale=100.0)
        return replace(base, **overrides)

    @classmethod
    def supervised(cls, **overrides):
        """Network training defaults: lr 0.004 * 0.998^t, momentum 0.5 -> 0.99
        over T = 50 epochs, beta 0.01, weight decay 1e-5, init gamma 0.5."""
        base = cls(
            epochs=50,
            minibatch_size=100,
            lr0=0.004,
            lr_decay=0.998,
            momentum_initial=0.5,
            momentum_final=0.99,
            penalty_weight=0.01,
            sigma2_mode="fixed",
            weight_decay=1e-5,
            init_gamma=0.5,
        )
        return replace(base, **overrides)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def lr_at(config, epoch):
    """epsilon_t = lr0 * lr_decay ** t."""
    return config.lr0 * config.lr_decay**epoch


def momentum_at(config, epoch):
    """Linear ramp from momentum_initial to momentum_final over T epochs."""
    T = config.momentum_epochs if config.momentum_epochs is not None else config.epochs
    if T <= 0 or epoch >= T:
        return config.momentum_final
    frac = epoch / T
    return frac * config.momentum_final + (1.0 - frac) * config.momentum_initial


def minibatches(n, size, rng):
    """Index arrays for one epoch over a fresh random permutation."""
    perm = rng.permutation(n)
    return [perm[i:i + size] for i in range(0, n, size)]


@dataclass
class EpochRecord:
    epoch: int
    objective: float
    penalty: float
    correlation_sum: float
    sigma2: float
    seconds: float

    def key(self):
        """Everything except wall time, for reproducibility comparisons."""
        return (self.epoch, self.objective, self.penalty, self.correlation_sum, self.sigma2)


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    seed: int | None = None

    def append(self, record):
        self.records.append(record)

    def deterministic_view(self):
        return [r.key() for r in self.records]

    def to_jsonl(self):
        return "".join(json.dumps(asdict(r)) + "\n" for r in self.records)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def from_jsonl(cls, text, record_type=None):
        """Parse records written by :meth:`to_jsonl`; ``record_type`` defaults
        to :class:`EpochRecord`."""
        record_type = record_type or EpochRecord
        records = [record_type(**json.loads(line)) for line in text.splitlines() if line.strip()]
        return cls(records)


def project_constraints(model):
    """Renormalize pi, rows of U (or clamp |u_i| >= 1 in free-norm mode) and
    apply the kappa / variance floors.  Modifies ``model`` in place."""
    mix = model.mixture
    w = np.maximum(mix.weights, WEIGHT_FLOOR)
    mix.weights = w / w.sum()
    U = model.projection
    if model.noise_mode == "orthonormal":
        model.projection = normalize_rows(U)
    else:
        norms = np.sqrt(np.einsum("ij,ij->i", U, U))
        model.projection = U / np.minimum(norms, 1.0)[:, None]
    if model.kind == "movmf":
        kappa = mix.kappas
        small = kappa < KAPPA_FLOOR
        if np.any(small):
            mix.means[small] *= (KAPPA_FLOOR / kappa[small])[:, None]
    else:
        np.maximum(mix.variances, VARIANCE_FLOOR, out=mix.variances)


def _step(model, Xb, lr, mom, velocity, config):
    """One SGD update on a minibatch (gradient ascent with momentum)."""
    U = model.projection
    beta = config.penalty_weight
    grads = model.l1_gradients(Xb)
    mix = model.mixture
    scale = 1.0 / len(Xb)

    if not config.freeze_projection:
        gU = scale * (grads.projection + l2_gradient_u(U, model.sigma2, Xb, model.noise_mode))
        if model.noise_mode == "free-norm":
            gU = gU + scale * jacobian_term(U, len(Xb))[1]
        if beta:
            gU = gU - beta * penalty_gradient(U)
        velocity["U"] = mom * velocity["U"] + lr * gU
        model.projection = U + velocity["U"]

    # the mixture parameters see only their share of the batch (gradients
    # scale with pi_k), so they may take a larger rate than U
    lr_mix = lr * config.mixture_lr_scale
    velocity["means"] = mom * velocity["means"] + lr_mix * scale * grads.means
    mix.means = mix.means + velocity["means"]
    if model.kind == "gmm":
        # log-variance parameterization: d/dlog v = v * d/dv
        g_logv = scale * grads.variances * mix.variances
        velocity["logvar"] = mom * velocity["logvar"] + lr_mix * g_logv
        mix.variances = np.exp(np.log(mix.variances) + velocity["logvar"])
    velocity["weights"] = mom * velocity["weights"] + lr_mix * scale * grads.weights
    mix.weights = mix.weights + velocity["weights"]

    if config.sigma2_mode == "learned":
        s2 = sigma2_update(model.projection, Xb, model.noise_mode)
        if config.sigma2_ema is not None:
            s2 = config.sigma2_ema * model.sigma2 + (1.0 - config.sigma2_ema) * s2
        model.sigma2 = max(s2, SIGMA2_FLOOR)

    project_constraints(model)


def _record(model, X, config, epoch, seconds):
    U = model.projection
    obj = model.objective(X, config.penalty_weight)
    return EpochRecord(epoch, obj, penalty(U), correlation_sum(U), float(model.sigma2), seconds)


def train_unsupervised(model, X, config=None, callback=None):
    """Maximize L1 + L2 - beta D(U) over minibatches of ``X``.

    Returns ``(trained_model, report)``; the input model is not modified.
    ``callback(model, epoch, batch)`` runs after every minibatch update.
    """
    config = config or TrainConfig()
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.n_input:
        raise InvalidArgumentError(
            f"data shape {X.shape} does not match model input dimension {model.n_input}"
        )
    model = model.copy()
    if config.sigma2_mode == "fixed":
        model.sigma2 = config.sigma2_value
    project_constraints(model)
    rng = np.random.default_rng(config.seed)
    velocity = {
        "U": np.zeros_like(model.projection),
        "means": np.zeros_like(model.mixture.means),
        "weights": np.zeros_like(model.mixture.weights),
    }
    if model.kind == "gmm":
        velocity["logvar"] = np.zeros_like(model.mixture.variances)

    report = TrainReport(seed=config.seed)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        lr, mom = lr_at(config, epoch), momentum_at(config, epoch)
        for b, idx in enumerate(minibatches(len(X), config.minibatch_size, rng)):
            with np.errstate(over="ignore", invalid="ignore"):
                _step(model, X[idx], lr, mom, velocity, config)
            if not (np.all(np.isfinite(model.projection))
                    and np.all(np.isfinite(model.mixture.means))
                    and np.isfinite(model.sigma2)):
                raise TrainingDivergedError(
                    f"non-finite parameters at epoch {epoch}, minibatch {b}", epoch, b
                )
            if callback is not None:
                callback(model, epoch, b)
        record = _record(model, X, config, epoch, time.perf_counter() - start)
        if not np.isfinite(record.objective):
            raise TrainingDivergedError(f"non-finite objective at epoch {epoch}", epoch, None)
        report.append(record)
        logger.info("epoch %d objective %.6g D(U) %.4g", epoch, record.objective, record.penalty)
    return model, report
