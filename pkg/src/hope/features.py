"""Patch-based unsupervised feature learning for small grayscale images.

The pipeline samples w x w patches, normalizes each one to zero mean and unit
standard deviation, fits a patch-level feature extractor, scores the
extractor at every stride-1 position of an image and sums the rectified
activations within each image quadrant.  The pooled 4K-vector feeds a linear
softmax classifier.

Extractor kinds:

``kmeans``      f_k = max(0, |x - c_k| - eps)
``spkmeans``    f_k = max(0, x_hat . c_k - eps), x_hat = x / |x|
``movmf``       movMF on the raw patch space (projection fixed to identity)
``pca-movmf``   movMF on a fixed PCA projection
``hope-movmf``  movMF on a jointly learned HOPE projection

For the three movMF kinds f_k = max(0, ln pi_k + ln C_M(|mu_k|) + z . mu_k - eps)
with z = U x / |U x|.
"""

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import logsumexp

from .bessel import log_vmf_normalizer
from .errors import InvalidArgumentError, StateError, TrainingDivergedError
from .model import init_hope_model
from .nn import HopeLayer
from .trainer import TrainConfig, TrainReport, minibatches, train_unsupervised

__all__ = [
    "STD_FLOOR",
    "KINDS",
    "PatchSet",
    "PcaBasis",
    "FeatureExtractor",
    "LinearConfig",
    "SoftmaxClassifier",
    "normalize_patches",
    "extract_patches",
    "fit_pca",
    "fit_kmeans",
    "fit_spkmeans",
    "fit_movmf_extractor",
    "patch_scores",
    "featurize_patch",
    "featurize_patches",
    "calibrate_threshold",
    "convolve_pool",
    "quadrant_split",
    "prune_components",
    "train_linear_classifier",
]

STD_FLOOR = 1e-5
KINDS = ("kmeans", "spkmeans", "movmf", "pca-movmf", "hope-movmf")
MOVMF_KINDS = ("movmf", "pca-movmf", "hope-movmf")


@dataclass
class PatchSet:
    """N normalized patches of side ``side`` plus the per-patch mean and std."""

    patches: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    side: int

    @property
    def dim(self):
        return self.patches.shape[1]

    def __len__(self):
        return self.patches.shape[0]

    def nonconstant(self):
        """Patches whose std exceeded the floor, i.e. the ones that are not all zero."""
        return self.patches[self.stds > STD_FLOOR]


def normalize_patches(P, std_floor=STD_FLOOR):
    """Subtract each row's mean and divide by max(std, std_floor)."""
    P = np.asarray(P, dtype=float)
    mean = P.mean(axis=1)
    centered = P - mean[:, None]
    std = np.sqrt(np.mean(centered**2, axis=1))
    return centered / np.maximum(std, std_floor)[:, None], mean, std


def extract_patches(images, side=6, count=400_000, rng=None):
    """Sample ``count`` patches uniformly over images and valid positions."""
    images = np.asarray(images)
    if images.ndim == 2:
        images = images[None]
    n, H, W = images.shape
    if side > H or side > W or side < 1:
        raise InvalidArgumentError(f"patch side {side} does not fit {H}x{W} images")
    rng = np.random.default_rng(rng)
    img = rng.integers(0, n, size=count)
    rows = rng.integers(0, H - side + 1, size=count)
    cols = rng.integers(0, W - side + 1, size=count)
    dr, dc = np.divmod(np.arange(side * side), side)
    P = images[img[:, None], rows[:, None] + dr, cols[:, None] + dc]
    patches, mean, std = normalize_patches(P)
    return PatchSet(patches, mean, std, side)


@dataclass
class PcaBasis:
    """Top principal directions as rows of ``basis`` plus the full spectrum."""

    basis: np.ndarray
    mean: np.ndarray
    eigenvalues: np.ndarray

    def energy_fraction(self, m):
        total = self.eigenvalues.sum()
        return float(self.eigenvalues[:m].sum() / total) if total > 0 else 1.0

    def n_for_energy(self, fraction):
        """Smallest M whose leading eigenvalues hold ``fraction`` of the total."""
        total = self.eigenvalues.sum()
        if total <= 0:
            return 1
        cum = np.cumsum(self.eigenvalues) / total
        return int(np.searchsorted(cum, fraction - 1e-12) + 1)


def fit_pca(patches, n_components):
    """Eigen-decomposition of the sample covariance, eigenvalues floored at 0."""
    X = patches.patches if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
    N, D = X.shape
    if N <= D:
        raise InvalidArgumentError(f"PCA needs more samples than dimensions (N={N}, D={D})")
    if not 1 <= n_components <= D:
        raise InvalidArgumentError(f"n_components must be in [1, {D}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / N
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    vecs = vecs[:, order]
    return PcaBasis(vecs[:, :n_components].T.copy(), mean, vals)


@dataclass
class FeatureExtractor:
    """A fitted patch feature extractor.

    kmeans / spkmeans use ``centroids`` (K x D).  The movMF kinds use
    ``projection`` (M x D), ``means`` (K x M) and ``weights`` (K,).
    """

    kind: str
    threshold: float = 0.0
    centroids: np.ndarray | None = None
    projection: np.ndarray | None = None
    means: np.ndarray | None = None
    weights: np.ndarray | None = None
    side: int = 6
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown extractor kind {self.kind!r}; expected {KINDS}")

    @property
    def fitted(self):
        if self.kind in MOVMF_KINDS:
            return self.projection is not None and self.means is not None and self.weights is not None
        return self.centroids is not None

    @property
    def n_features(self):
        self._require_fitted()
        return (self.means if self.kind in MOVMF_KINDS else self.centroids).shape[0]

    @property
    def dim(self):
        self._require_fitted()
        return (self.projection if self.kind in MOVMF_KINDS else self.centroids).shape[1]

    def _require_fitted(self):
        if not self.fitted:
            raise StateError(f"{self.kind} extractor has not been fitted")

    def log_biases(self):
        """ln pi_k + ln C_M(|mu_k|) for the movMF kinds."""
        kappa = np.sqrt(np.einsum("ij,ij->i", self.means, self.means))
        with np.errstate(divide="ignore"):
            return np.log(self.weights) + log_vmf_normalizer(self.means.shape[1], kappa)

    def hope_layer(self):
        """The equivalent unsupervised HOPE layer (z normalized)."""
        if self.kind not in MOVMF_KINDS:
            raise InvalidArgumentError(f"{self.kind} extractor has no HOPE-layer form")
        self._require_fitted()
        return HopeLayer(
            self.projection, self.means, weights=self.weights,
            threshold=self.threshold, normalize_z=True,
        )

    def params(self):
        names = ("projection", "means", "weights") if self.kind in MOVMF_KINDS else ("centroids",)
        return {n: getattr(self, n) for n in names}


def _assign(X, C, spherical):
    if spherical:
        return np.argmax(X @ C.T, axis=1)
    d2 = np.einsum("ij,ij->i", C, C)[None, :] - 2.0 * (X @ C.T)
    return np.argmin(d2, axis=1)


def _lloyd(X, K, rng, spherical, max_iter=100, tol=1e-3, chunk=20000):
    N = len(X)
    if K > N:
        raise InvalidArgumentError(f"K={K} exceeds the number of patches N={N}")
    if K < 1:
        raise InvalidArgumentError("K must be >= 1")
    C = X[rng.choice(N, size=K, replace=False)].copy()
    labels = np.full(N, -1)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        new = np.concatenate([_assign(X[i:i + chunk], C, spherical) for i in range(0, N, chunk)])
        changed = np.mean(new != labels)
        labels = new
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        C[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if len(empty):
            # reseed from the points farthest from their current centroid
            if spherical:
                dist = 1.0 - np.einsum("ij,ij->i", X, normalize_rows_safe(C)[labels])
            else:
                diff = X - C[labels]
                dist = np.einsum("ij,ij->i", diff, diff)
            far = np.argsort(dist)[::-1][: len(empty)]
            C[empty] = X[far]
            labels[far] = empty
        if spherical:
            C = normalize_rows_safe(C)
        if changed < tol:
            break
    return C, labels, iterations


def normalize_rows_safe(C):
    norms = np.sqrt(np.einsum("ij,ij->i", C, C))
    out = C.copy()
    ok = norms > 0
    out[ok] /= norms[ok, None]
    return out


def _unit_rows(X):
    """Rows scaled to unit length; zero rows stay zero."""
    return normalize_rows_safe(np.asarray(X, dtype=float))


def fit_kmeans(patches, K, rng=None, threshold=None, max_iter=100):
    """Euclidean Lloyd iterations.  The threshold defaults to the mean
    patch-to-centroid distance over the training patches."""
    X = patches.patches if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
    rng = np.random.default_rng(rng)
    C, labels, iters = _lloyd(X, K, rng, spherical=False, max_iter=max_iter)
    ext = FeatureExtractor("kmeans", 0.0, centroids=C, side=_side(patches, X))
    if threshold is None:
        threshold = float(np.mean(_distances(X[:20000], C)))
    ext.threshold = threshold
    ext.info = {"iterations": iters}
    return ext


def fit_spkmeans(patches, K, rng=None, threshold=0.0, max_iter=100):
    """Cosine-distance Lloyd iterations on unit-normalized patches."""
    X = patches.patches if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
    Xu = _unit_rows(X)
    Xu = Xu[np.einsum("ij,ij->i", Xu, Xu) > 0]
    rng = np.random.default_rng(rng)
    C, labels, iters = _lloyd(Xu, K, rng, spherical=True, max_iter=max_iter)
    return FeatureExtractor(
        "spkmeans", threshold, centroids=C, side=_side(patches, X), info={"iterations": iters}
    )


def _side(patches, X):
    if isinstance(patches, PatchSet):
        return patches.side
    return int(round(np.sqrt(X.shape[1])))


def fit_movmf_extractor(patches, K, kind="hope-movmf", n_latent=20, config=None, rng=None,
                        threshold=0.0, kappa0=5.0):
    """Fit one of the movMF extractors by SGD.

    ``movmf`` freezes U to the identity, ``pca-movmf`` freezes U to the top
    ``n_latent`` principal directions and ``hope-movmf`` learns U jointly.
    Constant patches (all zero after normalization) are dropped, since their
    direction is undefined.
    """
    if kind not in MOVMF_KINDS:
        raise InvalidArgumentError(f"{kind!r} is not a movMF extractor kind")
    ps = patches if isinstance(patches, PatchSet) else None
    X = ps.nonconstant() if ps is not None else np.asarray(patches, dtype=float)
    X = X[np.einsum("ij,ij->i", X, X) > 0]
    rng = np.random.default_rng(rng)
    config = config or TrainConfig.patch_features()
    D = X.shape[1]
    projection = None
    if kind == "movmf":
        n_latent = D
        projection = np.eye(D)
        config = config.replace(freeze_projection=True)
    elif kind == "pca-movmf":
        projection = fit_pca(X, n_latent).basis
        config = config.replace(freeze_projection=True)
    model = init_hope_model(
        X, n_latent, K, rng, mixture="movmf", sigma2=config.sigma2_value,
        gamma=config.init_gamma, kappa0=kappa0, projection=projection,
    )
    model, report = train_unsupervised(model, X, config)
    ext = FeatureExtractor(
        kind, threshold, projection=model.projection, means=model.mixture.means,
        weights=model.mixture.weights, side=_side(patches, X),
        info={"sigma2": float(model.sigma2), "n_train": int(len(X))},
    )
    return ext, report


def _distances(X, C):
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        - 2.0 * X @ C.T
        + np.einsum("ij,ij->i", C, C)[None, :]
    )
    return np.sqrt(np.maximum(d2, 0.0))


def patch_scores(extractor, P):
    """(N, K) scores before thresholding: distances for kmeans, cosines for
    spkmeans and phi_k = ln pi_k + ln C_M(|mu_k|) + z . mu_k for movMF kinds."""
    extractor._require_fitted()
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.shape[1] != extractor.dim:
        raise InvalidArgumentError(f"patch dimension {P.shape[1]} != extractor dimension {extractor.dim}")
    if extractor.kind == "kmeans":
        return _distances(P, extractor.centroids)
    if extractor.kind == "spkmeans":
        return _unit_rows(P) @ extractor.centroids.T
    # a zero patch projects to z = 0 and keeps only the bias term
    Z = _unit_rows(P @ extractor.projection.T)
    return Z @ extractor.means.T + extractor.log_biases()


def featurize_patches(extractor, P):
    """(N, K) activations for N normalized patches."""
    return np.maximum(patch_scores(extractor, P) - extractor.threshold, 0.0)


def calibrate_threshold(extractor, patches, active_fraction, max_patches=20_000):
    """Copy of a score-based extractor whose eps leaves ``active_fraction`` of
    the (patch, unit) activations nonzero on the first ``max_patches`` of the
    given patches.

    movMF scores carry the offset ln pi_k + ln C_M(|mu_k|), which depends on
    M and the learned concentrations, so a fixed eps rarely transfers between
    models; a target activity level does.
    """
    if extractor.kind == "kmeans":
        raise InvalidArgumentError("kmeans features are distance-based; set eps directly")
    if not 0.0 < active_fraction <= 1.0:
        raise InvalidArgumentError("active_fraction must be in (0, 1]")
    X = patches.nonconstant() if isinstance(patches, PatchSet) else np.asarray(patches, dtype=float)
    eps = float(np.quantile(patch_scores(extractor, X[:max_patches]), 1.0 - active_fraction))
    return replace(extractor, threshold=eps)


def featurize_patch(extractor, patch):
    return featurize_patches(extractor, np.asarray(patch)[None, :])[0]


def quadrant_split(n_positions):
    """Number of leading positions assigned to the top (or left) half.

    A position belongs to the top half when its patch centre lies in the
    upper half of the image or exactly on the midline: for 28-pixel images
    and 6-pixel patches that is corner rows 0..11 (12 of the 23 rows).
    """
    return (n_positions + 1) // 2


def convolve_pool(extractor, images, stride=1, chunk=64):
    """Quadrant-pooled features, one 4K-row per image (or a 4K-vector for a
    single 2-D image).  Quadrants are concatenated as top-left, top-right,
    bottom-left, bottom-right."""
    extractor._require_fitted()
    images = np.asarray(images, dtype=float)
    single = images.ndim == 2
    if single:
        images = images[None]
    n, H, W = images.shape
    w = extractor.side
    if w * w != extractor.dim:
        raise InvalidArgumentError(f"extractor side {w} does not match dimension {extractor.dim}")
    if H < w or W < w:
        raise InvalidArgumentError(f"{H}x{W} images are smaller than the {w}x{w} patch")
    if stride < 1:
        raise InvalidArgumentError("stride must be >= 1")
    K = extractor.n_features
    out = np.empty((n, 4 * K))
    for s in range(0, n, chunk):
        block = images[s:s + chunk]
        win = sliding_window_view(block, (w, w), axis=(1, 2))[:, ::stride, ::stride]
        b, R, Cc = win.shape[:3]
        P, _, _ = normalize_patches(win.reshape(-1, w * w))
        F = featurize_patches(extractor, P).reshape(b, R, Cc, K)
        sr, sc = quadrant_split(R), quadrant_split(Cc)
        out[s:s + b, 0:K] = F[:, :sr, :sc].sum(axis=(1, 2))
        out[s:s + b, K:2 * K] = F[:, :sr, sc:].sum(axis=(1, 2))
        out[s:s + b, 2 * K:3 * K] = F[:, sr:, :sc].sum(axis=(1, 2))
        out[s:s + b, 3 * K:] = F[:, sr:, sc:].sum(axis=(1, 2))
    return out[0] if single else out


def prune_components(extractor, min_weight=1e-6):
    """Drop movMF components whose weight fell below ``min_weight``."""
    if extractor.kind not in MOVMF_KINDS:
        return extractor
    keep = extractor.weights >= min_weight
    if not np.any(keep):
        raise StateError("every mixture component is below the weight floor")
    return FeatureExtractor(
        extractor.kind, extractor.threshold, projection=extractor.projection,
        means=extractor.means[keep], weights=extractor.weights[keep], side=extractor.side,
        info={**extractor.info, "pruned": int(np.sum(~keep))},
    )


@dataclass(frozen=True)
class LinearConfig:
    epochs: int = 30
    minibatch_size: int = 100
    lr0: float = 0.05
    lr_decay: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class SoftmaxClassifier:
    """Linear softmax on standardized features: logits = ((f - mean) / scale) W^T + b."""

    weights: np.ndarray
    bias: np.ndarray
    mean: np.ndarray
    scale: np.ndarray

    def logits(self, F):
        return ((np.asarray(F, dtype=float) - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict(self, F):
        return np.argmax(self.logits(F), axis=1)

    def error_rate(self, F, y):
        return float(np.mean(self.predict(F) != np.asarray(y)))


@dataclass
class LinearRecord:
    epoch: int
    lr: float
    train_loss: float
    train_error: float
    test_error: float | None
    seconds: float


def train_linear_classifier(features, labels, config=None, n_classes=None,
                            test_features=None, test_labels=None):
    """Multinomial logistic regression by minibatch SGD with momentum and L2 decay."""
    config = config or LinearConfig()
    F = np.asarray(features)
    if F.dtype != np.float32:
        F = F.astype(float)  # float32 inputs stay float32 to halve memory on large sets
    y = np.asarray(labels)
    if F.ndim != 2 or y.shape != (len(F),):
        raise InvalidArgumentError(f"features {F.shape} and labels {y.shape} do not line up")
    if not np.issubdtype(y.dtype, np.integer):
        raise InvalidArgumentError("labels must be integers")
    C = int(n_classes if n_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= C:
        raise InvalidArgumentError(f"labels must lie in [0, {C})")
    mean = F.mean(axis=0, dtype=float)
    scale = np.maximum(F.std(axis=0, dtype=float), 1e-8)
    Fs = ((F - mean.astype(F.dtype)) / scale.astype(F.dtype)).astype(F.dtype, copy=False)
    rng = np.random.default_rng(config.seed)
    W = np.zeros((C, F.shape[1]))
    b = np.zeros(C)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    clf = SoftmaxClassifier(W, b, mean, scale)
    report = TrainReport(seed=config.seed)
    for epoch in range(config.epochs):
        start = time.perf_counter()
        lr = config.lr0 * config.lr_decay**epoch
        loss_sum, wrong = 0.0, 0
        for idx in minibatches(len(Fs), config.minibatch_size, rng):
            X = Fs[idx]
            logits = X @ W.T + b
            logp = logits - logsumexp(logits, axis=1, keepdims=True)
            loss_sum -= logp[np.arange(len(idx)), y[idx]].sum()
            wrong += int(np.sum(np.argmax(logits, axis=1) != y[idx]))
            G = np.exp(logp)
            G[np.arange(len(idx)), y[idx]] -= 1.0
            G /= len(idx)
            vW = config.momentum * vW - lr * (G.T @ X + config.weight_decay * W)
            vb = config.momentum * vb - lr * G.sum(axis=0)
            W += vW
            b += vb
        if not np.all(np.isfinite(W)):
            raise TrainingDivergedError(f"classifier weights diverged at epoch {epoch}", epoch, None)
        test_error = None
        if test_features is not None:
            test_error = clf.error_rate(test_features, test_labels)
        report.append(LinearRecord(
            epoch, lr, loss_sum / len(Fs), wrong / len(Fs), test_error, time.perf_counter() - start
        ))
    return clf, report
