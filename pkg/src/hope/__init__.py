"""HOPE: hybrid orthogonal projection and estimation.

A linear projection U splits each input into a signal part z = U x, modelled
by a latent mixture (diagonal Gaussian or von Mises-Fisher), and a residual
modelled as isotropic Gaussian noise.  U and the mixture are learned jointly
by SGD under an orthogonality penalty.  A movMF HOPE model is equivalent to a
rectified network layer, which gives HOPE-structured networks and a patch
feature extractor for images.
"""

from .bessel import bessel_ratio, log_bessel_i, log_vmf_normalizer, mean_resultant_length
from .errors import (
    ChecksumError,
    DegenerateProjectionError,
    DegenerateRowError,
    DomainError,
    FormatError,
    HopeError,
    InvalidArgumentError,
    NumericError,
    SingularProjectionError,
    StateError,
    TrainingDivergedError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .features import (
    FeatureExtractor,
    LinearConfig,
    PatchSet,
    SoftmaxClassifier,
    calibrate_threshold,
    convolve_pool,
    extract_patches,
    featurize_patch,
    featurize_patches,
    fit_kmeans,
    fit_movmf_extractor,
    fit_pca,
    fit_spkmeans,
    prune_components,
    train_linear_classifier,
)
from .gmm import DiagonalGmm, gmm_gradients, gmm_log_likelihood, gmm_occupancy
from .io import (
    IdxDataset,
    load_idx,
    load_model,
    read_features,
    read_idx,
    save_model,
    write_features,
    write_idx,
)
from .model import HopeModel, init_hope_model
from .movmf import MovMf, movmf_gradients, movmf_log_likelihood, movmf_occupancy
from .nn import (
    DenseLayer,
    HopeLayer,
    Network,
    arch_string,
    build_network,
    ce_backprop,
    ce_objective,
    collapse,
    error_rate,
    hope_forward,
    parse_arch,
    stack,
    train_supervised,
)
from .noise import jacobian_term, l2_gradient_u, l2_value, residual_energy, sigma2_update
from .projection import (
    correlation_sum,
    init_projection,
    normalize_rows,
    penalty,
    penalty_gradient,
    project,
    residual,
)
from .trainer import TrainConfig, TrainReport, lr_at, momentum_at, train_unsupervised

__version__ = "0.1.0"
