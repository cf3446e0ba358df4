import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

MNIST_DIR = Path(os.environ.get("HOPE_MNIST_DIR", "/root/data/mnist"))
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def numeric_gradient(f, P, h=1e-6):
    """Central differences of scalar f() with respect to every entry of P (in place)."""
    G = np.zeros_like(P, dtype=float)
    for idx in np.ndindex(P.shape):
        old = P[idx]
        P[idx] = old + h
        fp = f()
        P[idx] = old - h
        fm = f()
        P[idx] = old
        G[idx] = (fp - fm) / (2.0 * h)
    return G


def rel_error(analytic, numeric):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def orthogonal_rows(M, D, rng, lengths=None):
    """M mutually orthogonal rows in R^D with the given lengths (unit by default)."""
    Q, _ = np.linalg.qr(rng.normal(size=(D, M)))
    U = Q.T
    if lengths is not None:
        U = U * np.asarray(lengths)[:, None]
    return U


@pytest.fixture(scope="session")
def mnist_paths():
    paths = {k: MNIST_DIR / v for k, v in MNIST_FILES.items()}
    missing = [str(p) for p in paths.values() if not p.exists()]
    if missing:
        pytest.skip(f"MNIST files not found (set HOPE_MNIST_DIR): {missing}")
    return paths


@pytest.fixture(scope="session")
def mnist(mnist_paths):
    from hope.io import load_idx

    train = load_idx(mnist_paths["train_images"], mnist_paths["train_labels"])
    test = load_idx(mnist_paths["test_images"], mnist_paths["test_labels"])
    return train, test


# one "PASS ..." / "FAIL ..." line per acceptance criterion, repeated in the
# terminal summary so it survives output capturing
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
