"""Unsupervised patch features with quadrant pooling.

The pipeline samples 6x6 patches, normalizes each one, and fits a dictionary
on them without labels. Every image is then convolved with the dictionary at
stride 1, each of the 23x23 positions gives a K-dim rectified feature, and the
features are summed over the four image quadrants into one 4K vector. A
softmax classifier on those vectors does the supervised part.

This runs a small version (2000 images, K=64) so it finishes in a couple of
minutes. It compares k-means with the HOPE-movMF extractor, which learns a
20-dim projection of the 36-dim patches jointly with the mixture.
Needs MNIST (set HOPE_MNIST_DIR). Run with ``python3 demos/patch_features.py``.
"""

import os
import sys
from pathlib import Path

import numpy as np

from hope.features import (
    LinearConfig,
    convolve_pool,
    extract_patches,
    fit_kmeans,
    fit_movmf_extractor,
    train_linear_classifier,
)
from hope.io import load_idx
from hope.trainer import TrainConfig

mnist = Path(os.environ.get("HOPE_MNIST_DIR", "/root/data/mnist"))
if not (mnist / "train-images-idx3-ubyte").exists():
    sys.exit(f"MNIST not found in {mnist}; set HOPE_MNIST_DIR")
train = load_idx(mnist / "train-images-idx3-ubyte", mnist / "train-labels-idx1-ubyte")
test = load_idx(mnist / "t10k-images-idx3-ubyte", mnist / "t10k-labels-idx1-ubyte")
images, labels = train.images[:2000] / 255.0, train.labels[:2000].astype(int)
test_images, test_labels = test.images[:2000] / 255.0, test.labels[:2000].astype(int)

rng = np.random.default_rng(0)
patches = extract_patches(images, side=6, count=20_000, rng=rng)
print("patches: %d sampled, %d non-constant" % (len(patches.patches), len(patches.nonconstant())))

extractors = {
    "kmeans": fit_kmeans(patches, 64, rng),
    "hope-movmf": fit_movmf_extractor(patches, 64, "hope-movmf", n_latent=20,
                                      config=TrainConfig.patch_features(epochs=10), rng=rng)[0],
}

for name, ext in extractors.items():
    F = convolve_pool(ext, images)
    Ft = convolve_pool(ext, test_images)
    _, report = train_linear_classifier(F, labels, LinearConfig(epochs=40),
                                        test_features=Ft, test_labels=test_labels)
    print("%-10s %d pooled features, %.1f%% of entries active, test error %.2f%%"
          % (name, F.shape[1], 100 * (F > 0).mean(), 100 * report.records[-1].test_error))

# The same classifier on raw pixels, for reference.
_, report = train_linear_classifier(images.reshape(2000, -1), labels, LinearConfig(epochs=40),
                                    test_features=test_images.reshape(2000, -1),
                                    test_labels=test_labels)
print("%-10s 784 pixels, test error %.2f%%" % ("raw", 100 * report.records[-1].test_error))
