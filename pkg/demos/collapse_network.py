"""A small HOPE network, trained by back-propagation and then collapsed.

A HOPE layer is a projection U followed by a movMF "model layer". Once
trained, the two linear maps fold into one dense layer with weights mu U and
an offset bias - eps, so deployment costs the same as an ordinary ReLU layer.
The low-rank structure is where the parameter savings come from: the
784-[100-1000]-10 net has about 180k hidden weights against 785k for a plain
784-1000-10 layer.

Uses MNIST when it is available (set HOPE_MNIST_DIR) and falls back to a
synthetic 10-class problem otherwise. Run with
``python3 demos/collapse_network.py``.
"""

import os
from pathlib import Path

import numpy as np

from hope.io import load_idx
from hope.nn import (
    Network,
    arch_string,
    build_network,
    collapse,
    dense_forward,
    error_rate,
    hope_forward,
    train_supervised,
)
from hope.trainer import TrainConfig

mnist = Path(os.environ.get("HOPE_MNIST_DIR", "/root/data/mnist"))
if (mnist / "train-images-idx3-ubyte").exists():
    train = load_idx(mnist / "train-images-idx3-ubyte", mnist / "train-labels-idx1-ubyte")
    test = load_idx(mnist / "t10k-images-idx3-ubyte", mnist / "t10k-labels-idx1-ubyte")
    X = train.images[:10000].reshape(-1, 784) / 255.0
    y = train.labels[:10000].astype(int)
    Xt = test.images.reshape(-1, 784) / 255.0
    yt = test.labels.astype(int)
    print("MNIST: 10000 training images, 10000 test images")
else:
    rng = np.random.default_rng(0)
    centres = rng.normal(size=(10, 784))
    y, yt = rng.integers(0, 10, size=5000), rng.integers(0, 10, size=2000)
    X = centres[y] + 3.0 * rng.normal(size=(5000, 784))
    Xt = centres[yt] + 3.0 * rng.normal(size=(2000, 784))
    print("MNIST not found: synthetic 10-class data")

# 784 inputs, a 100-dim projection feeding 1000 movMF units, softmax over 10.
net = build_network("784-[100-1000]-10", np.random.default_rng(0))
config = TrainConfig.supervised(epochs=10, lr0=0.1, lr_decay=0.95, momentum_final=0.9,
                                momentum_epochs=50)
net, report = train_supervised(net, X[:-1000], y[:-1000], X[-1000:], y[-1000:], config)
for r in report.records:
    print("epoch %d  loss %.4f  dev error %.2f%%  correlation sum %.1f"
          % (r.epoch, r.train_loss, 100 * r.dev_error, r.correlation_sum))

# Fold U and mu into a single dense ReLU layer and check nothing changed.
hope = net.layers[0]
dense = collapse(hope)
diff = np.max(np.abs(hope_forward(hope, Xt[:500]) - dense_forward(dense, Xt[:500])))
print("max |HOPE - collapsed| on 500 inputs: %.2e" % diff)

flat = Network([dense], net.output)
print("%s test error %.2f%%" % (arch_string(net), 100 * error_rate(net, Xt, yt)))
print("%s test error %.2f%%" % (arch_string(flat), 100 * error_rate(flat, Xt, yt)))
print("hidden weights: factored %d, collapsed %d"
      % (hope.projection.size + hope.means.size, dense.weights.size))
