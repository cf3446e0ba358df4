"""Command-line interface.

Every subcommand prints its fully resolved configuration, including the seed,
as one JSON line prefixed with ``config`` before doing any work, so that a run
can be repeated exactly.  Usage errors exit with status 2 and runtime failures
with status 1.
"""

import argparse
import json
import sys

import numpy as np

from .errors import HopeError
from .features import (
    KINDS,
    calibrate_threshold,
    convolve_pool,
    extract_patches,
    fit_kmeans,
    fit_movmf_extractor,
    fit_spkmeans,
    prune_components,
)
from .io import (
    load_idx,
    load_model,
    read_features,
    read_idx,
    read_report,
    save_model,
    write_features,
)
from .model import init_hope_model
from .nn import (
    HopeLayer,
    NetEpochRecord,
    Network,
    arch_string,
    build_network,
    collapse,
    predict,
    train_supervised,
)
from .trainer import EpochRecord, TrainConfig, train_unsupervised

__all__ = ["main", "build_parser"]


def _emit(kind, payload, stream=None):
    stream = stream or sys.stdout
    stream.write(f"{kind} {json.dumps(payload, sort_keys=True)}\n")
    stream.flush()


def _load_vectors(path, limit=None):
    """Rows of a feature matrix file or flattened IDX images scaled to [0, 1]."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"HOPF":
        X = read_features(path).astype(float)
    else:
        X = read_idx(path).astype(float)
        X = X.reshape(len(X), -1) / 255.0
    return X[:limit] if limit else X


def _load_labeled(images, labels, limit=None):
    ds = load_idx(images, labels)
    X = ds.images.reshape(len(ds.images), -1).astype(float) / 255.0
    y = ds.labels.astype(np.int64)
    if limit:
        X, y = X[:limit], y[:limit]
    return X, y


def _unsup_config(args):
    overrides = {
        "epochs": args.epochs,
        "minibatch_size": args.minibatch,
        "lr0": args.lr,
        "lr_decay": args.lr_decay,
        "momentum_initial": args.momentum_initial,
        "momentum_final": args.momentum_final,
        "penalty_weight": args.beta,
        "seed": args.seed,
    }
    if args.sigma2 is not None:
        overrides.update(sigma2_mode="fixed", sigma2_value=args.sigma2)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return TrainConfig(**overrides)


def cmd_train_hope(args):
    config = _unsup_config(args)
    _emit("config", {
        "command": "train-hope", "data": args.data, "latent": args.latent,
        "components": args.components, "mixture": args.mixture, "noise_mode": args.noise_mode,
        "patches": args.patches, "patch_side": args.patch_side, "limit": args.limit,
        "train": config.to_dict(), "seed": config.seed,
    })
    rng = np.random.default_rng(config.seed)
    if args.patches:
        images = read_idx(args.data).astype(float) / 255.0
        ps = extract_patches(images, args.patch_side, args.patches, rng)
        X = ps.nonconstant()
    else:
        X = _load_vectors(args.data, args.limit)
    model = init_hope_model(
        X, args.latent, args.components, rng, mixture=args.mixture,
        sigma2=config.sigma2_value, noise_mode=args.noise_mode, gamma=config.init_gamma,
    )
    model, report = train_unsupervised(model, X, config)
    for rec in report.records:
        _emit("epoch", rec.__dict__)
    if args.out:
        save_model(model, args.out, config)
    if args.report:
        report.write(args.report)
    return 0


def cmd_train_net(args):
    overrides = {
        "epochs": args.epochs, "minibatch_size": args.minibatch, "lr0": args.lr,
        "lr_decay": args.lr_decay, "momentum_initial": args.momentum_initial,
        "momentum_final": args.momentum_final, "penalty_weight": args.beta,
        "weight_decay": args.weight_decay, "init_gamma": args.gamma,
        "schedule": args.schedule, "seed": args.seed,
    }
    config = TrainConfig.supervised(**{k: v for k, v in overrides.items() if v is not None})
    _emit("config", {
        "command": "train-net", "arch": args.arch, "bias_mode": args.bias_mode,
        "train_images": args.train_images, "dev_images": args.dev_images, "limit": args.limit,
        "dev_size": args.dev_size, "train": config.to_dict(), "seed": config.seed,
    })
    X, y = _load_labeled(args.train_images, args.train_labels, args.limit)
    if args.dev_images:
        Xd, yd = _load_labeled(args.dev_images, args.dev_labels)
    else:
        if not 0 < args.dev_size < len(X):
            raise HopeError(f"--dev-size must be in (0, {len(X)})")
        X, Xd = X[:-args.dev_size], X[-args.dev_size:]
        y, yd = y[:-args.dev_size], y[-args.dev_size:]
    rng = np.random.default_rng(config.seed)
    net = build_network(args.arch, rng, config.init_gamma, args.bias_mode)
    net, report = train_supervised(net, X, y, Xd, yd, config)
    for rec in report.records:
        _emit("epoch", rec.__dict__)
    if args.out:
        save_model(net, args.out, config)
    if args.report:
        report.write(args.report)
    return 0


def cmd_extract_features(args):
    if args.extractor is None and args.kind is None:
        raise HopeError("give either --extractor (a saved extractor) or --kind to fit one")
    info = {
        "command": "extract-features", "images": args.images, "kind": args.kind,
        "components": args.components, "latent": args.latent, "patches": args.patches,
        "patch_side": args.patch_side, "threshold": args.threshold,
        "active_fraction": args.active_fraction, "epochs": args.epochs,
        "extractor": args.extractor, "seed": args.seed,
    }
    _emit("config", info)
    images = read_idx(args.images).astype(float) / 255.0
    if args.limit:
        images = images[:args.limit]
    if args.extractor:
        extractor = load_model(args.extractor)
    else:
        rng = np.random.default_rng(args.seed)
        fit_images = read_idx(args.fit_images).astype(float) / 255.0 if args.fit_images else images
        ps = extract_patches(fit_images, args.patch_side, args.patches, rng)
        if args.kind == "kmeans":
            extractor = fit_kmeans(ps, args.components, rng, threshold=args.threshold)
        elif args.kind == "spkmeans":
            extractor = fit_spkmeans(ps, args.components, rng)
        else:
            config = TrainConfig.patch_features(epochs=args.epochs, seed=args.seed)
            extractor, _ = fit_movmf_extractor(
                ps, args.components, args.kind, args.latent, config, rng,
                threshold=args.threshold or 0.0,
            )
            extractor = prune_components(extractor)
        if args.kind != "kmeans" and args.threshold is None:
            extractor = calibrate_threshold(extractor, ps, args.active_fraction)
        _emit("extractor", {"kind": extractor.kind, "n_features": extractor.n_features,
                            "threshold": extractor.threshold, "info": extractor.info})
        if args.extractor_out:
            save_model(extractor, args.extractor_out)
    F = convolve_pool(extractor, images)
    write_features(args.out, F)
    _emit("features", {"rows": int(F.shape[0]), "cols": int(F.shape[1]), "path": args.out})
    return 0


def cmd_collapse(args):
    _emit("config", {"command": "collapse", "model": args.model, "out": args.out})
    obj = load_model(args.model)
    if isinstance(obj, HopeLayer):
        dense = collapse(obj)
    elif isinstance(obj, Network):
        dense = obj.collapsed()
    else:
        raise HopeError(f"{args.model} holds a {type(obj).__name__}, not a HOPE layer or network")
    save_model(dense, args.out)
    _emit("collapsed", {"out": args.out})
    return 0


def cmd_eval(args):
    _emit("config", {"command": "eval", "model": args.model, "images": args.images,
                     "labels": args.labels, "limit": args.limit})
    net = load_model(args.model)
    if not isinstance(net, Network):
        raise HopeError(f"{args.model} does not hold a network")
    X, y = _load_labeled(args.images, args.labels, args.limit)
    pred = predict(net, X)
    errors = int(np.sum(pred != y))
    _emit("eval", {"arch": arch_string(net), "n": int(len(y)), "errors": errors,
                   "error_rate": errors / len(y)})
    return 0


def cmd_report(args):
    with open(args.report) as fh:
        first = fh.readline()
    keys = set(json.loads(first)) if first.strip() else set()
    record_type = NetEpochRecord if "dev_error" in keys else EpochRecord
    report = read_report(args.report, record_type)
    for rec in report.records:
        _emit("epoch", rec.__dict__)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hope", description="HOPE model training and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    th = sub.add_parser("train-hope", help="unsupervised maximum-likelihood HOPE training")
    th.add_argument("--data", required=True, help="IDX images or a feature-matrix file")
    th.add_argument("--latent", "-M", type=int, required=True)
    th.add_argument("--components", "-K", type=int, required=True)
    th.add_argument("--mixture", choices=("movmf", "gmm"), default="movmf")
    th.add_argument("--noise-mode", choices=("orthonormal", "free-norm"), default="orthonormal")
    th.add_argument("--patches", type=int, help="train on this many random patches of the images")
    th.add_argument("--patch-side", type=int, default=6)
    th.add_argument("--limit", type=int)
    th.add_argument("--epochs", type=int)
    th.add_argument("--minibatch", type=int)
    th.add_argument("--lr", type=float)
    th.add_argument("--lr-decay", type=float)
    th.add_argument("--momentum-initial", type=float)
    th.add_argument("--momentum-final", type=float)
    th.add_argument("--beta", type=float)
    th.add_argument("--sigma2", type=float, help="fix sigma^2 (default: re-estimate it)")
    th.add_argument("--seed", type=int, default=0)
    th.add_argument("--out")
    th.add_argument("--report")
    th.set_defaults(func=cmd_train_hope)

    tn = sub.add_parser("train-net", help="supervised training of a (HOPE) network")
    tn.add_argument("--arch", required=True, help='e.g. "784-[100-1000]-10"')
    tn.add_argument("--train-images", required=True)
    tn.add_argument("--train-labels", required=True)
    tn.add_argument("--dev-images")
    tn.add_argument("--dev-labels")
    tn.add_argument("--dev-size", type=int, default=5000,
                    help="hold out this many training samples when no dev set is given")
    tn.add_argument("--limit", type=int)
    tn.add_argument("--bias-mode", choices=("free", "exact"), default="free")
    tn.add_argument("--schedule", choices=("exponential", "dev-halving"))
    tn.add_argument("--epochs", type=int)
    tn.add_argument("--minibatch", type=int)
    tn.add_argument("--lr", type=float)
    tn.add_argument("--lr-decay", type=float)
    tn.add_argument("--momentum-initial", type=float)
    tn.add_argument("--momentum-final", type=float)
    tn.add_argument("--beta", type=float)
    tn.add_argument("--weight-decay", type=float)
    tn.add_argument("--gamma", type=float)
    tn.add_argument("--seed", type=int, default=0)
    tn.add_argument("--out")
    tn.add_argument("--report")
    tn.set_defaults(func=cmd_train_net)

    ef = sub.add_parser("extract-features", help="patch features with quadrant pooling")
    ef.add_argument("--images", required=True, help="IDX images to featurize")
    ef.add_argument("--out", required=True, help="feature-matrix output path")
    ef.add_argument("--extractor", help="use a saved extractor instead of fitting one")
    ef.add_argument("--kind", choices=KINDS)
    ef.add_argument("--fit-images", help="IDX images to sample patches from (default: --images)")
    ef.add_argument("--components", "-K", type=int, default=400)
    ef.add_argument("--latent", "-M", type=int, default=20)
    ef.add_argument("--patches", type=int, default=400_000)
    ef.add_argument("--patch-side", type=int, default=6)
    ef.add_argument("--threshold", type=float,
                    help="eps; by default the mean distance for kmeans, and for the other "
                         "kinds the value giving --active-fraction nonzero activations")
    ef.add_argument("--active-fraction", type=float, default=0.2)
    ef.add_argument("--epochs", type=int, default=20)
    ef.add_argument("--limit", type=int)
    ef.add_argument("--seed", type=int, default=0)
    ef.add_argument("--extractor-out")
    ef.set_defaults(func=cmd_extract_features)

    co = sub.add_parser("collapse", help="export HOPE layers as dense rectified layers")
    co.add_argument("--model", required=True)
    co.add_argument("--out", required=True)
    co.set_defaults(func=cmd_collapse)

    ev = sub.add_parser("eval", help="error rate of a saved network")
    ev.add_argument("--model", required=True)
    ev.add_argument("--images", required=True)
    ev.add_argument("--labels", required=True)
    ev.add_argument("--limit", type=int)
    ev.set_defaults(func=cmd_eval)

    rp = sub.add_parser("report", help="print the records of a saved training report")
    rp.add_argument("--report", required=True)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors (2) and --help (0)
        return exc.code
    try:
        return args.func(args)
    except (HopeError, OSError, ValueError) as exc:
        print(f"hope {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
