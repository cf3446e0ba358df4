import json

import numpy as np
import pytest

from hope.cli import main
from hope.io import load_model, read_features, write_idx
from hope.nn import DenseLayer, Network, error_rate


def lines(out, kind):
    return [json.loads(l.split(" ", 1)[1]) for l in out.splitlines() if l.startswith(kind + " ")]


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    """Noisy 12x12 images whose class is the bright quadrant."""
    d = tmp_path_factory.mktemp("toy")
    rng = np.random.default_rng(0)
    n = 300
    y = rng.integers(0, 4, size=n).astype(np.uint8)
    images = rng.integers(0, 60, size=(n, 12, 12))
    for i, label in enumerate(y):
        r, c = divmod(int(label), 2)
        images[i, 6 * r:6 * r + 6, 6 * c:6 * c + 6] += 150
    paths = {"images": d / "img", "labels": d / "lbl", "dir": d}
    write_idx(paths["images"], images.astype(np.uint8))
    write_idx(paths["labels"], y)
    return paths


class TestUsage:
    def test_missing_subcommand(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["eval", "--model", "m", "--images", "i", "--labels", "l", "--bogus"]) == 2

    def test_runtime_failure(self, capsys, tmp_path):
        code = main(["eval", "--model", str(tmp_path / "missing"), "--images", "i", "--labels", "l"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_bad_architecture(self, capsys, toy):
        code = main(["train-net", "--arch", "144-[10]-4", "--train-images", str(toy["images"]),
                     "--train-labels", str(toy["labels"]), "--epochs", "1"])
        assert code == 1


class TestTrainNetCollapseEval:
    def test_round_trip(self, capsys, toy):
        d = toy["dir"]
        args = ["train-net", "--arch", "144-[12-30]-4", "--train-images", str(toy["images"]),
                "--train-labels", str(toy["labels"]), "--dev-size", "50", "--epochs", "4",
                "--lr", "0.05", "--seed", "3", "--out", str(d / "net"), "--report", str(d / "rep")]
        assert main(args) == 0
        out = capsys.readouterr().out
        config = lines(out, "config")[0]
        assert config["seed"] == 3 and config["train"]["lr0"] == 0.05
        assert config["arch"] == "144-[12-30]-4"
        assert len(lines(out, "epoch")) == 4

        assert main(["collapse", "--model", str(d / "net"), "--out", str(d / "dense")]) == 0
        dense = load_model(d / "dense")
        assert all(isinstance(l, DenseLayer) for l in dense.layers)
        capsys.readouterr()

        results = []
        for model in ("net", "dense"):
            assert main(["eval", "--model", str(d / model), "--images", str(toy["images"]),
                         "--labels", str(toy["labels"])]) == 0
            results.append(lines(capsys.readouterr().out, "eval")[0])
        assert results[0]["errors"] == results[1]["errors"]
        assert (results[0]["arch"], results[1]["arch"]) == ("144-[12-30]-4", "144-30-4")

        # the reported error rate equals a direct recount
        from hope.io import load_idx

        ds = load_idx(toy["images"], toy["labels"])
        X = ds.images.reshape(len(ds), -1) / 255.0
        net = load_model(d / "net")
        assert isinstance(net, Network)
        assert results[0]["error_rate"] == error_rate(net, X, ds.labels.astype(int))

        assert main(["report", "--report", str(d / "rep")]) == 0
        records = lines(capsys.readouterr().out, "epoch")
        assert [r["epoch"] for r in records] == [0, 1, 2, 3]
        assert "dev_error" in records[0]

    def test_rerun_is_reproducible(self, capsys, toy):
        reports = []
        for i in range(2):
            path = toy["dir"] / f"rep{i}"
            main(["train-net", "--arch", "144-[8-16]-4", "--train-images", str(toy["images"]),
                  "--train-labels", str(toy["labels"]), "--dev-size", "50", "--epochs", "2",
                  "--lr", "0.05", "--report", str(path)])
            reports.append([{k: v for k, v in r.items() if k != "seconds"}
                            for r in map(json.loads, path.read_text().splitlines())])
        capsys.readouterr()
        assert reports[0] == reports[1]


class TestTrainHope:
    def test_patch_training(self, capsys, toy):
        d = toy["dir"]
        args = ["train-hope", "--data", str(toy["images"]), "-M", "4", "-K", "3", "--patches", "500",
                "--epochs", "2", "--sigma2", "0.1", "--out", str(d / "hope"), "--report", str(d / "hr")]
        assert main(args) == 0
        out = capsys.readouterr().out
        config = lines(out, "config")[0]
        assert config["train"]["sigma2_mode"] == "fixed" and config["seed"] == 0
        assert len(lines(out, "epoch")) == 2
        model = load_model(d / "hope")
        assert model.projection.shape == (4, 36)
        assert main(["report", "--report", str(d / "hr")]) == 0
        assert len(lines(capsys.readouterr().out, "epoch")) == 2

    def test_collapse_rejects_hope_model(self, capsys, toy):
        d = toy["dir"]
        main(["train-hope", "--data", str(toy["images"]), "-M", "3", "-K", "2", "--patches", "200",
              "--epochs", "1", "--out", str(d / "h2")])
        assert main(["collapse", "--model", str(d / "h2"), "--out", str(d / "x")]) == 1


class TestExtractFeatures:
    @pytest.mark.parametrize("kind", ["kmeans", "hope-movmf"])
    def test_pooled_features(self, capsys, toy, kind):
        d = toy["dir"]
        out_path = d / f"{kind}.feat"
        args = ["extract-features", "--images", str(toy["images"]), "--out", str(out_path),
                "--kind", kind, "-K", "5", "-M", "4", "--patches", "800", "--epochs", "2",
                "--limit", "20", "--extractor-out", str(d / f"{kind}.ext")]
        assert main(args) == 0
        out = capsys.readouterr().out
        assert lines(out, "config")[0]["seed"] == 0
        F = read_features(out_path)
        n_features = lines(out, "extractor")[0]["n_features"]
        assert F.shape == (20, 4 * n_features)
        assert np.all(F >= 0) and np.any(F > 0)
        # re-featurizing with the saved extractor gives the same matrix
        again = d / f"{kind}.again"
        assert main(["extract-features", "--images", str(toy["images"]), "--out", str(again),
                     "--extractor", str(d / f"{kind}.ext"), "--limit", "20"]) == 0
        np.testing.assert_array_equal(read_features(again), F)

    def test_needs_kind_or_extractor(self, capsys, toy):
        assert main(["extract-features", "--images", str(toy["images"]), "--out", "x"]) == 1
