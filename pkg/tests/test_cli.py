"""End-to-end command-line workflows on small synthetic data."""

import filecmp
import json
import os

import numpy as np
import pytest

from pricefusion import prep
from pricefusion.cli import main
from pricefusion.dataio import load_dataset
from pricefusion.synth import synth_multimodal, tabular_only_ceiling
from pricefusion.tensor import load_pft

CSV_HEADER = ",".join(prep.CSV_FIELDS)


def csv_row(brand="Acme", price=399, os_name="Android 9"):
    return (f"{brand},M-{brand}-{price},2019-05-01,190 g,{os_name},64 GB,1,2,"
            f"6.3 inches,1080x2340,48 MP,2160p,Snapdragon 855,6 GB,4000 mAh,"
            f"Li-Po,img.png,{price}")


@pytest.fixture(scope="module")
def unimodal_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("uni") / "data"
    assert main(["synth", "--out", str(out), "--seed", "5", "--n", "120",
                 "--mode", "unimodal"]) == 0
    return str(out)


@pytest.fixture(scope="module")
def multimodal_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("multi") / "data"
    assert main(["synth", "--out", str(out), "--seed", "6", "--n", "80",
                 "--mode", "multimodal"]) == 0
    return str(out)


@pytest.fixture(scope="module")
def unimodal_ckpt(unimodal_dir, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("ckpt") / "m1"
    assert main(["train", "--data", unimodal_dir, "--out", str(ckpt),
                 "--model", "1", "--epochs", "10", "--l1-alpha", "0",
                 "--seed", "3"]) == 0
    return str(ckpt)


class TestSynth:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--seed", "9", "--n", "60",
                         "--mode", "multimodal"]) == 0
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert not mismatch and not errors

    def test_too_few_records(self, tmp_path, capsys):
        assert main(["synth", "--out", str(tmp_path / "x"), "--n", "10"]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip()

    def test_labels_balanced(self, unimodal_dir):
        data = load_dataset(unimodal_dir)
        labels = np.concatenate([data.train.labels, data.test.labels])
        counts = np.bincount(labels, minlength=4)
        assert counts.max() - counts.min() <= 0.1 * len(labels) / 4 + 1

    def test_multimodal_needs_both_modalities(self):
        feats, images, _, labels = synth_multimodal(123, 400)
        t = (feats[:, 0] > 0.5).astype(int)
        # blob quadrant recovered from pixel mass
        half = images.shape[1] // 2
        qv = images[:, half:, :, 0].sum(axis=(1, 2)) > images[:, :half, :, 0].sum(axis=(1, 2))
        qh = images[:, :, half:, 0].sum(axis=(1, 2)) > images[:, :, :half, 0].sum(axis=(1, 2))
        joint = 2 * t + (qv.astype(int) ^ qh.astype(int))
        assert (joint == labels).mean() == 1.0
        # best tabular-only rule: pick either class consistent with t
        best = max(
            ((labels == 2 * t + low).mean() for low in (0, 1))
        )
        assert best <= tabular_only_ceiling() <= 0.75

    def test_stratified_split_proportions(self, multimodal_dir):
        data = load_dataset(multimodal_dir)
        labels = np.concatenate([data.train.labels, data.test.labels])
        for cls in range(4):
            full = (labels == cls).mean()
            train = (data.train.labels == cls).mean()
            assert abs(full - train) < 0.02


class TestPreprocess:
    def _write_csv(self, path, rows):
        path.write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")

    def test_golden_fixture_byte_stable(self, tmp_path):
        csv_path = tmp_path / "d.csv"
        rows = [csv_row(brand=f"B{i % 4}", price=100 + 220 * (i % 4)) for i in range(12)]
        self._write_csv(csv_path, rows)
        outs = []
        for name in ("o1", "o2"):
            out = tmp_path / name
            assert main(["preprocess", "--csv", str(csv_path), "--out", str(out),
                         "--split-ratio", "0.5", "--seed", "1"]) == 0
            outs.append(out)
        a = (outs[0] / "manifest.txt").read_bytes()
        b = (outs[1] / "manifest.txt").read_bytes()
        assert a == b

    def test_bad_rows_skipped_and_counts_sum(self, tmp_path):
        csv_path = tmp_path / "d.csv"
        rows = [csv_row(brand=f"B{i % 4}", price=100 + 220 * (i % 4)) for i in range(8)]
        rows.append(csv_row(price=-10))  # invalid price
        self._write_csv(csv_path, rows)
        out = tmp_path / "out"
        assert main(["preprocess", "--csv", str(csv_path), "--out", str(out),
                     "--split-ratio", "0.5"]) == 0
        manifest = (out / "manifest.txt").read_text()
        assert "skipped_rows=1" in manifest
        counts = sum(
            int(line.split("=")[1])
            for line in manifest.splitlines()
            if line.startswith("class_count.")
        )
        assert counts == 8

    def test_missing_csv(self, tmp_path, capsys):
        assert main(["preprocess", "--csv", str(tmp_path / "no.csv"),
                     "--out", str(tmp_path / "o")]) == 2
        assert "does not exist" in capsys.readouterr().err


class TestTrain:
    def test_model_1_learns_separable_data(self, unimodal_ckpt):
        lines = open(os.path.join(unimodal_ckpt, "loss.csv")).read().splitlines()
        accs = [float(line.split(",")[2]) for line in lines[1:]]
        assert max(accs) >= 0.95

    def test_rerun_identical_loss_csv(self, unimodal_dir, tmp_path):
        traces = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["train", "--data", unimodal_dir, "--out", str(out),
                         "--model", "1", "--epochs", "3", "--seed", "3"]) == 0
            traces.append((out / "loss.csv").read_bytes())
        assert traces[0] == traces[1]

    def test_model_2_requires_embeddings(self, unimodal_dir, tmp_path, capsys):
        assert main(["train", "--data", unimodal_dir, "--out", str(tmp_path / "c"),
                     "--model", "2", "--epochs", "1"]) == 2
        assert "embedding" in capsys.readouterr().err

    def test_model_2_trains_on_embedding_file(self, multimodal_dir, tmp_path):
        out = tmp_path / "m2"
        assert main(["train", "--data", multimodal_dir, "--out", str(out),
                     "--model", "2", "--epochs", "2", "--l1-alpha", "0",
                     "--seed", "4"]) == 0
        assert (out / "manifest.txt").exists()

    def test_config_file_with_flag_override(self, unimodal_dir, tmp_path):
        cfg = tmp_path / "cfg"
        cfg.write_text("epochs=1\nl1_alpha=0\nseed=9\n")
        out = tmp_path / "c"
        assert main(["train", "--data", unimodal_dir, "--out", str(out),
                     "--model", "1", "--config", str(cfg), "--epochs", "2"]) == 0
        text = (out / "manifest.txt").read_text()
        assert "config.epochs=2" in text  # flag beats file
        assert "config.l1_alpha=0.0" in text


class TestEvaluate:
    def test_fully_connected_report(self, unimodal_dir, unimodal_ckpt, tmp_path):
        out = tmp_path / "rep"
        assert main(["evaluate", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--classifier", "fully_connected",
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        for key in ("accuracy", "macro_f1", "per_class", "confusion_matrix",
                    "classifier", "model", "split_protocol"):
            assert key in report
        assert report["accuracy"] >= 0.95
        assert (out / "report.txt").exists()

    def test_knn_on_fused_embeddings(self, unimodal_dir, unimodal_ckpt, tmp_path):
        out = tmp_path / "rep"
        assert main(["evaluate", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--classifier", "knn", "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["accuracy"] <= 1.0

    def test_gradient_boosting_not_implemented(self, unimodal_dir, unimodal_ckpt,
                                               tmp_path, capsys):
        assert main(["evaluate", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--classifier", "gradient_boosting",
                     "--out", str(tmp_path / "r")]) == 2
        assert "not implemented" in capsys.readouterr().err

    def test_unknown_classifier(self, unimodal_dir, unimodal_ckpt, tmp_path, capsys):
        assert main(["evaluate", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--classifier", "naive_bayes",
                     "--out", str(tmp_path / "r")]) == 2
        assert "unknown classifier" in capsys.readouterr().err


class TestEmbedAndVisualize:
    def test_embed_row_count(self, unimodal_dir, unimodal_ckpt, tmp_path):
        out = tmp_path / "emb.pft"
        assert main(["embed", "--data", unimodal_dir, "--checkpoint", unimodal_ckpt,
                     "--out", str(out)]) == 0
        emb = load_pft(out)
        assert emb.shape == (120, 120)  # all records x model-1 hidden width

    def test_visualize_csv(self, unimodal_dir, unimodal_ckpt, tmp_path):
        out = tmp_path / "proj.csv"
        assert main(["visualize", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("# explained_variance=")
        assert lines[1] == "x,y,true_class"
        assert len(lines) == 2 + 120

    def test_projection_separates_classes(self, unimodal_dir, unimodal_ckpt, tmp_path):
        from pricefusion.metrics import mean_silhouette

        out = tmp_path / "proj.csv"
        assert main(["visualize", "--data", unimodal_dir, "--checkpoint",
                     unimodal_ckpt, "--out", str(out)]) == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=2)
        assert mean_silhouette(rows[:, :2], rows[:, 2].astype(int)) > 0

    def test_activation_dump(self, multimodal_dir, tmp_path):
        ckpt = tmp_path / "m3"
        assert main(["train", "--data", multimodal_dir, "--out", str(ckpt),
                     "--model", "3", "--epochs", "1", "--l1-alpha", "0",
                     "--seed", "2"]) == 0
        dump = tmp_path / "acts"
        assert main(["embed", "--data", multimodal_dir, "--checkpoint", str(ckpt),
                     "--out", str(tmp_path / "e.pft"),
                     "--dump-activations", str(dump)]) == 0
        files = sorted(os.listdir(dump))
        assert any("Conv2D" in f for f in files)
        assert any("MaxPool2D" in f for f in files)
