import csv
import json

import numpy as np
import pytest

from fundus_dr.cli import main
from fundus_dr.dataset import ClassScheme
from fundus_dr.image_core import Image, load_image, save_image
from fundus_dr.smote import read_provenance
from fundus_dr.synthetic import write_dataset

FAST = ["--epochs", "3", "--size", "16x16", "--tiles", "4x4"]


@pytest.fixture(scope="module")
def binary_tree(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "binary"
    write_dataset(root, [30, 12], ClassScheme.binary(), size=32, seed=4)
    return root


def run(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_enhance_constant_image_unchanged(tmp_path):
    src, dst = tmp_path / "flat.pgm", tmp_path / "out.pgm"
    save_image(Image(np.full((16, 16, 1), 100, np.uint8)), src)
    assert run("enhance", src, dst, "--tiles", "2x2") == 0
    assert dst.read_bytes() == src.read_bytes()


def test_enhance_tree_keeps_layout(tmp_path, binary_tree):
    assert run("enhance", binary_tree, tmp_path / "enh", "--tree", "--tiles", "4x4") == 0
    assert len(list((tmp_path / "enh" / "DR").iterdir())) == 12
    img = load_image(next((tmp_path / "enh" / "No_DR").iterdir()))
    assert img.channels == 3


def test_split_is_reproducible(tmp_path, binary_tree):
    for name in ("a.csv", "b.csv"):
        assert run("split", "--data", binary_tree, "--ratio", "0.8", "--seed", "7", "--out", tmp_path / name) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    rows = read_csv(tmp_path / "a.csv")
    test = [r for r in rows if r["subset"] == "test"]
    assert len(rows) == 42
    assert sorted(int(r["label"]) for r in test) == [0] * 6 + [1] * 2  # round(0.2*30), round(0.2*12)


def test_split_from_manifest(tmp_path):
    images = tmp_path / "img"
    images.mkdir()
    lines = ["id_code,diagnosis"]
    for i in range(10):
        save_image(Image(np.full((4, 4, 1), i, np.uint8)), images / f"id{i}.pgm")
        lines.append(f"id{i},{i % 5}")
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "split.csv"
    assert run("split", "--manifest", tmp_path / "m.csv", "--images", images, "--ext", ".pgm",
               "--mode", "multiclass", "--ratio", "0.5", "--out", out) == 0
    rows = read_csv(out)
    assert [int(r["label"]) for r in rows] == [i % 5 for i in range(10)]
    assert sum(r["subset"] == "test" for r in rows) == 5


def test_evaluate_predictions_hand_case(tmp_path, capsys):
    rows = [(1, 1)] * 40 + [(0, 0)] * 45 + [(0, 1)] * 5 + [(1, 0)] * 10
    path = tmp_path / "pred.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "y_true", "y_pred"])
        for i, (t, p) in enumerate(rows):
            w.writerow([i, t, p])
    assert run("evaluate", "--predictions", path) == 0
    doc = json.loads(capsys.readouterr().out)
    dr = doc["per_class"]["DR"]
    assert doc["accuracy"] == pytest.approx(0.85, abs=1e-6)
    assert dr["precision"] == pytest.approx(0.888889, abs=1e-6)
    assert dr["recall"] == pytest.approx(0.8, abs=1e-6)
    assert dr["specificity"] == pytest.approx(0.9, abs=1e-6)
    assert dr["f1"] == pytest.approx(0.842105, abs=1e-6)
    assert doc["confusion"] == [[45, 5], [10, 40]]
    assert doc["auc"] is None


def test_pipeline_report_structure(tmp_path, binary_tree):
    out = tmp_path / "run"
    assert run("pipeline", "--data", binary_tree, "--seed", "3", "--out", out, *FAST) == 0
    for name in ("config.txt", "split.csv", "train_features.npz", "smote_provenance.csv",
                 "model.npz", "train.log", "predictions.csv", "report.json", "run.log"):
        assert (out / name).is_file(), name
    doc = json.loads((out / "report.json").read_text())
    assert np.array(doc["confusion"]).shape == (2, 2)
    assert np.array(doc["confusion"]).sum() == 8
    assert 0.0 <= doc["accuracy"] <= 1.0 and 0.0 <= doc["auc"] <= 1.0
    assert set(doc["per_class"]) == {"No_DR", "DR"}
    with np.load(out / "train_features.npz") as z:
        assert np.bincount(z["labels"]).tolist() == [24, 24]
    assert len(read_csv(out / "predictions.csv")) == 8


def test_stages_chain_to_pipeline(tmp_path, binary_tree):
    ref = tmp_path / "ref"
    assert run("pipeline", "--data", binary_tree, "--seed", "5", "--out", ref, *FAST) == 0

    enh, split = tmp_path / "enh", tmp_path / "split.csv"
    feats, model = tmp_path / "feats.npz", tmp_path / "model.npz"
    assert run("enhance", binary_tree, enh, "--tree", "--tiles", "4x4") == 0
    assert run("split", "--data", enh, "--seed", "5", "--out", split) == 0
    assert run("smote", "--split", split, "--seed", "5", "--size", "16x16", "--out", feats,
               "--provenance", tmp_path / "prov.csv") == 0
    assert run("train", "--features", feats, "--seed", "5", "--epochs", "3", "--out", model) == 0
    assert run("evaluate", "--model", model, "--split", split, "--out", tmp_path / "report.json") == 0

    assert (tmp_path / "report.json").read_bytes() == (ref / "report.json").read_bytes()
    assert model.read_bytes() == (ref / "model.npz").read_bytes()
    assert feats.read_bytes() == (ref / "train_features.npz").read_bytes()


def test_smote_never_uses_test_rows(tmp_path, binary_tree):
    split, feats, prov = tmp_path / "split.csv", tmp_path / "f.npz", tmp_path / "p.csv"
    assert run("split", "--data", binary_tree, "--seed", "1", "--out", split) == 0
    assert run("smote", "--split", split, "--size", "8x8", "--out", feats, "--provenance", prov) == 0
    rows = read_csv(split)
    train_idx = [int(r["index"]) for r in rows if r["subset"] == "train"]
    with np.load(feats) as z:
        assert z["source_index"].tolist() == train_idx
        n_orig = len(train_idx)
        labels = z["labels"]
    entries = read_provenance(prov)
    assert len(entries) == len(labels) - n_orig > 0
    for base, nb, _ in entries:
        assert base < n_orig and nb < n_orig


def test_no_smote_flag(tmp_path, binary_tree):
    split, feats = tmp_path / "split.csv", tmp_path / "f.npz"
    run("split", "--data", binary_tree, "--out", split)
    assert run("smote", "--split", split, "--size", "8x8", "--no-smote", "--out", feats) == 0
    with np.load(feats) as z:
        assert np.bincount(z["labels"]).tolist() == [24, 10]


def test_multiclass_pipeline(tmp_path):
    data = tmp_path / "five"
    write_dataset(data, [8] * 5, ClassScheme.multiclass(), size=24, seed=2)
    out = tmp_path / "run"
    assert run("pipeline", "--data", data, "--mode", "multiclass", "--out", out, *FAST) == 0
    doc = json.loads((out / "report.json").read_text())
    assert np.array(doc["confusion"]).shape == (5, 5)
    assert doc["class_names"] == ["No_DR", "Mild", "Moderate", "Severe", "Proliferate_DR"]
    assert set(doc["macro"]) == {"precision", "recall", "f1"}


def test_config_file_with_flag_override(tmp_path, binary_tree):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# desk run\nseed = 11\ntrain_ratio = 0.5\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("--config", cfg, "split", "--data", binary_tree, "--out", a) == 0
    assert run("--config", cfg, "split", "--data", binary_tree, "--ratio", "0.8", "--out", b) == 0
    assert sum(r["subset"] == "test" for r in read_csv(a)) == 21
    assert sum(r["subset"] == "test" for r in read_csv(b)) == 8


def test_errors_exit_nonzero(tmp_path, capsys):
    assert run("enhance", tmp_path / "missing.pgm", tmp_path / "o.pgm") == 1
    assert "enhance: error" in capsys.readouterr().err
    bad = tmp_path / "bad"
    (bad / "Unknown").mkdir(parents=True)
    assert run("split", "--data", bad, "--out", tmp_path / "s.csv") == 1
    assert "unknown class folder" in capsys.readouterr().err
    assert run("pipeline", "--data", bad, "--out", tmp_path / "r") == 1
    assert "[ingest]" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["enhance", "x", "y", "--tiles", "eight"])
    assert exc.value.code == 2
