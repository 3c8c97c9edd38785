"""End-to-end experiment flow and the file-based stages it is built from.

Stages and their artifacts::

    enhance   images            -> enhanced/<class>/<stem>.p?m
    split     enhanced tree     -> split.csv
    smote     split.csv         -> train_features.npz, smote_provenance.csv
    train     train_features    -> model.npz, train.log
    evaluate  model + split.csv -> predictions.csv, report.json

:func:`run_pipeline` simply chains them, so running the stages one at a time
with the same master seed gives identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._npz import write_npz
from .augment import AugmentPolicy
from .clahe import ClaheParams, clahe_image
from .dataset import ClassScheme, Dataset, flatten, ingest_folder, ingest_manifest, stratified_split
from .image_core import load_image, save_image, to_gray
from .metrics import MetricsReport, evaluate_scores, multiclass_report, confusion
from .nn import Model, NetworkConfig, TrainConfig, load_model, save_model, train
from .smote import SmoteParams, SmoteResult, smote, write_provenance

log = logging.getLogger(__name__)

# per-stage offsets from the master seed
SPLIT_SEED, SMOTE_SEED, AUGMENT_SEED, TRAIN_SEED = 1, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class PipelineConfig:
    mode: str = "binary"
    data: str | None = None
    manifest: str | None = None
    images: str | None = None
    ext: str = ".png"
    out: str = "run"
    seed: int = 0
    # image size fed to the network
    width: int = 32
    height: int = 32
    color: str = "gray"
    # CLAHE
    tile_rows: int = 8
    tile_cols: int = 8
    clip_factor: float = 2.0
    # split; None picks 0.8 (binary) or 0.85 (multiclass)
    train_ratio: float | None = None
    # SMOTE
    smote: bool = True
    smote_k: int = 5
    # augmentation
    augment: bool = True
    max_rotation: float = 15.0
    max_shift: float = 0.10
    max_zoom: float = 0.10
    max_shear: float = 10.0
    flip: bool = True
    augment_prob: float = 0.5
    # network and training
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 3e-3
    l2: float = 1e-4
    optimizer: str = "adam"
    dropout: float = 0.5

    def __post_init__(self):
        ClassScheme.from_mode(self.mode)
        if self.color not in ("gray", "rgb"):
            raise ValueError(f"color must be 'gray' or 'rgb', got {self.color!r}")
        if self.train_ratio is not None and not 0 < self.train_ratio < 1:
            raise ValueError("train_ratio must be in (0, 1)")

    @property
    def scheme(self) -> ClassScheme:
        return ClassScheme.from_mode(self.mode)

    @property
    def ratio(self) -> float:
        if self.train_ratio is not None:
            return self.train_ratio
        return 0.8 if self.mode == "binary" else 0.85

    @property
    def clahe_params(self) -> ClaheParams:
        return ClaheParams(self.tile_rows, self.tile_cols, self.clip_factor)

    @property
    def augment_policy(self) -> AugmentPolicy | None:
        if not self.augment:
            return None
        return AugmentPolicy(
            self.max_rotation, self.max_shift, self.max_zoom, self.max_shear, self.flip,
            seed=self.seed + AUGMENT_SEED, apply_prob=self.augment_prob,
        )

    @property
    def train_config(self) -> TrainConfig:
        return TrainConfig(
            self.epochs, self.batch_size, self.learning_rate, self.l2, self.optimizer,
            seed=self.seed + TRAIN_SEED,
        )

    def network(self) -> NetworkConfig:
        channels = 1 if self.color == "gray" else 3
        return NetworkConfig.default((channels, self.height, self.width), self.scheme.num_classes, self.dropout)

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        """Build from string values (config file / CLI), coercing by field type."""
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, raw in values.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ValueError(f"unknown config key {key!r}")
            if raw is None:
                continue
            t = types[key]
            if isinstance(raw, str):
                if "bool" in t:
                    raw = _bool(raw)
                elif t.startswith("int"):
                    raw = int(raw)
                elif t.startswith("float"):
                    raw = float(raw)
            kwargs[key] = raw
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = [f"{k} = {v}" for k, v in dataclasses.asdict(self).items() if v is not None]
        return "\n".join(lines) + "\n"


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def load_dataset(cfg: PipelineConfig) -> Dataset:
    if cfg.manifest:
        if not cfg.images:
            raise ValueError("--manifest needs --images")
        return ingest_manifest(cfg.manifest, cfg.images, cfg.scheme, cfg.ext)
    if not cfg.data:
        raise ValueError("no input: give a class-folder tree or a manifest")
    return ingest_folder(cfg.data, cfg.scheme)


def enhance_dataset(ds: Dataset, out_dir: str | os.PathLike, params: ClaheParams) -> Dataset:
    """CLAHE every image and write it into a class-folder tree under ``out_dir``."""
    out_dir = Path(out_dir)
    paths = []
    for path, label in zip(ds.paths, ds.labels):
        img = clahe_image(load_image(path), params)
        folder = out_dir / ds.scheme.names[label]
        folder.mkdir(parents=True, exist_ok=True)
        dest = folder / (Path(path).stem + (".pgm" if img.is_gray else ".ppm"))
        save_image(img, dest)
        paths.append(dest)
    for name in ds.scheme.names:
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    return Dataset(paths, list(ds.labels), ds.scheme)


def write_split(ds: Dataset, split, path: str | os.PathLike) -> None:
    test = set(split.test)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "path", "label", "subset"])
        for i, (p, y) in enumerate(zip(ds.paths, ds.labels)):
            w.writerow([i, p.as_posix(), y, "test" if i in test else "train"])


def read_split(path: str | os.PathLike, scheme: ClassScheme) -> tuple[Dataset, list[int], list[int]]:
    paths, labels, train_idx, test_idx = [], [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["index"])
            if i != len(paths):
                raise ValueError(f"{path}: indices must run 0..n-1 in order (row index {i})")
            paths.append(Path(row["path"]))
            labels.append(int(row["label"]))
            (test_idx if row["subset"] == "test" else train_idx).append(i)
    return Dataset(paths, labels, scheme), train_idx, test_idx


def _image_transform(color: str):
    return to_gray if color == "gray" else None


def split_features(
    split_csv, scheme: ClassScheme, width: int, height: int, color: str, subset: str
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    ds, train_idx, test_idx = read_split(split_csv, scheme)
    idx = train_idx if subset == "train" else test_idx
    X, y = flatten(ds.subset(idx), width, height, transform=_image_transform(color))
    return X, y, idx


def smote_stage(
    split_csv, scheme: ClassScheme, width: int, height: int, color: str,
    params: SmoteParams | None, out_npz, provenance_csv=None,
) -> SmoteResult:
    """Flatten the training rows and oversample them (``params=None`` skips SMOTE)."""
    X, y, idx = split_features(split_csv, scheme, width, height, color, "train")
    result = smote(X, y, params) if params is not None else SmoteResult(X, y, [])
    write_npz(out_npz, {
        "features": result.features,
        "labels": result.labels,
        "source_index": np.asarray(idx, dtype=np.int64),
        "input_shape": np.array([1 if color == "gray" else 3, height, width], dtype=np.int64),
        "num_classes": np.array(scheme.num_classes),
    })
    if provenance_csv is not None:
        write_provenance(result, provenance_csv)
    return result


def train_stage(features_npz, cfg: PipelineConfig, model_path, log_path=None) -> Model:
    with np.load(features_npz) as z:
        X, y = z["features"], z["labels"]
        c, h, w = (int(v) for v in z["input_shape"])
        k = int(z["num_classes"])
    net = NetworkConfig.default((c, h, w), k, cfg.dropout)
    model, history = train(X, y, net, cfg.train_config, cfg.augment_policy)
    save_model(model, model_path)
    if log_path is not None:
        with open(log_path, "w") as fh:
            fh.write(f"samples {len(y)}  parameters {model.num_parameters()}\n")
            for e, (loss, acc) in enumerate(zip(history.loss, history.accuracy), start=1):
                fh.write(f"epoch {e:3d}  loss {loss:.6f}  accuracy {acc:.4f}\n")
    return model


def write_predictions(path, indices, y_true, scores) -> None:
    scores = np.asarray(scores)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "y_true", "y_pred"] + [f"score_{k}" for k in range(scores.shape[1])])
        for i, t, s in zip(indices, y_true, scores):
            w.writerow([i, int(t), int(np.argmax(s))] + [repr(float(v)) for v in s])


def report_from_predictions(path, class_names=None) -> MetricsReport:
    """Metrics from a predictions CSV; AUC needs ``score_*`` columns."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        fields = reader.fieldnames or []
    score_cols = sorted((f for f in fields if f.startswith("score_")), key=lambda f: int(f[6:]))
    y_true = np.array([int(r["y_true"]) for r in rows], dtype=np.intp)
    if score_cols:
        scores = np.array([[float(r[c]) for c in score_cols] for r in rows])
        return evaluate_scores(scores, y_true, class_names)
    y_pred = np.array([int(r["y_pred"]) for r in rows], dtype=np.intp)
    k = len(class_names) if class_names else int(max(y_true.max(), y_pred.max()) + 1)
    return multiclass_report(confusion(y_true, y_pred, max(k, 2)), class_names=class_names)


def evaluate_stage(model_path, split_csv, scheme: ClassScheme, predictions_csv, report_json) -> MetricsReport:
    model = load_model(model_path)
    c, h, w = model.config.input_shape
    X, y, idx = split_features(split_csv, scheme, w, h, "gray" if c == 1 else "rgb", "test")
    scores = model.predict(X)
    write_predictions(predictions_csv, idx, y, scores)
    report = report_from_predictions(predictions_csv, list(scheme.names))
    Path(report_json).write_text(report.to_json())
    return report


def run_pipeline(cfg: PipelineConfig) -> MetricsReport:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    lines = []

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise StageError(name, exc) from exc

    ds = stage("ingest", lambda: load_dataset(cfg))
    lines.append(f"ingest: {len(ds)} images, class counts {ds.class_counts().tolist()}")
    enhanced = stage("enhance", lambda: enhance_dataset(ds, out / "enhanced", cfg.clahe_params))
    enhanced = stage("split", lambda: ingest_folder(out / "enhanced", cfg.scheme))
    split = stage("split", lambda: stratified_split(enhanced, cfg.ratio, cfg.seed + SPLIT_SEED))
    write_split(enhanced, split, out / "split.csv")
    lines.append(f"split: {len(split.train)} train / {len(split.test)} test (ratio {cfg.ratio})")
    params = SmoteParams(k=cfg.smote_k, seed=cfg.seed + SMOTE_SEED) if cfg.smote else None
    res = stage("smote", lambda: smote_stage(
        out / "split.csv", cfg.scheme, cfg.width, cfg.height, cfg.color, params,
        out / "train_features.npz", out / "smote_provenance.csv",
    ))
    lines.append(f"smote: {res.n_original} original + {len(res.provenance)} synthetic rows, "
                 f"counts {np.bincount(res.labels, minlength=cfg.scheme.num_classes).tolist()}")
    stage("train", lambda: train_stage(out / "train_features.npz", cfg, out / "model.npz", out / "train.log"))
    report = stage("evaluate", lambda: evaluate_stage(
        out / "model.npz", out / "split.csv", cfg.scheme, out / "predictions.csv", out / "report.json",
    ))
    lines.append(f"evaluate: accuracy {report.accuracy:.4f}, auc {report.auc}")
    (out / "run.log").write_text("\n".join(lines) + "\n" + (out / "train.log").read_text())
    return report
