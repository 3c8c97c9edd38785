"""Command line interface: ``fundus-dr <command> ...``.

Every stage reads and writes plain files so it can be run and inspected on
its own; ``pipeline`` chains them.  ``--seed`` is always the master seed;
each stage derives its own stream from it.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .clahe import clahe_image
from .dataset import ClassScheme, DatasetError, ingest_folder, stratified_split
from .image_core import ImageError, load_image, save_image
from .pipeline import (
    SMOTE_SEED,
    SPLIT_SEED,
    PipelineConfig,
    StageError,
    enhance_dataset,
    evaluate_stage,
    load_dataset,
    read_config_file,
    report_from_predictions,
    run_pipeline,
    smote_stage,
    train_stage,
    write_split,
)
from .smote import SmoteParams
from .synthetic import write_dataset

log = logging.getLogger("fundus_dr")


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected ROWSxCOLS, got {text!r}") from None
    return r, c


def _size(text: str) -> tuple[int, int]:
    w, h = _grid(text)
    return w, h


def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--data", help="class-folder tree (<root>/<class name>/<image>)")
    g.add_argument("--manifest", help="CSV with id_code,diagnosis columns")
    g.add_argument("--images", help="image directory for --manifest")
    g.add_argument("--ext", help="image file extension for --manifest (default .png)")


def _add_common(p, mode=True, seed=True):
    if mode:
        p.add_argument("--mode", choices=["binary", "multiclass"], help="class scheme (default binary)")
    if seed:
        p.add_argument("--seed", type=int, help="master seed (default 0)")


def _add_clahe(p):
    p.add_argument("--tiles", type=_grid, help="CLAHE tile grid ROWSxCOLS (default 8x8)")
    p.add_argument("--clip", type=float, dest="clip_factor", help="CLAHE clip factor >= 1 (default 2.0)")


def _add_features(p):
    p.add_argument("--size", type=_size, help="network input WIDTHxHEIGHT (default 32x32)")
    p.add_argument("--color", choices=["gray", "rgb"], help="network input colour (default gray)")


def _add_smote(p):
    p.add_argument("--k", type=int, dest="smote_k", help="SMOTE neighbours (default 5)")
    p.add_argument("--no-smote", action="store_const", const=False, dest="smote", help="skip oversampling")


def _add_training(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--l2", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--dropout", type=float)
    p.add_argument("--no-augment", action="store_const", const=False, dest="augment")
    p.add_argument("--max-rotation", type=float)
    p.add_argument("--max-shift", type=float)
    p.add_argument("--max-zoom", type=float)
    p.add_argument("--max-shear", type=float)
    p.add_argument("--no-flip", action="store_const", const=False, dest="flip")
    p.add_argument("--augment-prob", type=float, help="fraction of training samples augmented (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fundus-dr", description="Fundus image preprocessing, oversampling and DR classification."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--config", help="flat 'key = value' file; command-line flags win")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="CLAHE on the luminance of one image or a class-folder tree")
    p.add_argument("input", help="image file, or dataset root with --tree")
    p.add_argument("output", help="output image file or directory")
    p.add_argument("--tree", action="store_true", help="treat input as a class-folder tree")
    _add_common(p, seed=False)
    _add_clahe(p)

    p = sub.add_parser("split", help="stratified train/test split -> split manifest CSV")
    _add_input(p)
    _add_common(p)
    p.add_argument("--ratio", type=float, dest="train_ratio", help="train fraction (default 0.8 / 0.85)")
    p.add_argument("--out", required=True, help="split manifest CSV")

    p = sub.add_parser("smote", help="flatten training rows and oversample minority classes")
    p.add_argument("--split", required=True, help="split manifest CSV")
    _add_common(p)
    _add_features(p)
    _add_smote(p)
    p.add_argument("--out", required=True, help="output .npz of training features")
    p.add_argument("--provenance", help="CSV of (base, neighbour, lambda) per synthetic row")

    p = sub.add_parser("train", help="train the CNN on a features .npz")
    p.add_argument("--features", required=True)
    _add_common(p, mode=False)
    _add_training(p)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--log", help="per-epoch history")

    p = sub.add_parser("evaluate", help="metrics report from a model + split, or from a predictions CSV")
    p.add_argument("--model")
    p.add_argument("--split")
    p.add_argument("--predictions", help="predictions CSV (y_true, y_pred[, score_k...])")
    p.add_argument("--write-predictions", help="where to store predictions when evaluating a model")
    _add_common(p, seed=False)
    p.add_argument("--out", help="report JSON (default: stdout)")

    p = sub.add_parser("pipeline", help="enhance -> split -> smote -> train -> evaluate")
    _add_input(p)
    _add_common(p)
    _add_clahe(p)
    p.add_argument("--ratio", type=float, dest="train_ratio")
    _add_features(p)
    _add_smote(p)
    _add_training(p)
    p.add_argument("--out", help="output directory (default ./run)")

    p = sub.add_parser("synth", help="write a synthetic fundus-like dataset")
    p.add_argument("output")
    _add_common(p)
    p.add_argument("--counts", required=True, help="comma-separated images per class")
    p.add_argument("--image-size", type=int, default=64)
    return parser


_NON_CONFIG = {"command", "verbose", "config", "input", "output", "tree", "split", "features",
               "log", "model", "predictions", "write_predictions", "provenance", "counts", "image_size"}


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Config file values overridden by any flag that was given."""
    values = read_config_file(args.config) if args.config else {}
    flags = {k: v for k, v in vars(args).items() if v is not None and k not in _NON_CONFIG}
    tiles = flags.pop("tiles", None)
    if tiles:
        flags["tile_rows"], flags["tile_cols"] = tiles
    size = flags.pop("size", None)
    if size:
        flags["width"], flags["height"] = size
    if args.command != "pipeline":
        flags.pop("out", None)
        values.pop("out", None)
    values.update(flags)
    return PipelineConfig.from_mapping(values)


def _cmd_enhance(args, cfg):
    if args.tree:
        ds = ingest_folder(args.input, cfg.scheme)
        enhance_dataset(ds, args.output, cfg.clahe_params)
        print(f"enhanced {len(ds)} images into {args.output}")
    else:
        save_image(clahe_image(load_image(args.input), cfg.clahe_params), args.output)


def _cmd_split(args, cfg):
    ds = load_dataset(cfg)
    split = stratified_split(ds, cfg.ratio, cfg.seed + SPLIT_SEED)
    write_split(ds, split, args.out)
    print(f"train {len(split.train)}  test {len(split.test)}  -> {args.out}")


def _cmd_smote(args, cfg):
    params = SmoteParams(k=cfg.smote_k, seed=cfg.seed + SMOTE_SEED) if cfg.smote else None
    res = smote_stage(args.split, cfg.scheme, cfg.width, cfg.height, cfg.color, params, args.out, args.provenance)
    print(f"{res.n_original} original + {len(res.provenance)} synthetic rows -> {args.out}")


def _cmd_train(args, cfg):
    model = train_stage(args.features, cfg, args.out, args.log)
    print(f"trained {model.num_parameters()} parameters -> {args.out}")


def _cmd_evaluate(args, cfg):
    names = list(cfg.scheme.names)
    if args.predictions:
        report = report_from_predictions(args.predictions, names)
        text = report.to_json()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return
    if not (args.model and args.split):
        raise SystemExit("evaluate needs --predictions, or both --model and --split")
    out = args.out or "report.json"
    preds = args.write_predictions or str(Path(out).with_name("predictions.csv"))
    report = evaluate_stage(args.model, args.split, cfg.scheme, preds, out)
    print(f"accuracy {report.accuracy:.4f}  auc {report.auc}  -> {out}")


def _cmd_pipeline(args, cfg):
    report = run_pipeline(cfg)
    print(f"accuracy {report.accuracy:.4f}  macro F1 {report.macro_f1:.4f}  auc {report.auc}  -> {cfg.out}")


def _cmd_synth(args, cfg):
    counts = [int(c) for c in args.counts.split(",")]
    paths = write_dataset(args.output, counts, cfg.scheme, args.image_size, cfg.seed)
    print(f"wrote {len(paths)} images to {args.output}")


COMMANDS = {
    "enhance": _cmd_enhance,
    "split": _cmd_split,
    "smote": _cmd_smote,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
    "synth": _cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](args, cfg)
    except (StageError, DatasetError, ImageError, FileNotFoundError, ValueError) as exc:
        print(f"fundus-dr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
