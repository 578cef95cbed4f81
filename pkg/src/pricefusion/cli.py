"""Command-line entry point.

Subcommands: synth, preprocess, train, evaluate, embed, visualize.
Every command is deterministic given its flags (seeds included), exits 0
on success and nonzero with a single-line ``error: ...`` message on
failure. A flat key=value config file may supply defaults for train and
evaluate; explicit flags always win.
"""

import argparse
import csv as csv_mod
import logging
import os
import sys

import numpy as np

from . import classifiers as cls_mod
from . import prep
from .dataio import Split, load_dataset, read_manifest, save_dataset, stratified_split
from .metrics import confusion_matrix, metrics, pca_project, report_json, report_text
from .models import build_model, extract_fused, load_checkpoint, save_checkpoint
from .rng import Rng
from .synth import write_synth_dataset
from .tensor import load_pft, save_pft
from .train import TrainingConfig, train

IMAGE_SIDE = 128

log = logging.getLogger("pricefusion")


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="pricefusion")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--mode", choices=["unimodal", "multimodal"], default="unimodal")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="encode a raw CSV into a dataset directory")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-dir", help="directory of raster images named in image_path")
    p.add_argument("--image-stack", help="prebuilt PFT1 image stack, one row per CSV record")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one of the five models")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model", type=int, choices=range(1, 6), required=True)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--embedding-file", help="external PFT1 embedding matrix (model 2)")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--rmsprop-decay", type=float)
    p.add_argument("--rmsprop-epsilon", type=float)
    p.add_argument("--l1-alpha", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint with a chosen classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classifier", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--embedding-file")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="write fused embeddings as PFT1")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--embedding-file")
    p.add_argument("--dump-activations", metavar="DIR",
                   help="also dump per-layer image-branch activations for the "
                        "first 8 test records")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("visualize", help="export a 2-D PCA projection of fused embeddings")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=["train", "test", "all"], default="all")
    p.add_argument("--embedding-file")
    p.set_defaults(func=cmd_visualize)
    return parser


def cmd_synth(args):
    _check_ratio(args.split_ratio)
    write_synth_dataset(args.out, args.seed, args.n, args.mode, args.split_ratio)
    print(f"wrote synthetic {args.mode} dataset ({args.n} records) to {args.out}")


def cmd_preprocess(args):
    _check_ratio(args.split_ratio)
    _require_path(args.csv)
    records, skipped = prep.read_csv(args.csv)
    if not records:
        raise ValueError(f"{args.csv}: no valid records")
    image_stack = None
    if args.image_stack:
        _require_path(args.image_stack)
        image_stack = load_pft(args.image_stack)
    elif args.image_dir:
        _require_path(args.image_dir)
        records, image_stack = _decode_images(records, args.image_dir)
    labels = np.array([prep.price_class(r.price_euro) for r in records])
    train_idx, test_idx = stratified_split(labels, args.split_ratio, Rng(args.seed))
    spec = prep.fit_encoder([records[i] for i in train_idx])
    matrix = np.stack([prep.encode(r, spec)[0] for r in records])
    splits = {}
    for name, idx in (("train", train_idx), ("test", test_idx)):
        splits[name] = Split(
            features=matrix[idx],
            labels=labels[idx],
            indices=idx,
            images=image_stack[idx] if image_stack is not None else None,
        )
    counts = {cls: int((labels == cls).sum()) for cls in range(4)}
    lines = [
        "mode=csv",
        f"n_records={len(records)}",
        f"skipped_rows={len(skipped)}",
        f"seed={args.seed}",
        f"split_protocol=stratified holdout {args.split_ratio:g}",
    ]
    if image_stack is not None:
        lines.append("image_shape=" + ",".join(str(d) for d in image_stack.shape[1:]))
    lines.extend(prep.encoder_manifest_lines(spec, counts))
    save_dataset(args.out, splits["train"], splits["test"], lines)
    print(f"encoded {len(records)} records (width {spec.width}) to {args.out}")


def cmd_train(args):
    cfg = _training_config(args)
    dataset = load_dataset(args.data, embedding_path=_embedding_path(args))
    model = _build_from_dataset(args.model, dataset)
    if model.aux_kind == "embeddings" and dataset.train.embeddings is None:
        raise ValueError(
            "model 2 needs an embedding file (--embedding-file or embeddings.pft "
            "in the dataset directory)"
        )
    result = train(model, dataset.train.features, dataset.train.labels, cfg,
                   aux=dataset.train.aux_for(model))
    save_checkpoint(model, args.out, config=cfg)
    trace_path = os.path.join(args.out, "loss.csv")
    with open(trace_path, "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["epoch", "mean_loss", "train_accuracy"])
        for row in result.trace:
            writer.writerow([row.epoch, repr(row.mean_loss), repr(row.train_accuracy)])
    final = result.trace[-1]
    print(f"model {args.model}: {cfg.epochs} epochs, final loss {final.mean_loss:.4f}, "
          f"train accuracy {final.train_accuracy:.3f}; checkpoint in {args.out}")


def cmd_evaluate(args):
    kind = args.classifier.lower()
    if kind in ("gradient_boosting", "gradientboosting"):
        raise NotImplementedError("classifier gradient_boosting is not implemented")
    if kind not in cls_mod.ALL_KINDS:
        raise ValueError(
            f"unknown classifier kind {args.classifier!r}; choose from "
            f"{', '.join(cls_mod.ALL_KINDS)}"
        )
    dataset = load_dataset(args.data, embedding_path=_embedding_path(args))
    model = load_checkpoint(args.checkpoint)
    if kind == "fully_connected":
        preds = model.predict(dataset.test.features, dataset.test.aux_for(model))
    else:
        fused_train = extract_fused(model, dataset.train.features,
                                    dataset.train.aux_for(model))
        fused_test = extract_fused(model, dataset.test.features,
                                   dataset.test.aux_for(model))
        standardizer = cls_mod.Standardizer.fit(fused_train)
        clf = cls_mod.make_classifier(kind, seed=args.seed)
        clf.fit(standardizer.apply(fused_train), dataset.train.labels)
        preds = clf.predict(standardizer.apply(fused_test))
    report = metrics(confusion_matrix(dataset.test.labels, preds))
    extra = {
        "classifier": kind,
        "model": model.builder_id,
        "split_protocol": dataset.manifest.get("split_protocol", "unknown"),
    }
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        fh.write(report_json(report, extra))
    with open(os.path.join(args.out, "report.txt"), "w") as fh:
        fh.write(report_text(report, title=f"model {model.builder_id} + {kind} "
                                           f"[{extra['split_protocol']}]"))
    print(f"accuracy {report['accuracy']:.4f}, macro F1 {report['macro_f1']:.4f}; "
          f"report in {args.out}")


def cmd_embed(args):
    dataset = load_dataset(args.data, embedding_path=_embedding_path(args))
    model = load_checkpoint(args.checkpoint)
    features, aux, _ = _select_split(dataset, model, args.split)
    fused = extract_fused(model, features, aux)
    save_pft(args.out, fused)
    if args.dump_activations:
        _dump_activations(model, dataset, args.dump_activations)
    print(f"wrote {fused.shape[0]}x{fused.shape[1]} fused embeddings to {args.out}")


def cmd_visualize(args):
    dataset = load_dataset(args.data, embedding_path=_embedding_path(args))
    model = load_checkpoint(args.checkpoint)
    features, aux, labels = _select_split(dataset, model, args.split)
    fused = extract_fused(model, features, aux)
    projected, explained, _ = pca_project(fused, dims=2)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# explained_variance={explained[0]:.6f},{explained[1]:.6f}\n")
        writer = csv_mod.writer(fh)
        writer.writerow(["x", "y", "true_class"])
        for (x, y), cls in zip(projected, labels):
            writer.writerow([repr(float(x)), repr(float(y)), int(cls)])
    print(f"wrote {len(projected)} projected points to {args.out} "
          f"(explained variance {explained[0]:.3f}+{explained[1]:.3f})")


def _select_split(dataset, model, which):
    if which == "train":
        split = dataset.train
    elif which == "test":
        split = dataset.test
    else:
        train, test = dataset.train, dataset.test
        features = np.concatenate([train.features, test.features])
        labels = np.concatenate([train.labels, test.labels])
        aux = None
        if model.aux_kind is not None:
            aux = np.concatenate([train.aux_for(model), test.aux_for(model)])
        return features, aux, labels
    return split.features, split.aux_for(model), split.labels


def _dump_activations(model, dataset, out_dir):
    """Debug dump: per-layer image-branch activations for a few records."""
    os.makedirs(out_dir, exist_ok=True)
    if not model.image_branch:
        raise ValueError(f"model {model.builder_id} has no image branch to dump")
    x = dataset.test.aux_for(model)[:8]
    for i, layer in enumerate(model.image_branch):
        x = layer.forward(x)
        save_pft(os.path.join(out_dir, f"img_{i:02d}_{layer.kind}.pft"), x)


def _build_from_dataset(model_id, dataset):
    image_shape = dataset.image_shape
    if image_shape is None and "image_shape" in dataset.manifest:
        image_shape = tuple(int(v) for v in dataset.manifest["image_shape"].split(","))
    embed_width = None
    if dataset.train.embeddings is not None:
        embed_width = dataset.train.embeddings.shape[1]
    if model_id in (3, 4, 5) and image_shape is None:
        raise ValueError(f"model {model_id} needs images; dataset has none")
    return build_model(model_id, dataset.feature_width, Rng(0),
                       image_shape=image_shape, embed_width=embed_width)


def _training_config(args):
    values = {}
    if args.config:
        _require_path(args.config)
        for key, val in read_manifest(args.config).items():
            values[key] = val
    fields = {
        "learning_rate": float, "batch_size": int, "rmsprop_decay": float,
        "rmsprop_epsilon": float, "l1_alpha": float, "epochs": int, "seed": int,
    }
    kwargs = {}
    for name, cast in fields.items():
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            kwargs[name] = flag_value
        elif name in values:
            kwargs[name] = cast(values[name])
    return TrainingConfig(**kwargs)


def _embedding_path(args):
    path = getattr(args, "embedding_file", None)
    if path is not None:
        _require_path(path)
    return path


def _require_path(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"path does not exist: {path}")


def _check_ratio(ratio):
    if not 0 < ratio < 1:
        raise ValueError(f"split ratio must be in (0,1), got {ratio}")


def _decode_images(records, image_dir):
    """Decode each record's image to a 128x128x3 float stack in [0,1].

    Records whose image is missing or unreadable are dropped with a reason.
    """
    from PIL import Image

    kept, rows = [], []
    for r in records:
        path = os.path.join(image_dir, r.image_path)
        if not os.path.exists(path):
            log.warning("dropping %s %s: missing image %s", r.brand, r.model, path)
            continue
        try:
            with Image.open(path) as img:
                rgb = img.convert("RGB").resize((IMAGE_SIDE, IMAGE_SIDE))
        except OSError as exc:
            log.warning("dropping %s %s: undecodable image (%s)", r.brand, r.model, exc)
            continue
        rows.append(np.asarray(rgb, dtype=np.float32) / 255.0)
        kept.append(r)
    if not rows:
        raise ValueError(f"no records with decodable images under {image_dir}")
    return kept, np.stack(rows)


if __name__ == "__main__":
    sys.exit(main())
