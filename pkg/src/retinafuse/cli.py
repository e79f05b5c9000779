"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or model error. Each run
appends one JSON line to the run log (``--run-log``, default from
``RETINAFUSE_RUN_LOG`` or ``./retinafuse-runs.jsonl``).
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (
    DatasetSplit,
    file_sha256,
    list_image_files,
    load_gray,
    load_image,
    load_manifest,
    load_mask,
    save_image,
    save_mask,
    split_manifest,
)
from .enhance import ClaheParams, clahe, hist_equalize
from .errors import RetinaFuseError
from .seeding import derive_seed

log = logging.getLogger("retinafuse")

RUN_LOG_ENV = "RETINAFUSE_RUN_LOG"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n\n{self.format_help()}")


def _pair(text, cast=int):
    try:
        parts = [cast(t) for t in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from exc
    return parts


def _floats(text):
    return _pair(text, float)


def _require(path, what="file"):
    p = Path(path)
    ok = p.is_dir() if what == "directory" else p.is_file()
    if not ok:
        raise RetinaFuseError(f"{p}: {what} not found")
    return p


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(rows)


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# --- subcommands -----------------------------------------------------------


def cmd_synth(args):
    from . import synth

    if args.kind == "vessel":
        names = synth.write_vessel_set(derive_seed(args.seed, "synth-vessel"), args.count,
                                       args.out, args.size)
        return {"kind": "vessel", "count": len(names)}
    params = synth.DiseaseParams(seed=derive_seed(args.seed, "synth-disease"),
                                 n_classes=args.classes, per_class=args.per_class,
                                 size=args.size)
    m = synth.gen_disease_dataset(params, args.out)
    return {"kind": "disease", "entries": len(m), "classes": len(m.classes)}


def cmd_enhance(args):
    _require(args.input)
    gray = load_gray(args.input)
    if args.method == "histeq":
        out = hist_equalize(gray)
    else:
        tx, ty = args.tiles
        out = clahe(gray, ClaheParams(tx, ty, args.clip))
    save_image(out, args.output)
    return {"method": args.method}


def _load_pairs(data_dir):
    data_dir = _require(data_dir, "directory")
    img_dir, mask_dir = data_dir / "images", data_dir / "masks"
    _require(img_dir, "directory")
    _require(mask_dir, "directory")
    files = list_image_files(img_dir)
    if not files:
        raise RetinaFuseError(f"{img_dir}: no images found")
    images, masks = [], []
    for f in files:
        images.append(load_gray(f))
        masks.append(load_mask(_require(mask_dir / f.name)))
    return images, masks


def _train_segnet(images, masks, args, seed):
    from .segment import SegNetConfig, train_from_masks

    cfg = SegNetConfig(depth=args.depth, base_channels=args.base_channels)
    return train_from_masks(images, masks, args.epochs, seed, cfg, tuple(args.lr),
                            args.batch_size)


def cmd_train_seg(args):
    from .metrics import segmentation_report
    from .segment import save_segnet, vessel_probability

    images, masks = _load_pairs(args.data)
    res = _train_segnet(images, masks, args, derive_seed(args.seed, "train-seg"))
    save_segnet(res.net, args.out)
    history = Path(str(args.out) + ".loss.csv")
    _write_csv(history, ["epoch", "loss"],
               [[e + 1, f"{v:.8f}"] for e, v in enumerate(res.loss_history)])
    summary = {"epochs": args.epochs, "final_loss": res.loss_history[-1]}
    if args.val_data:
        vi, vm = _load_pairs(args.val_data)
        rep = segmentation_report([vessel_probability(res.net, im) for im in vi], vm)
        summary.update(jaccard=rep["jaccard_mean"], roc_auc=rep["roc_auc"], pr_auc=rep["pr_auc"])
    return summary


def cmd_segment(args):
    from .segment import load_segnet, predict_mask

    net = load_segnet(_require(args.model))
    _require(args.input)
    mask, prob = predict_mask(net, load_gray(args.input))
    save_mask(mask, args.output)
    if args.prob:
        save_image(prob, args.prob)
    return {"vessel_fraction": float(mask.mean())}


def _bundle_split(model):
    meta = model.meta
    return DatasetSplit(meta["split"]["train"], meta["split"]["validation"],
                        meta["split"]["test"], meta["split"]["seed"])


def cmd_train(args):
    from . import fusion
    from .segment import load_segnet
    from .svm import TrainParams
    from .synth import vessel_patches

    mpath = _require(args.manifest)
    if args.seg_model:
        _require(args.seg_model)
    manifest = load_manifest(mpath)
    split = split_manifest(manifest, derive_seed(args.seed, "split"))
    if args.seg_model:
        segnet = load_segnet(args.seg_model)
    else:
        pairs = vessel_patches(derive_seed(args.seed, "seg-patches"), args.seg_patches)
        args.epochs = args.seg_epochs
        segnet = _train_segnet([p[0] for p in pairs], [p[1] for p in pairs], args,
                               derive_seed(args.seed, "train-seg")).net
    cfg = fusion.TrainConfig(
        shape=(args.size, args.size),
        clahe=ClaheParams(args.tiles[0], args.tiles[1], args.clip),
        k_rgb=args.k_rgb,
        k_unet=args.k_unet,
        svm=TrainParams(C=args.C, seed=derive_seed(args.seed, "svm") % 2**31),
        grid=tuple(args.grid),
        unet_input=args.unet_input,
        workers=args.threads,
    )
    rep = fusion.train_two_stream(manifest, split, segnet, cfg)
    out = Path(args.out)
    rep.model.meta = {
        "seed": args.seed,
        "manifest": os.path.relpath(mpath.resolve(), out.resolve().parent),
        "manifest_sha256": file_sha256(mpath),
        "split": json.loads(split.to_json()),
    }
    fusion.save_bundle(rep.model, out)
    if rep.sweep:
        fusion.write_sweep_csv(rep.sweep, out / "sweep.csv")
    return {"hybrid_w": rep.model.hybrid_w, "kernel": rep.model.kernel,
            "best_val_accuracy": max((r.val_accuracy for r in rep.sweep), default=None)}


def _bundle_manifest(model, bundle_dir, override=None):
    if override:
        path = _require(override)
    else:
        path = (Path(bundle_dir).resolve().parent / model.meta["manifest"]).resolve()
        _require(path)
    if file_sha256(path) != model.meta.get("manifest_sha256"):
        raise RetinaFuseError(f"{path}: manifest checksum differs from the one in the bundle")
    return load_manifest(path)


def cmd_predict(args):
    from . import fusion

    model = fusion.load_bundle(_require(args.bundle, "directory"))
    _require(args.input)
    cls, scores = fusion.predict(model, load_image(args.input))
    result = {"class_id": cls, "label": model.classes[cls],
              "scores": [round(float(s), 6) for s in scores]}
    print(json.dumps(result))
    return result


def _features(model, manifest, indices):
    from . import fusion

    data = fusion.compute_stream_data(manifest, indices, model.shape, model.clahe,
                                      model.segnet, model.unet_input)
    return fusion.project_data(model, data), data.labels


def cmd_sweep(args):
    from . import fusion

    model = fusion.load_bundle(_require(args.bundle, "directory"))
    manifest = _bundle_manifest(model, args.bundle, args.manifest)
    split = _bundle_split(model)
    val, val_y = _features(model, manifest, split.validation)
    test, test_y = _features(model, manifest, split.test) if split.test else (None, None)
    rows = fusion.sweep_ratio(model, val, val_y, args.grid, args.kernels, test, test_y)
    fusion.write_sweep_csv(rows, args.out)
    best = fusion.best_row(rows)
    return {"best_hybrid_w": best.hybrid_w, "best_kernel": best.kernel,
            "best_val_accuracy": best.val_accuracy, "test_accuracy_at_best": best.test_accuracy}


def cmd_evaluate(args):
    from . import fusion
    from .metrics import accuracy, confusion_matrix, segmentation_report

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = {}
    if args.bundle:
        model = fusion.load_bundle(_require(args.bundle, "directory"))
        manifest = _bundle_manifest(model, args.bundle, args.manifest)
        split = _bundle_split(model)
        idx = getattr(split, args.split)
        (fa, fb), y = _features(model, manifest, idx)
        va, vb = fusion.stream_votes(model, fa, fb)
        fused = fusion.argmax_low(fusion.fused_scores(va, vb, model.hybrid_w))
        report["classification"] = {
            "split": args.split,
            "n": int(len(y)),
            "hybrid_w": model.hybrid_w,
            "kernel": model.kernel,
            "accuracy": accuracy(fused, y),
            "accuracy_clahe_stream": accuracy(fusion.argmax_low(va), y),
            "accuracy_segmentation_stream": accuracy(fusion.argmax_low(vb), y),
            "classes": model.classes,
            "confusion_matrix": confusion_matrix(fused, y, len(model.classes)).tolist(),
        }
    if args.seg_data:
        from .segment import load_segnet, vessel_probability

        net = load_segnet(_require(args.seg_model))
        images, masks = _load_pairs(args.seg_data)
        rep = segmentation_report([vessel_probability(net, im) for im in images], masks)
        report["segmentation"] = {
            "n_images": len(images),
            "jaccard_mean": rep["jaccard_mean"],
            "roc_auc": rep["roc_auc"],
            "pr_auc": rep["pr_auc"],
        }
        roc, pr = rep["roc"], rep["pr"]
        _write_csv(out / "roc.csv", ["fpr", "tpr", "threshold"],
                   [[f"{a:.8f}", f"{b:.8f}", f"{t:.8f}"]
                    for a, b, t in zip(roc.fpr, roc.tpr, roc.thresholds)])
        _write_csv(out / "pr.csv", ["recall", "precision", "threshold"],
                   [[f"{a:.8f}", f"{b:.8f}", f"{t:.8f}"]
                    for a, b, t in zip(pr.recall, pr.precision, pr.thresholds)])
    if not report:
        raise UsageError("evaluate needs --bundle and/or --seg-data")
    _dump_json(report, out / "metrics.json")
    summary = {}
    if "classification" in report:
        summary["accuracy"] = report["classification"]["accuracy"]
    if "segmentation" in report:
        summary.update({k: report["segmentation"][k] for k in ("jaccard_mean", "roc_auc", "pr_auc")})
    return summary


def cmd_plot(args):
    from .plots import plot_curves

    written = plot_curves(args.out, roc=args.roc, pr=args.pr, loss=args.loss, sweep=args.sweep)
    return {"written": [p.name for p in written]}


# --- parser ----------------------------------------------------------------


def _add_seg_train_args(p, epochs_flag="--epochs", default_epochs=50):
    p.add_argument(epochs_flag, type=int, default=default_epochs,
                   dest="seg_epochs" if epochs_flag != "--epochs" else "epochs")
    p.add_argument("--lr", type=_floats, default=[0.1, 0.01],
                   help="learning rates for the first and second half of training")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--base-channels", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="retinafuse", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"retinafuse {__version__}")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1, help="worker cap (results do not depend on it)")
    ap.add_argument("--run-log", default=None)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    seed_kw = dict(type=int, default=argparse.SUPPRESS, help="overrides the global --seed")

    p = sub.add_parser("synth", help="generate synthetic vessel or disease data")
    p.add_argument("--kind", choices=["vessel", "disease"], required=True)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--count", type=int, default=200, help="vessel images to write")
    p.add_argument("--size", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("enhance", help="histogram equalization or CLAHE of one image")
    p.add_argument("--method", choices=["histeq", "clahe"], default="clahe")
    p.add_argument("--tiles", type=_pair, default=[8, 8])
    p.add_argument("--clip", type=float, default=0.01)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("train-seg", help="train the vessel segmentation network")
    p.add_argument("--data", required=True, help="directory with images/ and masks/")
    p.add_argument("--val-data", default=None)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    _add_seg_train_args(p)
    p.set_defaults(func=cmd_train_seg)

    p = sub.add_parser("segment", help="vessel mask of one image")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--prob", default=None, help="also write the probability map")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the two-stream classifier bundle")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", **seed_kw)
    p.add_argument("--out", required=True)
    p.add_argument("--seg-model", default=None,
                   help="pretrained segmentation model; trained on synthetic vessels if absent")
    p.add_argument("--seg-patches", type=int, default=200)
    _add_seg_train_args(p, "--seg-epochs", 50)
    p.add_argument("--size", type=int, default=128, help="canonical working resolution")
    p.add_argument("--tiles", type=_pair, default=[8, 8])
    p.add_argument("--clip", type=float, default=0.01)
    p.add_argument("--k-rgb", type=int, default=61)
    p.add_argument("--k-unet", type=int, default=40)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--grid", type=_floats, default=[0.0, 0.4, 0.5, 0.6, 1.0])
    p.add_argument("--unet-input", choices=["probability", "mask"], default="probability")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--bundle", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="accuracy over hybrid ratios and kernels")
    p.add_argument("--bundle", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--grid", type=_floats, default=[0.0, 0.4, 0.5, 0.6, 1.0])
    p.add_argument("--kernels", type=lambda s: s.split(","), default=["rbf", "polynomial"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evaluate", help="metrics report (JSON) and curve points (CSV)")
    p.add_argument("--bundle", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--seg-model", default=None)
    p.add_argument("--seg-data", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="render reports as SVG")
    p.add_argument("--roc", default=None)
    p.add_argument("--pr", default=None)
    p.add_argument("--loss", default=None)
    p.add_argument("--sweep", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def _validate(args):
    if args.command == "synth" and args.size is None:
        args.size = 64 if args.kind == "vessel" else 128
    if args.command == "evaluate" and args.seg_data and not args.seg_model:
        raise UsageError("evaluate --seg-data needs --seg-model")
    if getattr(args, "kernels", None):
        bad = set(args.kernels) - {"rbf", "polynomial"}
        if bad:
            raise UsageError(f"unknown kernels: {sorted(bad)}")
    if getattr(args, "grid", None) and any(not 0 <= w <= 1 for w in args.grid):
        raise UsageError("grid ratios must lie in [0, 1]")


def _append_run_log(path, record):
    try:
        with open(path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        log.warning("could not write run log %s: %s", path, exc)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        _validate(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return 1
    record = {
        "command": args.command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "seed": args.seed,
        "versions": {"retinafuse": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "time": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    try:
        summary = args.func(args)
        code = 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        summary, code = {"error": str(exc)}, 1
    except (RetinaFuseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        summary, code = {"error": str(exc)}, 2
    record["exit_code"] = code
    record["metrics"] = summary
    run_log = args.run_log or os.environ.get(RUN_LOG_ENV, "retinafuse-runs.jsonl")
    _append_run_log(run_log, record)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
