"""Command-line front end: synth / train / detect / eval / bench.

Every command echoes its full configuration, input digests and seeds into a
RunManifest JSON next to its outputs, and writes outputs atomically
(temp + rename). Defaults match the published recipe: 300 iterations,
learning rate 0.01, epsilon 0.01, batch 1000, 12 restarts, NMS IoU 0.3,
confidence threshold 0.05.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
import time
from dataclasses import replace as config_replace

import numpy as np

from . import __version__
from .archive import (
    ArchiveWriter,
    StreamingDataset,
    ground_truth_path,
    manifest_path,
    read_archive,
    read_ground_truth,
    read_manifest,
    iter_archive,
    write_archive,
    write_ground_truth,
)
from .baselines import SvmConfig, decision_value, train_max_baseline, train_mi_svm
from .core import DEFAULT_C_GRID, Detection, BoundingBox, LinearScorer, TrainConfig
from .errors import ToolkitError
from .evaluation import (
    EvalConfig,
    EvalReport,
    average_precision,
    detect as run_detect,
    ranking_average_precision,
)
from .mil import grid_search_c, normalized_region, score_region, train_restarts
from .synth import CONCEPT_CLASS, OBJECTNESS_MODES, SynthConfig, generate, iter_generate

MODEL_FORMAT_VERSION = 1
# Archives larger than this stream batches from disk instead of stacking in RAM.
DEFAULT_MEMORY_LIMIT = 1_500_000_000

METHODS = ("mimax", "max", "misvm")


def _atomic_write_text(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _out_stem(path: str) -> str:
    for suffix in (".jsonl", ".json", ".milfeat", ".txt"):
        if path.endswith(suffix):
            return path[: -len(suffix)]
    return path


def _write_run_manifest(out_path: str, command: str, args: argparse.Namespace,
                        inputs: list[str], timings: dict) -> None:
    config = {}
    for key, value in sorted(vars(args).items()):
        if key == "func":
            continue
        config[key] = list(value) if isinstance(value, tuple) else value
    doc = {
        "command": command,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs if p and os.path.exists(p)},
        "toolkit_version": __version__,
        "timings": timings,
    }
    _atomic_write_text(_out_stem(out_path) + ".run.json",
                       json.dumps(doc, indent=2, sort_keys=True))


def save_model(path: str, method: str, scorers: list[LinearScorer],
               records: dict | None = None, normalize_features: bool = False) -> None:
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "method": method,
        "normalize_features": normalize_features,
        "scorers": [
            {
                "class_name": s.class_name,
                "w": [float(x) for x in s.w],
                "b": s.b,
                "epsilon": s.epsilon,
                "final_loss": s.final_loss,
                "seed_used": s.seed_used,
            }
            for s in scorers
        ],
        "records": records or {},
    }
    _atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True))


def load_model(path: str) -> tuple[str, list[LinearScorer], bool]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise ToolkitError(f"{path}: unsupported model format version")
    scorers = [
        LinearScorer(
            class_name=s["class_name"],
            w=np.asarray(s["w"], dtype=np.float64),
            b=float(s["b"]),
            epsilon=float(s["epsilon"]),
            final_loss=float(s["final_loss"]),
            seed_used=int(s["seed_used"]),
        )
        for s in doc["scorers"]
    ]
    return doc["method"], scorers, bool(doc.get("normalize_features", False))


def _record_to_dict(record) -> dict:
    return {
        "restarts": [
            {"seed": r.seed, "data_loss": r.data_loss,
             "regularized_loss": r.regularized_loss}
            for r in record.restarts
        ],
        "chosen_index": record.chosen_index,
        "chosen_c": record.chosen_c,
        "validation_losses": (
            None if record.validation_losses is None
            else [[c, v] for c, v in record.validation_losses]
        ),
    }


def _split_arg(value: str | None) -> str | None:
    return None if value in (None, "all") else value


def _resolve_classes(requested: list[str] | None, available: tuple[str, ...]) -> list[str]:
    if not requested:
        return list(available)
    unknown = [c for c in requested if c not in available]
    if unknown:
        raise ToolkitError(
            f"unknown class name(s) {', '.join(unknown)}; "
            f"available classes: {', '.join(available)}"
        )
    return requested


def cmd_synth(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    cfg = SynthConfig(
        n_images=args.images,
        k_regions=args.regions,
        feature_dim=args.dim,
        positive_fraction=args.pos_fraction,
        concept_margin=args.margin,
        positives_per_positive_bag=args.positives_per_bag,
        noise_std=args.noise_std,
        objectness_mode=args.objectness,
        seed=args.seed,
    )
    bags, gts, _planted = generate(cfg)
    write_archive(bags, None, [CONCEPT_CLASS], args.out, dataset_name="synthetic")
    write_ground_truth(gts, ground_truth_path(args.out))
    timings = {"total_s": time.perf_counter() - t0}
    _write_run_manifest(args.out, "synth", args, [], timings)
    print(f"wrote {args.out} ({len(bags)} bags), {ground_truth_path(args.out)} "
          f"({len(gts)} boxes)")
    return 0


def _load_training_data(args, class_name: str):
    """Pick in-memory bags or a disk-streaming dataset by archive size."""
    split = _split_arg(args.split)
    blob_bytes = os.path.getsize(args.features)
    stream = args.stream or (blob_bytes > args.memory_limit and not args.in_memory)
    if stream:
        return StreamingDataset(args.features, class_name, split,
                                normalize=args.l2_normalize), True
    return read_archive(args.features, split), False


def cmd_train(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    manifest = read_manifest(args.features)
    classes = _resolve_classes(args.class_names, manifest.class_names)
    grid = None
    if args.grid_c is not None:
        grid = DEFAULT_C_GRID if args.grid_c == "default" else tuple(
            sorted(float(x) for x in args.grid_c.split(","))
        )
    config = TrainConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        epsilon=args.eps,
        batch_size=args.batch_size,
        restarts=args.restarts,
        C=args.c,
        C_grid=grid,
        val_fraction=args.val_fraction,
        seed=args.seed,
        score_weighted=not args.no_score_weighting,
        normalize_features=args.l2_normalize,
    )
    svm_config = SvmConfig(
        weight_grid=tuple(float(x) for x in args.svm_weights.split(",")),
        folds=args.folds,
        iterations=args.svm_iters,
        learning_rate=args.svm_lr,
        seed=args.seed,
    )

    scorers: list[LinearScorer] = []
    records: dict[str, dict] = {}
    per_class: dict[str, float] = {}
    for cls in classes:
        tc = time.perf_counter()
        if args.method == "mimax":
            data, streaming = _load_training_data(args, cls)
            try:
                if grid is not None:
                    if streaming:
                        raise ToolkitError(
                            "--grid-c requires the archive to fit in memory "
                            "(pass --in-memory to force)"
                        )
                    scorer, record = grid_search_c(data, cls, config)
                else:
                    scorer, record = train_restarts(data, cls, config)
            finally:
                if streaming:
                    data.close()
            records[cls] = _record_to_dict(record)
        elif args.method == "max":
            bags = read_archive(args.features, _split_arg(args.split))
            scorer = train_max_baseline(bags, cls, svm_config)
        else:  # misvm
            bags = read_archive(args.features, _split_arg(args.split))
            scorer, mi_record = train_mi_svm(bags, cls, svm_config,
                                             max_iterations=args.misvm_max_iters)
            records[cls] = {
                "objectives": list(mi_record.objectives),
                "converged": mi_record.converged,
                "iterations_run": mi_record.iterations_run,
            }
        scorers.append(scorer)
        per_class[cls] = time.perf_counter() - tc
        print(f"trained {cls}: final_loss={scorer.final_loss:.6f} "
              f"({per_class[cls]:.2f}s)")

    save_model(args.out, args.method, scorers, records,
               normalize_features=args.method == "mimax" and args.l2_normalize)
    timings = {"total_s": time.perf_counter() - t0, "per_class_s": per_class}
    _write_run_manifest(args.out, "train", args, [args.features,
                                                  manifest_path(args.features)], timings)
    print(f"wrote {args.out}")
    return 0


def _score_fn_for(method: str):
    return score_region if method == "mimax" else decision_value


def cmd_detect(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    method, scorers, normalize = load_model(args.model)
    score_fn = _score_fn_for(method)
    if normalize:
        base_fn = score_fn
        score_fn = lambda s, r: base_fn(s, normalized_region(r))
    cfg = EvalConfig(nms_iou=args.nms_iou, confidence_threshold=args.threshold)
    split = _split_arg(args.split)

    det_lines: list[str] = []
    img_lines: list[str] = []
    n_images = 0
    for scorer in scorers:
        for bag in iter_archive(args.features, split):
            n_images += 1
            best = None
            for det in run_detect(scorer, bag, cfg, score_fn):
                det_lines.append(json.dumps({
                    "image_id": det.image_id,
                    "class_name": det.class_name,
                    "x1": det.box.x1, "y1": det.box.y1,
                    "x2": det.box.x2, "y2": det.box.y2,
                    "score": det.score,
                }, sort_keys=True))
            for region in bag.regions:
                s = float(score_fn(scorer, region))
                best = s if best is None else max(best, s)
            img_lines.append(json.dumps({
                "image_id": bag.image_id,
                "class_name": scorer.class_name,
                "score": best,
            }, sort_keys=True))

    _atomic_write_text(args.out, "\n".join(det_lines) + ("\n" if det_lines else ""))
    scores_path = _out_stem(args.out) + ".image_scores.jsonl"
    _atomic_write_text(scores_path, "\n".join(img_lines) + ("\n" if img_lines else ""))
    timings = {"total_s": time.perf_counter() - t0, "images_scored": n_images}
    _write_run_manifest(args.out, "detect", args, [args.features, args.model], timings)
    print(f"wrote {args.out} ({len(det_lines)} detections) and {scores_path}")
    return 0


def read_detections(path: str) -> list[Detection]:
    out: list[Detection] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.append(Detection(
                image_id=rec["image_id"],
                class_name=rec["class_name"],
                box=BoundingBox(rec["x1"], rec["y1"], rec["x2"], rec["y2"]),
                score=rec["score"],
            ))
    return out


def _read_image_scores(path: str) -> dict[str, dict[str, float]]:
    """class -> image_id -> score."""
    out: dict[str, dict[str, float]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.setdefault(rec["class_name"], {})[rec["image_id"]] = rec["score"]
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    manifest = read_manifest(args.features)
    detections = read_detections(args.detections)
    gts = read_ground_truth(args.gt)
    scores_path = args.image_scores or _out_stem(args.detections) + ".image_scores.jsonl"
    image_scores = _read_image_scores(scores_path) if os.path.exists(scores_path) else {}

    ious = tuple(args.iou) if args.iou else (0.5,)
    cfg = EvalConfig(ap_style=args.ap_style, eval_iou=ious[0])

    detection_ap: dict[float, dict[str, float | None]] = {t: {} for t in ious}
    classification_ap: dict[str, float | None] = {}
    labels_by_image = {e.image_id: e.labels for e in manifest.images}
    for cls in manifest.class_names:
        cls_dets = [d for d in detections if d.class_name == cls]
        cls_gts = [g for g in gts if g.class_name == cls]
        for t in ious:
            detection_ap[t][cls] = average_precision(cls_dets, cls_gts,
                                                     config_replace(cfg, eval_iou=t))
        per_image = image_scores.get(cls, {})
        pairs = [(score, labels_by_image[img][cls])
                 for img, score in per_image.items() if img in labels_by_image]
        classification_ap[cls] = ranking_average_precision(
            [p[0] for p in pairs], [p[1] for p in pairs], cfg.ap_style
        ) if pairs else None

    report = EvalReport(
        class_names=manifest.class_names,
        ious=ious,
        detection_ap=detection_ap,
        classification_ap=classification_ap,
    )
    text = report.to_text()
    _atomic_write_text(args.out + ".txt", text + "\n")
    _atomic_write_text(args.out + ".json",
                       json.dumps(report.to_dict(), indent=2, sort_keys=True))
    timings = {"total_s": time.perf_counter() - t0}
    _write_run_manifest(args.out + ".json", "eval", args,
                        [args.detections, args.gt, manifest_path(args.features)], timings)
    print(text)
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    workdir = None
    features = args.features
    if features is None:
        workdir = args.workdir or tempfile.mkdtemp(prefix="mildet_bench_")
        os.makedirs(workdir, exist_ok=True)
        features = os.path.join(workdir, "bench.milfeat")
        cfg = SynthConfig(
            n_images=args.bags,
            k_regions=args.regions,
            feature_dim=args.dim,
            positive_fraction=0.3,
            seed=args.seed,
        )
        tgen = time.perf_counter()
        # stream bag-by-bag so paper-scale archives never sit in memory
        with ArchiveWriter(features, [CONCEPT_CLASS], cfg.feature_dim,
                           dataset_name="bench") as writer:
            for bag, _gts in iter_generate(cfg):
                writer.add(bag)
        gen_s = time.perf_counter() - tgen
        print(f"generated {features} in {gen_s:.1f}s", flush=True)
    else:
        gen_s = 0.0

    manifest = read_manifest(features)
    n_images = len(manifest.images)
    config = TrainConfig(
        iterations=args.iters,
        learning_rate=args.lr,
        epsilon=args.eps,
        batch_size=args.batch_size,
        restarts=args.restarts,
        seed=args.seed,
    )
    base_class = manifest.class_names[0]
    blob_bytes = os.path.getsize(features)
    stream = args.stream or (blob_bytes > args.memory_limit and not args.in_memory)
    data = None
    try:
        if not stream:
            data = read_archive(features)
        classes = [f"bench_{i:02d}" for i in range(args.classes)]
        per_class: dict[str, float] = {}
        steps_per_class = config.iterations * config.restarts
        for cls in classes:
            tc = time.perf_counter()
            if stream:
                ds = StreamingDataset(features, base_class)
                try:
                    train_restarts(ds, base_class, config)
                finally:
                    ds.close()
            else:
                train_restarts(data, base_class, config)
            per_class[cls] = time.perf_counter() - tc
            print(f"{cls}: {per_class[cls]:.2f}s "
                  f"({steps_per_class / per_class[cls]:.1f} steps/s)", flush=True)
        total = time.perf_counter() - t0
        train_total = sum(per_class.values())
        report = {
            "dataset": {
                "features": features,
                "bags": n_images,
                "feature_dim": manifest.feature_dim,
                "blob_bytes": blob_bytes,
                "streaming": stream,
            },
            "config": {
                "classes": args.classes,
                "restarts": config.restarts,
                "iterations": config.iterations,
                "batch_size": config.batch_size,
                "learning_rate": config.learning_rate,
                "epsilon": config.epsilon,
                "seed": config.seed,
            },
            "generation_s": gen_s,
            "per_class_s": per_class,
            "train_total_s": train_total,
            "total_s": total,
            "steps_per_s": (args.classes * steps_per_class) / train_total,
            "reference_gpu_s_20_classes": 750.0,
        }
        _atomic_write_text(args.out, json.dumps(report, indent=2, sort_keys=True))
        _write_run_manifest(args.out, "bench", args, [features], {"total_s": total})
        print(f"total {total:.1f}s (training {train_total:.1f}s, "
              f"{report['steps_per_s']:.1f} steps/s); report: {args.out}")
    finally:
        if workdir and not args.keep_archive:
            # remove only what this run created; --workdir may be a shared dir
            for p in (features, manifest_path(features)):
                if os.path.exists(p):
                    os.unlink(p)
            try:
                os.rmdir(workdir)
            except OSError:
                pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mildet",
        description="Weakly supervised object detection over precomputed region features",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature archive")
    p.add_argument("--out", required=True, help="output archive path (.milfeat)")
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--regions", type=int, default=30)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--pos-fraction", type=float, default=0.3)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--noise-std", type=float, default=0.25)
    p.add_argument("--positives-per-bag", type=int, default=1)
    p.add_argument("--objectness", choices=OBJECTNESS_MODES, default="informative")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train detectors from image-level labels")
    p.add_argument("--features", required=True)
    p.add_argument("--class", dest="class_names", action="append",
                   help="class to train (repeatable; default: all)")
    p.add_argument("--method", choices=METHODS, default="mimax")
    p.add_argument("--restarts", type=int, default=12)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--c", type=float, default=0.0)
    p.add_argument("--grid-c", nargs="?", const="default", default=None,
                   metavar="C1,C2,...",
                   help="grid-search C on a validation split "
                        "(optionally a comma-separated grid)")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-score-weighting", action="store_true",
                   help="use the unweighted loss (ignore objectness)")
    p.add_argument("--l2-normalize", action="store_true",
                   help="L2-normalize region features before training/scoring")
    p.add_argument("--split", default="train", help="train | test | all")
    p.add_argument("--svm-weights", default="0.01,0.1,1,10,100")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--svm-iters", type=int, default=300)
    p.add_argument("--svm-lr", type=float, default=0.1)
    p.add_argument("--misvm-max-iters", type=int, default=50)
    p.add_argument("--memory-limit", type=int, default=DEFAULT_MEMORY_LIMIT)
    p.add_argument("--stream", action="store_true",
                   help="force disk-streaming batches")
    p.add_argument("--in-memory", action="store_true",
                   help="force loading the archive into memory")
    p.add_argument("--out", required=True, help="output model path (.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="emit thresholded + NMS-filtered detections")
    p.add_argument("--features", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--nms-iou", type=float, default=0.3)
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--split", default="all", help="train | test | all")
    p.add_argument("--out", required=True, help="output detections path (.jsonl)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="PASCAL-style AP report from saved detections")
    p.add_argument("--detections", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--features", required=True,
                   help="archive whose manifest supplies classes and labels")
    p.add_argument("--iou", type=float, action="append",
                   help="evaluation IoU threshold (repeatable; default 0.5)")
    p.add_argument("--ap-style", choices=("eleven_point", "all_points"),
                   default="eleven_point")
    p.add_argument("--image-scores", default=None,
                   help="image-score sidecar (default: next to detections)")
    p.add_argument("--out", required=True, help="report stem (.txt/.json added)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time training at configurable scale")
    p.add_argument("--features", default=None,
                   help="existing archive (default: generate one)")
    p.add_argument("--bags", type=int, default=5011)
    p.add_argument("--regions", type=int, default=300)
    p.add_argument("--dim", type=int, default=2048)
    p.add_argument("--classes", type=int, default=20)
    p.add_argument("--restarts", type=int, default=12)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=1000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir", default=None,
                   help="where to place a generated archive")
    p.add_argument("--keep-archive", action="store_true")
    p.add_argument("--memory-limit", type=int, default=DEFAULT_MEMORY_LIMIT)
    p.add_argument("--stream", action="store_true")
    p.add_argument("--in-memory", action="store_true")
    p.add_argument("--out", required=True, help="timing report path (.json)")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
