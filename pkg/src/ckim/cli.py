"""Command line: generate -> train -> infer -> evaluate, plus audit."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .core import CkimError, LabelSpace, extract_features
from .crisp import SgdConfig, train_crisp
from .fileio import load_detections, load_model, save_model, write_detections
from .fuzzy import fit_fuzzy
from .metrics import classify, evaluate, measure_latency
from .synthgen import PRESETS, audit_knowledge, generate, preset

log = logging.getLogger("ckim")


def manifest_path(data_path: str | os.PathLike) -> Path:
    p = Path(data_path)
    return p.with_name(p.stem + ".manifest.json")


def _space(args) -> Optional[LabelSpace]:
    return LabelSpace(tuple(args.sizes.split(","))) if getattr(args, "sizes", None) else None


def cmd_generate(args) -> int:
    overrides = {"rng_seed": args.seed}
    if args.objects_per_image is not None:
        overrides["objects_per_image"] = args.objects_per_image
    spec = preset(args.preset, classes=args.classes, **overrides)
    data = generate(spec, args.images)
    n = write_detections(args.out, data.groups(), data.label_space)
    manifest_path(args.out).write_text(json.dumps(data.manifest, indent=2) + "\n")
    print(f"wrote {n} records from {args.images} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    groups = load_detections(args.data, _space(args))
    records = [r for recs in groups.values() for r in recs]
    if not records:
        raise CkimError(f"{args.data} holds no records")
    if any(r.truth_size is None for r in records):
        raise CkimError("training data needs truth_size on every record")
    space = _space(args) or LabelSpace.infer(r.truth_size.name for r in records)
    labeled = [(extract_features(r.box), space.size(r.truth_size.name)) for r in records]
    if args.kind == "crisp":
        cfg = SgdConfig(args.lr, args.epochs, args.batch_size, args.seed)
        model = train_crisp(labeled, space, cfg)
    else:
        model = fit_fuzzy(labeled, space)
    nbytes = save_model(model, args.out)
    print(f"saved {args.kind} model ({nbytes} bytes) to {args.out}")
    return 0


def cmd_infer(args) -> int:
    model = load_model(args.model)
    space = model.label_space
    groups = load_detections(args.detections, space)
    out = {}
    for image_id, recs in groups.items():
        out[image_id] = [replace(r, pred_size=classify(model, extract_features(r.box))) for r in recs]
    n = write_detections(args.out, out, space)
    print(f"labeled {n} detections into {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    truths = load_detections(args.truth, _space(args))
    sizes = {r.truth_size.name for recs in truths.values() for r in recs if r.truth_size}
    space = _space(args) or (LabelSpace.infer(sizes) if sizes else LabelSpace.canonical(3))
    preds = load_detections(args.pred, space)
    report = evaluate(preds, truths, space, args.iou, args.interpolation)
    if args.model:
        model = load_model(args.model)
        feats = [extract_features(r.box) for recs in truths.values() for r in recs]
        report.mean_latency_us = measure_latency(model, feats, args.latency_repeats)
        report.model_bytes = Path(args.model).stat().st_size
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_audit(args) -> int:
    groups = load_detections(args.data, _space(args))
    report = audit_knowledge(groups, args.depth_tolerance)
    print(json.dumps(report.summary(), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ckim", description="Infer size-graded fine labels from coarse detections.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic labeled detection file")
    g.add_argument("--images", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=sorted(PRESETS), default="default")
    g.add_argument("--classes", type=int, choices=(2, 3), default=3)
    g.add_argument("--objects-per-image", type=int)
    g.add_argument("--out", default="detections.jsonl")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fit a crisp or fuzzy CKIM")
    t.add_argument("--kind", choices=("crisp", "fuzzy"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--sizes", help="comma-separated size names, smallest first")
    t.add_argument("--lr", type=float, default=SgdConfig.learning_rate)
    t.add_argument("--epochs", type=int, default=SgdConfig.epochs)
    t.add_argument("--batch-size", type=int, default=SgdConfig.batch_size)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="append fine labels to a detection file")
    i.add_argument("--model", required=True)
    i.add_argument("--detections", required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("evaluate", help="size accuracy, confusion matrix and mAP")
    e.add_argument("--pred", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--sizes")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--interpolation", choices=("all", "11point"), default="all")
    e.add_argument("--model", help="also report CKIM latency and file size")
    e.add_argument("--latency-repeats", type=int, default=10_000)
    e.add_argument("--seed", type=int, default=0, help="accepted for symmetry; evaluation is deterministic")
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("audit", help="pairwise validity of the size/distance knowledge")
    a.add_argument("--data", required=True)
    a.add_argument("--sizes")
    a.add_argument("--depth-tolerance", type=float)
    a.set_defaults(func=cmd_audit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CkimError, OSError) as exc:
        print(f"ckim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
