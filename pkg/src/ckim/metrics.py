"""Size accuracy, IoU, mAP@0.5 and CKIM latency."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import (
    BoundingBox,
    CkimError,
    DetectionRecord,
    FeatureVector,
    LabelSpace,
    SizeClass,
    compose_fine_label,
)
from .crisp import CrispModel, classify_crisp
from .fuzzy import classify_fuzzy

Groups = Mapping[str, Sequence[DetectionRecord]]


def iou(a: BoundingBox, b: BoundingBox) -> float:
    # overlap from centers and sizes, so identical or nested boxes are exact
    iw = min(a.width, b.width, (a.width + b.width) / 2 - abs(a.x_center - b.x_center))
    ih = min(a.height, b.height, (a.height + b.height) / 2 - abs(a.y_center - b.y_center))
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return min(1.0, inter / (a.area + b.area - inter))


def average_precision(tp: Sequence[bool], num_truth: int, interpolation: str = "all") -> float:
    """AP of a confidence-ranked list of true/false positives.

    ``interpolation="all"`` integrates the precision envelope over every
    recall step; ``"11point"`` averages the envelope at recall 0, 0.1, ..., 1.
    """
    if num_truth <= 0:
        raise CkimError("average precision needs at least one ground-truth box")
    tp_arr = np.asarray(tp, dtype=float)
    ctp = np.cumsum(tp_arr)
    cfp = np.cumsum(1.0 - tp_arr)
    recall = ctp / num_truth
    precision = ctp / np.maximum(ctp + cfp, np.finfo(float).eps)
    if interpolation == "11point":
        return float(np.mean([precision[recall >= t].max() if np.any(recall >= t) else 0.0
                              for t in np.arange(11) / 10]))
    if interpolation != "all":
        raise CkimError(f"unknown interpolation {interpolation!r}")
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def predicted_size(rec: DetectionRecord) -> SizeClass:
    """A prediction's size; a record without ``pred_size`` predicts its truth."""
    size = rec.pred_size if rec.pred_size is not None else rec.truth_size
    if size is None:
        raise CkimError(f"prediction in image {rec.image_id!r} carries no size")
    return size


def _greedy_match(preds: Sequence[DetectionRecord], truths: Sequence[DetectionRecord],
                  threshold: float, key) -> list[Optional[int]]:
    """Match confidence-sorted ``preds`` one-to-one to ``truths``.

    Each prediction takes the unmatched truth with the same ``key`` and the
    highest IoU, provided that IoU exceeds ``threshold``.
    """
    taken = [False] * len(truths)
    out: list[Optional[int]] = []
    for p in preds:
        best, best_iou = None, threshold
        for j, t in enumerate(truths):
            if taken[j] or key(t, truth=True) != key(p, truth=False):
                continue
            v = iou(p.box, t.box)
            if v > best_iou:
                best, best_iou = j, v
        if best is not None:
            taken[best] = True
        out.append(best)
    return out


def _by_confidence(recs: Sequence[DetectionRecord]) -> list[DetectionRecord]:
    return sorted(recs, key=lambda r: -r.confidence)


@dataclass
class EvalReport:
    size_accuracy: Optional[float]
    fine_label_accuracy: float
    confusion: list[list[int]]
    map50: Optional[float]
    mean_latency_us: Optional[float] = None
    model_bytes: Optional[int] = None
    matched: int = 0
    num_truth: int = 0
    num_pred: int = 0
    class_ap: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def mean_average_precision(preds: Groups, truths: Groups, space: LabelSpace,
                           iou_threshold: float = 0.5, interpolation: str = "all") -> tuple[Optional[float], dict]:
    """mAP over fine-grained classes present in the ground truth."""
    def fine(rec: DetectionRecord, truth: bool) -> str:
        size = rec.truth_size if truth else predicted_size(rec)
        return compose_fine_label(rec.coarse_label, size, space)

    counts: dict[str, int] = {}
    for recs in truths.values():
        for t in recs:
            counts[fine(t, True)] = counts.get(fine(t, True), 0) + 1

    # rank all predictions of a class across images, then match image by image
    scored: dict[str, list[tuple[float, int, bool]]] = {c: [] for c in counts}
    order = 0
    for image_id, recs in preds.items():
        ranked = _by_confidence(recs)
        truth_recs = list(truths.get(image_id, ()))
        matches = _greedy_match(ranked, truth_recs, iou_threshold, fine)
        for p, m in zip(ranked, matches):
            c = fine(p, False)
            if c in scored:
                scored[c].append((p.confidence, order, m is not None))
            order += 1

    class_ap = {}
    for c, rows in scored.items():
        rows.sort(key=lambda r: (-r[0], r[1]))
        class_ap[c] = average_precision([r[2] for r in rows], counts[c], interpolation)
    if not class_ap:
        return None, {}
    return float(np.mean(list(class_ap.values()))), class_ap


def evaluate(preds: Groups, truths: Groups, space: LabelSpace, iou_threshold: float = 0.5,
             interpolation: str = "all") -> EvalReport:
    """Compare predicted fine labels against ground truth.

    Size accuracy and the confusion matrix use predictions matched to truths
    by coarse label and IoU; fine-label accuracy divides the number of truths
    whose match also carries the right size by the number of truths.
    """
    for recs in truths.values():
        for t in recs:
            if t.truth_size is None:
                raise CkimError(f"ground truth in image {t.image_id!r} lacks truth_size")
    for recs in (*truths.values(), *preds.values()):
        for r in recs:
            for s in (r.truth_size, r.pred_size):
                if s is not None and (s.index >= space.k or space.names[s.index] != s.name):
                    raise CkimError(f"label-space mismatch: {s.name!r} not in {space.names}")

    def coarse(rec: DetectionRecord, truth: bool) -> str:
        return rec.coarse_label

    k = space.k
    confusion = [[0] * k for _ in range(k)]
    matched = correct = 0
    num_truth = sum(len(v) for v in truths.values())
    num_pred = sum(len(v) for v in preds.values())
    for image_id, recs in preds.items():
        ranked = _by_confidence(recs)
        truth_recs = list(truths.get(image_id, ()))
        for p, m in zip(ranked, _greedy_match(ranked, truth_recs, iou_threshold, coarse)):
            if m is None:
                continue
            t_size = truth_recs[m].truth_size.index
            p_size = predicted_size(p).index
            confusion[t_size][p_size] += 1
            matched += 1
            correct += t_size == p_size

    map50, class_ap = mean_average_precision(preds, truths, space, iou_threshold, interpolation)
    return EvalReport(
        size_accuracy=correct / matched if matched else None,
        fine_label_accuracy=correct / num_truth if num_truth else 0.0,
        confusion=confusion,
        map50=map50,
        matched=matched,
        num_truth=num_truth,
        num_pred=num_pred,
        class_ap=class_ap,
    )


def classify(model, x: FeatureVector) -> SizeClass:
    if isinstance(model, CrispModel):
        return classify_crisp(model, x)
    return classify_fuzzy(model, x)


def measure_latency(model, features: Sequence[FeatureVector], repeats: int = 10_000) -> float:
    """Mean wall-clock microseconds per single-object inference.

    Cycles through ``features`` until ``repeats`` inferences have run.
    """
    if not features:
        raise CkimError("latency measurement needs at least one feature vector")
    repeats = max(repeats, 1)
    n = len(features)
    start = time.perf_counter()
    for i in range(repeats):
        classify(model, features[i % n])
    return (time.perf_counter() - start) / repeats * 1e6
