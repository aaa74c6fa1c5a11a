"""Detection JSON-lines files and CKIM model files.

Detection lines look like::

    {"image_id": "img000001", "coarse_label": "red metal cube",
     "box": {"x_center": 0.5, "y_center": 0.5, "width": 0.1, "height": 0.1},
     "coords": "normalized", "truth_size": "large", "truth_distance": 5.2,
     "confidence": 0.93}

``coords`` is ``"normalized"`` (the default) or ``"pixels"``; pixel boxes need
``image_w`` and ``image_h``.  A box may also be given by corners
(``x_min, y_min, x_max, y_max``).  Inference output adds ``pred_size`` and
``fine_label``.  Unknown fields are ignored.

Model files are compact JSON carrying ``format_version``, ``kind``,
``label_space``, the parameters, and a truncated SHA-256 ``checksum`` of the
canonical encoding of everything else.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence, Union

from .core import (
    BoundingBox,
    CkimError,
    DetectionRecord,
    LabelSpace,
    MalformedInputError,
    box_from_corners,
    compose_fine_label,
    decompose_fine_label,
    normalize_box,
)
from .crisp import CrispDecisionFunction, CrispModel
from .fuzzy import FuzzyModel, GaussianMembership

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_MODEL_BYTES = 2048

Model = Union[CrispModel, FuzzyModel]
Groups = dict[str, list[DetectionRecord]]


class ModelFormatError(CkimError):
    pass


@dataclass
class LoadReport:
    """Lines rejected by a lenient load, as ``(line_number, message)``."""

    skipped: list[tuple[int, str]] = field(default_factory=list)


def _parse_box(obj: Mapping) -> BoundingBox:
    box = obj.get("box")
    if not isinstance(box, Mapping):
        raise MalformedInputError("missing or invalid 'box'")
    if "x_min" in box:
        box = box_from_corners(box["x_min"], box["y_min"], box["x_max"], box["y_max"])
    coords = obj.get("coords", "normalized")
    if coords == "pixels":
        if "image_w" not in obj or "image_h" not in obj:
            raise MalformedInputError("pixel coordinates need image_w and image_h")
        return normalize_box(box, float(obj["image_w"]), float(obj["image_h"]))
    if coords != "normalized":
        raise MalformedInputError(f"unknown coords flag {coords!r}")
    try:
        vals = [float(box.get(k, box.get(alt))) for k, alt in
                (("x_center", "x_c"), ("y_center", "y_c"), ("width", "w"), ("height", "h"))]
    except (TypeError, ValueError):
        raise MalformedInputError(f"bad box {dict(box)}") from None
    return BoundingBox(*vals)


def _parse_record(obj: Mapping, space: LabelSpace) -> DetectionRecord:
    if not isinstance(obj, Mapping):
        raise MalformedInputError("line is not a JSON object")
    coarse = obj.get("coarse_label")
    if not isinstance(coarse, str) or not coarse:
        raise MalformedInputError("missing coarse_label")
    truth = obj.get("truth_size")
    pred = obj.get("pred_size")
    if pred is None and obj.get("fine_label"):
        _, pred_cls = decompose_fine_label(obj["fine_label"], space)
        pred = pred_cls.name
    dist = obj.get("truth_distance")
    return DetectionRecord(
        coarse_label=coarse,
        box=_parse_box(obj),
        truth_size=space.size(truth) if truth is not None else None,
        truth_distance=float(dist) if dist is not None else None,
        confidence=float(obj.get("confidence", 1.0)),
        image_id=str(obj.get("image_id", "")),
        pred_size=space.size(pred) if pred is not None else None,
    )


def _size_names(objs: Iterable[Mapping], separator: str) -> set[str]:
    names = set()
    for obj in objs:
        if not isinstance(obj, Mapping):
            continue
        for key in ("truth_size", "pred_size"):
            if isinstance(obj.get(key), str):
                names.add(obj[key])
        fine = obj.get("fine_label")
        if isinstance(fine, str) and separator in fine:
            names.add(fine.split(separator, 1)[0])
    return names


def load_detections(path: Union[str, os.PathLike], space: Optional[LabelSpace] = None,
                    strict: bool = True, report: Optional[LoadReport] = None) -> Groups:
    """Read a detection file into ``{image_id: [records]}`` in file order.

    With ``strict=True`` the first malformed line raises
    :class:`MalformedInputError` naming its line number; otherwise the line is
    skipped, logged, and appended to ``report``.  When ``space`` is omitted it
    is inferred from the size names present in the file (canonical ordering).
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CkimError(f"cannot read {path}: {exc}") from exc

    parsed: list[tuple[int, object]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            parsed.append((lineno, json.loads(line)))
        except json.JSONDecodeError as exc:
            _reject(path, lineno, f"invalid JSON: {exc.msg}", strict, report)

    if space is None:
        names = _size_names((o for _, o in parsed), " ")
        space = LabelSpace.infer(names) if names else LabelSpace.canonical(3)

    groups: Groups = {}
    for lineno, obj in parsed:
        try:
            rec = _parse_record(obj, space)
        except (CkimError, TypeError, ValueError, KeyError) as exc:
            _reject(path, lineno, str(exc), strict, report)
            continue
        groups.setdefault(rec.image_id, []).append(rec)
    return groups


def _reject(path, lineno: int, msg: str, strict: bool, report: Optional[LoadReport]) -> None:
    if strict:
        raise MalformedInputError(f"{path}:{lineno}: {msg}")
    log.warning("%s:%d: skipping malformed line: %s", path, lineno, msg)
    if report is not None:
        report.skipped.append((lineno, msg))


def record_to_dict(rec: DetectionRecord, space: Optional[LabelSpace] = None) -> dict:
    b = rec.box
    out = {
        "image_id": rec.image_id,
        "coarse_label": rec.coarse_label,
        "box": {"x_center": b.x_center, "y_center": b.y_center,
                "width": b.width, "height": b.height},
        "coords": "normalized",
        "confidence": rec.confidence,
    }
    if rec.truth_size is not None:
        out["truth_size"] = rec.truth_size.name
    if rec.truth_distance is not None:
        out["truth_distance"] = rec.truth_distance
    if rec.pred_size is not None:
        out["pred_size"] = rec.pred_size.name
        if space is not None:
            out["fine_label"] = compose_fine_label(rec.coarse_label, rec.pred_size, space)
    return out


def write_detections(path: Union[str, os.PathLike],
                     records: Union[Mapping[str, Sequence[DetectionRecord]], Iterable[DetectionRecord]],
                     space: Optional[LabelSpace] = None) -> int:
    """Write records as normalized JSON lines; returns the number written."""
    if isinstance(records, Mapping):
        records = [r for group in records.values() for r in group]
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec, space)) + "\n")
            n += 1
    return n


def _checksum(payload: Mapping) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def model_to_dict(model: Model) -> dict:
    payload: dict = {"format_version": FORMAT_VERSION, "label_space": model.label_space.to_dict()}
    if isinstance(model, CrispModel):
        payload["kind"] = "crisp"
        payload["functions"] = [{"id": f.boundary_id, "w": list(f.weights)} for f in model.functions]
    elif isinstance(model, FuzzyModel):
        payload["kind"] = "fuzzy"
        payload["rules"] = [dict(g.to_dict(), center=c)
                            for g, c in zip(model.memberships, model.centers)]
    else:
        raise ModelFormatError(f"cannot serialize {type(model).__name__}")
    payload["checksum"] = _checksum(payload)
    return payload


def model_from_dict(payload: Mapping) -> Model:
    if not isinstance(payload, Mapping):
        raise ModelFormatError("model file is not a JSON object")
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format_version {version!r}")
    body = {k: v for k, v in payload.items() if k != "checksum"}
    if payload.get("checksum") != _checksum(body):
        raise ModelFormatError("model checksum mismatch; file is corrupted or was edited")
    try:
        space = LabelSpace.from_dict(payload["label_space"])
        if payload["kind"] == "crisp":
            return CrispModel(space, tuple(CrispDecisionFunction(tuple(f["w"]), f["id"])
                                           for f in payload["functions"]))
        if payload["kind"] == "fuzzy":
            rules = payload["rules"]
            return FuzzyModel(space, tuple(GaussianMembership.from_dict(r) for r in rules),
                              tuple(r["center"] for r in rules))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    raise ModelFormatError(f"unknown model kind {payload.get('kind')!r}")


def dumps_model(model: Model) -> bytes:
    return json.dumps(model_to_dict(model), separators=(",", ":")).encode("utf-8")


def save_model(model: Model, path: Union[str, os.PathLike]) -> int:
    """Write ``model``; returns the file size in bytes."""
    data = dumps_model(model)
    if model.label_space.k <= 3 and len(data) > MAX_MODEL_BYTES:
        raise ModelFormatError(f"serialized model is {len(data)} bytes, over {MAX_MODEL_BYTES}")
    Path(path).write_bytes(data)
    return len(data)


def load_model(path: Union[str, os.PathLike]) -> Model:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CkimError(f"cannot read {path}: {exc}") from exc
    try:
        payload = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"{path} is not valid JSON") from exc
    return model_from_dict(payload)
