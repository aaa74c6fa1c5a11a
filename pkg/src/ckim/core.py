"""Domain types, box normalization, feature extraction and fine-label algebra.

Image coordinates follow the usual convention: the y-axis points down, so a
box center with ``y_center == 0`` touches the top edge.  Under that
convention ``1 - y_center`` is the distance from the box center to the bottom
of the image, which is the distance-to-camera proxy fed to both inference
modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

CANONICAL_NAMES = {
    2: ("small", "large"),
    3: ("small", "middle", "large"),
}


class CkimError(ValueError):
    """Base class for all errors raised by this package."""


class MalformedInputError(CkimError):
    """Input data (a box, a record, a file line) violates its contract."""


def _finite(*values: float) -> bool:
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class BoundingBox:
    """Center-format box in normalized image coordinates."""

    x_center: float
    y_center: float
    width: float
    height: float

    def __post_init__(self):
        if not _finite(self.x_center, self.y_center, self.width, self.height):
            raise MalformedInputError(f"non-finite box {self}")
        if not (0.0 <= self.x_center <= 1.0 and 0.0 <= self.y_center <= 1.0):
            raise MalformedInputError(f"box center outside [0, 1]: {self}")
        if not (0.0 < self.width <= 1.0 and 0.0 < self.height <= 1.0):
            raise MalformedInputError(f"box extent outside (0, 1]: {self}")

    @property
    def area(self) -> float:
        return self.width * self.height

    def corners(self) -> tuple[float, float, float, float]:
        """Return ``(x_min, y_min, x_max, y_max)``."""
        hw, hh = self.width / 2.0, self.height / 2.0
        return (self.x_center - hw, self.y_center - hh,
                self.x_center + hw, self.y_center + hh)

    def inside_unit_square(self) -> bool:
        x0, y0, x1, y1 = self.corners()
        return x0 >= 0.0 and y0 >= 0.0 and x1 <= 1.0 and y1 <= 1.0


@dataclass(frozen=True, order=True)
class SizeClass:
    """An ordinal size grade; ``index`` 0 is the smallest."""

    index: int
    name: str = field(compare=False)

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class LabelSpace:
    """Ordered size-class names plus the separator used in fine labels."""

    names: tuple[str, ...]
    separator: str = " "

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise CkimError("a label space needs at least two size classes")
        if any(not n for n in self.names):
            raise CkimError("size-class names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise CkimError(f"duplicate size-class names: {self.names}")
        if not self.separator:
            raise CkimError("separator must be non-empty")
        if any(self.separator in n for n in self.names):
            raise CkimError("size-class names may not contain the separator")

    @classmethod
    def canonical(cls, k: int = 3, separator: str = " ") -> "LabelSpace":
        try:
            return cls(CANONICAL_NAMES[k], separator)
        except KeyError:
            raise CkimError(f"no canonical names for K={k}; pass names explicitly") from None

    @classmethod
    def infer(cls, names: Iterable[str], separator: str = " ") -> "LabelSpace":
        """Smallest canonical space covering ``names``."""
        seen = set(names)
        for k in (2, 3):
            if seen <= set(CANONICAL_NAMES[k]):
                return cls(CANONICAL_NAMES[k], separator)
        raise CkimError(f"cannot infer an ordering for size names {sorted(seen)}")

    @property
    def k(self) -> int:
        return len(self.names)

    def size(self, key: int | str) -> SizeClass:
        """Look up a size class by index or by name."""
        if isinstance(key, str):
            try:
                return SizeClass(self.names.index(key), key)
            except ValueError:
                raise CkimError(f"unknown size class {key!r} in {self.names}") from None
        if isinstance(key, bool) or not 0 <= key < self.k:
            raise CkimError(f"size index {key!r} out of range for K={self.k}")
        return SizeClass(int(key), self.names[key])

    def sizes(self) -> list[SizeClass]:
        return [SizeClass(i, n) for i, n in enumerate(self.names)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "separator": self.separator}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpace":
        return cls(tuple(d["names"]), d.get("separator", " "))


@dataclass(frozen=True)
class DetectionRecord:
    """One coarse detection, optionally carrying ground truth or a prediction."""

    coarse_label: str
    box: BoundingBox
    truth_size: Optional[SizeClass] = None
    truth_distance: Optional[float] = None
    confidence: float = 1.0
    image_id: str = ""
    pred_size: Optional[SizeClass] = None

    def __post_init__(self):
        if not isinstance(self.coarse_label, str) or not self.coarse_label:
            raise MalformedInputError("coarse_label must be a non-empty string")
        if self.truth_distance is not None:
            d = self.truth_distance
            if not math.isfinite(d) or d < 0:
                raise MalformedInputError(f"truth_distance must be finite and >= 0, got {d}")
        if not (0.0 <= self.confidence <= 1.0):
            raise MalformedInputError(f"confidence must lie in [0, 1], got {self.confidence}")


@dataclass(frozen=True)
class FeatureVector:
    """``(box_s, dtoc_proxy)``: normalized box area and ``1 - y_center``."""

    box_s: float
    dtoc_proxy: float

    def as_tuple(self) -> tuple[float, float]:
        return (self.box_s, self.dtoc_proxy)


def normalize_box(px_box: dict | Sequence[float], image_w: float, image_h: float) -> BoundingBox:
    """Convert a center-format pixel box to normalized coordinates.

    ``px_box`` is either a mapping with ``x_c, y_c, w, h`` (``x_center`` etc.
    are also accepted) or a 4-sequence in that order.  The center must be on
    the image, the extents must fit the image, and the top-left corner may not
    be negative.
    """
    if isinstance(px_box, dict):
        xc = px_box.get("x_c", px_box.get("x_center"))
        yc = px_box.get("y_c", px_box.get("y_center"))
        w = px_box.get("w", px_box.get("width"))
        h = px_box.get("h", px_box.get("height"))
    else:
        xc, yc, w, h = px_box
    if None in (xc, yc, w, h):
        raise MalformedInputError(f"pixel box missing fields: {px_box}")
    xc, yc, w, h = (float(v) for v in (xc, yc, w, h))
    if not _finite(image_w, image_h) or image_w <= 0 or image_h <= 0:
        raise MalformedInputError(f"image dimensions must be positive, got {image_w}x{image_h}")
    if not _finite(xc, yc, w, h):
        raise MalformedInputError(f"non-finite pixel box {px_box}")
    if not (0 < w <= image_w and 0 < h <= image_h):
        raise MalformedInputError(f"box size {w}x{h} does not fit a {image_w}x{image_h} image")
    if not (0 <= xc <= image_w and 0 <= yc <= image_h):
        raise MalformedInputError(f"box center ({xc}, {yc}) lies outside the image")
    if xc - w / 2 < 0 or yc - h / 2 < 0:
        raise MalformedInputError(f"box extends outside the image: {px_box}")
    return BoundingBox(xc / image_w, yc / image_h, w / image_w, h / image_h)


def box_from_corners(x_min: float, y_min: float, x_max: float, y_max: float) -> dict:
    """Corner-format rectangle to the center-format mapping ``normalize_box`` takes."""
    if x_max <= x_min or y_max <= y_min:
        raise MalformedInputError("degenerate corner box")
    return {"x_c": (x_min + x_max) / 2, "y_c": (y_min + y_max) / 2,
            "w": x_max - x_min, "h": y_max - y_min}


def extract_features(box: BoundingBox) -> FeatureVector:
    return FeatureVector(box.width * box.height, 1.0 - box.y_center)


def compose_fine_label(coarse: str, size: SizeClass | int | str, space: LabelSpace) -> str:
    """``"<size><sep><coarse>"``, e.g. ``"large red metal cube"``."""
    if not coarse:
        raise CkimError("coarse label must be non-empty")
    if isinstance(size, SizeClass):
        resolved = space.size(size.index)
        if resolved.name != size.name:
            raise CkimError(f"size {size} does not belong to {space.names}")
    else:
        resolved = space.size(size)
    return f"{resolved.name}{space.separator}{coarse}"


def decompose_fine_label(fine: str, space: LabelSpace) -> tuple[str, SizeClass]:
    """Inverse of :func:`compose_fine_label`."""
    head, sep, coarse = fine.partition(space.separator)
    if not sep or not coarse:
        raise CkimError(f"not a fine label in this space: {fine!r}")
    return coarse, space.size(head)
