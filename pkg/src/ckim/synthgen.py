"""Synthetic pinhole-camera scenes and the knowledge-validity audit.

Projection model
----------------
The camera sits at height ``camera_height`` above the horizontal plane that
holds the object centers and looks along the depth axis with its optical axis
level.  The sensor is shifted so that the horizon lands at image row
``horizon`` (a fraction of the image height, measured from the top); this is
the framing of a camera pitched down at a flat scene, but keeps every image
length exactly proportional to ``1 / depth``.  With ``s_w`` the sensor width
and ``s_h = s_w / aspect`` the sensor height, an object of radius ``r`` at
depth ``z`` and lateral offset ``u`` projects to::

    x_center = 0.5 + f * u / (z * s_w)
    y_center = horizon + f * camera_height / (z * s_h)
    width    = 2 * f * r / (z * s_w)
    height   = 2 * f * r / (z * s_h)

so ``1 - y_center`` grows strictly with depth.  With ``top_down=True`` the
camera looks straight down at the objects instead; a second lateral offset
``v`` replaces the height term (``y_center = 0.5 + f * v / (z * s_h)``) and the
image row carries no information about depth.

Optional ``radius_jitter`` and ``box_noise`` perturb the true radius and the
box extents (never the box center) to create class overlap.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import (
    BoundingBox,
    CkimError,
    DetectionRecord,
    FeatureVector,
    LabelSpace,
    SizeClass,
    extract_features,
)

COLORS = ("gray", "red", "blue", "green", "brown", "purple", "cyan", "yellow")
MATERIALS = ("rubber", "metal")
SHAPES = ("cube", "sphere", "cylinder")
COARSE_LABELS = tuple(f"{c} {m} {s}" for c in COLORS for m in MATERIALS for s in SHAPES)

MAX_ATTEMPTS = 1000


class GenerationError(CkimError):
    pass


class ProjectionError(GenerationError):
    """The projected box leaves the frame."""


@dataclass(frozen=True)
class SceneSpec:
    camera_height: float = 3.0
    focal_length: float = 1.0
    aspect: float = 4.0 / 3.0
    class_radii: tuple[float, ...] = (0.25, 0.45, 0.8)
    depth_range: tuple[float, float] = (4.0, 7.0)
    lateral_range: float = 2.0
    objects_per_image: int = 4
    rng_seed: int = 0
    sensor_width: float = 1.6
    horizon: float = 0.15
    top_down: bool = False
    radius_jitter: float = 0.0
    box_noise: float = 0.0
    size_names: tuple[str, ...] = ("small", "middle", "large")

    def __post_init__(self):
        object.__setattr__(self, "class_radii", tuple(float(r) for r in self.class_radii))
        object.__setattr__(self, "depth_range", tuple(float(z) for z in self.depth_range))
        object.__setattr__(self, "size_names", tuple(self.size_names))
        radii = self.class_radii
        if len(radii) < 2 or radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise CkimError(f"class radii must be positive and strictly increasing: {radii}")
        if len(self.size_names) != len(radii):
            raise CkimError("one size name per class radius is required")
        z0, z1 = self.depth_range
        if not 0 < z0 < z1:
            raise CkimError(f"depth range must satisfy 0 < z_min < z_max: {self.depth_range}")
        if z0 <= self.focal_length:
            raise CkimError("objects must lie beyond the focal length")
        for name in ("camera_height", "focal_length", "aspect", "sensor_width"):
            if not getattr(self, name) > 0:
                raise CkimError(f"{name} must be positive")
        if self.lateral_range < 0 or self.objects_per_image < 1:
            raise CkimError("lateral_range must be >= 0 and objects_per_image >= 1")
        if not 0 <= self.horizon < 1:
            raise CkimError("horizon must lie in [0, 1)")
        if self.radius_jitter < 0 or self.box_noise < 0:
            raise CkimError("noise levels must be non-negative")

    @property
    def label_space(self) -> LabelSpace:
        return LabelSpace(self.size_names)

    @property
    def sensor_height(self) -> float:
        return self.sensor_width / self.aspect

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("class_radii", "depth_range", "size_names"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneSpec":
        return cls(**d)


PRESETS: dict[str, dict] = {
    "default": {},
    # two-size CLEVR radii with a geometric middle; 10% detector box error
    "ambiguous": {"class_radii": (0.35, 0.35 * 2 ** 0.5, 0.7), "box_noise": 0.1},
    "topdown": {"top_down": True},
}


def preset(name: str, classes: int = 3, **overrides) -> SceneSpec:
    """Named scene recipe; ``classes=2`` keeps the smallest and largest radii."""
    try:
        params = dict(PRESETS[name])
    except KeyError:
        raise CkimError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    if classes == 2:
        radii = params.get("class_radii", SceneSpec.class_radii)
        params["class_radii"] = (radii[0], radii[-1])
        params["size_names"] = ("small", "large")
    elif classes != 3:
        raise CkimError("presets are defined for 2 or 3 classes")
    params.update(overrides)
    return SceneSpec(**params)


def _project(spec: SceneSpec, radius: float, depth: float, lateral: float, lateral2: float,
             scale_w: float = 1.0, scale_h: float = 1.0) -> tuple[float, float, float, float]:
    f, sw, sh = spec.focal_length, spec.sensor_width, spec.sensor_height
    x = 0.5 + f * lateral / (depth * sw)
    if spec.top_down:
        y = 0.5 + f * lateral2 / (depth * sh)
    else:
        y = spec.horizon + f * spec.camera_height / (depth * sh)
    w = 2.0 * f * radius / (depth * sw) * scale_w
    h = 2.0 * f * radius / (depth * sh) * scale_h
    return x, y, w, h


def _in_frame(x: float, y: float, w: float, h: float) -> bool:
    return (w > 0 and h > 0 and x - w / 2 >= 0 and x + w / 2 <= 1
            and y - h / 2 >= 0 and y + h / 2 <= 1)


def project_object(spec: SceneSpec, true_radius: float, depth: float, lateral: float,
                   lateral2: float = 0.0) -> BoundingBox:
    """Box of an object at ``(lateral, depth)``; see the module docstring.

    ``lateral2`` is only used by top-down scenes.  Raises
    :class:`ProjectionError` when any part of the box leaves the frame.
    """
    if not true_radius > 0 or not depth > 0:
        raise GenerationError("radius and depth must be positive")
    x, y, w, h = _project(spec, true_radius, depth, lateral, lateral2)
    if not _in_frame(x, y, w, h):
        raise ProjectionError(f"object (r={true_radius}, z={depth}, u={lateral}) leaves the frame")
    return BoundingBox(x, y, w, h)


@dataclass
class SyntheticDataset:
    spec: SceneSpec
    num_images: int
    images: list[list[DetectionRecord]] = field(default_factory=list)

    @property
    def manifest(self) -> dict:
        return {"generator": "ckim.synthgen", "num_images": self.num_images,
                "spec": self.spec.to_dict()}

    @property
    def label_space(self) -> LabelSpace:
        return self.spec.label_space

    def records(self) -> list[DetectionRecord]:
        return [r for img in self.images for r in img]

    def groups(self) -> dict[str, list[DetectionRecord]]:
        return {img[0].image_id: img for img in self.images if img}

    def labeled_features(self) -> list[tuple[FeatureVector, SizeClass]]:
        return [(extract_features(r.box), r.truth_size) for r in self.records()]


def _overlaps(box: BoundingBox, others: Iterable[BoundingBox]) -> bool:
    def contains(outer: BoundingBox, px: float, py: float) -> bool:
        x0, y0, x1, y1 = outer.corners()
        return x0 <= px <= x1 and y0 <= py <= y1

    return any(contains(o, box.x_center, box.y_center) or contains(box, o.x_center, o.y_center)
               for o in others)


def generate(spec: SceneSpec, num_images: int) -> SyntheticDataset:
    """Draw ``num_images`` scenes from ``spec``; deterministic in ``spec.rng_seed``.

    Per object: the class and coarse label are drawn once, then depth and
    lateral position are redrawn until the box fits the frame and no box
    center falls inside another box.
    """
    if num_images < 1:
        raise GenerationError("num_images must be positive")
    rng = np.random.default_rng(spec.rng_seed)
    space = spec.label_space
    sizes = space.sizes()
    z0, z1 = spec.depth_range
    lat = spec.lateral_range
    images = []
    for i in range(num_images):
        image_id = f"img{i:06d}"
        boxes: list[BoundingBox] = []
        records = []
        for _ in range(spec.objects_per_image):
            k = int(rng.integers(space.k))
            coarse = COARSE_LABELS[int(rng.integers(len(COARSE_LABELS)))]
            for _attempt in range(MAX_ATTEMPTS):
                depth = float(rng.uniform(z0, z1))
                u = float(rng.uniform(-lat, lat))
                v = float(rng.uniform(-lat, lat)) if spec.top_down else 0.0
                radius = spec.class_radii[k]
                if spec.radius_jitter:
                    radius *= max(0.2, 1.0 + spec.radius_jitter * float(rng.standard_normal()))
                sw = sh = 1.0
                if spec.box_noise:
                    sw, sh = np.exp(spec.box_noise * rng.standard_normal(2)).tolist()
                x, y, w, h = _project(spec, radius, depth, u, v, sw, sh)
                if not _in_frame(x, y, w, h):
                    continue
                box = BoundingBox(x, y, w, h)
                if _overlaps(box, boxes):
                    continue
                break
            else:
                raise GenerationError(
                    f"could not place object {len(boxes) + 1} in image {image_id} after "
                    f"{MAX_ATTEMPTS} attempts; the scene is too crowded")
            boxes.append(box)
            records.append(DetectionRecord(coarse, box, truth_size=sizes[k],
                                           truth_distance=depth, image_id=image_id))
        images.append(records)
    return SyntheticDataset(spec, num_images, images)


def regenerate(manifest: Mapping) -> SyntheticDataset:
    return generate(SceneSpec.from_dict(manifest["spec"]), int(manifest["num_images"]))


@dataclass
class ImageAudit:
    image_id: str
    k1_pairs: int
    k1_valid: int
    k2_pairs: int
    k2_valid: int


@dataclass
class AuditReport:
    knowledge1_validity: Optional[float]
    knowledge2_validity: Optional[float]
    k1_pairs: int
    k2_pairs: int
    num_records: int
    per_image: list[ImageAudit] = field(default_factory=list)

    def summary(self) -> dict:
        def fmt(v):
            return "no pairs" if v is None else v
        return {"knowledge1_validity": fmt(self.knowledge1_validity),
                "knowledge2_validity": fmt(self.knowledge2_validity),
                "k1_pairs": self.k1_pairs, "k2_pairs": self.k2_pairs,
                "num_records": self.num_records, "num_images": len(self.per_image)}


def _sign(v: float) -> int:
    return (v > 0) - (v < 0)


def audit_knowledge(data: SyntheticDataset | Mapping[str, Sequence[DetectionRecord]]
                    | Sequence[Sequence[DetectionRecord]],
                    depth_tolerance: Optional[float] = None) -> AuditReport:
    """Pairwise validity of the two size/distance knowledge statements.

    Knowledge 2 holds for a same-image pair when the depth order and the
    ``1 - y_center`` order agree (ties count as agreement only when both
    quantities tie).  Knowledge 1 is checked on same-image pairs of different
    true size whose depths differ by at most ``depth_tolerance``: it holds when
    the truly larger object has the larger box.  The tolerance defaults to 1%
    of the depth range (of the spec for generated data, of the observed
    distances otherwise).
    """
    if isinstance(data, SyntheticDataset):
        groups: list[Sequence[DetectionRecord]] = data.images
        if depth_tolerance is None:
            z0, z1 = data.spec.depth_range
            depth_tolerance = 0.01 * (z1 - z0)
    elif isinstance(data, Mapping):
        groups = list(data.values())
    else:
        groups = list(data)

    for img in groups:
        for r in img:
            if r.truth_distance is None or r.truth_size is None:
                raise CkimError(f"record in image {r.image_id!r} lacks truth_size/truth_distance")
    if depth_tolerance is None:
        dists = [r.truth_distance for img in groups for r in img]
        depth_tolerance = 0.01 * (max(dists) - min(dists)) if dists else 0.0

    per_image = []
    for img in groups:
        feats = [extract_features(r.box) for r in img]
        k1p = k1v = k2p = k2v = 0
        for (ra, fa), (rb, fb) in itertools.combinations(zip(img, feats), 2):
            k2p += 1
            if _sign(ra.truth_distance - rb.truth_distance) == _sign(fa.dtoc_proxy - fb.dtoc_proxy):
                k2v += 1
            if (ra.truth_size.index != rb.truth_size.index
                    and abs(ra.truth_distance - rb.truth_distance) <= depth_tolerance):
                k1p += 1
                big, small = (fa, fb) if ra.truth_size.index > rb.truth_size.index else (fb, fa)
                if big.box_s > small.box_s:
                    k1v += 1
        image_id = img[0].image_id if img else ""
        per_image.append(ImageAudit(image_id, k1p, k1v, k2p, k2v))

    k1p = sum(a.k1_pairs for a in per_image)
    k2p = sum(a.k2_pairs for a in per_image)
    k1v = sum(a.k1_valid for a in per_image)
    k2v = sum(a.k2_valid for a in per_image)
    return AuditReport(
        knowledge1_validity=k1v / k1p if k1p else None,
        knowledge2_validity=k2v / k2p if k2p else None,
        k1_pairs=k1p, k2_pairs=k2p,
        num_records=sum(len(img) for img in groups),
        per_image=per_image,
    )
