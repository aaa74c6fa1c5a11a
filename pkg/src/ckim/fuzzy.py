"""Fuzzy-rule inference with Gaussian antecedents.

Each size class owns one rule, "x matches M_k => size k with degree M_k(x)",
where M_k is a bivariate normal density fit by maximum likelihood to that
class's features.  The rule outputs are blended into a real-valued
prediction (the membership-weighted mean of the class centers, which the
literature on this model calls Center of Maximum even though it is a
weighted average), and the prediction is decoded to the nearest center.

Degrees are raw densities, *not* rescaled to a peak of 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import CkimError, FeatureVector, LabelSpace, SizeClass

COV_FLOOR = 1e-8
UNDERFLOW = 1e-300
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianMembership:
    mean: tuple[float, float]
    covariance: tuple[tuple[float, float], tuple[float, float]]

    def __post_init__(self):
        mu = tuple(float(v) for v in self.mean)
        cov = np.asarray(self.covariance, dtype=float)
        if len(mu) != 2 or cov.shape != (2, 2):
            raise CkimError("membership needs a 2-vector mean and a 2x2 covariance")
        if not (np.all(np.isfinite(cov)) and all(math.isfinite(v) for v in mu)):
            raise CkimError("non-finite membership parameters")
        if cov[0, 1] != cov[1, 0]:
            raise CkimError("covariance must be symmetric")
        a, b, d = float(cov[0, 0]), float(cov[0, 1]), float(cov[1, 1])
        # exact determinant: a*d - b*b cancels badly for near-singular covariances
        det = float(Fraction(a) * Fraction(d) - Fraction(b) ** 2)
        if not (a > 0 and det > 0):
            raise CkimError(f"covariance is not positive definite: {cov.tolist()}")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", ((a, b), (b, d)))
        # cached: regression slope of dtoc on box_s, Schur complement, normalizer
        object.__setattr__(self, "_slope", b / a)
        object.__setattr__(self, "_schur", det / a)
        object.__setattr__(self, "_norm", 1.0 / (2.0 * math.pi * math.sqrt(det)))
        object.__setattr__(self, "_log_norm", -_LOG_2PI - 0.5 * math.log(det))

    def mahalanobis_sq(self, x: FeatureVector) -> float:
        dx = x.box_s - self.mean[0]
        dy = x.dtoc_proxy - self.mean[1]
        # sum of two non-negative squares; the expanded quadratic form cancels
        r = dy - self._slope * dx
        return dx * dx / self.covariance[0][0] + r * r / self._schur

    def to_dict(self) -> dict:
        (a, b), (_, d) = self.covariance
        return {"mean": list(self.mean), "cov": [a, b, d]}

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMembership":
        a, b, dd = d["cov"]
        return cls(tuple(d["mean"]), ((a, b), (b, dd)))


@dataclass(frozen=True)
class FuzzyModel:
    label_space: LabelSpace
    memberships: tuple[GaussianMembership, ...]
    centers: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "memberships", tuple(self.memberships))
        object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        k = self.label_space.k
        if len(self.memberships) != k or len(self.centers) != k:
            raise CkimError(f"fuzzy model needs exactly {k} rules")
        if any(b <= a for a, b in zip(self.centers, self.centers[1:])):
            raise CkimError(f"centers must be strictly increasing, got {self.centers}")


def membership(g: GaussianMembership, x: FeatureVector) -> float:
    """Bivariate normal density of ``x`` under ``g``."""
    return g._norm * math.exp(-0.5 * g.mahalanobis_sq(x))


def log_membership(g: GaussianMembership, x: FeatureVector) -> float:
    return g._log_norm - 0.5 * g.mahalanobis_sq(x)


def fit_fuzzy(data: Sequence[tuple[FeatureVector, SizeClass]], space: LabelSpace,
              floor: float = COV_FLOOR) -> FuzzyModel:
    """Maximum-likelihood Gaussian per class; centers are ``0, 1, ..., K-1``."""
    by_class: list[list[tuple[float, float]]] = [[] for _ in range(space.k)]
    for x, s in data:
        if not 0 <= s.index < space.k:
            raise CkimError(f"size index {s.index} outside label space")
        by_class[s.index].append(x.as_tuple())

    memberships = []
    for k, rows in enumerate(by_class):
        name = space.names[k]
        if len(rows) < 3:
            raise CkimError(f"class {name!r} has {len(rows)} samples; at least 3 are needed")
        arr = np.asarray(rows, dtype=float)
        mu = arr.mean(axis=0)
        centered = arr - mu
        cov = centered.T @ centered / len(arr)
        if not np.any(cov):
            raise CkimError(f"all samples of class {name!r} are identical")
        if np.linalg.matrix_rank(cov) < 2:
            warnings.warn(f"class {name!r} has a singular covariance; relying on regularization",
                          RuntimeWarning, stacklevel=2)
        cov = cov + floor * np.eye(2)
        cov[1, 0] = cov[0, 1]
        memberships.append(GaussianMembership(tuple(mu), tuple(map(tuple, cov))))
    return FuzzyModel(space, tuple(memberships), tuple(float(i) for i in range(space.k)))


def weighted_center(degrees: Sequence[float], centers: Sequence[float]) -> float:
    """``sum(M_i * y_i) / sum(M_i)``; needs a positive total degree."""
    total = math.fsum(degrees)
    if not total > 0:
        raise CkimError("weighted center needs a positive total membership")
    return math.fsum(m * y for m, y in zip(degrees, centers)) / total


def _nearest_center(centers: Sequence[float], prediction: float, degrees: Sequence[float]) -> int:
    best = 0
    for i in range(1, len(centers)):
        di, db = abs(centers[i] - prediction), abs(centers[best] - prediction)
        if di < db or (di == db and degrees[i] > degrees[best]):
            best = i
    return best


def defuzzify(model: FuzzyModel, x: FeatureVector) -> tuple[float, SizeClass, tuple[float, ...]]:
    """Return ``(prediction, label, degrees)`` for one feature vector.

    If every degree underflows, the label is the class with the largest
    log-density and the prediction is that class's center.
    """
    degrees = tuple(membership(g, x) for g in model.memberships)
    if max(degrees) < UNDERFLOW:
        logs = [log_membership(g, x) for g in model.memberships]
        best = max(range(len(logs)), key=logs.__getitem__)
        return model.centers[best], model.label_space.size(best), degrees
    prediction = weighted_center(degrees, model.centers)
    best = _nearest_center(model.centers, prediction, degrees)
    return prediction, model.label_space.size(best), degrees


def classify_fuzzy(model: FuzzyModel, x: FeatureVector) -> SizeClass:
    return defuzzify(model, x)[1]


def classify_fuzzy_batch(model: FuzzyModel, features: np.ndarray) -> np.ndarray:
    """Class indices for every row of an ``(n, 2)`` feature array."""
    rows = np.asarray(features, dtype=float).reshape(-1, 2)
    return np.array([defuzzify(model, FeatureVector(float(a), float(b)))[1].index
                     for a, b in rows], dtype=int)
