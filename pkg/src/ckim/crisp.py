"""Crisp-rule inference: a chain of cumulative logistic decision functions.

For K ordered size classes there are K-1 functions.  Function ``j`` separates
classes ``<= j`` from classes ``> j`` and is trained on every sample with the
binary target ``index > j``.  At inference time the functions are visited from
the largest boundary downwards; the first one whose value exceeds 0.5 assigns
the class just above its boundary, and if none fires the object is the
smallest class.  For K=3 this is::

    f_ml(x) > 0.5                  -> large
    f_ml(x) < 0.5 and f_sm(x) > 0.5 -> middle
    f_sm(x) < 0.5                  -> small
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import CkimError, FeatureVector, LabelSpace, SizeClass

log = logging.getLogger(__name__)

LOG_CLAMP = 1e-12


class TrainingError(CkimError):
    pass


@dataclass(frozen=True)
class CrispDecisionFunction:
    """Weights ``(w_box_s, w_dtoc, bias)`` of one logistic boundary."""

    weights: tuple[float, float, float]
    boundary_id: str = ""

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != 3 or not all(math.isfinite(v) for v in w):
            raise CkimError(f"decision weights must be 3 finite reals, got {self.weights}")
        object.__setattr__(self, "weights", w)

    def logit(self, x: FeatureVector) -> float:
        a, b, c = self.weights
        return a * x.box_s + b * x.dtoc_proxy + c


@dataclass(frozen=True)
class CrispModel:
    label_space: LabelSpace
    functions: tuple[CrispDecisionFunction, ...]

    def __post_init__(self):
        object.__setattr__(self, "functions", tuple(self.functions))
        if len(self.functions) != self.label_space.k - 1:
            raise CkimError(
                f"expected {self.label_space.k - 1} decision functions, got {len(self.functions)}")


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    batch_size: int = 32
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs < 1 or self.batch_size < 1:
            raise CkimError(f"invalid SGD configuration {self}")


def sigmoid(z):
    """Logistic function; ``exp(-|z|)`` keeps it from overflowing."""
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def _scalar_sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def sigmoid_decision(f: CrispDecisionFunction, x: FeatureVector) -> float:
    return _scalar_sigmoid(f.logit(x))


def design_matrix(features: Sequence[FeatureVector] | np.ndarray) -> np.ndarray:
    """Rows ``[box_s, dtoc_proxy, 1]``."""
    if isinstance(features, np.ndarray):
        arr = np.asarray(features, dtype=float).reshape(-1, 2)
    else:
        arr = np.array([x.as_tuple() for x in features], dtype=float).reshape(-1, 2)
    return np.hstack([arr, np.ones((arr.shape[0], 1))])


def loss_and_grad(weights: np.ndarray, xt: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross-entropy and its gradient for design matrix ``xt``.

    The gradient is that of the unclamped loss, ``sum((f - y) * x)``.
    """
    f = sigmoid(xt @ weights)
    fc = np.clip(f, LOG_CLAMP, 1.0 - LOG_CLAMP)
    loss = float(np.sum(-y * np.log(fc) - (1.0 - y) * np.log(1.0 - fc)))
    grad = xt.T @ (f - y)
    return loss, grad


def crisp_loss(f: CrispDecisionFunction, data: Sequence[tuple[FeatureVector, int]]) -> float:
    """Summed binary cross-entropy of ``f`` over ``(features, target)`` pairs."""
    if not data:
        raise CkimError("crisp_loss needs at least one example")
    xt = design_matrix([x for x, _ in data])
    y = np.array([t for _, t in data], dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise CkimError("targets must be 0 or 1")
    return loss_and_grad(np.array(f.weights), xt, y)[0]


def _boundary_id(space: LabelSpace, j: int) -> str:
    return space.names[j][0] + space.names[j + 1][0]


@dataclass
class TrainingHistory:
    """Mean per-example loss after every epoch, one list per boundary."""

    epoch_loss: dict[str, list[float]] = field(default_factory=dict)


def _sgd(xt: np.ndarray, y: np.ndarray, cfg: SgdConfig, rng: np.random.Generator) -> tuple[np.ndarray, list[float]]:
    n = xt.shape[0]
    # Optimize on standardized inputs, then map back; box_s spans ~1e-2 and
    # would otherwise need thousands of epochs to reach its weight scale.
    mu = xt[:, :2].mean(axis=0)
    sd = xt[:, :2].std(axis=0)
    sd[sd == 0] = 1.0
    z = np.hstack([(xt[:, :2] - mu) / sd, np.ones((n, 1))])
    w = np.zeros(3)
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        zs, ys = z[order], y[order]
        for start in range(0, n, cfg.batch_size):
            zb = zs[start:start + cfg.batch_size]
            grad = zb.T @ (sigmoid(zb @ w) - ys[start:start + cfg.batch_size])
            w = w - cfg.learning_rate * grad / len(zb)
        loss = loss_and_grad(w, z, y)[0] / n
        if not math.isfinite(loss) or not np.all(np.isfinite(w)):
            raise TrainingError(f"loss diverged at epoch {epoch}; lower the learning rate")
        losses.append(loss)
    scale = w[:2] / sd
    return np.array([scale[0], scale[1], w[2] - float(scale @ mu)]), losses


def train_crisp(data: Sequence[tuple[FeatureVector, SizeClass]], space: LabelSpace,
                cfg: SgdConfig | None = None, history: TrainingHistory | None = None) -> CrispModel:
    """Fit the K-1 cumulative boundaries by mini-batch SGD.

    Steps follow the mean gradient of the cross-entropy over each mini-batch,
    taken with respect to weights on standardized inputs; the result is
    converted back to weights on the raw ``(box_s, dtoc_proxy, 1)`` features.
    A single generator seeded from ``cfg.rng_seed`` drives the shuffles of
    every boundary, so training is bitwise reproducible.
    """
    cfg = cfg or SgdConfig()
    if not data:
        raise TrainingError("no training data")
    xt = design_matrix([x for x, _ in data])
    labels = np.array([s.index for _, s in data])
    missing = sorted(set(range(space.k)) - set(labels.tolist()))
    if missing:
        raise TrainingError(f"classes {[space.names[m] for m in missing]} absent from training data")
    if labels.max() >= space.k:
        raise TrainingError("size index outside the label space")

    rng = np.random.default_rng(cfg.rng_seed)
    functions = []
    for j in range(space.k - 2, -1, -1):
        bid = _boundary_id(space, j)
        y = (labels > j).astype(float)
        w, losses = _sgd(xt, y, cfg, rng)
        log.debug("boundary %s: final mean loss %.6g", bid, losses[-1])
        if history is not None:
            history.epoch_loss[bid] = losses
        functions.append(CrispDecisionFunction(tuple(w), bid))
    return CrispModel(space, tuple(functions))


def classify_crisp(model: CrispModel, x: FeatureVector) -> SizeClass:
    k = model.label_space.k
    for pos, f in enumerate(model.functions):
        if sigmoid_decision(f, x) > 0.5:
            return model.label_space.size(k - 1 - pos)
    return model.label_space.size(0)


def classify_crisp_batch(model: CrispModel, features: np.ndarray) -> np.ndarray:
    """Vectorized rule chain over an ``(n, 2)`` array; returns class indices."""
    xt = design_matrix(features)
    k = model.label_space.k
    out = np.zeros(xt.shape[0], dtype=int)
    decided = np.zeros(xt.shape[0], dtype=bool)
    for pos, f in enumerate(model.functions):
        fire = (sigmoid(xt @ np.array(f.weights)) > 0.5) & ~decided
        out[fire] = k - 1 - pos
        decided |= fire
    return out
