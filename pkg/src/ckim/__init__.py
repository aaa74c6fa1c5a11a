"""Size-related fine-grained labels from coarse detections.

Two commonsense inference modules turn a coarse detection (class + box) into
a size grade: a chain of logistic rules (:mod:`ckim.crisp`) and Gaussian
fuzzy rules with weighted-center defuzzification (:mod:`ckim.fuzzy`).
"""

from .core import (
    BoundingBox,
    CkimError,
    DetectionRecord,
    FeatureVector,
    LabelSpace,
    MalformedInputError,
    SizeClass,
    compose_fine_label,
    decompose_fine_label,
    extract_features,
    normalize_box,
)
from .crisp import CrispDecisionFunction, CrispModel, SgdConfig, classify_crisp, crisp_loss, sigmoid_decision, train_crisp
from .fuzzy import FuzzyModel, GaussianMembership, classify_fuzzy, defuzzify, fit_fuzzy, membership
from .fileio import load_detections, load_model, save_model, write_detections
from .metrics import EvalReport, evaluate, iou, measure_latency
from .synthgen import AuditReport, SceneSpec, SyntheticDataset, audit_knowledge, generate, preset, project_object

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "CkimError",
    "DetectionRecord",
    "FeatureVector",
    "LabelSpace",
    "MalformedInputError",
    "SizeClass",
    "compose_fine_label",
    "decompose_fine_label",
    "extract_features",
    "normalize_box",
    "CrispDecisionFunction",
    "CrispModel",
    "SgdConfig",
    "classify_crisp",
    "crisp_loss",
    "sigmoid_decision",
    "train_crisp",
    "FuzzyModel",
    "GaussianMembership",
    "classify_fuzzy",
    "defuzzify",
    "fit_fuzzy",
    "membership",
    "load_detections",
    "load_model",
    "save_model",
    "write_detections",
    "EvalReport",
    "evaluate",
    "iou",
    "measure_latency",
    "AuditReport",
    "SceneSpec",
    "SyntheticDataset",
    "audit_knowledge",
    "generate",
    "preset",
    "project_object",
]
