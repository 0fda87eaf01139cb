"""Evaluation metrics: per-class IoU, two-class mean IoU, and symmetric best
Dice (SBD) over instance labelings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LEAF, STEM
from .errors import InputError


def _paired(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.int64).reshape(-1)
    gt = np.asarray(gt, dtype=np.int64).reshape(-1)
    if pred.shape != gt.shape:
        raise InputError(f"label vectors differ in length: "
                         f"{pred.shape} vs {gt.shape}")
    if len(pred) == 0:
        raise InputError("empty labelings")
    return pred, gt


def iou(pred, gt, class_id: int) -> float:
    """Intersection over union of one class; 1.0 when the class is absent
    from both labelings (empty union)."""
    pred, gt = _paired(pred, gt)
    p = pred == class_id
    g = gt == class_id
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum()) / union


@dataclass(frozen=True)
class SemanticReport:
    iou_leaf: float
    iou_stem: float
    miou: float


def semantic_report(pred, gt) -> SemanticReport:
    """Leaf / Stem IoU and their mean."""
    leaf = iou(pred, gt, LEAF)
    stem = iou(pred, gt, STEM)
    return SemanticReport(leaf, stem, 0.5 * (leaf + stem))


def _dice_matrix(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dice coefficients between every instance of `a` and every instance of `b`."""
    ids_a, inv_a = np.unique(a, return_inverse=True)
    ids_b, inv_b = np.unique(b, return_inverse=True)
    na, nb = len(ids_a), len(ids_b)
    inter = np.zeros((na, nb), dtype=np.int64)
    np.add.at(inter, (inv_a, inv_b), 1)
    size_a = np.bincount(inv_a, minlength=na)
    size_b = np.bincount(inv_b, minlength=nb)
    dice = 2.0 * inter / (size_a[:, None] + size_b[None, :])
    return dice, size_a, size_b


def best_dice(a, b) -> float:
    """Mean over instances of `a` of their best Dice overlap with any
    instance of `b`."""
    a, b = _paired(a, b)
    dice, _, _ = _dice_matrix(a, b)
    return float(dice.max(axis=1).mean())


def sbd(pred, gt) -> float:
    """Symmetric best Dice: the lower of best_dice(pred, gt) and
    best_dice(gt, pred)."""
    pred, gt = _paired(pred, gt)
    dice, _, _ = _dice_matrix(pred, gt)
    return float(min(dice.max(axis=1).mean(), dice.max(axis=0).mean()))


def format_report(values: dict) -> str:
    """Render metric values as machine-parsable "name=value" lines."""
    lines = []
    for name, value in values.items():
        if isinstance(value, float):
            lines.append(f"{name}={value:.6f}")
        else:
            lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"
