"""Training-target construction for each partition.

CLEAN samples keep their observed label, smoothed. ID noisy samples get a
temperature-sharpened distribution whose top-kappa teacher predictions form a
candidate set. OOD noisy samples get a complementary one-hot label (the
teacher's least-likely class) for negative learning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffmath import check_prob_vec

POSITIVE = "positive"
NEGATIVE = "negative"


class LabelerError(ValueError):
    pass


@dataclass
class TrainingTarget:
    kind: str                      # POSITIVE or NEGATIVE
    dist: np.ndarray               # ProbVec (POSITIVE) or one-hot complement (NEGATIVE)
    partial_set: Optional[frozenset] = None


def make_lsr_target(label: int, n_classes: int, epsilon: float) -> TrainingTarget:
    """Smoothed one-hot: 1 - eps at the label, eps/(C-1) elsewhere."""
    if n_classes < 2:
        raise LabelerError(f"need at least 2 classes, got {n_classes}")
    if not (0.0 <= epsilon < 1.0):
        raise LabelerError(f"epsilon must be in [0, 1), got {epsilon}")
    if not (0 <= label < n_classes):
        raise LabelerError(f"label {label} out of range for C={n_classes}")
    dist = np.full(n_classes, epsilon / (n_classes - 1))
    dist[label] = 1.0 - epsilon
    return TrainingTarget(kind=POSITIVE, dist=dist)


def lsr_matrix(labels: np.ndarray, n_classes: int, epsilon: float) -> np.ndarray:
    """Row-per-sample smoothed label distributions."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full((labels.size, n_classes), epsilon / (n_classes - 1))
    out[np.arange(labels.size), labels] = 1.0 - epsilon
    return out


def make_pll_target(teacher_pred, kappa: int, t_in: float = 0.1,
                    t_out: float = 1.0) -> TrainingTarget:
    """Partial-label target: sharpen the teacher's top-kappa classes.

    The candidate set holds the kappa largest teacher predictions (ties go to
    the lower class index). Entries inside the set are divided by t_in and the
    rest by t_out before a plain softmax, so in-set mass strictly grows.
    """
    pred = check_prob_vec(teacher_pred)
    c = pred.size
    if not (1 <= kappa <= c):
        raise LabelerError(f"kappa must be in [1, {c}], got {kappa}")
    # stable sort on (-pred, index): ties resolve to the lower index
    order = np.lexsort((np.arange(c), -pred))
    omega = frozenset(int(i) for i in order[:kappa])
    scaled = pred / t_out
    in_set = np.zeros(c, dtype=bool)
    in_set[list(omega)] = True
    scaled[in_set] = pred[in_set] / t_in
    e = np.exp(scaled - scaled.max())
    dist = e / e.sum()
    return TrainingTarget(kind=POSITIVE, dist=dist, partial_set=omega)


def make_negative_target(teacher_pred) -> TrainingTarget:
    """One-hot at the teacher's least-likely class (ties to the lower index)."""
    pred = check_prob_vec(teacher_pred)
    idx = int(np.argmin(pred))   # argmin already takes the first minimum
    dist = np.zeros(pred.size)
    dist[idx] = 1.0
    return TrainingTarget(kind=NEGATIVE, dist=dist)
