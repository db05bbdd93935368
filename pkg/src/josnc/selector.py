"""Per-sample clean/OOD likelihood scores, batch partitioning, and the
self-adaptive per-class thresholds.

Scores are divergence-based and live in [0, 1]:
  p_clean = 1 - JS(prediction, smoothed label distribution)
  p_ood   = JS(prediction of view 1, prediction of view 2)

A sample is CLEAN if its own clean-likelihood clears the per-class threshold,
or if all K of its nearest neighbors share its observed label and their mean
enqueue-time clean-likelihood clears the threshold. Non-clean samples are OOD
when their view divergence exceeds the per-class OOD threshold, otherwise ID.
Thresholds are per-class epoch means refined by temporal ensembling.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .diffmath import js_divergence_rows

CLEAN, ID, OOD = 0, 1, 2
PARTITION_NAMES = {CLEAN: "CLEAN", ID: "ID", OOD: "OOD"}


class SelectorError(ValueError):
    pass


@dataclass
class SampleScores:
    p_clean: float
    p_ood: float
    neighbor_mean_p_clean: Optional[float] = None
    neighbors_share_label: Optional[bool] = None


@dataclass
class Partition:
    clean_ids: set
    id_ids: set
    ood_ids: set

    def check_sound(self, batch_ids) -> None:
        """Disjoint + exhaustive over the batch; raises otherwise."""
        batch = set(int(i) for i in batch_ids)
        union = self.clean_ids | self.id_ids | self.ood_ids
        overlap = ((self.clean_ids & self.id_ids)
                   | (self.clean_ids & self.ood_ids)
                   | (self.id_ids & self.ood_ids))
        if overlap:
            raise SelectorError(f"partition sets overlap on ids {sorted(overlap)[:5]}")
        if union != batch:
            raise SelectorError("partition does not cover the batch exactly")


def score_sample(p, p_prime, y_smoothed, neighbor_p_clean=None,
                 neighbor_labels=None, observed_label=None) -> SampleScores:
    """Score one sample from its two view predictions.

    Neighbor fields are filled only when neighbor evidence was available.
    """
    p = np.asarray(p, dtype=np.float64)
    p_clean = 1.0 - float(js_divergence_rows(p, np.asarray(y_smoothed))[0])
    p_ood = float(js_divergence_rows(p, np.asarray(p_prime))[0])
    scores = SampleScores(p_clean=p_clean, p_ood=p_ood)
    if neighbor_p_clean is not None:
        scores.neighbor_mean_p_clean = float(np.mean(neighbor_p_clean))
        scores.neighbors_share_label = bool(
            np.all(np.asarray(neighbor_labels) == observed_label))
    return scores


class ThresholdState:
    """Per-class tau_clean / tau_ood with epoch accumulators.

    Thresholds start at 0 and are rolled once per epoch via
      tau <- w * tau + (1 - w) * epoch_mean
    Classes unseen in an epoch carry their previous threshold forward.
    """

    def __init__(self, n_classes: int):
        self.n_classes = n_classes
        self.tau_clean = np.zeros(n_classes)
        self.tau_ood = np.zeros(n_classes)
        self._sum_clean = np.zeros(n_classes)
        self._sum_ood = np.zeros(n_classes)
        self._count = np.zeros(n_classes, dtype=np.int64)

    def accumulate(self, scores: SampleScores, observed_label: int) -> None:
        self._sum_clean[observed_label] += scores.p_clean
        self._sum_ood[observed_label] += scores.p_ood
        self._count[observed_label] += 1

    def accumulate_batch(self, p_clean, p_ood, observed_labels) -> None:
        np.add.at(self._sum_clean, observed_labels, p_clean)
        np.add.at(self._sum_ood, observed_labels, p_ood)
        np.add.at(self._count, observed_labels, 1)

    def epoch_counts(self) -> np.ndarray:
        return self._count.copy()

    def epoch_means(self):
        counts = np.maximum(self._count, 1)
        return self._sum_clean / counts, self._sum_ood / counts

    def roll(self, omega_tau: float) -> None:
        """End-of-epoch threshold update; clears the accumulators."""
        if not (0.0 <= omega_tau <= 1.0):
            raise SelectorError(f"omega_tau must be in [0, 1], got {omega_tau}")
        seen = self._count > 0
        mean_clean, mean_ood = self.epoch_means()
        self.tau_clean[seen] = (omega_tau * self.tau_clean[seen]
                                + (1.0 - omega_tau) * mean_clean[seen])
        self.tau_ood[seen] = (omega_tau * self.tau_ood[seen]
                              + (1.0 - omega_tau) * mean_ood[seen])
        self._sum_clean[:] = 0.0
        self._sum_ood[:] = 0.0
        self._count[:] = 0


def classify_sample(scores: SampleScores, observed_label: int,
                    thresholds: ThresholdState) -> int:
    """Apply the clean criterion, then the OOD criterion, else ID."""
    tau_c = thresholds.tau_clean[observed_label]
    if scores.p_clean > tau_c:
        return CLEAN
    if (scores.neighbors_share_label
            and scores.neighbor_mean_p_clean is not None
            and scores.neighbor_mean_p_clean > tau_c):
        return CLEAN
    if scores.p_ood > thresholds.tau_ood[observed_label]:
        return OOD
    return ID
