"""Loss terms and their weighted assembly.

Classification dispatches per partition: positive cross-entropy (natural log)
against smoothed / sharpened targets for CLEAN and ID samples, negative
learning -log(1 - p_c) at the complementary class for OOD samples. The three
consistency terms are symmetric KL between view predictions, KL against a
similarity-weighted neighbor mixture, and an InfoNCE feature loss over the
embedding queue. KL-based consistency uses base-2 logs, consistent with the
selection metrics; the base only rescales the alpha/beta weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffmath import LOG2, DiffMathError, Tensor


@dataclass
class LossBreakdown:
    l_cls: float
    l_con_s: float
    l_con_n: float
    l_con_f: float
    total: float
    alpha: float
    beta: float
    gamma: float


def classification_loss(probs: Tensor, positive_targets: np.ndarray,
                        positive_mask: np.ndarray,
                        negative_targets: np.ndarray,
                        negative_mask: np.ndarray) -> Tensor:
    """Per-batch mean classification loss over all N samples.

    positive_targets: (N, C) distributions, rows outside positive_mask ignored.
    negative_targets: (N, C) one-hot complementary labels for OOD rows.
    """
    n = probs.data.shape[0]
    pos = positive_targets * positive_mask[:, None]
    l_pos = -(probs.log() * pos).sum()
    neg = negative_targets * negative_mask[:, None]
    l_neg = -((1.0 - probs).log() * neg).sum()
    return (l_pos + l_neg) / n


def cross_entropy_loss(probs: Tensor, targets: np.ndarray) -> Tensor:
    """Plain mean cross-entropy against fixed target distributions."""
    n = probs.data.shape[0]
    return -(probs.log() * targets).sum() / n


def self_consistency_loss(p: Tensor, p_prime: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over the batch of mask * (KL(p||p') + KL(p'||p)), base 2.

    Uses the identity KL(p||q) + KL(q||p) = sum((p - q) * (log p - log q)).
    """
    n = p.data.shape[0]
    term = (p - p_prime) * (p.log() - p_prime.log())
    return (term * mask[:, None]).sum() / (n * LOG2)


def neighbor_consistency_loss(p: Tensor, mixtures: np.ndarray,
                              mask: np.ndarray) -> Tensor:
    """Mean masked KL(p || neighbor mixture), base 2.

    mixtures are constants read from the queue; no gradient flows into them.
    """
    n = p.data.shape[0]
    log_mix = np.log(np.maximum(mixtures, 1e-12))
    term = p * (p.log() - log_mix)
    return (term * mask[:, None]).sum() / (n * LOG2)


def neighbor_mixture(similarities: np.ndarray, neighbor_preds: np.ndarray) -> np.ndarray:
    """Similarity-weighted mixture of stored neighbor predictions.

    Negative cosine similarities are clipped to zero before renormalization;
    an all-zero weight vector falls back to uniform weights.
    """
    w = np.maximum(np.asarray(similarities, dtype=np.float64), 0.0)
    total = w.sum()
    if total <= 0.0:
        w = np.full(w.size, 1.0 / w.size)
    else:
        w = w / total
    return w @ np.asarray(neighbor_preds, dtype=np.float64)


def feature_consistency_loss(query_emb: Tensor, positive_keys: np.ndarray,
                             queue_pool: np.ndarray, t_ssl: float = 0.1) -> Tensor:
    """InfoNCE over cosine similarities; applied to the whole batch.

    The i-th positive key is the i-th row of positive_keys; the negative pool
    is positive_keys plus the stored queue embeddings (all constants).
    """
    if t_ssl <= 0:
        raise DiffMathError(f"t_ssl must be positive, got {t_ssl}")
    positive_keys = np.atleast_2d(positive_keys)
    n = query_emb.data.shape[0]
    if positive_keys.shape[0] != n:
        raise DiffMathError("one positive key per query required")
    pool = positive_keys if queue_pool is None or len(queue_pool) == 0 \
        else np.concatenate([positive_keys, queue_pool])
    if pool.shape[0] == 0:
        raise DiffMathError("empty contrastive pool")
    sims = query_emb @ pool.T          # (N, N + Q)
    log_p = (sims * (1.0 / t_ssl)).softmax().log()
    onehot = np.zeros((n, pool.shape[0]))
    onehot[np.arange(n), np.arange(n)] = 1.0
    return -(log_p * onehot).sum() / n


def total_loss(l_cls: Tensor, l_con_s: Tensor, l_con_n: Tensor, l_con_f: Tensor,
               alpha: float, beta: float, gamma: float):
    """Weighted sum; returns (scalar Tensor, LossBreakdown)."""
    total = l_cls + alpha * l_con_s + beta * l_con_n + gamma * l_con_f
    breakdown = LossBreakdown(
        l_cls=l_cls.item(), l_con_s=l_con_s.item(), l_con_n=l_con_n.item(),
        l_con_f=l_con_f.item(), total=total.item(),
        alpha=alpha, beta=beta, gamma=gamma)
    return total, breakdown
