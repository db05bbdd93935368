"""Noise-robust training engine for open-set noisy labels on synthetic data.

Divergence-based sample selection with neighbor evidence, adaptive per-class
thresholds, mean-teacher label reassignment (partial-label and negative
learning), and triplet consistency regularization.
"""

__version__ = "0.1.0"
