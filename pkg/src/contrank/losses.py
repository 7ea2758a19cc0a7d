"""Ranking and contrastive loss functions with exact (sub)gradients.

Three losses drive training:

* ``shl``  -- standard pairwise hinge on one (positive, negative) score pair.
* ``mhl``  -- modified hinge: positive score against the hardest negative
  score in the batch.
* ``tml``  -- triplet margin loss over L2 distances between pair embeddings.

``combined_loss`` mixes a ranking term and a contrastive term with static
weights; ``dwa_weights`` provides the periodic dynamic weighting schedule.

All functions are pure. At hinge kinks (zero value with zero slack) the
returned subgradient is zero, so the deadzone invariant "loss == 0 implies
all gradients == 0" holds everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class LossConfig:
    """Hyper-parameters for the combined ranking + contrastive objective."""

    hinge_margin: float = 2.0
    triplet_margin: float = 0.05
    w1: float = 0.5
    w2: float = 0.5
    dwa_enabled: bool = False
    dwa_period: float = 1000.0

    def validate(self) -> None:
        if not self.hinge_margin > 0:
            raise ValueError(f"hinge_margin must be > 0, got {self.hinge_margin}")
        if self.triplet_margin < 0:
            raise ValueError(f"triplet_margin must be >= 0, got {self.triplet_margin}")
        if self.w1 < 0 or self.w2 < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.dwa_period > 0:
            raise ValueError(f"dwa_period must be > 0, got {self.dwa_period}")
        if not self.dwa_enabled and self.w1 + self.w2 <= 0:
            raise ValueError("w1 + w2 must be > 0 when dynamic weighting is off")

    @property
    def contrastive_active(self) -> bool:
        """Whether the contrastive term can ever receive nonzero weight."""
        return self.dwa_enabled or self.w2 > 0


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name}: non-finite input {v!r}")


def shl(s_pos: float, s_neg: float, margin: float) -> tuple[float, float, float]:
    """Pairwise hinge loss max(0, margin - s_pos + s_neg).

    Returns (value, d_s_pos, d_s_neg). Gradients are (-1, +1) when the
    hinge is active and (0, 0) otherwise, including at the kink.
    """
    _require_finite("shl", s_pos, s_neg, margin)
    raw = margin - s_pos + s_neg
    if raw > 0:
        return raw, -1.0, 1.0
    return 0.0, 0.0, 0.0


def mhl(s_pos: float, s_negs: list[float], margin: float) -> tuple[float, float, list[float]]:
    """Hinge of s_pos against the hardest (maximum) negative score.

    Returns (value, d_s_pos, d_s_negs). Only the arg-max negative receives
    gradient; ties go to the lowest index.
    """
    if not s_negs:
        raise ValueError("mhl: empty negative list")
    _require_finite("mhl", s_pos, margin, *s_negs)
    hardest = 0
    for i in range(1, len(s_negs)):
        if s_negs[i] > s_negs[hardest]:
            hardest = i
    raw = margin - s_pos + s_negs[hardest]
    grads = [0.0] * len(s_negs)
    if raw > 0:
        grads[hardest] = 1.0
        return raw, -1.0, grads
    return 0.0, 0.0, grads


def l2_distance(x: np.ndarray, y: np.ndarray) -> float:
    """Euclidean distance between two equal-dimension vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"l2_distance: shape mismatch {x.shape} vs {y.shape}")
    return float(np.sqrt(np.sum((x - y) ** 2)))


def l2_distance_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of l2_distance with respect to x; zero vector at distance 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = l2_distance(x, y)
    if d == 0.0:
        return np.zeros_like(x)
    return (x - y) / d


def tml(
    anchor: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Triplet margin loss max(0, margin + D(a, pos) - D(a, neg)).

    Returns (value, d_anchor, d_pos, d_neg). When the hinge is inactive all
    gradients are zero. A zero distance on either branch contributes a zero
    subgradient for that branch.
    """
    anchor = np.asarray(anchor, dtype=float)
    pos = np.asarray(pos, dtype=float)
    neg = np.asarray(neg, dtype=float)
    if anchor.shape != pos.shape or anchor.shape != neg.shape:
        raise ValueError("tml: dimension mismatch")
    d_ap = l2_distance(anchor, pos)
    d_an = l2_distance(anchor, neg)
    raw = margin + d_ap - d_an
    if raw <= 0:
        z = np.zeros_like(anchor)
        return 0.0, z, z.copy(), z.copy()
    g_ap = l2_distance_grad(anchor, pos)   # d D(a,p) / d a
    g_an = l2_distance_grad(anchor, neg)   # d D(a,n) / d a
    return raw, g_ap - g_an, -g_ap, g_an


def combined_loss(l_rank: float, l_con: float, w1: float, w2: float) -> float:
    """Weighted combination w1 * l_rank + w2 * l_con."""
    if w1 < 0 or w2 < 0:
        raise ValueError("combined_loss: weights must be >= 0")
    _require_finite("combined_loss", l_rank, l_con)
    return w1 * l_rank + w2 * l_con


def dwa_weights(t: int, period: float) -> tuple[float, float]:
    """Dynamic weighting at iteration t: w1 = |sin(2*pi*t / period)|, w2 = 1 - w1."""
    if not period > 0:
        raise ValueError(f"dwa_weights: period must be > 0, got {period}")
    w1 = abs(math.sin(2.0 * math.pi * t / period))
    return w1, 1.0 - w1
