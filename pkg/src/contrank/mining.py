"""Triplet construction and hard-negative mining over batch embeddings.

All miners operate on one batch: a list of embedding vectors plus a parallel
list of class labels, where one class (``positive_class``) marks the relevant
pairs. ``enumerate_triplets`` yields the full candidate set (anchor and
positive from the positive class, negative from any other class); every
mining method returns a subset of that set. With P positive and N negative
elements the candidate count is exactly P*(P-1)*N.

Selection rules:

- ``none``: all candidates, optionally subsampled to ``max_triplets``.
- ``triplet_margin``: candidates with d(a,n) - d(a,p) < margin, i.e. the
  negative is not already margin-separated.
- ``batch_hard``: one triplet per anchor, pairing its farthest positive with
  its nearest negative; ties resolve to the lowest index.
- ``angular``: candidates whose angle at the negative, measured from the
  midpoint c = (a+p)/2 as tan(alpha) = d(a,p) / (2 * d(c,n)), exceeds the
  threshold. A negative sitting exactly on the midpoint always passes.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .losses import l2_distance

MINING_METHODS = ("none", "triplet_margin", "batch_hard", "angular")


class Triplet(NamedTuple):
    anchor: int
    positive: int
    negative: int


@dataclass
class MinerConfig:
    method: str = "none"
    margin: float = 0.2
    threshold_degrees: float = 20.0
    max_triplets: int = 512

    def validate(self) -> None:
        if self.method not in MINING_METHODS:
            raise ValueError(
                f"unknown mining method {self.method!r}, expected one of {MINING_METHODS}"
            )
        if self.margin < 0:
            raise ValueError("mining margin must be non-negative")
        if not 0 < self.threshold_degrees < 90:
            raise ValueError("angular threshold must be in (0, 90) degrees")
        if self.max_triplets < 1:
            raise ValueError("max_triplets must be positive")


def pairwise_distances(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    """Symmetric matrix of L2 distances with a zero diagonal."""
    n = len(embeddings)
    dist = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = l2_distance(embeddings[i], embeddings[j])
            dist[i, j] = d
            dist[j, i] = d
    return dist


def enumerate_triplets(classes: Sequence[str], positive_class: str = "pos") -> list[Triplet]:
    """All (anchor, positive, negative) index triples, in index order.

    Anchors and positives are distinct elements of the positive class;
    negatives are every element of any other class.
    """
    pos_idx = [i for i, c in enumerate(classes) if c == positive_class]
    neg_idx = [i for i, c in enumerate(classes) if c != positive_class]
    triplets = []
    for a in pos_idx:
        for p in pos_idx:
            if p == a:
                continue
            for n in neg_idx:
                triplets.append(Triplet(a, p, n))
    return triplets


def mine_triplet_margin(
    dist: np.ndarray, triplets: Sequence[Triplet], margin: float
) -> list[Triplet]:
    """Candidates whose negative is within ``margin`` of the positive distance."""
    return [t for t in triplets if dist[t.anchor, t.negative] - dist[t.anchor, t.positive] < margin]


def mine_batch_hard(
    dist: np.ndarray, classes: Sequence[str], positive_class: str = "pos"
) -> list[Triplet]:
    """Hardest positive and hardest negative per anchor, ties to lowest index."""
    pos_idx = [i for i, c in enumerate(classes) if c == positive_class]
    neg_idx = [i for i, c in enumerate(classes) if c != positive_class]
    if len(pos_idx) < 2 or not neg_idx:
        return []
    triplets = []
    for a in pos_idx:
        hardest_p = max((p for p in pos_idx if p != a), key=lambda p: (dist[a, p], -p))
        hardest_n = min(neg_idx, key=lambda n: (dist[a, n], n))
        triplets.append(Triplet(a, hardest_p, hardest_n))
    return triplets


def angular_angle_degrees(
    anchor: np.ndarray, positive: np.ndarray, negative: np.ndarray
) -> float:
    """Angle at the negative, from the anchor-positive midpoint, in degrees."""
    d_ap = l2_distance(anchor, positive)
    midpoint = (np.asarray(anchor, dtype=float) + np.asarray(positive, dtype=float)) / 2.0
    d_cn = l2_distance(midpoint, negative)
    if d_cn == 0.0:
        return 90.0
    return math.degrees(math.atan(d_ap / (2.0 * d_cn)))


def mine_angular(
    embeddings: Sequence[np.ndarray],
    triplets: Sequence[Triplet],
    threshold_degrees: float,
) -> list[Triplet]:
    """Candidates whose midpoint angle exceeds the threshold.

    A zero midpoint-to-negative distance counts as passing regardless of the
    threshold.
    """
    kept = []
    for t in triplets:
        midpoint = (
            np.asarray(embeddings[t.anchor], dtype=float)
            + np.asarray(embeddings[t.positive], dtype=float)
        ) / 2.0
        d_cn = l2_distance(midpoint, embeddings[t.negative])
        if d_cn == 0.0:
            kept.append(t)
            continue
        d_ap = l2_distance(embeddings[t.anchor], embeddings[t.positive])
        if math.degrees(math.atan(d_ap / (2.0 * d_cn))) > threshold_degrees:
            kept.append(t)
    return kept


def mine(
    embeddings: Sequence[np.ndarray],
    classes: Sequence[str],
    config: MinerConfig,
    positive_class: str = "pos",
    rng: random.Random | None = None,
) -> list[Triplet]:
    """Dispatch to the configured mining method.

    For ``none`` with more candidates than ``max_triplets``, a seeded ``rng``
    selects the subsample (index order preserved); without an rng the first
    ``max_triplets`` candidates are kept.
    """
    if len(embeddings) != len(classes):
        raise ValueError("mine: embeddings and classes must have equal length")
    config.validate()
    candidates = enumerate_triplets(classes, positive_class)
    if config.method == "none":
        if len(candidates) <= config.max_triplets:
            return candidates
        if rng is None:
            return candidates[: config.max_triplets]
        picked = sorted(rng.sample(range(len(candidates)), config.max_triplets))
        return [candidates[i] for i in picked]
    if config.method == "angular":
        return mine_angular(embeddings, candidates, config.threshold_degrees)
    dist = pairwise_distances(embeddings)
    if config.method == "triplet_margin":
        return mine_triplet_margin(dist, candidates, config.margin)
    return mine_batch_hard(dist, classes, positive_class)
