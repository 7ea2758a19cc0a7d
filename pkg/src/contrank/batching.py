"""Batch construction for the three training regimes.

* ``shl``: a fixed number of (query, positive, negative) triplets, each from
  a distinct query; the hinge loss applies per triplet.
* ``mhl``: one block per query group: one positive plus sampled negatives
  from the same group; the hinge compares the positive against the hardest
  sampled negative.
* ``contrastive``: one mhl block plus extra positive pairs that only feed
  the contrastive loss. With ``relevance_label`` similarity the extras come
  from other queries (one positive each, pairwise-distinct queries); with
  ``reformulation`` similarity they are stored reformulations of the block's
  query paired with its positive document.

Iteration is seeded per (seed, epoch): every eligible group anchors exactly
one block per epoch, in a shuffled order, and all sampling draws from one
epoch-scoped generator, so a repeated walk over the same epoch reproduces
identical batches. Groups with several positives anchor one block per epoch
with the positive rotated by seed; co-positives are never used as that
block's negatives.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from typing import Iterator

from .corpus import REFORMULATION_TYPES, Dataset, QueryGroup

logger = logging.getLogger(__name__)

REGIMES = ("shl", "mhl", "contrastive")
SIMILARITIES = ("relevance_label", "reformulation")

POSITIVE_CLASS = "pos"
NEGATIVE_CLASS = "neg"


@dataclass
class BatchSpec:
    regime: str = "contrastive"
    positives_per_batch: int = 16
    negatives_per_query: int = 15
    similarity: str = "relevance_label"
    seed: int = 0

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}, expected one of {REGIMES}")
        if self.similarity not in SIMILARITIES:
            raise ValueError(
                f"unknown similarity {self.similarity!r}, expected one of {SIMILARITIES}"
            )
        if self.positives_per_batch < 1:
            raise ValueError("positives_per_batch must be >= 1")
        if self.negatives_per_query < 1:
            raise ValueError("negatives_per_query must be >= 1")
        if (
            self.regime == "contrastive"
            and self.similarity == "relevance_label"
            and self.positives_per_batch < 2
        ):
            raise ValueError(
                "contrastive regime with relevance_label similarity needs "
                "positives_per_batch >= 2 (no triplet exists otherwise)"
            )


@dataclass
class BatchPair:
    query_id: str
    doc_id: str
    label: int
    query_text: str
    doc_text: str


@dataclass
class RankingBlock:
    """Indices into Batch.pairs: one positive and its in-query negatives."""

    positive: int
    negatives: list[int]


@dataclass
class Batch:
    pairs: list[BatchPair] = field(default_factory=list)
    classes: list[str] = field(default_factory=list)
    blocks: list[RankingBlock] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


def eligible_groups(dataset: Dataset) -> list[QueryGroup]:
    """Groups that can anchor a ranking block: >= 1 positive and >= 1 negative."""
    return [g for g in dataset.groups if g.positives and g.negatives]


def _epoch_rng(spec: BatchSpec, epoch: int) -> random.Random:
    return random.Random(spec.seed * 1_000_003 + epoch)


def _pair(group_query_id: str, query_text: str, cand) -> BatchPair:
    return BatchPair(
        query_id=group_query_id,
        doc_id=cand.doc_id,
        label=cand.label,
        query_text=query_text,
        doc_text=cand.text,
    )


def _block_members(group: QueryGroup, spec: BatchSpec, rng: random.Random):
    """Seeded (positive, sampled negatives) for one group's ranking block."""
    positives = group.positives
    pos = positives[rng.randrange(len(positives))]
    negatives = group.negatives
    k = min(spec.negatives_per_query, len(negatives))
    negs = rng.sample(negatives, k)
    return pos, negs


def _shuffled_eligible(dataset: Dataset, rng: random.Random) -> list[QueryGroup]:
    groups = eligible_groups(dataset)
    skipped = len(dataset.groups) - len(groups)
    if skipped:
        logger.debug("skipping %d groups without both a positive and a negative", skipped)
    rng.shuffle(groups)
    return groups


def iter_mhl_batches(dataset: Dataset, spec: BatchSpec, epoch: int) -> Iterator[Batch]:
    rng = _epoch_rng(spec, epoch)
    for group in _shuffled_eligible(dataset, rng):
        pos, negs = _block_members(group, spec, rng)
        pairs = [_pair(group.query_id, group.query_text, pos)]
        pairs += [_pair(group.query_id, group.query_text, n) for n in negs]
        yield Batch(
            pairs=pairs,
            classes=[POSITIVE_CLASS] + [NEGATIVE_CLASS] * len(negs),
            blocks=[RankingBlock(positive=0, negatives=list(range(1, len(pairs))))],
        )


def iter_shl_batches(dataset: Dataset, spec: BatchSpec, epoch: int) -> Iterator[Batch]:
    rng = _epoch_rng(spec, epoch)
    groups = _shuffled_eligible(dataset, rng)
    for start in range(0, len(groups), spec.positives_per_batch):
        chunk = groups[start : start + spec.positives_per_batch]
        if len(chunk) < spec.positives_per_batch:
            logger.debug(
                "short triplet batch: %d of %d queries available",
                len(chunk),
                spec.positives_per_batch,
            )
        batch = Batch()
        for group in chunk:
            positives = group.positives
            negatives = group.negatives
            pos = positives[rng.randrange(len(positives))]
            neg = negatives[rng.randrange(len(negatives))]
            i = len(batch.pairs)
            batch.pairs.append(_pair(group.query_id, group.query_text, pos))
            batch.pairs.append(_pair(group.query_id, group.query_text, neg))
            batch.classes += [POSITIVE_CLASS, NEGATIVE_CLASS]
            batch.blocks.append(RankingBlock(positive=i, negatives=[i + 1]))
        yield batch


def _reformulation_texts(group: QueryGroup) -> list[str]:
    texts: list[str] = []
    for rtype in REFORMULATION_TYPES:
        texts.extend(group.reformulations.get(rtype, ()))
    return texts


def iter_contrastive_batches(dataset: Dataset, spec: BatchSpec, epoch: int) -> Iterator[Batch]:
    rng = _epoch_rng(spec, epoch)
    groups = _shuffled_eligible(dataset, rng)
    donors = [g for g in dataset.groups if g.positives]
    rng.shuffle(donors)
    cursor = 0

    for group in groups:
        pos, negs = _block_members(group, spec, rng)
        pairs = [_pair(group.query_id, group.query_text, pos)]
        pairs += [_pair(group.query_id, group.query_text, n) for n in negs]
        classes = [POSITIVE_CLASS] + [NEGATIVE_CLASS] * len(negs)
        block = RankingBlock(positive=0, negatives=list(range(1, len(pairs))))
        want = spec.positives_per_batch - 1

        if spec.similarity == "reformulation":
            texts = _reformulation_texts(group)[:want]
            if len(texts) < want:
                logger.debug(
                    "query %s: %d reformulations for %d extra-positive slots",
                    group.query_id,
                    len(texts),
                    want,
                )
            for text in texts:
                pairs.append(
                    BatchPair(
                        query_id=group.query_id,
                        doc_id=pos.doc_id,
                        label=1,
                        query_text=text,
                        doc_text=pos.text,
                    )
                )
                classes.append(POSITIVE_CLASS)
        else:
            used = {group.query_id}
            taken = 0
            scanned = 0
            while taken < want and scanned < len(donors):
                donor = donors[cursor % len(donors)]
                cursor += 1
                scanned += 1
                if donor.query_id in used:
                    continue
                used.add(donor.query_id)
                positives = donor.positives
                extra = positives[rng.randrange(len(positives))]
                pairs.append(_pair(donor.query_id, donor.query_text, extra))
                classes.append(POSITIVE_CLASS)
                taken += 1
            if taken < want:
                logger.debug(
                    "query %s: only %d extra positives for %d slots",
                    group.query_id,
                    taken,
                    want,
                )
        yield Batch(pairs=pairs, classes=classes, blocks=[block])


def iter_batches(dataset: Dataset, spec: BatchSpec, epoch: int) -> Iterator[Batch]:
    """Dispatch to the regime's builder after validating the spec."""
    spec.validate()
    if spec.regime == "mhl":
        return iter_mhl_batches(dataset, spec, epoch)
    if spec.regime == "shl":
        return iter_shl_batches(dataset, spec, epoch)
    return iter_contrastive_batches(dataset, spec, epoch)
