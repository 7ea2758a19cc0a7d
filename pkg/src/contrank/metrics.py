"""Ranking evaluation (MAP, MRR, P@k) and sentence-level BLEU.

Candidates are ordered by score descending with exact ties broken by doc_id
ascending, so every metric is deterministic across platforms. Queries whose
groups contain no relevant candidate are skipped and counted, never averaged
in. BLEU is sentence-level with uniform n-gram weights: the 1-gram precision
is unsmoothed (zero overlap scores zero) and higher-order counts get add-one
smoothing so short strings still produce a usable diversity signal.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .encoder import tokenize


@dataclass
class RankedList:
    """Candidates of one query in rank order: (doc_id, score, label) tuples."""

    query_id: str
    items: list[tuple[str, float, int]]

    @property
    def labels(self) -> list[int]:
        return [label for _, _, label in self.items]


@dataclass
class MetricsReport:
    map: float
    mrr: float
    p_at_k: dict[int, float] = field(default_factory=dict)
    num_queries_evaluated: int = 0
    num_queries_skipped: int = 0

    def as_dict(self) -> dict:
        return {
            "map": self.map,
            "mrr": self.mrr,
            "p_at_k": {str(k): v for k, v in sorted(self.p_at_k.items())},
            "num_queries_evaluated": self.num_queries_evaluated,
            "num_queries_skipped": self.num_queries_skipped,
        }


def rank_candidates(
    scores: Mapping[str, float],
    labels: Mapping[str, int],
    query_id: str = "",
) -> RankedList:
    """Order candidates by (score desc, doc_id asc)."""
    if set(scores) != set(labels):
        raise ValueError("rank_candidates: scores and labels must cover the same doc_ids")
    ordered = sorted(scores, key=lambda d: (-scores[d], d))
    return RankedList(
        query_id=query_id,
        items=[(d, float(scores[d]), int(labels[d])) for d in ordered],
    )


def average_precision(labels: Sequence[int]) -> float:
    """Mean over relevant ranks r of (relevant seen in top r) / r."""
    hits = 0
    total = 0.0
    for rank, label in enumerate(labels, start=1):
        if label == 1:
            hits += 1
            total += hits / rank
    if hits == 0:
        raise ValueError("average_precision: no relevant candidate (skip query)")
    return total / hits


def reciprocal_rank(labels: Sequence[int]) -> float:
    for rank, label in enumerate(labels, start=1):
        if label == 1:
            return 1.0 / rank
    raise ValueError("reciprocal_rank: no relevant candidate (skip query)")


def precision_at_k(labels: Sequence[int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for label in labels[:k] if label == 1) / k


def aggregate(run: Sequence[RankedList], ks: Sequence[int] = (1,)) -> MetricsReport:
    """Mean AP / RR / P@k over queries with at least one relevant candidate."""
    if not run:
        raise ValueError("aggregate: empty run")
    ap_sum = 0.0
    rr_sum = 0.0
    pk_sums = {k: 0.0 for k in ks}
    evaluated = 0
    skipped = 0
    for ranked in run:
        labels = ranked.labels
        if not any(label == 1 for label in labels):
            skipped += 1
            continue
        evaluated += 1
        ap_sum += average_precision(labels)
        rr_sum += reciprocal_rank(labels)
        for k in ks:
            pk_sums[k] += precision_at_k(labels, k)
    if evaluated == 0:
        raise ValueError("aggregate: every query lacks a relevant candidate")
    return MetricsReport(
        map=ap_sum / evaluated,
        mrr=rr_sum / evaluated,
        p_at_k={k: pk_sums[k] / evaluated for k in ks},
        num_queries_evaluated=evaluated,
        num_queries_skipped=skipped,
    )


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights over n = 1..max_n.

    The 1-gram precision is exact clipped-match precision; for n >= 2 the
    precision is (matches + 1) / (total + 1). Brevity penalty is 1 when the
    candidate is longer than the reference, else exp(1 - r/c).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        raise ValueError("bleu: empty input after tokenization")

    log_terms: list[float] = []
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(cand, n)
        ref_counts = _ngram_counts(ref, n)
        matches = sum(min(count, ref_counts[g]) for g, count in cand_counts.items())
        total = max(len(cand) - n + 1, 0)
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_terms.append(math.log(precision) / max_n)

    c, r = len(cand), len(ref)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(math.fsum(log_terms))
