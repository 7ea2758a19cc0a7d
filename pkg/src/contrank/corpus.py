"""Dataset ingestion, validation, augmentation merge, and holdout splitting.

Datasets are flat files with one (query, document, label) record per line,
either jsonl (keys query_id, query, doc_id, doc, label) or tab-separated
with the same five columns in that order. Records are grouped by query_id
on load, preserving read order. Reformulated query texts produced by
external generators are merged in from a separate jsonl file, either as
extra query groups (``expand``) or stored inside their original group
(``attach``).
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

logger = logging.getLogger(__name__)

DATASET_FIELDS = ("query_id", "query", "doc_id", "doc", "label")

REFORMULATION_TYPES = (
    "headline",
    "paraphrase",
    "voice",
    "punctuation",
    "typo",
    "contraction",
)

SPLITS = ("train", "validation", "test")


class ParseError(ValueError):
    """A record could not be read (bad syntax, missing field, bad label)."""


class ValidationError(ValueError):
    """Records parsed but violate a dataset-level constraint."""


@dataclass
class Candidate:
    doc_id: str
    text: str
    label: int


@dataclass
class QueryGroup:
    query_id: str
    query_text: str
    candidates: list[Candidate]
    reformulations: dict[str, list[str]] = field(default_factory=dict)

    @property
    def has_positive(self) -> bool:
        return any(c.label == 1 for c in self.candidates)

    @property
    def positives(self) -> list[Candidate]:
        return [c for c in self.candidates if c.label == 1]

    @property
    def negatives(self) -> list[Candidate]:
        return [c for c in self.candidates if c.label == 0]


@dataclass
class Dataset:
    split: str
    groups: list[QueryGroup]

    def __len__(self) -> int:
        return len(self.groups)

    @property
    def num_candidates(self) -> int:
        return sum(len(g.candidates) for g in self.groups)

    def group_by_id(self, query_id: str) -> QueryGroup:
        for g in self.groups:
            if g.query_id == query_id:
                return g
        raise KeyError(query_id)


def _record_from_json(line: str, lineno: int) -> tuple[str, str, str, str, int]:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"line {lineno}: invalid json ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"line {lineno}: record is not an object")
    for key in DATASET_FIELDS:
        if key not in obj:
            raise ParseError(f"line {lineno}: missing field {key!r}")
    return (
        obj["query_id"],
        obj["query"],
        obj["doc_id"],
        obj["doc"],
        obj["label"],
    )


def _record_from_tsv(line: str, lineno: int) -> tuple[str, str, str, str, int]:
    cols = line.split("\t")
    if len(cols) != len(DATASET_FIELDS):
        raise ParseError(
            f"line {lineno}: expected {len(DATASET_FIELDS)} tab-separated columns, got {len(cols)}"
        )
    query_id, query, doc_id, doc, label_str = cols
    try:
        label = int(label_str)
    except ValueError as exc:
        raise ParseError(f"line {lineno}: label {label_str!r} is not an integer") from exc
    return query_id, query, doc_id, doc, label


def _check_record(
    record: tuple[str, str, str, str, int], lineno: int
) -> tuple[str, str, str, str, int]:
    query_id, query, doc_id, doc, label = record
    for name, value in (("query_id", query_id), ("query", query), ("doc_id", doc_id), ("doc", doc)):
        if not isinstance(value, str) and isinstance(value, (int, float)):
            value = str(value)
        if not isinstance(value, str) or not value.strip():
            raise ParseError(f"line {lineno}: field {name!r} must be a non-empty string")
    if isinstance(label, bool) or label not in (0, 1):
        raise ParseError(f"line {lineno}: label must be 0 or 1, got {label!r}")
    return str(query_id), str(query), str(doc_id), str(doc), int(label)


def load_dataset(path: str | Path, format: str = "jsonl", split: str = "train") -> Dataset:
    """Read a flat pair file and group records by query_id.

    Raises ParseError for malformed lines (naming the line number) and
    ValidationError for duplicate (query_id, doc_id) pairs or inconsistent
    query text within one group.
    """
    path = Path(path)
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown dataset format {format!r}")
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    parse = _record_from_json if format == "jsonl" else _record_from_tsv

    order: list[str] = []
    groups: dict[str, QueryGroup] = {}
    seen_pairs: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            query_id, query, doc_id, doc, label = _check_record(parse(line, lineno), lineno)
            if (query_id, doc_id) in seen_pairs:
                raise ValidationError(
                    f"line {lineno}: duplicate pair (query_id={query_id!r}, doc_id={doc_id!r})"
                )
            seen_pairs.add((query_id, doc_id))
            if query_id not in groups:
                order.append(query_id)
                groups[query_id] = QueryGroup(query_id=query_id, query_text=query, candidates=[])
            elif groups[query_id].query_text != query:
                raise ValidationError(
                    f"line {lineno}: query_id {query_id!r} has inconsistent query text"
                )
            groups[query_id].candidates.append(Candidate(doc_id=doc_id, text=doc, label=label))
    if not order:
        raise ParseError(f"{path}: no records")
    dataset = Dataset(split=split, groups=[groups[qid] for qid in order])
    logger.info(
        "loaded %s: %d groups, %d candidates", path, len(dataset), dataset.num_candidates
    )
    return dataset


def save_dataset(dataset: Dataset, path: str | Path, format: str = "jsonl") -> None:
    """Write one record per (query, candidate) pair, group order preserved."""
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown dataset format {format!r}")
    with open(path, "w", encoding="utf-8") as f:
        for g in dataset.groups:
            for c in g.candidates:
                if format == "jsonl":
                    record = {
                        "query_id": g.query_id,
                        "query": g.query_text,
                        "doc_id": c.doc_id,
                        "doc": c.text,
                        "label": c.label,
                    }
                    f.write(json.dumps(record, ensure_ascii=False) + "\n")
                else:
                    f.write(
                        "\t".join([g.query_id, g.query_text, c.doc_id, c.text, str(c.label)])
                        + "\n"
                    )


def load_reformulations(path: str | Path) -> dict[str, list[tuple[str, str]]]:
    """Read a reformulation jsonl file: one {query_id, type, text} per line."""
    out: dict[str, list[tuple[str, str]]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"line {lineno}: invalid json ({exc.msg})") from exc
            for key in ("query_id", "type", "text"):
                if key not in obj:
                    raise ParseError(f"line {lineno}: missing field {key!r}")
            rtype = obj["type"]
            if rtype not in REFORMULATION_TYPES:
                raise ValidationError(
                    f"line {lineno}: unknown reformulation type {rtype!r}, "
                    f"expected one of {REFORMULATION_TYPES}"
                )
            out.setdefault(str(obj["query_id"]), []).append((rtype, str(obj["text"])))
    return out


def merge_augmentation(dataset: Dataset, reformulations: str | Path, mode: str) -> Dataset:
    """Fold reformulated query texts into a dataset.

    ``expand`` clones each group once per reformulation, with the new query
    text and a derived query_id; clones follow their original. ``attach``
    stores the texts inside the original group, keyed by type. Originals
    are never mutated.
    """
    if mode not in ("expand", "attach"):
        raise ValueError(f"unknown augmentation mode {mode!r}")
    by_query = load_reformulations(reformulations)
    known_ids = {g.query_id for g in dataset.groups}
    for qid in by_query:
        if qid not in known_ids:
            raise ValidationError(f"reformulation references unknown query_id {qid!r}")

    new_groups: list[QueryGroup] = []
    for g in dataset.groups:
        entries = by_query.get(g.query_id, [])
        if mode == "attach":
            merged: dict[str, list[str]] = {k: list(v) for k, v in g.reformulations.items()}
            for rtype, text in entries:
                merged.setdefault(rtype, []).append(text)
            new_groups.append(replace(g, reformulations=merged))
            continue
        new_groups.append(g)
        for k, (rtype, text) in enumerate(entries):
            clone = QueryGroup(
                query_id=f"{g.query_id}#{rtype}{k}",
                query_text=text,
                candidates=[replace(c) for c in g.candidates],
            )
            new_groups.append(clone)
    return Dataset(split=dataset.split, groups=new_groups)


def split_holdout(dataset: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded partition at query-group granularity: (main, holdout).

    The holdout takes round(n * fraction) groups, clamped to [1, n-1], so
    both sides are non-empty. Group order within each side follows the
    input order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction out of range (0, 1): {fraction}")
    n = len(dataset.groups)
    if n < 2:
        raise ValidationError("split_holdout requires at least 2 groups")
    n_holdout = min(n - 1, max(1, round(n * fraction)))
    rng = random.Random(seed)
    holdout_idx = set(rng.sample(range(n), n_holdout))
    main = [g for i, g in enumerate(dataset.groups) if i not in holdout_idx]
    holdout = [g for i, g in enumerate(dataset.groups) if i in holdout_idx]
    return (
        Dataset(split=dataset.split, groups=main),
        Dataset(split="validation", groups=holdout),
    )
