"""Rule-based query perturbations for robustness test sets.

Three single-edit rewrites of a query string, each a deterministic function
of (input, seed, lexicon):

* punctuation: strip one trailing ?/./! or append "?" if none.
* typo: swap one seeded pair of adjacent interior characters inside one
  seeded word, chosen so the swap actually changes the word.
* contraction: expand the first contraction, or contract the first
  expansion phrase if no contraction is present.

``generate_suite`` rewrites every query of a dataset per perturbation type,
leaving candidates and labels untouched, and reports how many queries each
rule could not modify.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import Dataset, QueryGroup

logger = logging.getLogger(__name__)

PERTURBATION_TYPES = ("punctuation", "typo", "contraction")

TRAILING_PUNCTUATION = ("?", ".", "!")

# Only unambiguous pairs ship by default: possessive-style "'s" contractions
# (what's, it's, there's, ...) can stand for "is", "has", or a possessive, so
# expanding them blindly is wrong often enough to keep them out.
_DEFAULT_PAIRS = [
    ("aren't", "are not"),
    ("can't", "cannot"),
    ("couldn't", "could not"),
    ("didn't", "did not"),
    ("doesn't", "does not"),
    ("don't", "do not"),
    ("hadn't", "had not"),
    ("hasn't", "has not"),
    ("haven't", "have not"),
    ("isn't", "is not"),
    ("mustn't", "must not"),
    ("needn't", "need not"),
    ("shan't", "shall not"),
    ("shouldn't", "should not"),
    ("wasn't", "was not"),
    ("weren't", "were not"),
    ("won't", "will not"),
    ("wouldn't", "would not"),
    ("i'm", "i am"),
    ("let's", "let us"),
    ("they're", "they are"),
    ("we're", "we are"),
    ("you're", "you are"),
    ("could've", "could have"),
    ("i've", "i have"),
    ("might've", "might have"),
    ("must've", "must have"),
    ("they've", "they have"),
    ("we've", "we have"),
    ("would've", "would have"),
    ("you've", "you have"),
    ("he'll", "he will"),
    ("i'll", "i will"),
    ("it'll", "it will"),
    ("she'll", "she will"),
    ("they'll", "they will"),
    ("we'll", "we will"),
    ("you'll", "you will"),
]


class ContractionLexicon:
    """Bidirectional contraction <-> expansion map with lowercase keys."""

    def __init__(self, pairs: list[tuple[str, str]]):
        self.to_expanded: dict[str, str] = {}
        self.to_contracted: dict[str, str] = {}
        for contraction, expansion in pairs:
            contraction = contraction.lower()
            expansion = expansion.lower()
            if contraction in self.to_expanded or expansion in self.to_contracted:
                raise ValueError(
                    f"lexicon entry ({contraction!r}, {expansion!r}) is not unique in both directions"
                )
            self.to_expanded[contraction] = expansion
            self.to_contracted[expansion] = contraction

    @classmethod
    def default(cls) -> "ContractionLexicon":
        return cls(_DEFAULT_PAIRS)

    @classmethod
    def from_file(cls, path: str | Path) -> "ContractionLexicon":
        """Read tab-separated (contraction, expansion) lines."""
        pairs = []
        with open(path, encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.strip()
                if not line:
                    continue
                cols = line.split("\t")
                if len(cols) != 2:
                    raise ValueError(f"line {lineno}: expected 2 tab-separated columns")
                pairs.append((cols[0], cols[1]))
        return cls(pairs)


def perturb_punctuation(query: str) -> str:
    """Remove one trailing ?/./! or append "?" when none is present."""
    if query.endswith(TRAILING_PUNCTUATION):
        return query[:-1]
    return query + "?"


def _swap_positions(word: str) -> list[int]:
    """Interior indices i where swapping word[i] and word[i+1] changes the word."""
    return [i for i in range(1, len(word) - 2) if word[i] != word[i + 1]]


def perturb_typo(query: str, seed: int) -> tuple[str, bool]:
    """Swap two adjacent interior characters of one seeded word.

    Eligible words have two adjacent interior characters that differ, so the
    swap never touches a word's first or last character and always changes
    exactly one word. Returns (result, skipped); skipped is True when no word
    qualifies and the query is returned unchanged.
    """
    words = query.split()
    eligible = [i for i, w in enumerate(words) if _swap_positions(w)]
    if not eligible:
        return query, True
    rng = random.Random(seed)
    wi = eligible[rng.randrange(len(eligible))]
    word = words[wi]
    positions = _swap_positions(word)
    p = positions[rng.randrange(len(positions))]
    words[wi] = word[:p] + word[p + 1] + word[p] + word[p + 2 :]
    return " ".join(words), False


def _match_case(replacement: str, original_first: str) -> str:
    if original_first[:1].isupper():
        return replacement[:1].upper() + replacement[1:]
    return replacement


def perturb_contraction(
    query: str, lexicon: ContractionLexicon | None = None
) -> tuple[str, bool]:
    """Expand the first contraction, else contract the first expansion phrase.

    At most one substitution is made. Returns (result, skipped).
    """
    lexicon = lexicon or ContractionLexicon.default()
    words = query.split()
    lowered = [w.lower() for w in words]

    for i, w in enumerate(lowered):
        if w in lexicon.to_expanded:
            replacement = _match_case(lexicon.to_expanded[w], words[i])
            return " ".join(words[:i] + replacement.split() + words[i + 1 :]), False

    max_phrase = max(len(e.split()) for e in lexicon.to_contracted)
    for i in range(len(lowered)):
        for plen in range(min(max_phrase, len(lowered) - i), 1, -1):
            phrase = " ".join(lowered[i : i + plen])
            if phrase in lexicon.to_contracted:
                replacement = _match_case(lexicon.to_contracted[phrase], words[i])
                return " ".join(words[:i] + [replacement] + words[i + plen :]), False

    return query, True


@dataclass
class PerturbationSpec:
    type: str
    seed: int = 0

    def validate(self) -> None:
        if self.type not in PERTURBATION_TYPES:
            raise ValueError(
                f"unknown perturbation type {self.type!r}, expected one of {PERTURBATION_TYPES}"
            )


@dataclass
class PerturbationSuite:
    datasets: dict[str, Dataset] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)


def _perturb_query(
    query: str, spec: PerturbationSpec, group_index: int, lexicon: ContractionLexicon
) -> tuple[str, bool]:
    if spec.type == "punctuation":
        return perturb_punctuation(query), False
    if spec.type == "typo":
        return perturb_typo(query, spec.seed * 1_000_003 + group_index)
    return perturb_contraction(query, lexicon)


def generate_suite(
    dataset: Dataset,
    specs: list[PerturbationSpec],
    lexicon: ContractionLexicon | None = None,
) -> PerturbationSuite:
    """One perturbed dataset copy per spec; candidates are never modified."""
    lexicon = lexicon or ContractionLexicon.default()
    suite = PerturbationSuite()
    for spec in specs:
        spec.validate()
        groups = []
        skipped = 0
        for gi, g in enumerate(dataset.groups):
            text, was_skipped = _perturb_query(g.query_text, spec, gi, lexicon)
            skipped += int(was_skipped)
            groups.append(
                QueryGroup(
                    query_id=g.query_id,
                    query_text=text,
                    candidates=[replace(c) for c in g.candidates],
                )
            )
        suite.datasets[spec.type] = Dataset(split=dataset.split, groups=groups)
        suite.skipped[spec.type] = skipped
        if skipped:
            logger.info("%s: %d of %d queries left unchanged", spec.type, skipped, len(groups))
    return suite
