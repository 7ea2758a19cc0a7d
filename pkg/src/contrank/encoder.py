"""Pair encoder: tokenizer, vocabulary, forward pass, and exact backward pass.

A query-document pair is encoded as one fixed-dimension vector: the token id
sequence ``query ++ [SEP] ++ doc`` (truncated to ``max_len``) is embedded,
mean-pooled, and passed through two affine layers with a tanh in between.
A linear scorer maps that vector to a relevance score. Both the ranking
loss (over scores) and the contrastive loss (over embedding vectors)
backpropagate through here, so ``backward`` returns exact analytic
gradients for every parameter, accumulated over a batch.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD_TOKEN = "<pad>"
SEP_TOKEN = "<sep>"
OOV_TOKEN = "<oov>"

_PUNCT = set(string.punctuation)

CHECKPOINT_VERSION = 1

# (query ids, doc ids) for one pair, already vocabulary-encoded
PairTokens = tuple[Sequence[int], Sequence[int]]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, split punctuation off as own tokens."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        word: list[str] = []
        for ch in chunk:
            if ch in _PUNCT:
                if word:
                    tokens.append("".join(word))
                    word = []
                tokens.append(ch)
            else:
                word.append(ch)
        if word:
            tokens.append("".join(word))
    return tokens


class Vocabulary:
    """Dense token -> id map with PAD/SEP/OOV specials at fixed ids 0/1/2."""

    def __init__(self, tokens: Sequence[str]):
        """tokens: non-special tokens in id order (ids start after specials)."""
        self.id_to_token = [PAD_TOKEN, SEP_TOKEN, OOV_TOKEN, *tokens]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def sep_id(self) -> int:
        return 1

    @property
    def oov_id(self) -> int:
        return 2

    @classmethod
    def build(cls, texts: Iterable[str]) -> "Vocabulary":
        """Deterministic vocabulary over all tokens of the given texts."""
        seen: set[str] = set()
        for text in texts:
            seen.update(tokenize(text))
        seen -= {PAD_TOKEN, SEP_TOKEN, OOV_TOKEN}
        return cls(sorted(seen))

    def encode(self, text: str) -> list[int]:
        """Token id sequence for a text; unknown tokens map to OOV."""
        oov = self.oov_id
        return [self.token_to_id.get(t, oov) for t in tokenize(text)]


@dataclass
class EncoderConfig:
    embedding_dim: int = 64
    hidden_dim: int = 64
    output_dim: int = 32
    max_len: int = 256
    seed: int = 0


@dataclass
class EncoderParams:
    """All trainable tensors of the pair encoder and linear scorer."""

    embedding: np.ndarray  # (V, E)
    w1: np.ndarray         # (E, H)
    b1: np.ndarray         # (H,)
    w2: np.ndarray         # (H, d)
    b2: np.ndarray         # (d,)
    scorer_w: np.ndarray   # (d,)
    scorer_b: np.ndarray   # (1,)

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "embedding", self.embedding
        yield "w1", self.w1
        yield "b1", self.b1
        yield "w2", self.w2
        yield "b2", self.b2
        yield "scorer_w", self.scorer_w
        yield "scorer_b", self.scorer_b

    def zeros_like(self) -> "EncoderParams":
        return EncoderParams(**{name: np.zeros_like(a) for name, a in self.named_arrays()})

    def copy(self) -> "EncoderParams":
        return EncoderParams(**{name: a.copy() for name, a in self.named_arrays()})

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def output_dim(self) -> int:
        return self.w2.shape[1]

    def validate_finite(self) -> None:
        for name, a in self.named_arrays():
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in parameter {name}")


def init_params(config: EncoderConfig, vocab_size: int) -> EncoderParams:
    """Seeded uniform(-0.1, 0.1) initialization of all parameters."""
    rng = np.random.default_rng(config.seed)
    e, h, d = config.embedding_dim, config.hidden_dim, config.output_dim

    def u(*shape: int) -> np.ndarray:
        return rng.uniform(-0.1, 0.1, size=shape)

    return EncoderParams(
        embedding=u(vocab_size, e),
        w1=u(e, h),
        b1=u(h),
        w2=u(h, d),
        b2=u(d),
        scorer_w=u(d),
        scorer_b=u(1),
    )


def _pair_sequence(
    params: EncoderParams,
    query_ids: Sequence[int],
    doc_ids: Sequence[int],
    max_len: int,
    sep_id: int,
) -> list[int]:
    if len(query_ids) == 0 and len(doc_ids) == 0:
        raise ValueError("empty pair")
    seq = [*query_ids, sep_id, *doc_ids][:max_len]
    vocab_size = params.vocab_size
    for t in seq:
        if t < 0 or t >= vocab_size:
            raise ValueError(f"token id {t} out of range for vocabulary of size {vocab_size}")
    return seq


def encode_pair(
    params: EncoderParams,
    query_ids: Sequence[int],
    doc_ids: Sequence[int],
    max_len: int = 256,
    sep_id: int = 1,
) -> np.ndarray:
    """Embedding vector for one (query, doc) token id pair.

    Pure function of (params, inputs): mean-pooled token embeddings through
    affine -> tanh -> affine.
    """
    seq = _pair_sequence(params, query_ids, doc_ids, max_len, sep_id)
    x = params.embedding[seq].mean(axis=0)
    h = np.tanh(x @ params.w1 + params.b1)
    return h @ params.w2 + params.b2


def score(params: EncoderParams, embedding: np.ndarray) -> float:
    """Linear score scorer_w . embedding + scorer_b."""
    embedding = np.asarray(embedding, dtype=float)
    if embedding.shape != params.scorer_w.shape:
        raise ValueError(
            f"embedding dimension {embedding.shape} does not match scorer {params.scorer_w.shape}"
        )
    return float(embedding @ params.scorer_w + params.scorer_b[0])


def backward(
    params: EncoderParams,
    pairs: Sequence[PairTokens],
    d_embeddings: Sequence[np.ndarray],
    d_scores: Sequence[float],
    max_len: int = 256,
    sep_id: int = 1,
) -> EncoderParams:
    """Exact parameter gradients for a batch, accumulated by summation.

    ``d_embeddings[i]`` is dL/d(embedding of pair i) and ``d_scores[i]`` is
    dL/d(score of pair i); either may be zero. The forward intermediates are
    recomputed here, so callers stay stateless.
    """
    if not (len(pairs) == len(d_embeddings) == len(d_scores)):
        raise ValueError("backward: batch size mismatch between pairs and upstream gradients")
    grads = params.zeros_like()
    for (query_ids, doc_ids), d_emb, d_s in zip(pairs, d_embeddings, d_scores):
        seq = _pair_sequence(params, query_ids, doc_ids, max_len, sep_id)
        x = params.embedding[seq].mean(axis=0)
        h = np.tanh(x @ params.w1 + params.b1)
        v = h @ params.w2 + params.b2

        d_emb = np.asarray(d_emb, dtype=float)
        if d_emb.shape != v.shape:
            raise ValueError("backward: upstream embedding gradient has wrong dimension")

        grads.scorer_w += d_s * v
        grads.scorer_b += d_s
        g_v = d_emb + d_s * params.scorer_w

        grads.w2 += np.outer(h, g_v)
        grads.b2 += g_v
        g_h = params.w2 @ g_v
        g_z = g_h * (1.0 - h * h)

        grads.w1 += np.outer(x, g_z)
        grads.b1 += g_z
        g_x = (params.w1 @ g_z) / len(seq)
        for t in seq:
            grads.embedding[t] += g_x
    return grads


@dataclass
class Checkpoint:
    """Serializable bundle of encoder config, vocabulary, and parameters."""

    config: EncoderConfig
    vocab: Vocabulary
    params: EncoderParams

    def validate(self) -> None:
        c, p = self.config, self.params
        expected = {
            "embedding": (len(self.vocab), c.embedding_dim),
            "w1": (c.embedding_dim, c.hidden_dim),
            "b1": (c.hidden_dim,),
            "w2": (c.hidden_dim, c.output_dim),
            "b2": (c.output_dim,),
            "scorer_w": (c.output_dim,),
            "scorer_b": (1,),
        }
        for name, a in p.named_arrays():
            if a.shape != expected[name]:
                raise ValueError(
                    f"checkpoint mismatch: {name} has shape {a.shape}, expected {expected[name]}"
                )
        p.validate_finite()


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    ckpt.validate()
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "config": {
            "embedding_dim": ckpt.config.embedding_dim,
            "hidden_dim": ckpt.config.hidden_dim,
            "output_dim": ckpt.config.output_dim,
            "max_len": ckpt.config.max_len,
            "seed": ckpt.config.seed,
        },
        "vocab": ckpt.vocab.id_to_token[3:],
        "params": {name: a.tolist() for name, a in ckpt.params.named_arrays()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    config = EncoderConfig(**doc["config"])
    vocab = Vocabulary(doc["vocab"])
    raw = doc["params"]
    params = EncoderParams(**{name: np.asarray(raw[name], dtype=float) for name in raw})
    ckpt = Checkpoint(config=config, vocab=vocab, params=params)
    ckpt.validate()
    return ckpt
