"""Training loop, evaluation runner, gradient checker, and embedding dump.

One optimizer step consumes ``grad_accumulation_steps`` batches: each batch
is encoded, the ranking hinge is applied per ranking block (mean over
blocks), triplets are mined over the batch embeddings and the triplet loss
is averaged over them, the two terms are combined with static or dynamic
weights, and exact gradients are accumulated. Accumulated gradients are
averaged before the update, so step size does not depend on the window
length. The dynamic-weighting step index counts completed optimizer steps.

Runs are deterministic: (config, seed, data) fixes batch order, mining,
initialization, and therefore the entire loss history and checkpoint.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .batching import POSITIVE_CLASS, Batch, BatchSpec, iter_batches, iter_contrastive_batches
from .corpus import Dataset
from .encoder import (
    Checkpoint,
    EncoderConfig,
    EncoderParams,
    PairTokens,
    Vocabulary,
    backward,
    encode_pair,
    init_params,
    score,
)
from .losses import LossConfig, combined_loss, dwa_weights, l2_distance, mhl, tml
from .metrics import MetricsReport, RankedList, aggregate, rank_candidates
from .mining import MinerConfig, Triplet, mine

logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")
REDUCTIONS = ("mean", "sum")

HISTORY_COLUMNS = ("step", "epoch", "l_rank", "l_con", "l_combined", "w1", "w2")
EPOCH_COLUMNS = ("epoch", "val_map", "separation")


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    batch: BatchSpec = field(default_factory=BatchSpec)
    miner: MinerConfig = field(default_factory=MinerConfig)
    learning_rate: float = 5e-6
    max_epochs: int = 10
    grad_accumulation_steps: int = 8
    early_stop_patience: int = 3
    embedding_dim: int = 64
    hidden_dim: int = 64
    output_dim: int = 32
    max_len: int = 256
    seed: int = 0
    optimizer: str = "adam"
    contrastive_reduction: str = "mean"

    def validate(self) -> None:
        self.loss.validate()
        self.batch.validate()
        self.miner.validate()
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.grad_accumulation_steps < 1:
            raise ValueError("grad_accumulation_steps must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        for name in ("embedding_dim", "hidden_dim", "output_dim", "max_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}, expected one of {OPTIMIZERS}")
        if self.contrastive_reduction not in REDUCTIONS:
            raise ValueError(
                f"unknown contrastive_reduction {self.contrastive_reduction!r}, "
                f"expected one of {REDUCTIONS}"
            )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            embedding_dim=self.embedding_dim,
            hidden_dim=self.hidden_dim,
            output_dim=self.output_dim,
            max_len=self.max_len,
            seed=self.seed,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        sections = {"loss": LossConfig, "batch": BatchSpec, "miner": MinerConfig}
        kwargs: dict = {}
        for name, section_cls in sections.items():
            raw = data.pop(name, {})
            if not isinstance(raw, dict):
                raise ValueError(f"config section {name!r} must be an object")
            kwargs[name] = _construct(section_cls, raw, name)
        scalar_fields = {f.name for f in fields(cls)} - set(sections)
        unknown = set(data) - scalar_fields
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(data)
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def from_json(cls, path: str | Path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, dict):
            raise ValueError("config file must contain a json object")
        return cls.from_dict(data)


def _construct(cls, data: dict, name: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"unknown keys in {name!r} config: {sorted(unknown)}")
    return cls(**data)


@dataclass
class StepRecord:
    step: int
    epoch: int
    l_rank: float
    l_con: float
    l_combined: float
    w1: float
    w2: float


@dataclass
class EpochStats:
    epoch: int
    val_map: float
    separation: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[StepRecord]
    epochs: list[EpochStats]
    best_epoch: int
    best_map: float


def dataset_texts(dataset: Dataset) -> Iterable[str]:
    """Every text the vocabulary must cover, reformulations included."""
    for g in dataset.groups:
        yield g.query_text
        for texts in g.reformulations.values():
            yield from texts
        for c in g.candidates:
            yield c.text


def batch_tokens(batch: Batch, vocab: Vocabulary) -> list[PairTokens]:
    return [(vocab.encode(p.query_text), vocab.encode(p.doc_text)) for p in batch.pairs]


def embed_batch(
    params: EncoderParams, tokens: Sequence[PairTokens], max_len: int
) -> list[np.ndarray]:
    return [encode_pair(params, q, d, max_len) for q, d in tokens]


def ranking_loss(
    scores: Sequence[float], batch: Batch, hinge_margin: float
) -> tuple[float, list[float]]:
    """Mean hinge over ranking blocks; a one-negative block is the plain hinge."""
    d_scores = [0.0] * len(scores)
    if not batch.blocks:
        return 0.0, d_scores
    total = 0.0
    scale = 1.0 / len(batch.blocks)
    for block in batch.blocks:
        s_negs = [scores[i] for i in block.negatives]
        value, d_pos, d_negs = mhl(scores[block.positive], s_negs, hinge_margin)
        total += value
        d_scores[block.positive] += scale * d_pos
        for i, g in zip(block.negatives, d_negs):
            d_scores[i] += scale * g
    return total * scale, d_scores


def contrastive_loss(
    embeddings: Sequence[np.ndarray],
    triplets: Sequence[Triplet],
    triplet_margin: float,
    reduction: str = "mean",
) -> tuple[float, list[np.ndarray]]:
    """Triplet loss reduced over mined triplets; zero triplets give zero loss."""
    d_embeddings = [np.zeros_like(e) for e in embeddings]
    if not triplets:
        return 0.0, d_embeddings
    scale = 1.0 / len(triplets) if reduction == "mean" else 1.0
    total = 0.0
    for t in triplets:
        value, d_a, d_p, d_n = tml(
            embeddings[t.anchor], embeddings[t.positive], embeddings[t.negative], triplet_margin
        )
        total += value
        d_embeddings[t.anchor] += scale * d_a
        d_embeddings[t.positive] += scale * d_p
        d_embeddings[t.negative] += scale * d_n
    return total * scale, d_embeddings


@dataclass
class BatchLosses:
    l_rank: float
    l_con: float
    d_scores: list[float]
    d_embeddings: list[np.ndarray]
    num_triplets: int


def compute_batch_losses(
    params: EncoderParams,
    tokens: Sequence[PairTokens],
    batch: Batch,
    triplets: Sequence[Triplet],
    config: TrainConfig,
) -> BatchLosses:
    """Forward pass plus per-pair upstream gradients for one batch.

    ``triplets`` is the already-mined set: mining decisions do not receive
    gradients, so callers freeze them before differentiating.
    """
    embeddings = embed_batch(params, tokens, config.max_len)
    scores = [score(params, e) for e in embeddings]
    l_rank, d_scores = ranking_loss(scores, batch, config.loss.hinge_margin)
    l_con, d_embeddings = contrastive_loss(
        embeddings, triplets, config.loss.triplet_margin, config.contrastive_reduction
    )
    return BatchLosses(
        l_rank=l_rank,
        l_con=l_con,
        d_scores=d_scores,
        d_embeddings=d_embeddings,
        num_triplets=len(triplets),
    )


def separation_statistic(
    params: EncoderParams,
    tokens: Sequence[PairTokens],
    classes: Sequence[str],
    max_len: int,
) -> float:
    """Mean inter-class distance minus mean positive intra-class distance.

    NaN when the probe batch lacks either two positives or one negative.
    """
    embeddings = embed_batch(params, tokens, max_len)
    pos = [e for e, c in zip(embeddings, classes) if c == POSITIVE_CLASS]
    neg = [e for e, c in zip(embeddings, classes) if c != POSITIVE_CLASS]
    if len(pos) < 2 or not neg:
        return math.nan
    inter = [l2_distance(p, n) for p in pos for n in neg]
    intra = [l2_distance(pos[i], pos[j]) for i in range(len(pos)) for j in range(i + 1, len(pos))]
    return sum(inter) / len(inter) - sum(intra) / len(intra)


class Optimizer:
    """Adam (bias-corrected) or plain SGD over EncoderParams."""

    def __init__(self, kind: str, params: EncoderParams, learning_rate: float):
        if kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.learning_rate = learning_rate
        self.beta1 = 0.9
        self.beta2 = 0.999
        self.eps = 1e-8
        self.t = 0
        if kind == "adam":
            self.m = params.zeros_like()
            self.v = params.zeros_like()

    def step(self, params: EncoderParams, grads: EncoderParams) -> None:
        self.t += 1
        if self.kind == "sgd":
            for (_, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
                p -= self.learning_rate * g
            return
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for (name, p), (_, g) in zip(params.named_arrays(), grads.named_arrays()):
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _probe_batch(dataset: Dataset, spec: BatchSpec) -> Batch | None:
    probe_spec = BatchSpec(
        regime="contrastive",
        positives_per_batch=max(2, spec.positives_per_batch),
        negatives_per_query=spec.negatives_per_query,
        similarity="relevance_label",
        seed=spec.seed,
    )
    return next(iter_contrastive_batches(dataset, probe_spec, epoch=0), None)


def _step_weights(config: TrainConfig, optimizer_step: int) -> tuple[float, float]:
    if config.loss.dwa_enabled:
        return dwa_weights(optimizer_step, config.loss.dwa_period)
    return config.loss.w1, config.loss.w2


def train(config: TrainConfig, train_data: Dataset, valid_data: Dataset) -> TrainResult:
    """Run the full loop and return the best checkpoint plus histories."""
    config.validate()
    if not train_data.groups or not valid_data.groups:
        raise ValueError("train: both datasets must be non-empty")

    vocab = Vocabulary.build(dataset_texts(train_data))
    params = init_params(config.encoder_config(), len(vocab))
    optimizer = Optimizer(config.optimizer, params, config.learning_rate)

    probe = _probe_batch(train_data, config.batch)
    probe_tokens = batch_tokens(probe, vocab) if probe is not None else []
    probe_classes = probe.classes if probe is not None else []

    def probe_separation() -> float:
        if probe is None:
            return math.nan
        return separation_statistic(params, probe_tokens, probe_classes, config.max_len)

    history: list[StepRecord] = []
    epochs: list[EpochStats] = [
        EpochStats(
            epoch=0,
            val_map=evaluate_params(params, vocab, config.max_len, valid_data).map,
            separation=probe_separation(),
        )
    ]

    best_map = -math.inf
    best_epoch = 0
    best_params = params.copy()
    epochs_since_best = 0

    window = params.zeros_like()
    window_count = 0
    window_rank = 0.0
    window_con = 0.0
    window_combined = 0.0

    def flush_window(epoch: int) -> None:
        nonlocal window, window_count, window_rank, window_con, window_combined
        if window_count == 0:
            return
        for _, g in window.named_arrays():
            g /= window_count
        try:
            window.validate_finite()
        except ValueError as exc:
            raise RuntimeError(
                f"non-finite gradient at optimizer step {optimizer.t}, epoch {epoch}: {exc}"
            ) from exc
        logged_step = optimizer.t
        optimizer.step(params, window)
        w1, w2 = _step_weights(config, logged_step)
        history.append(
            StepRecord(
                step=logged_step,
                epoch=epoch,
                l_rank=window_rank / window_count,
                l_con=window_con / window_count,
                l_combined=window_combined / window_count,
                w1=w1,
                w2=w2,
            )
        )
        window = params.zeros_like()
        window_count = 0
        window_rank = 0.0
        window_con = 0.0
        window_combined = 0.0

    for epoch in range(1, config.max_epochs + 1):
        miner_rng = random.Random(config.seed * 7_777_777 + epoch)
        num_batches = 0
        for batch in iter_batches(train_data, config.batch, epoch):
            num_batches += 1
            w1, w2 = _step_weights(config, optimizer.t)
            tokens = batch_tokens(batch, vocab)
            if config.loss.contrastive_active:
                embeddings = embed_batch(params, tokens, config.max_len)
                triplets = mine(embeddings, batch.classes, config.miner, rng=miner_rng)
                if not triplets:
                    logger.debug("epoch %d: batch with zero mined triplets", epoch)
            else:
                triplets = []
            try:
                result = compute_batch_losses(params, tokens, batch, triplets, config)
                l_combined = combined_loss(result.l_rank, result.l_con, w1, w2)
            except ValueError as exc:
                raise RuntimeError(
                    f"aborting at optimizer step {optimizer.t}, epoch {epoch}: {exc}"
                ) from exc
            if not math.isfinite(l_combined):
                raise RuntimeError(
                    f"non-finite loss at optimizer step {optimizer.t}, epoch {epoch}"
                )
            d_scores = [w1 * g for g in result.d_scores]
            d_embeddings = [w2 * g for g in result.d_embeddings]
            grads = backward(params, tokens, d_embeddings, d_scores, config.max_len)
            for (_, acc), (_, g) in zip(window.named_arrays(), grads.named_arrays()):
                acc += g
            window_count += 1
            window_rank += result.l_rank
            window_con += result.l_con
            window_combined += l_combined
            if window_count == config.grad_accumulation_steps:
                flush_window(epoch)
        if num_batches == 0:
            raise ValueError("empty epoch: no eligible batches in the training data")
        flush_window(epoch)

        val_map = evaluate_params(params, vocab, config.max_len, valid_data).map
        epochs.append(EpochStats(epoch=epoch, val_map=val_map, separation=probe_separation()))
        if val_map > best_map:
            best_map = val_map
            best_epoch = epoch
            best_params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        logger.info(
            "epoch %d: val MAP %.4f (best %.4f at epoch %d)", epoch, val_map, best_map, best_epoch
        )
        if epochs_since_best >= config.early_stop_patience:
            logger.info("stopping early after %d epochs without improvement", epochs_since_best)
            break

    checkpoint = Checkpoint(config=config.encoder_config(), vocab=vocab, params=best_params)
    return TrainResult(
        checkpoint=checkpoint,
        history=history,
        epochs=epochs,
        best_epoch=best_epoch,
        best_map=best_map,
    )


def rank_dataset(
    params: EncoderParams, vocab: Vocabulary, max_len: int, dataset: Dataset
) -> list[RankedList]:
    ranked = []
    for g in dataset.groups:
        q_ids = vocab.encode(g.query_text)
        scores = {}
        labels = {}
        for c in g.candidates:
            emb = encode_pair(params, q_ids, vocab.encode(c.text), max_len)
            scores[c.doc_id] = score(params, emb)
            labels[c.doc_id] = c.label
        ranked.append(rank_candidates(scores, labels, query_id=g.query_id))
    return ranked


def evaluate_params(
    params: EncoderParams,
    vocab: Vocabulary,
    max_len: int,
    dataset: Dataset,
    ks: Sequence[int] = (1,),
) -> MetricsReport:
    return aggregate(rank_dataset(params, vocab, max_len, dataset), ks)


def evaluate(checkpoint: Checkpoint, dataset: Dataset, ks: Sequence[int] = (1,)) -> MetricsReport:
    """Score, rank, and aggregate every group with a trained checkpoint."""
    checkpoint.validate()
    return evaluate_params(
        checkpoint.params, checkpoint.vocab, checkpoint.config.max_len, dataset, ks
    )


def grad_check(
    config: TrainConfig,
    dataset: Dataset,
    num_probes: int = 200,
    epsilon: float = 1e-4,
    weight_step: int = 1,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    The combined loss of one fixed batch is differentiated twice: once with
    the hand-derived backward pass, once by perturbing ``num_probes``
    randomly chosen parameter coordinates by +/- epsilon. Mined triplets are
    frozen from the unperturbed forward pass. ``weight_step`` selects the
    dynamic-weighting step when dwa is enabled.
    """
    config.validate()
    vocab = Vocabulary.build(dataset_texts(dataset))
    params = init_params(config.encoder_config(), len(vocab))
    batch = next(iter_batches(dataset, config.batch, epoch=0), None)
    if batch is None:
        raise ValueError("grad_check: dataset yields no batches")
    tokens = batch_tokens(batch, vocab)
    w1, w2 = _step_weights(config, weight_step)

    if config.loss.contrastive_active:
        embeddings = embed_batch(params, tokens, config.max_len)
        triplets = mine(embeddings, batch.classes, config.miner, rng=random.Random(config.seed))
    else:
        triplets = []

    result = compute_batch_losses(params, tokens, batch, triplets, config)
    d_scores = [w1 * g for g in result.d_scores]
    d_embeddings = [w2 * g for g in result.d_embeddings]
    analytic = backward(params, tokens, d_embeddings, d_scores, config.max_len)

    def loss_at(p: EncoderParams) -> float:
        r = compute_batch_losses(p, tokens, batch, triplets, config)
        return combined_loss(r.l_rank, r.l_con, w1, w2)

    arrays = [(name, arr) for name, arr in params.named_arrays()]
    sizes = [arr.size for _, arr in arrays]
    total = sum(sizes)
    rng = np.random.default_rng(config.seed + 1)
    chosen = rng.choice(total, size=min(num_probes, total), replace=False)

    max_rel = 0.0
    for flat_index in sorted(int(i) for i in chosen):
        remaining = flat_index
        for (name, arr), size in zip(arrays, sizes):
            if remaining < size:
                break
            remaining -= size
        original = arr.flat[remaining]
        arr.flat[remaining] = original + epsilon
        plus = loss_at(params)
        arr.flat[remaining] = original - epsilon
        minus = loss_at(params)
        arr.flat[remaining] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        analytic_value = getattr(analytic, name).flat[remaining]
        rel = abs(analytic_value - numeric) / max(abs(analytic_value), abs(numeric), 1e-8)
        max_rel = max(max_rel, rel)
    return max_rel


def dump_embeddings(checkpoint: Checkpoint, dataset: Dataset, path: str | Path) -> int:
    """Write one tsv row per pair: query_id, doc_id, label, embedding dims."""
    checkpoint.validate()
    d = checkpoint.config.output_dim
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(["query_id", "doc_id", "label", *[f"dim_{i}" for i in range(d)]]) + "\n")
        for g in dataset.groups:
            q_ids = checkpoint.vocab.encode(g.query_text)
            for c in g.candidates:
                emb = encode_pair(
                    checkpoint.params,
                    q_ids,
                    checkpoint.vocab.encode(c.text),
                    checkpoint.config.max_len,
                )
                f.write(
                    "\t".join(
                        [g.query_id, c.doc_id, str(c.label), *[repr(float(x)) for x in emb]]
                    )
                    + "\n"
                )
                n += 1
    return n


def write_history(history: Sequence[StepRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in history:
            f.write(
                ",".join(
                    [
                        str(r.step),
                        str(r.epoch),
                        repr(r.l_rank),
                        repr(r.l_con),
                        repr(r.l_combined),
                        repr(r.w1),
                        repr(r.w2),
                    ]
                )
                + "\n"
            )


def write_epochs(epochs: Sequence[EpochStats], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(",".join(EPOCH_COLUMNS) + "\n")
        for e in epochs:
            f.write(",".join([str(e.epoch), repr(e.val_map), repr(e.separation)]) + "\n")
