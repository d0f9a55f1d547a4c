"""Supervised heads on top of sentence encoders.

Similarity regression uses a sparse two-point target distribution over the
integer scores 1..K and a KL loss; entailment and sentiment are softmax
classifiers trained with negative log-likelihood. Training can start from
scratch, regularize toward a pretrained ("universal") snapshot, or keep the
encoder frozen and fit the head only.
"""

import logging
import math
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, ClassVar, Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
from scipy.special import expit, softmax
from tqdm import tqdm

from config.settings import Arch, ModelConfig, SupervisedConfig, Task, TrainConfig, TrainMode
from core.encoders import Encoder, EncoderGrads, build_encoder, glorot
from core.errors import ContractError, DomainError, NumericError, ParasentError
from core.numerics import Rng, make_rng
from core.objective import batch_word_ids, regularize
from core.optim import clip_global, collect_updates, make_optimizer, train
from core.textdata import (
    EmbeddingTable,
    LabeledDataset,
    LabeledPairDataset,
    PairDataset,
    ScoredPairDataset,
    Tokens,
)

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
HEAD_PREFIX = "head."

Params = Dict[str, np.ndarray]


def pair_features(h_left: np.ndarray, h_right: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Elementwise product and absolute difference of two sentence vectors."""
    if np.shape(h_left) != np.shape(h_right):
        raise ContractError(f"sentence vectors differ in shape: {np.shape(h_left)} vs {np.shape(h_right)}")
    return h_left * h_right, np.abs(h_left - h_right)


def target_distribution(y: float, K: int) -> np.ndarray:
    """The distribution p over scores 1..K with r.p = y, putting mass on floor(y) and floor(y)+1."""
    if not 1.0 <= y <= K:
        raise DomainError(f"score {y} outside [1, {K}]")
    p = np.zeros(K)
    low = int(math.floor(y))
    p[low - 1] = low - y + 1.0
    if low < K:
        p[low] = y - low
    return p


def one_hot(label: int, n: int) -> np.ndarray:
    if not 0 <= label < n:
        raise DomainError(f"label {label} outside 0..{n - 1}")
    p = np.zeros(n)
    p[label] = 1.0
    return p


def kl_loss(p: np.ndarray, p_hat: np.ndarray) -> float:
    """KL(p || p_hat) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p.shape != p_hat.shape:
        raise ContractError(f"distributions differ in shape: {p.shape} vs {p_hat.shape}")
    if not np.all(np.isfinite(p_hat)) or np.any(p_hat <= 0.0):
        raise NumericError("predicted distribution has a nonpositive or non-finite entry")
    support = p > 0
    return float(np.sum(p[support] * np.log(p[support] / p_hat[support])))


def _floored(probs: np.ndarray) -> np.ndarray:
    return np.maximum(probs, PROB_FLOOR)


class Head(ABC):
    """Parameters of a task head, by name; ``weight_names`` are the ones lambda_s penalizes."""

    weight_names: ClassVar[Tuple[str, ...]]

    def __init__(self, params: Params):
        self.params = {name: np.array(value, dtype=np.float64) for name, value in params.items()}

    @property
    @abstractmethod
    def n_outputs(self) -> int:
        pass

    def snapshot(self) -> Params:
        return {name: p.copy() for name, p in self.params.items()}


class PairHead(Head):
    """Sigmoid hidden layer over pair features followed by a softmax."""

    weight_names = ("W_times", "W_plus", "W_p")
    default_outputs: ClassVar[int] = 3

    @classmethod
    def create(cls, input_dim: int, hidden_dim: int, rng: Rng, n_outputs: Optional[int] = None) -> "PairHead":
        n_outputs = n_outputs or cls.default_outputs
        return cls({
            "W_times": glorot(rng, hidden_dim, input_dim),
            "W_plus": glorot(rng, hidden_dim, input_dim),
            "b_h": np.zeros(hidden_dim),
            "W_p": glorot(rng, n_outputs, hidden_dim),
            "b_p": np.zeros(n_outputs),
        })

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int, n_outputs: Optional[int] = None) -> "PairHead":
        n_outputs = n_outputs or cls.default_outputs
        return cls({
            "W_times": np.zeros((hidden_dim, input_dim)),
            "W_plus": np.zeros((hidden_dim, input_dim)),
            "b_h": np.zeros(hidden_dim),
            "W_p": np.zeros((n_outputs, hidden_dim)),
            "b_p": np.zeros(n_outputs),
        })

    @property
    def n_outputs(self) -> int:
        return self.params["W_p"].shape[0]

    def forward(self, h_left: np.ndarray, h_right: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
        p = self.params
        if np.shape(h_left) != (p["W_times"].shape[1],):
            raise ContractError(f"head expects vectors of size {p['W_times'].shape[1]}, got {np.shape(h_left)}")
        h_times, h_plus = pair_features(h_left, h_right)
        h_s = expit(p["W_times"] @ h_times + p["W_plus"] @ h_plus + p["b_h"])
        probs = softmax(p["W_p"] @ h_s + p["b_p"])
        return probs, {"left": h_left, "right": h_right, "times": h_times, "plus": h_plus, "h_s": h_s}

    def backward(self, cache: Dict[str, Any], d_logits: np.ndarray) -> Tuple[Params, np.ndarray, np.ndarray]:
        p = self.params
        h_s = cache["h_s"]
        grads = {
            "W_p": np.outer(d_logits, h_s),
            "b_p": d_logits.copy(),
        }
        d_a = (p["W_p"].T @ d_logits) * h_s * (1.0 - h_s)
        grads["W_times"] = np.outer(d_a, cache["times"])
        grads["W_plus"] = np.outer(d_a, cache["plus"])
        grads["b_h"] = d_a
        d_times = p["W_times"].T @ d_a
        d_plus = p["W_plus"].T @ d_a
        sign = np.sign(cache["left"] - cache["right"])
        d_left = d_times * cache["right"] + d_plus * sign
        d_right = d_times * cache["left"] - d_plus * sign
        return grads, d_left, d_right


class SimilarityHead(PairHead):
    default_outputs = 5

    @property
    def K(self) -> int:
        return self.n_outputs

    @property
    def r(self) -> np.ndarray:
        return np.arange(1, self.K + 1, dtype=np.float64)


class EntailmentHead(PairHead):
    default_outputs = 3


class SentimentHead(Head):
    """Fully connected sigmoid layer, then a two-way softmax, over one sentence vector."""

    weight_names = ("W_s", "W_p")

    @classmethod
    def create(cls, input_dim: int, rng: Rng, width: Optional[int] = None) -> "SentimentHead":
        width = width or input_dim
        return cls({
            "W_s": glorot(rng, width, input_dim),
            "b_s": np.zeros(width),
            "W_p": glorot(rng, 2, width),
            "b_p": np.zeros(2),
        })

    @classmethod
    def zeros(cls, input_dim: int, width: Optional[int] = None) -> "SentimentHead":
        width = width or input_dim
        return cls({
            "W_s": np.zeros((width, input_dim)),
            "b_s": np.zeros(width),
            "W_p": np.zeros((2, width)),
            "b_p": np.zeros(2),
        })

    @property
    def n_outputs(self) -> int:
        return 2

    def forward(self, h: np.ndarray) -> Tuple[np.ndarray, Dict[str, Any]]:
        p = self.params
        if np.shape(h) != (p["W_s"].shape[1],):
            raise ContractError(f"head expects vectors of size {p['W_s'].shape[1]}, got {np.shape(h)}")
        s = expit(p["W_s"] @ h + p["b_s"])
        return softmax(p["W_p"] @ s + p["b_p"]), {"h": h, "s": s}

    def backward(self, cache: Dict[str, Any], d_logits: np.ndarray) -> Tuple[Params, np.ndarray]:
        p = self.params
        s = cache["s"]
        d_a = (p["W_p"].T @ d_logits) * s * (1.0 - s)
        grads = {
            "W_p": np.outer(d_logits, s),
            "b_p": d_logits.copy(),
            "W_s": np.outer(d_a, cache["h"]),
            "b_s": d_a,
        }
        return grads, p["W_s"].T @ d_a


ClassifierHead = Union[EntailmentHead, SentimentHead]


def similarity_forward(head: SimilarityHead, h_left: np.ndarray, h_right: np.ndarray) -> Tuple[np.ndarray, float]:
    """Predicted score distribution and its expectation r . p_hat."""
    probs, _ = head.forward(h_left, h_right)
    return probs, float(head.r @ probs)


def classify_loss(head: ClassifierHead, encodings: Union[np.ndarray, Tuple[np.ndarray, np.ndarray]],
                  label: int) -> float:
    """-log p_hat[label] for a sentence (sentiment) or a sentence pair (entailment)."""
    if not 0 <= label < head.n_outputs:
        raise DomainError(f"label {label} outside 0..{head.n_outputs - 1}")
    if isinstance(head, PairHead):
        probs, _ = head.forward(*encodings)
    else:
        probs, _ = head.forward(encodings)
    return -math.log(max(float(probs[label]), PROB_FLOOR))


def make_head(task: Task, input_dim: int, config: SupervisedConfig, rng: Rng) -> Head:
    task = Task(task)
    if task is Task.SIMILARITY:
        return SimilarityHead.create(input_dim, config.hidden_dim, rng, n_outputs=config.num_scores)
    if task is Task.ENTAILMENT:
        return EntailmentHead.create(input_dim, config.hidden_dim, rng)
    return SentimentHead.create(input_dim, rng)


@dataclass
class Example:
    left: Tokens
    right: Optional[Tokens]
    target: np.ndarray


SupervisedData = Union[ScoredPairDataset, LabeledPairDataset, LabeledDataset]


def build_examples(head: Head, data: SupervisedData) -> List[Example]:
    """Pair each input with its target distribution, checking the head fits the data."""
    if isinstance(head, SimilarityHead):
        if not isinstance(data, ScoredPairDataset):
            raise ContractError("a similarity head trains on scored pairs")
        return [Example(s1, s2, target_distribution(gold, head.K)) for s1, s2, gold in data.items]
    if isinstance(head, PairHead):
        if not isinstance(data, LabeledPairDataset):
            raise ContractError("an entailment head trains on labeled sentence pairs")
        return [Example(s1, s2, one_hot(label, head.n_outputs)) for s1, s2, label in data.items]
    if not isinstance(data, LabeledDataset):
        raise ContractError("a sentiment head trains on labeled sentences")
    return [Example(s, None, one_hot(label, head.n_outputs)) for s, label in data.items]


@dataclass
class UniversalPrior:
    """Snapshot of paraphrase-trained parameters that supervised training is pulled toward."""

    embeddings: np.ndarray
    comp: Params
    lambda_s: float
    lambda_w: float
    lambda_c: float

    @classmethod
    def capture(cls, encoder: Encoder, table: EmbeddingTable, lambda_s: float, lambda_w: float,
                lambda_c: float) -> "UniversalPrior":
        return cls(table.current.copy(), encoder.snapshot(), lambda_s, lambda_w, lambda_c)

    def check(self, encoder: Encoder, table: EmbeddingTable) -> None:
        if self.embeddings.shape != table.current.shape:
            raise ContractError(f"prior embeddings {self.embeddings.shape} do not match table {table.current.shape}")
        for name, p in encoder.params.items():
            if name not in self.comp or self.comp[name].shape != p.shape:
                raise ContractError(f"prior has no parameter {name!r} of shape {p.shape}")

    def initialize(self, encoder: Encoder, table: EmbeddingTable) -> None:
        self.check(encoder, table)
        table.current[...] = self.embeddings
        encoder.load_params(self.comp)


@dataclass
class SupervisedLoss:
    value: float
    data_loss: float
    encoder_grads: Optional[EncoderGrads]
    head_grads: Params


def _encode(encoder: Encoder, table: EmbeddingTable, tokens: Tokens, frozen: Optional[Dict]):
    if frozen is not None:
        return frozen[tuple(tokens)], None
    return encoder.forward(table, tokens)


def supervised_batch_loss(
    encoder: Encoder,
    table: EmbeddingTable,
    head: Head,
    batch: Sequence[Example],
    mode: TrainMode,
    config: SupervisedConfig,
    prior: Optional[UniversalPrior] = None,
    frozen: Optional[Dict[Tuple[str, ...], np.ndarray]] = None,
) -> SupervisedLoss:
    """Mean data loss over ``batch`` plus the mode's regularizers, with gradients.

    ``frozen`` maps token tuples to precomputed sentence vectors; when given
    (frozen mode) no encoder gradients are produced.
    """
    mode = TrainMode(mode)
    scale = 1.0 / len(batch)
    train_encoder = mode is not TrainMode.FROZEN
    if not train_encoder and frozen is None:
        frozen = {}
        for ex in batch:
            for tokens in (ex.left, ex.right):
                if tokens is not None:
                    frozen[tuple(tokens)] = encoder.encode(table, tokens)
    enc_grads = EncoderGrads.zeros(encoder) if train_encoder else None
    head_grads = {name: np.zeros_like(p) for name, p in head.params.items()}
    data_loss = 0.0
    for ex in batch:
        h_left, c_left = _encode(encoder, table, ex.left, None if train_encoder else frozen)
        if isinstance(head, PairHead):
            h_right, c_right = _encode(encoder, table, ex.right, None if train_encoder else frozen)
            probs, cache = head.forward(h_left, h_right)
            grads, d_left, d_right = head.backward(cache, probs - ex.target)
            vector_grads = [(c_left, d_left), (c_right, d_right)]
        else:
            probs, cache = head.forward(h_left)
            grads, d_left = head.backward(cache, probs - ex.target)
            vector_grads = [(c_left, d_left)]
        data_loss += kl_loss(ex.target, _floored(probs))
        for name, g in grads.items():
            head_grads[name] += scale * g
        if train_encoder:
            for cache_, d in vector_grads:
                enc_grads.accumulate(encoder.backward(table, cache_, d), scale)
    data_loss *= scale

    universal = mode is TrainMode.UNIVERSAL
    lambda_s = prior.lambda_s if universal else config.lambda_s
    penalty = 0.0
    for name in head.weight_names:
        w = head.params[name]
        penalty += lambda_s * float(np.sum(w * w))
        head_grads[name] += 2.0 * lambda_s * w
    if train_encoder:
        word_ids = batch_word_ids(table, [[ex.left] + ([ex.right] if ex.right is not None else []) for ex in batch])
        if universal:
            penalty += regularize(encoder, table, enc_grads, word_ids, prior.lambda_c, prior.lambda_w,
                                  comp_anchor=prior.comp, word_anchor=prior.embeddings)
        else:
            penalty += regularize(encoder, table, enc_grads, word_ids, config.lambda_c, config.lambda_w)
    return SupervisedLoss(data_loss + penalty, data_loss, enc_grads, head_grads)


@dataclass
class SupervisedResult:
    encoder: Encoder
    table: EmbeddingTable
    head: Head
    epoch_losses: List[float]


def _check_mode(mode: TrainMode, prior: Optional[UniversalPrior]) -> None:
    if mode is TrainMode.UNIVERSAL and prior is None:
        raise ContractError("universal mode needs a UniversalPrior")
    if mode is not TrainMode.UNIVERSAL and prior is not None:
        raise ContractError(f"a UniversalPrior only applies in universal mode, not {mode.value}")


def train_supervised(
    encoder: Encoder,
    table: EmbeddingTable,
    head: Head,
    data: SupervisedData,
    mode: TrainMode,
    config: SupervisedConfig,
    prior: Optional[UniversalPrior] = None,
    log_stream: Optional[TextIO] = None,
) -> SupervisedResult:
    """Fit ``head`` (and, unless frozen, the encoder and embeddings) on labeled data, in place."""
    mode = TrainMode(mode)
    _check_mode(mode, prior)
    if mode is TrainMode.UNIVERSAL:
        prior.initialize(encoder, table)
    examples = build_examples(head, data)
    if not examples:
        raise ContractError("no training examples")

    frozen = None
    if mode is TrainMode.FROZEN:
        frozen = {}
        for ex in examples:
            for tokens in (ex.left, ex.right):
                if tokens is not None and tuple(tokens) not in frozen:
                    frozen[tuple(tokens)] = encoder.encode(table, tokens)

    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    losses: List[float] = []
    logger.info("Training %s head (%s mode) on %d examples for %d epochs",
                type(head).__name__, mode.value, len(examples), config.epochs)
    for epoch in range(config.epochs):
        rng = make_rng(config.seed, epoch)
        order = rng.permutation(len(examples)).tolist()
        batches = [order[i:i + config.batch_size] for i in range(0, len(order), config.batch_size)]
        total = 0.0
        for b, indices in enumerate(tqdm(batches, desc=f"epoch {epoch + 1}", unit="batch", file=sys.stderr,
                                         disable=not config.show_progress, leave=False)):
            batch = [examples[i] for i in indices]
            try:
                loss = supervised_batch_loss(encoder, table, head, batch, mode, config, prior, frozen)
                if loss.encoder_grads is not None:
                    params, grads, rows = collect_updates(encoder, table, loss.encoder_grads, True)
                else:
                    params, grads, rows = {}, {}, {}
                for name, g in loss.head_grads.items():
                    params[HEAD_PREFIX + name] = head.params[name]
                    grads[HEAD_PREFIX + name] = g
                if config.clip_gradients:
                    grads = clip_global(grads, config.clip_threshold)
                optimizer.step(params, grads, rows)
            except ParasentError as e:
                raise type(e)(f"epoch {epoch + 1}, batch {b}: {e}") from e
            total += loss.data_loss * len(batch)
        losses.append(total / len(examples))
        logger.info("Epoch %d mean data loss %.6f", epoch + 1, losses[-1])
        if log_stream is not None:
            log_stream.write(f"{epoch + 1}\t{losses[-1]!r}\n")
    return SupervisedResult(encoder, table, head, losses)


def predict(encoder: Encoder, table: EmbeddingTable, head: Head, tokens: Tokens,
            other: Optional[Tokens] = None) -> np.ndarray:
    """Output distribution of ``head`` for one sentence or sentence pair."""
    h_left = encoder.encode(table, tokens)
    if isinstance(head, PairHead):
        return head.forward(h_left, encoder.encode(table, other))[0]
    return head.forward(h_left)[0]


def mean_kl(encoder: Encoder, table: EmbeddingTable, head: SimilarityHead, data: ScoredPairDataset) -> float:
    examples = build_examples(head, data)
    return float(np.mean([
        kl_loss(ex.target, _floored(predict(encoder, table, head, ex.left, ex.right))) for ex in examples
    ]))


def predicted_scores(encoder: Encoder, table: EmbeddingTable, head: SimilarityHead,
                     data: ScoredPairDataset) -> List[float]:
    return [float(head.r @ predict(encoder, table, head, s1, s2)) for s1, s2, _ in data.items]


def accuracy(encoder: Encoder, table: EmbeddingTable, head: Head,
             data: Union[LabeledDataset, LabeledPairDataset]) -> float:
    correct = 0
    for item in data.items:
        if isinstance(head, PairHead):
            s1, s2, label = item
            probs = predict(encoder, table, head, s1, s2)
        else:
            s, label = item
            probs = predict(encoder, table, head, s)
        correct += int(np.argmax(probs) == label)
    return correct / len(data.items)


def raise_dimension(
    table: EmbeddingTable,
    target_dim: int,
    pair_data: PairDataset,
    config: TrainConfig,
    log_stream: Optional[TextIO] = None,
) -> Tuple[Encoder, EmbeddingTable]:
    """Train a projection to ``target_dim`` > dim on paraphrase pairs for use as frozen features.

    The input table is not modified; the returned table is the one the
    projection was trained with.
    """
    if target_dim <= table.dim:
        raise DomainError(f"target dimension {target_dim} must exceed the embedding dimension {table.dim}")
    encoder = build_encoder(ModelConfig(arch=Arch.PROJ, out_dim=target_dim), table.dim, make_rng(config.seed))
    trained = train(encoder, table.copy(), pair_data, config, log_stream)
    logger.info("Trained %dx%d projection", target_dim, table.dim)
    return trained.encoder, trained.table
