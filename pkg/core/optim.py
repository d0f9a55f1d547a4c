import logging
import math
import sys
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List, Optional, TextIO, Tuple

import numpy as np
from tqdm import tqdm

from config.settings import OptimizerName, TrainConfig
from core.encoders import Encoder, EncoderGrads
from core.errors import ContractError, DataError, NumericError, ParasentError
from core.numerics import make_rng
from core.objective import batch_loss, encode_batch, partition, select_negatives
from core.textdata import EmbeddingTable, PairDataset

logger = logging.getLogger(__name__)

EPSILON = 1e-8
BETA1 = 0.9
BETA2 = 0.999
WORDS = "W_w"

Params = Dict[str, np.ndarray]
Rows = Dict[str, np.ndarray]


@dataclass
class AdaGradState:
    sums: Params = field(default_factory=dict)


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def _check_finite(grads: Params) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")


def _target(params: Params, grads: Params, rows: Optional[Rows], name: str):
    """Row indices of the slice being updated (``None`` for the whole array)."""
    idx = rows.get(name) if rows else None
    expected = params[name].shape if idx is None else (len(idx),) + params[name].shape[1:]
    if grads[name].shape != expected:
        raise ContractError(f"gradient for {name!r} has shape {grads[name].shape}, expected {expected}")
    return idx


def clip_global(grads: Params, threshold: float) -> Params:
    """Rescale every gradient by threshold/N when their joint L2 norm N exceeds threshold."""
    if threshold <= 0:
        raise ValueError("clipping threshold must be positive")
    _check_finite(grads)
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {name: g * scale for name, g in grads.items()}


def adagrad_step(state: AdaGradState, params: Params, grads: Params, lr: float,
                 rows: Optional[Rows] = None) -> Params:
    """G += g^2; p -= lr * g / (sqrt(G) + eps). Updates ``params`` in place.

    ``rows`` maps a parameter name to the row indices its gradient covers,
    for sparse embedding updates.
    """
    _check_finite(grads)
    for name, g in grads.items():
        idx = _target(params, grads, rows, name)
        acc = state.sums.setdefault(name, np.zeros_like(params[name]))
        if idx is None:
            acc += g * g
            params[name] -= lr * g / (np.sqrt(acc) + EPSILON)
        else:
            acc[idx] += g * g
            params[name][idx] -= lr * g / (np.sqrt(acc[idx]) + EPSILON)
    return params


def adam_step(state: AdamState, params: Params, grads: Params, lr: float,
              rows: Optional[Rows] = None) -> Params:
    """Bias-corrected Adam. Sparse rows are updated lazily under one shared step count."""
    _check_finite(grads)
    state.t += 1
    correct1 = 1.0 - BETA1 ** state.t
    correct2 = 1.0 - BETA2 ** state.t
    for name, g in grads.items():
        idx = _target(params, grads, rows, name)
        m = state.m.setdefault(name, np.zeros_like(params[name]))
        v = state.v.setdefault(name, np.zeros_like(params[name]))
        sl = slice(None) if idx is None else idx
        m_new = BETA1 * m[sl] + (1.0 - BETA1) * g
        v_new = BETA2 * v[sl] + (1.0 - BETA2) * g * g
        m[sl] = m_new
        v[sl] = v_new
        params[name][sl] -= lr * (m_new / correct1) / (np.sqrt(v_new / correct2) + EPSILON)
    return params


class Optimizer(ABC):
    """Owns the per-parameter state of one training run."""

    def __init__(self, lr: float):
        self.lr = lr

    @abstractmethod
    def step(self, params: Params, grads: Params, rows: Optional[Rows] = None) -> None:
        pass


class AdaGrad(Optimizer):
    def __init__(self, lr: float):
        super().__init__(lr)
        self.state = AdaGradState()

    def step(self, params, grads, rows=None):
        adagrad_step(self.state, params, grads, self.lr, rows)


class Adam(Optimizer):
    def __init__(self, lr: float):
        super().__init__(lr)
        self.state = AdamState()

    def step(self, params, grads, rows=None):
        adam_step(self.state, params, grads, self.lr, rows)


def make_optimizer(name: OptimizerName, lr: float) -> Optimizer:
    if OptimizerName(name) is OptimizerName.ADAM:
        return Adam(lr)
    return AdaGrad(lr)


def collect_updates(
    encoder: Encoder, table: EmbeddingTable, grads: EncoderGrads, update_embeddings: bool
) -> Tuple[Params, Params, Rows]:
    """Flatten encoder gradients into the (params, grads, rows) triple optimizers take."""
    params: Params = dict(encoder.params)
    flat: Params = dict(grads.params)
    rows: Rows = {}
    if update_embeddings and grads.words:
        ids = grads.word_ids()
        params[WORDS] = table.current
        flat[WORDS] = grads.word_matrix(ids, table.dim)
        rows[WORDS] = ids
    return params, flat, rows


@dataclass
class TrainResult:
    encoder: Encoder
    table: EmbeddingTable
    epoch_losses: List[float]


def train(
    encoder: Encoder,
    table: EmbeddingTable,
    dataset: PairDataset,
    config: TrainConfig,
    log_stream: Optional[TextIO] = None,
) -> TrainResult:
    """Minimize the margin objective over ``dataset`` in place.

    Each epoch reshuffles with a generator keyed by (seed, epoch), so the run
    is reproducible bit for bit. The mean unregularized loss of every epoch is
    written to ``log_stream`` as ``epoch<TAB>loss``.
    """
    if len(dataset) < 2:
        raise DataError("training needs at least two phrase pairs")
    optimizer = make_optimizer(config.optimizer, config.learning_rate)
    losses: List[float] = []
    n = len(dataset)
    logger.info(
        "Training %s encoder on %d pairs for %d epochs (batch %d, %s sampling, %s lr=%g)",
        encoder.arch.value, n, config.epochs, config.batch_size, config.sampling.value,
        config.optimizer.value, config.learning_rate,
    )
    for epoch in range(config.epochs):
        rng = make_rng(config.seed, epoch)
        batches = partition(rng.permutation(n).tolist(), config.batch_size)
        epoch_total = 0.0
        progress = tqdm(
            batches, desc=f"epoch {epoch + 1}", unit="batch", file=sys.stderr,
            disable=not config.show_progress, leave=False,
        )
        for b, indices in enumerate(progress):
            batch = [dataset.pairs[i] for i in indices]
            try:
                negatives = select_negatives(batch, config.sampling, rng, encode_batch(encoder, table, batch))
                loss = batch_loss(encoder, table, batch, negatives, config)
                params, grads, rows = collect_updates(encoder, table, loss.grads, config.update_embeddings)
                if config.clip_gradients:
                    grads = clip_global(grads, config.clip_threshold)
                optimizer.step(params, grads, rows)
            except ParasentError as e:
                raise type(e)(f"epoch {epoch + 1}, batch {b}: {e}") from e
            epoch_total += loss.unregularized * len(batch)
            progress.set_postfix(loss=f"{loss.unregularized:.4f}")
        mean_loss = epoch_total / n
        losses.append(mean_loss)
        logger.info("Epoch %d mean loss %.6f", epoch + 1, mean_loss)
        if log_stream is not None:
            log_stream.write(f"{epoch + 1}\t{mean_loss!r}\n")
            log_stream.flush()
    return TrainResult(encoder, table, losses)
