"""Margin-based paraphrase objective with in-batch negative examples."""

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from config.settings import Sampling, TrainConfig
from core.encoders import Encoder, EncoderGrads
from core.errors import ContractError, DegenerateError
from core.numerics import Rng, cosine, cosine_grad
from core.textdata import EmbeddingTable, PairDataset, Tokens


Pair = Tuple[Tokens, Tokens]
Encoded = List[Tuple[np.ndarray, np.ndarray]]


class NegativeChoice(NamedTuple):
    pair: int
    side: int
    by_max: bool


@dataclass
class BatchLoss:
    value: float
    unregularized: float
    grads: EncoderGrads
    active: List[Tuple[bool, bool]] = field(default_factory=list)


def partition(order: Sequence[int], batch_size: int) -> List[List[int]]:
    """Consecutive batches of ``batch_size``; the last partial batch is kept.

    A trailing batch of a single pair has no in-batch negative, so it is
    folded into the batch before it.
    """
    batches = [list(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def _phrase(tokens: Tokens) -> str:
    return " ".join(tokens)


def encode_batch(encoder: Encoder, table: EmbeddingTable, batch: Sequence[Pair]) -> Encoded:
    return [(encoder.encode(table, x1), encoder.encode(table, x2)) for x1, x2 in batch]


def _candidates(batch_len: int, anchor_index: int) -> List[Tuple[int, int]]:
    if batch_len < 2:
        raise ContractError("negative selection needs at least two pairs in the batch")
    return [(j, side) for j in range(batch_len) if j != anchor_index for side in (1, 2)]


def _max_candidate(batch: Sequence[Pair], encoded: Encoded, anchor_index: int, side: int) -> Tuple[int, int]:
    anchor = encoded[anchor_index][side - 1]
    best: Optional[Tuple[int, int]] = None
    best_cos = -np.inf
    for j, s in _candidates(len(batch), anchor_index):
        try:
            c = cosine(anchor, encoded[j][s - 1])
        except DegenerateError as e:
            raise DegenerateError(
                f"zero-norm encoding while comparing {_phrase(batch[anchor_index][side - 1])!r} "
                f"with {_phrase(batch[j][s - 1])!r}"
            ) from e
        if c > best_cos:
            best, best_cos = (j, s), c
    return best


def select_negative_max(batch: Sequence[Pair], anchor_index: int, side: int, encoded: Encoded) -> Tokens:
    """The most similar phrase from any other pair of the batch (either side).

    Ties go to the lowest (pair index, side).
    """
    j, s = _max_candidate(batch, encoded, anchor_index, side)
    return batch[j][s - 1]


def choose_negatives(
    batch: Sequence[Pair], encoded: Encoded, strategy: Sampling, rng: Rng
) -> List[Tuple[NegativeChoice, NegativeChoice]]:
    """Pick a negative for both sides of every pair.

    MIX flips a fair coin per pair and side: heads uses MAX, tails draws
    uniformly from the same candidate pool.
    """
    strategy = Sampling(strategy)
    choices = []
    for k in range(len(batch)):
        sides = []
        for side in (1, 2):
            if strategy is Sampling.MAX or rng.random() < 0.5:
                j, s = _max_candidate(batch, encoded, k, side)
                sides.append(NegativeChoice(j, s, True))
            else:
                pool = _candidates(len(batch), k)
                j, s = pool[int(rng.integers(len(pool)))]
                sides.append(NegativeChoice(j, s, False))
        choices.append((sides[0], sides[1]))
    return choices


def select_negatives(
    batch: Sequence[Pair], strategy: Sampling, rng: Rng, encoded: Encoded
) -> List[Pair]:
    return [
        (batch[c1.pair][c1.side - 1], batch[c2.pair][c2.side - 1])
        for c1, c2 in choose_negatives(batch, encoded, strategy, rng)
    ]


def batch_word_ids(table: EmbeddingTable, *phrase_lists: Sequence[Sequence[Tokens]]) -> np.ndarray:
    """Sorted unique embedding rows referenced by the given phrases."""
    ids = set()
    for phrases in phrase_lists:
        for group in phrases:
            for tokens in group:
                ids.update(int(i) for i in table.ids(tokens))
    return np.array(sorted(ids), dtype=np.int64)


def regularize(
    encoder: Encoder,
    table: EmbeddingTable,
    grads: EncoderGrads,
    word_ids: np.ndarray,
    lambda_c: float,
    lambda_w: float,
    comp_anchor: Optional[Dict[str, np.ndarray]] = None,
    word_anchor: Optional[np.ndarray] = None,
) -> float:
    """Add the two L2 terms to ``grads`` and return their value.

    lambda_c * ||W_c - anchor||^2 over every compositional parameter and
    lambda_w * ||W_w - W_w_initial||^2 over the rows in ``word_ids`` only.
    """
    value = 0.0
    if lambda_c > 0 and encoder.params:
        anchor = comp_anchor if comp_anchor is not None else encoder.anchor()
        for name, p in encoder.params.items():
            diff = p - anchor[name]
            value += lambda_c * float(np.sum(diff * diff))
            grads.params[name] += 2.0 * lambda_c * diff
    if lambda_w > 0 and len(word_ids):
        base = table.initial if word_anchor is None else word_anchor
        diff = table.current[word_ids] - base[word_ids]
        value += lambda_w * float(np.sum(diff * diff))
        grads.add_word_rows(word_ids, 2.0 * lambda_w * diff)
    return value


def _require_norm(vec: np.ndarray, tokens: Tokens, pair_index: int) -> None:
    if not np.any(vec):
        raise DegenerateError(f"pair {pair_index}: phrase {_phrase(tokens)!r} encodes to the zero vector")


def batch_loss(
    encoder: Encoder,
    table: EmbeddingTable,
    batch: Sequence[Pair],
    negatives: Sequence[Pair],
    config: TrainConfig,
) -> BatchLoss:
    """Mean over the batch of the two hinge terms per pair, plus both regularizers."""
    if len(negatives) != len(batch):
        raise ContractError(f"{len(negatives)} negative pairs for a batch of {len(batch)}")
    grads = EncoderGrads.zeros(encoder)
    delta = config.delta
    scale = 1.0 / len(batch)
    total = 0.0
    active = []
    for k, ((x1, x2), (t1, t2)) in enumerate(zip(batch, negatives)):
        phrases = (x1, x2, t1, t2)
        passes = [encoder.forward(table, tokens) for tokens in phrases]
        for tokens, (vec, _) in zip(phrases, passes):
            _require_norm(vec, tokens, k)
        g1, g2, n1, n2 = (vec for vec, _ in passes)

        cos_gold, d_g1, d_g2 = cosine_grad(g1, g2)
        cos_neg1, d1_g1, d1_n1 = cosine_grad(g1, n1)
        cos_neg2, d2_g2, d2_n2 = cosine_grad(g2, n2)
        hinge1 = delta - cos_gold + cos_neg1
        hinge2 = delta - cos_gold + cos_neg2
        on1, on2 = hinge1 > 0, hinge2 > 0
        active.append((bool(on1), bool(on2)))
        if not (on1 or on2):
            continue

        out = [np.zeros_like(g1), np.zeros_like(g2), np.zeros_like(n1), np.zeros_like(n2)]
        if on1:
            total += hinge1
            out[0] += d1_g1 - d_g1
            out[1] -= d_g2
            out[2] += d1_n1
        if on2:
            total += hinge2
            out[0] -= d_g1
            out[1] += d2_g2 - d_g2
            out[3] += d2_n2
        for (_, cache), out_grad in zip(passes, out):
            if np.any(out_grad):
                grads.accumulate(encoder.backward(table, cache, out_grad), scale)

    unregularized = total * scale
    word_ids = batch_word_ids(table, batch, negatives)
    penalty = regularize(encoder, table, grads, word_ids, config.lambda_c, config.lambda_w)
    return BatchLoss(unregularized + penalty, unregularized, grads, active)


def fit_diagnostic(
    encoder: Encoder, table: EmbeddingTable, batch: Sequence[Pair], negatives: Sequence[Pair]
) -> float:
    """Mean of 2 cos(g1, g2) - cos(n1, g1) - cos(n2, g2) over the batch."""
    if not batch or len(negatives) != len(batch):
        raise ContractError("fit diagnostic needs one negative pair per gold pair")
    total = 0.0
    for (x1, x2), (t1, t2) in zip(batch, negatives):
        g1, g2 = encoder.encode(table, x1), encoder.encode(table, x2)
        n1, n2 = encoder.encode(table, t1), encoder.encode(table, t2)
        total += 2.0 * cosine(g1, g2) - cosine(n1, g1) - cosine(n2, g2)
    return total / len(batch)


def mean_fit_diagnostic(
    encoder: Encoder,
    table: EmbeddingTable,
    dataset: PairDataset,
    batch_size: int,
    sampling: Sampling,
    rng: Rng,
) -> float:
    """Fit diagnostic averaged over every pair of ``dataset``, batched in file order."""
    if len(dataset) < 2:
        raise ContractError("fit diagnostic needs at least two pairs")
    total = 0.0
    for indices in partition(range(len(dataset)), batch_size):
        batch = [dataset.pairs[i] for i in indices]
        negatives = select_negatives(batch, sampling, rng, encode_batch(encoder, table, batch))
        total += fit_diagnostic(encoder, table, batch, negatives) * len(batch)
    return total / len(dataset)
