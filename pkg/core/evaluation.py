import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from config.settings import ModelConfig, TrainConfig
from core.encoders import Encoder, build_encoder
from core.errors import ContractError, DegenerateError, DomainError, EmptyInputError
from core.numerics import cosine, make_rng, pearson, spearman
from core.optim import train
from core.textdata import EmbeddingTable, PairDataset, ScoredPairDataset, Tokens

logger = logging.getLogger(__name__)

BIN_LABELS = ("<=4", "5", "6", "7", "8", "9", ">=10")
MIN_CURVE_SIZE = 10


class CurveOrder(str, Enum):
    ORDERED = "ordered"
    RANDOM = "random"


@dataclass
class BinReport:
    label: str
    pearson: Optional[float]
    n: int


@dataclass
class EvalReport:
    pearson: float
    spearman: float
    n: int
    predictions: List[float] = field(default_factory=list, repr=False)
    bins: Optional[List[BinReport]] = None

    def rows(self, include_spearman: bool = True) -> List[str]:
        """``metric TAB value`` lines, bins as ``bin TAB pearson TAB n``."""
        lines = [f"pearson\t{self.pearson!r}"]
        if include_spearman:
            lines.append(f"spearman\t{self.spearman!r}")
        lines.append(f"n\t{self.n}")
        for b in self.bins or []:
            value = "NA" if b.pearson is None else repr(b.pearson)
            lines.append(f"{b.label}\t{value}\t{b.n}")
        return lines


def predict(encoder: Encoder, table: EmbeddingTable, data: ScoredPairDataset) -> List[float]:
    """Cosine of the two encodings for every pair."""
    predictions = []
    for i, (s1, s2, _) in enumerate(data.items):
        try:
            predictions.append(cosine(encoder.encode(table, s1), encoder.encode(table, s2)))
        except DegenerateError as e:
            raise DegenerateError(f"pair {i}: {e}") from e
    return predictions


def evaluate(encoder: Encoder, table: EmbeddingTable, data: ScoredPairDataset) -> EvalReport:
    if len(data) == 0:
        raise EmptyInputError("evaluation dataset is empty")
    predictions = predict(encoder, table, data)
    gold = data.gold
    report = EvalReport(pearson(predictions, gold), spearman(predictions, gold), len(data), predictions)
    logger.info("Evaluated %d pairs: pearson %.4f", report.n, report.pearson)
    return report


def length_bin(s1: Tokens, s2: Tokens) -> str:
    longest = max(len(s1), len(s2))
    if longest <= 4:
        return BIN_LABELS[0]
    if longest >= 10:
        return BIN_LABELS[-1]
    return str(longest)


def length_binned(encoder: Encoder, table: EmbeddingTable, data: ScoredPairDataset,
                  predictions: Optional[Sequence[float]] = None) -> List[BinReport]:
    """Pearson per bin of max(len(s1), len(s2)); bins with fewer than two pairs get ``None``."""
    if predictions is None:
        predictions = predict(encoder, table, data)
    grouped: Dict[str, Tuple[List[float], List[float]]] = {label: ([], []) for label in BIN_LABELS}
    for (s1, s2, gold), pred in zip(data.items, predictions):
        preds, golds = grouped[length_bin(s1, s2)]
        preds.append(pred)
        golds.append(gold)
    reports = []
    for label in BIN_LABELS:
        preds, golds = grouped[label]
        value = None
        if len(preds) >= 2:
            try:
                value = pearson(preds, golds)
            except DegenerateError:
                logger.warning("Bin %s has zero-variance data; pearson not computable", label)
        reports.append(BinReport(label, value, len(preds)))
    return reports


def _occurrences(data: Union[PairDataset, ScoredPairDataset]) -> Iterable[str]:
    rows = data.pairs if isinstance(data, PairDataset) else data.items
    for row in rows:
        for tokens in row[:2]:
            yield from tokens


def oov_fraction(data: Union[PairDataset, ScoredPairDataset], reference_counts: Mapping[str, int],
                 threshold: int) -> float:
    """Share of token occurrences whose reference count is below ``threshold``."""
    if threshold < 1:
        raise DomainError("OOV threshold must be at least 1")
    total = rare = 0
    for token in _occurrences(data):
        total += 1
        rare += reference_counts.get(token, 0) < threshold
    return rare / total if total else 0.0


def word_importance(table: EmbeddingTable) -> Dict[str, float]:
    """L1 norm of every word vector."""
    weights = np.abs(table.current).sum(axis=1)
    return {token: float(w) for token, w in zip(table.vocab.tokens, weights)}


def reweight(base: EmbeddingTable, weights: Mapping[str, float]) -> EmbeddingTable:
    """Table with every row scaled by its token's weight (1 when missing)."""
    scale = np.array([weights.get(token, 1.0) for token in base.vocab.tokens], dtype=np.float64)
    scaled = base.current * scale[:, None]
    return EmbeddingTable(base.vocab, scaled, scaled.copy(), base.synthetic_unk)


def frequency_weights(counts: Mapping[str, int], total: int,
                      vocab: Optional[Iterable[str]] = None) -> Dict[str, float]:
    """total / max(count, 1) for every counted token and every token of ``vocab``."""
    if total <= 0:
        raise DomainError("total token count must be positive")
    tokens = set(counts)
    if vocab is not None:
        tokens.update(vocab)
    return {token: total / max(counts.get(token, 0), 1) for token in tokens}


def nearest_neighbors(table: EmbeddingTable, token: str, k: int, restrict: int,
                      counts: Mapping[str, int]) -> List[Tuple[str, float]]:
    """Top-``k`` tokens by cosine among the ``restrict`` most frequent ones.

    Frequency ties fall back to vocabulary order, as do similarity ties.
    Unknown queries use the unk row; the query itself and zero rows are skipped.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    if not 1 <= restrict <= len(table):
        raise DomainError(f"restrict must be between 1 and the vocabulary size {len(table)}")
    query_id = table.vocab.id(token)
    query = table.current[query_id]
    if not np.any(query):
        raise DegenerateError(f"query {token!r} has a zero vector")
    tokens = table.vocab.tokens
    common = sorted(range(len(table)), key=lambda i: (-counts.get(tokens[i], 0), i))[:restrict]
    scored = []
    for i in common:
        if i == query_id or not np.any(table.current[i]):
            continue
        scored.append((-cosine(query, table.current[i]), i))
    scored.sort()
    return [(tokens[i], -neg) for neg, i in scored[:k]]


def curve_sizes(n: int) -> List[int]:
    """n, n//2, n//4, ... down to the last size of at least ten (n itself is always kept)."""
    if n < 1:
        raise EmptyInputError("training set is empty")
    sizes = [n]
    size = n // 2
    while size >= MIN_CURVE_SIZE:
        sizes.append(size)
        size //= 2
    return sizes


def mean_pearson(encoder: Encoder, table: EmbeddingTable, datasets: Sequence[ScoredPairDataset]) -> float:
    if not datasets:
        raise ContractError("at least one evaluation dataset is required")
    return float(np.mean([evaluate(encoder, table, data).pearson for data in datasets]))


def data_size_curve(
    dataset: PairDataset,
    order: CurveOrder,
    table: EmbeddingTable,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_data: Sequence[ScoredPairDataset],
) -> List[Tuple[int, float]]:
    """Train fresh models on nested prefixes of ``dataset`` and evaluate each.

    In random order the pairs are shuffled once (seeded), so every smaller
    training set is still a prefix of the larger ones.
    """
    order = CurveOrder(order)
    indices = list(range(len(dataset)))
    if order is CurveOrder.RANDOM:
        indices = make_rng(train_config.seed).permutation(len(dataset)).tolist()
    curve = []
    for size in curve_sizes(len(dataset)):
        subset = PairDataset([dataset.pairs[i] for i in indices[:size]])
        encoder = build_encoder(model_config, table.dim, make_rng(train_config.seed))
        result = train(encoder, table.restart(), subset, train_config)
        score = mean_pearson(result.encoder, result.table, eval_data)
        logger.info("Curve point: %d pairs -> mean pearson %.4f", size, score)
        curve.append((size, score))
    return curve
