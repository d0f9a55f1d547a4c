"""Tokenization, vocabularies, embedding tables and dataset readers."""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from config.settings import get_config
from core.errors import DataError, EmptyInputError, FormatError

logger = logging.getLogger(__name__)

Tokens = List[str]


def tokenize(text: str, lowercase: bool = True) -> Tokens:
    """Split on runs of Unicode whitespace, optionally lowercasing."""
    if lowercase:
        text = text.lower()
    return text.split()


@dataclass
class Vocab:
    tokens: List[str]
    index: Dict[str, int]
    unk_id: int

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], unk_token: str) -> "Vocab":
        index = {token: i for i, token in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        if unk_token not in index:
            raise ValueError(f"unknown token {unk_token!r} missing from vocabulary")
        return cls(tokens=list(tokens), index=index, unk_id=index[unk_token])

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    @property
    def unk_token(self) -> str:
        return self.tokens[self.unk_id]


class EmbeddingTable:
    """Word vectors W_w together with the frozen copy they started from.

    ``current`` is what training updates; ``initial`` is read-only and is the
    anchor of the word regularizer.
    """

    def __init__(self, vocab: Vocab, current: np.ndarray, initial: Optional[np.ndarray] = None,
                 synthetic_unk: bool = False):
        current = np.array(current, dtype=np.float64)
        if current.ndim != 2 or current.shape[1] == 0:
            raise ValueError("embedding matrix must be V x dim with dim > 0")
        if current.shape[0] != len(vocab):
            raise ValueError(f"{current.shape[0]} rows for a vocabulary of {len(vocab)}")
        initial = current.copy() if initial is None else np.array(initial, dtype=np.float64)
        if initial.shape != current.shape:
            raise ValueError("initial and current embeddings must have the same shape")
        initial.setflags(write=False)
        self.vocab = vocab
        self.current = current
        self.initial = initial
        self.synthetic_unk = synthetic_unk

    @property
    def dim(self) -> int:
        return self.current.shape[1]

    def __len__(self) -> int:
        return len(self.vocab)

    def ids(self, tokens: Sequence[str]) -> np.ndarray:
        return np.fromiter((self.vocab.id(t) for t in tokens), dtype=np.int64, count=len(tokens))

    def lookup(self, token: str) -> np.ndarray:
        return self.current[self.vocab.id(token)]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.vocab, self.current.copy(), self.initial, self.synthetic_unk)

    def restart(self) -> "EmbeddingTable":
        """A fresh table whose current rows are reset to the initial ones."""
        return EmbeddingTable(self.vocab, self.initial.copy(), self.initial, self.synthetic_unk)


def lookup(table: EmbeddingTable, token: str) -> np.ndarray:
    return table.lookup(token)


def load_embeddings(
    reader: Iterable[str],
    unk_strategy: Optional[str] = None,
    unk_token: Optional[str] = None,
) -> EmbeddingTable:
    """Read ``token v1 ... vD`` lines into an EmbeddingTable.

    When the file has no row for the unknown token one is appended: the mean of
    all rows (or zeros, depending on ``unk_strategy``). A file that already
    carries the unknown token, such as one written by ``save_embeddings``,
    keeps its own row.
    """
    settings = get_config()
    unk_strategy = unk_strategy or settings.unk_strategy
    unk_token = unk_token or settings.unk_token

    tokens: List[str] = []
    seen: Dict[str, int] = {}
    rows: List[List[float]] = []
    dim: Optional[int] = None
    for line_no, raw in enumerate(reader, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split()
        token, values = parts[0], parts[1:]
        if dim is None:
            if not values:
                raise FormatError(f"token {token!r} has no vector components", line_no)
            dim = len(values)
        elif len(values) != dim:
            raise FormatError(f"dimension mismatch: expected {dim} values, found {len(values)}", line_no)
        if token in seen:
            raise FormatError(f"duplicate token {token!r} (first seen on line {seen[token]})", line_no)
        try:
            row = [float(v) for v in values]
        except ValueError as e:
            raise FormatError(f"non-numeric vector component: {e}", line_no) from e
        if not all(math.isfinite(v) for v in row):
            raise FormatError(f"non-finite vector component for {token!r}", line_no)
        seen[token] = line_no
        tokens.append(token)
        rows.append(row)

    if not rows:
        raise EmptyInputError("embedding file contains no vectors")

    matrix = np.array(rows, dtype=np.float64)
    synthetic = unk_token not in seen
    if synthetic:
        if unk_strategy == "zero":
            unk_row = np.zeros(dim)
        else:
            unk_row = matrix.mean(axis=0)
        tokens.append(unk_token)
        matrix = np.vstack([matrix, unk_row])

    table = EmbeddingTable(Vocab.from_tokens(tokens, unk_token), matrix, synthetic_unk=synthetic)
    logger.info("Loaded %d embeddings of dimension %d", len(table), table.dim)
    return table


def format_vector(values: Iterable[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def save_embeddings(table: EmbeddingTable, writer: TextIO, include_synthetic_unk: bool = True,
                    initial: bool = False) -> None:
    """Write the table in the text format ``load_embeddings`` reads, at full precision."""
    matrix = table.initial if initial else table.current
    for i, token in enumerate(table.vocab.tokens):
        if i == table.vocab.unk_id and table.synthetic_unk and not include_synthetic_unk:
            continue
        writer.write(f"{token} {format_vector(matrix[i])}\n")


@dataclass
class PairDataset:
    pairs: List[Tuple[Tokens, Tokens]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class ScoredPairDataset:
    items: List[Tuple[Tokens, Tokens, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    @property
    def gold(self) -> List[float]:
        return [g for _, _, g in self.items]


@dataclass
class LabeledDataset:
    items: List[Tuple[Tokens, int]]
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError("a labeled dataset needs at least two classes")
        for i, (_, label) in enumerate(self.items):
            if not 0 <= label < self.num_classes:
                raise DataError(f"label {label} of item {i} outside 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class LabeledPairDataset:
    items: List[Tuple[Tokens, Tokens, int]]
    num_classes: int

    def __post_init__(self):
        if self.num_classes < 2:
            raise DataError("a labeled dataset needs at least two classes")
        for i, (_, _, label) in enumerate(self.items):
            if not 0 <= label < self.num_classes:
                raise DataError(f"label {label} of item {i} outside 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return len(self.items)


def _tsv_rows(reader: Iterable[str], columns: int):
    for line_no, raw in enumerate(reader, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != columns:
            raise FormatError(f"expected {columns} tab-separated columns, found {len(fields)}", line_no)
        yield line_no, fields


def _sentence(text: str, lowercase: bool, line_no: int) -> Tokens:
    tokens = tokenize(text, lowercase)
    if not tokens:
        raise DataError("empty sentence", line_no)
    return tokens


def _label(text: str, line_no: int, num_classes: Optional[int] = None) -> int:
    try:
        label = int(text.strip())
    except ValueError as e:
        raise FormatError(f"label {text!r} is not an integer", line_no) from e
    if label < 0:
        raise FormatError(f"label {label} is negative", line_no)
    if num_classes is not None and label >= num_classes:
        raise DataError(f"label {label} outside 0..{num_classes - 1}", line_no)
    return label


def _lowercase_flag(lowercase: Optional[bool]) -> bool:
    return get_config().lowercase if lowercase is None else lowercase


def load_pairs(reader: Iterable[str], lowercase: Optional[bool] = None) -> PairDataset:
    lowercase = _lowercase_flag(lowercase)
    pairs = [
        (_sentence(s1, lowercase, n), _sentence(s2, lowercase, n))
        for n, (s1, s2) in _tsv_rows(reader, 2)
    ]
    return PairDataset(pairs)


def load_scored_pairs(reader: Iterable[str], lowercase: Optional[bool] = None) -> ScoredPairDataset:
    lowercase = _lowercase_flag(lowercase)
    items = []
    for n, (s1, s2, score) in _tsv_rows(reader, 3):
        try:
            gold = float(score)
        except ValueError as e:
            raise FormatError(f"score {score!r} is not a number", n) from e
        if not math.isfinite(gold):
            raise FormatError(f"score {score!r} is not finite", n)
        items.append((_sentence(s1, lowercase, n), _sentence(s2, lowercase, n), gold))
    return ScoredPairDataset(items)


def load_labeled(reader: Iterable[str], lowercase: Optional[bool] = None,
                 num_classes: Optional[int] = None) -> LabeledDataset:
    lowercase = _lowercase_flag(lowercase)
    items = [
        (_sentence(s, lowercase, n), _label(label, n, num_classes))
        for n, (s, label) in _tsv_rows(reader, 2)
    ]
    if num_classes is None:
        num_classes = max([label for _, label in items], default=0) + 1
    return LabeledDataset(items, max(num_classes, 2))


def load_labeled_pairs(reader: Iterable[str], lowercase: Optional[bool] = None,
                       num_classes: Optional[int] = None) -> LabeledPairDataset:
    lowercase = _lowercase_flag(lowercase)
    items = [
        (_sentence(s1, lowercase, n), _sentence(s2, lowercase, n), _label(label, n, num_classes))
        for n, (s1, s2, label) in _tsv_rows(reader, 3)
    ]
    if num_classes is None:
        num_classes = max([label for _, _, label in items], default=0) + 1
    return LabeledPairDataset(items, max(num_classes, 2))


def token_counts(dataset: PairDataset) -> Counter:
    """Occurrence counts of every token on both sides of every pair."""
    counts: Counter = Counter()
    for left, right in dataset.pairs:
        counts.update(left)
        counts.update(right)
    return counts
