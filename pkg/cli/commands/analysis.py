"""Word-level analyses: nearest neighbors, importance weights and reweighted tables."""

import argparse
import logging
import sys
from collections import Counter
from typing import Optional

from cli.core.bundle import load_model
from cli.core.inputs import UsageError, read_embeddings, read_pairs, read_weights
from core.evaluation import frequency_weights, nearest_neighbors, reweight, word_importance
from core.textdata import EmbeddingTable, save_embeddings, token_counts

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    nn = subparsers.add_parser("nn", parents=parents, help="nearest neighbors of a word by cosine")
    _add_table_source(nn)
    nn.add_argument("--token", required=True)
    nn.add_argument("-k", type=int, default=10)
    nn.add_argument("--restrict", type=int, help="search only this many most frequent tokens")
    nn.add_argument("--pairs", help="pair file whose token counts define frequency")
    nn.set_defaults(run=run_nn)

    weights = subparsers.add_parser("weights", parents=parents, help="reweight word vectors")
    _add_table_source(weights)
    weights.add_argument("--out", help="where to write the reweighted embeddings")
    source = weights.add_mutually_exclusive_group()
    source.add_argument("--weights", help="token TAB weight file (missing tokens keep weight 1)")
    source.add_argument("--frequency-pairs", help="weight tokens by inverse frequency in this pair file")
    weights.add_argument("--importance", action="store_true",
                         help="print token TAB L1-norm weight, largest first")
    weights.set_defaults(run=run_weights)


def _add_table_source(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="model directory")
    source.add_argument("--embeddings", help="word vector file")


def _table(args: argparse.Namespace) -> EmbeddingTable:
    if args.model is not None:
        return load_model(args.model).table
    return read_embeddings(args.embeddings)


def run_nn(args: argparse.Namespace) -> int:
    table = _table(args)
    counts: Counter = read_pairs_counts(args.pairs)
    restrict = args.restrict if args.restrict is not None else len(table)
    for token, cos in nearest_neighbors(table, args.token, args.k, restrict, counts):
        print(f"{token}\t{cos!r}")
    return 0


def read_pairs_counts(path: Optional[str]) -> Counter:
    if path is None:
        return Counter()
    return token_counts(read_pairs(path))


def run_weights(args: argparse.Namespace) -> int:
    if args.out is None and not args.importance:
        raise UsageError("nothing to do: give --out and/or --importance")
    table = _table(args)
    if args.importance:
        ranked = sorted(word_importance(table).items(), key=lambda item: -item[1])
        for token, weight in ranked:
            print(f"{token}\t{weight!r}")
    if args.out is None:
        return 0

    if args.weights is not None:
        weights = read_weights(args.weights)
    elif args.frequency_pairs is not None:
        counts = read_pairs_counts(args.frequency_pairs)
        weights = frequency_weights(counts, sum(counts.values()), table.vocab.tokens)
    else:
        weights = {}
    reweighted = reweight(table, weights)
    with open(args.out, "w", encoding="utf-8") as f:
        save_embeddings(reweighted, f, include_synthetic_unk=False)
    logger.info("Wrote %d reweighted vectors to %s", len(reweighted), args.out)
    sys.stdout.flush()
    return 0
