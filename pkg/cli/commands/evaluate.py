import argparse
import sys

import numpy as np

from cli.core.bundle import load_model
from cli.core.inputs import read_scored_pairs
from core.evaluation import evaluate, length_binned


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("eval", parents=parents, help="score STS-style datasets with a trained model")
    parser.add_argument("--model", required=True, help="model directory")
    parser.add_argument("--dataset", required=True, action="append",
                        help="scored pair file (s1 TAB s2 TAB score); repeat for several")
    parser.add_argument("--bins", action="store_true", help="add a per-length breakdown")
    parser.add_argument("--spearman", action="store_true", help="also report Spearman's rho")
    parser.set_defaults(run=run)


def run(args: argparse.Namespace) -> int:
    bundle = load_model(args.model)
    scores = []
    for path in args.dataset:
        data = read_scored_pairs(path, bundle.lowercase)
        report = evaluate(bundle.encoder, bundle.table, data)
        if args.bins:
            report.bins = length_binned(bundle.encoder, bundle.table, data, report.predictions)
        if len(args.dataset) > 1:
            print(f"dataset\t{path}")
        for row in report.rows(include_spearman=args.spearman):
            print(row)
        scores.append(report.pearson)
    if len(scores) > 1:
        print(f"mean_pearson\t{float(np.mean(scores))!r}")
    sys.stdout.flush()
    return 0
