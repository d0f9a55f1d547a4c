import argparse

from cli.core.inputs import (
    add_model_arguments,
    add_train_arguments,
    read_embeddings,
    read_pairs,
    read_scored_pairs,
    train_configs,
)
from config.settings import get_config
from core.evaluation import CurveOrder, data_size_curve


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("curve", parents=parents,
                                   help="performance as a function of training-set size")
    parser.add_argument("--pairs", required=True, help="phrase pair file")
    parser.add_argument("--init-embeddings", required=True)
    parser.add_argument("--dataset", required=True, action="append", help="scored pair file(s) to evaluate on")
    parser.add_argument("--order", choices=[o.value for o in CurveOrder], default=CurveOrder.ORDERED.value,
                        help="take prefixes in file order or after one seeded shuffle")
    add_model_arguments(parser, arch_required=False)
    add_train_arguments(parser)
    parser.set_defaults(run=run)


def run(args: argparse.Namespace) -> int:
    train_config, model_config = train_configs(args)
    lowercase = get_config().lowercase
    table = read_embeddings(args.init_embeddings)
    pairs = read_pairs(args.pairs, lowercase)
    eval_data = [read_scored_pairs(path, lowercase) for path in args.dataset]
    print("size\tpearson")
    for size, score in data_size_curve(pairs, args.order, table, model_config, train_config, eval_data):
        print(f"{size}\t{score!r}", flush=True)
    return 0
