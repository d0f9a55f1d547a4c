import argparse
import logging
from typing import Dict, List, Optional, Tuple

from cli.core.inputs import (
    add_model_arguments,
    add_train_arguments,
    global_defaults,
    global_flags,
    model_flags,
    read_embeddings,
    read_key_values,
    read_pairs,
    read_scored_pairs,
    train_flags,
)
from config.settings import ModelConfig, TrainConfig, build_config, expand_grid, get_config, parse_grid, split_overrides
from core.encoders import build_encoder
from core.evaluation import evaluate
from core.numerics import make_rng
from core.optim import train

logger = logging.getLogger(__name__)


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("sweep", parents=parents,
                                   help="grid search selecting the configuration with the best Spearman's rho")
    parser.add_argument("--pairs", required=True, help="phrase pair file")
    parser.add_argument("--init-embeddings", required=True)
    parser.add_argument("--grid", required=True, help="key=v1,v2,... lines")
    parser.add_argument("--tune-data", required=True, help="scored pair file used for model selection")
    add_model_arguments(parser, arch_required=False)
    add_train_arguments(parser)
    parser.set_defaults(run=run)


def configurations(args: argparse.Namespace) -> List[Tuple[Dict[str, str], TrainConfig, ModelConfig]]:
    """Every grid point, layered over defaults < config file < flags."""
    with open(args.grid, encoding="utf-8") as f:
        grid = parse_grid(f)
    file_train, file_model = split_overrides(read_key_values(args.config))
    configs = []
    for point in expand_grid(grid):
        grid_train, grid_model = split_overrides(point)
        train_config = build_config(TrainConfig, global_defaults(), file_train, train_flags(args),
                                    global_flags(args), grid_train)
        model_config = build_config(ModelConfig, file_model, model_flags(args), grid_model)
        configs.append((point, train_config, model_config))
    return configs


def run(args: argparse.Namespace) -> int:
    lowercase = get_config().lowercase
    table = read_embeddings(args.init_embeddings)
    pairs = read_pairs(args.pairs, lowercase)
    tune = read_scored_pairs(args.tune_data, lowercase)
    configs = configurations(args)
    keys = list(configs[0][0]) if configs else []
    print("\t".join(["index", *keys, "spearman"]))

    best: Optional[Tuple[int, float]] = None
    for index, (point, train_config, model_config) in enumerate(configs):
        encoder = build_encoder(model_config, table.dim, make_rng(train_config.seed))
        result = train(encoder, table.restart(), pairs, train_config)
        rho = evaluate(result.encoder, result.table, tune).spearman
        logger.info("Grid point %d %s: spearman %.4f", index, point, rho)
        print("\t".join([str(index), *(point[k] for k in keys), repr(rho)]), flush=True)
        if best is None or rho > best[1]:
            best = (index, rho)

    index, rho = best
    point = configs[index][0]
    setting = ",".join(f"{k}={v}" for k, v in point.items())
    print(f"winner\t{index}\t{setting}\t{rho!r}")
    return 0
