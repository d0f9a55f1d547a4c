import argparse
import sys

from cli.core.bundle import ModelBundle, save_model
from cli.core.inputs import add_model_arguments, add_train_arguments, read_embeddings, read_pairs, train_configs
from config.settings import get_config
from core.encoders import build_encoder
from core.numerics import make_rng
from core.optim import train


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("train", parents=parents, help="train an encoder on paraphrase pairs")
    parser.add_argument("--pairs", required=True, help="phrase pair file (s1 TAB s2)")
    parser.add_argument("--init-embeddings", required=True, help="initial word vectors")
    parser.add_argument("--out", required=True, help="directory for the trained model")
    add_model_arguments(parser)
    add_train_arguments(parser)
    parser.set_defaults(run=run)


def run(args: argparse.Namespace) -> int:
    train_config, model_config = train_configs(args)
    lowercase = get_config().lowercase
    table = read_embeddings(args.init_embeddings)
    pairs = read_pairs(args.pairs, lowercase)
    encoder = build_encoder(model_config, table.dim, make_rng(train_config.seed))
    sys.stdout.write("epoch\tloss\n")
    result = train(encoder, table, pairs, train_config, log_stream=sys.stdout)
    save_model(ModelBundle(model_config, result.table, result.encoder, lowercase), args.out)
    return 0
