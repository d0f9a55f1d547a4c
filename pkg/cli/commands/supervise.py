import argparse
import sys

from cli.core.bundle import ModelBundle, load_model, save_model
from cli.core.inputs import (
    UsageError,
    global_defaults,
    global_flags,
    read_embeddings,
    read_key_values,
    read_labeled,
    read_labeled_pairs,
    read_pairs,
    read_scored_pairs,
)
from config.settings import ModelConfig, SupervisedConfig, Task, TrainConfig, TrainMode, build_config, get_config
from core.encoders import build_encoder
from core.numerics import make_rng, pearson
from core.supervised import (
    UniversalPrior,
    accuracy,
    make_head,
    mean_kl,
    predicted_scores,
    raise_dimension,
    train_supervised,
)


READERS = {
    Task.SIMILARITY: read_scored_pairs,
    Task.ENTAILMENT: read_labeled_pairs,
    Task.SENTIMENT: read_labeled,
}


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("supervise", parents=parents, help="train a task head on labeled data")
    parser.add_argument("--task", required=True, choices=[t.value for t in Task])
    parser.add_argument("--mode", required=True, choices=[m.value for m in TrainMode])
    parser.add_argument("--train", required=True, help="labeled or scored training file")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", help="pretrained model directory (required for universal mode)")
    source.add_argument("--init-embeddings", help="word vectors to start from")
    parser.add_argument("--arch", default="average", choices=["average", "proj", "dan", "rnn", "irnn", "lstm"],
                        help="encoder built over --init-embeddings")
    parser.add_argument("--raise-dim", type=int, help="first train a projection to this size on --pairs (frozen mode)")
    parser.add_argument("--pairs", help="paraphrase pairs for --raise-dim")
    parser.add_argument("--config", help="key=value file of supervised settings")
    parser.add_argument("--out", help="save the encoder and head here")
    group = parser.add_argument_group("supervised training")
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--hidden-dim", type=int)
    group.add_argument("--num-scores", type=int)
    group.add_argument("--optimizer", choices=["adagrad", "adam"])
    group.add_argument("--learning-rate", type=float)
    group.add_argument("--lambda-s", type=float)
    group.add_argument("--lambda-w", type=float)
    group.add_argument("--lambda-c", type=float)
    parser.set_defaults(run=run)


def supervised_config(args: argparse.Namespace) -> SupervisedConfig:
    flags = {
        "task": args.task,
        "mode": args.mode,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "hidden_dim": args.hidden_dim,
        "num_scores": args.num_scores,
        "optimizer": args.optimizer,
        "learning_rate": args.learning_rate,
        "lambda_s": args.lambda_s,
        "lambda_w": args.lambda_w,
        "lambda_c": args.lambda_c,
    }
    return build_config(SupervisedConfig, global_defaults(), read_key_values(args.config), flags, global_flags(args))


def _raise_dim_config(args: argparse.Namespace, seed: int) -> TrainConfig:
    return build_config(TrainConfig, global_defaults(), global_flags(args), {"seed": seed})


def run(args: argparse.Namespace) -> int:
    config = supervised_config(args)
    mode = config.mode
    if mode is TrainMode.UNIVERSAL and args.model is None:
        raise UsageError("universal mode needs --model with the pretrained parameters")
    if args.raise_dim is not None and (mode is not TrainMode.FROZEN or args.pairs is None):
        raise UsageError("--raise-dim needs --pairs and --mode frozen")

    if args.model is not None:
        bundle = load_model(args.model)
        table, encoder, model_config, lowercase = bundle.table, bundle.encoder, bundle.config, bundle.lowercase
    else:
        lowercase = get_config().lowercase
        table = read_embeddings(args.init_embeddings)
        model_config = ModelConfig(arch=args.arch)
        encoder = build_encoder(model_config, table.dim, make_rng(config.seed))

    if args.raise_dim is not None:
        pairs = read_pairs(args.pairs, lowercase)
        encoder, table = raise_dimension(table, args.raise_dim, pairs, _raise_dim_config(args, config.seed))
        model_config = encoder.config

    data = READERS[config.task](args.train, lowercase)
    prior = None
    if mode is TrainMode.UNIVERSAL:
        prior = UniversalPrior.capture(encoder, table, config.lambda_s, config.lambda_w, config.lambda_c)
    head = make_head(config.task, encoder.out_dim, config, make_rng(config.seed))

    sys.stdout.write("epoch\tloss\n")
    result = train_supervised(encoder, table, head, data, mode, config, prior, log_stream=sys.stdout)

    if config.task is Task.SIMILARITY:
        print(f"mean_kl\t{mean_kl(encoder, table, head, data)!r}")
        print(f"pearson\t{pearson(predicted_scores(encoder, table, head, data), data.gold)!r}")
    else:
        print(f"accuracy\t{accuracy(encoder, table, head, data)!r}")

    if args.out is not None:
        save_model(ModelBundle(model_config, result.table, result.encoder, lowercase, result.head, config.task),
                   args.out)
    return 0
