"""File-reading and configuration helpers shared by the commands."""

import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from config.settings import ModelConfig, TrainConfig, build_config, get_config, parse_key_values, split_overrides
from core.errors import FormatError
from core.textdata import (
    EmbeddingTable,
    LabeledDataset,
    LabeledPairDataset,
    PairDataset,
    ScoredPairDataset,
    load_embeddings,
    load_labeled,
    load_labeled_pairs,
    load_pairs,
    load_scored_pairs,
)

logger = logging.getLogger(__name__)


class UsageError(Exception):
    """Command-line arguments that parse but do not make sense together."""


def _open(path: str):
    return open(Path(path), encoding="utf-8")


def read_embeddings(path: str) -> EmbeddingTable:
    with _open(path) as f:
        return load_embeddings(f)


def read_pairs(path: str, lowercase: Optional[bool] = None) -> PairDataset:
    with _open(path) as f:
        dataset = load_pairs(f, lowercase)
    logger.info("Loaded %d phrase pairs from %s", len(dataset), path)
    return dataset


def read_scored_pairs(path: str, lowercase: Optional[bool] = None) -> ScoredPairDataset:
    with _open(path) as f:
        dataset = load_scored_pairs(f, lowercase)
    logger.info("Loaded %d scored pairs from %s", len(dataset), path)
    return dataset


def read_labeled(path: str, lowercase: Optional[bool] = None) -> LabeledDataset:
    with _open(path) as f:
        return load_labeled(f, lowercase, num_classes=2)


def read_labeled_pairs(path: str, lowercase: Optional[bool] = None) -> LabeledPairDataset:
    with _open(path) as f:
        return load_labeled_pairs(f, lowercase, num_classes=3)


def read_key_values(path: Optional[str]) -> Dict[str, str]:
    if path is None:
        return {}
    with _open(path) as f:
        return parse_key_values(f, source=str(path))


def read_weights(path: str) -> Dict[str, float]:
    """``token TAB weight`` lines."""
    weights: Dict[str, float] = {}
    with _open(path) as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            parts = raw.split()
            if len(parts) != 2:
                raise FormatError(f"expected 'token weight', got {raw.rstrip()!r}", line_no)
            try:
                weights[parts[0]] = float(parts[1])
            except ValueError as e:
                raise FormatError(f"weight for {parts[0]!r} is not a number", line_no) from e
    return weights


def global_defaults() -> Dict[str, Any]:
    settings = get_config()
    return {"seed": settings.default_seed, "show_progress": settings.show_progress}


def global_flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {"seed": args.seed, "show_progress": False if args.no_progress else None}


def train_flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "delta": args.delta,
        "sampling": args.sampling,
        "optimizer": args.optimizer,
        "learning_rate": args.learning_rate,
        "lambda_c": args.lambda_c,
        "lambda_w": args.lambda_w,
        "clip_gradients": False if args.no_clip else None,
        "update_embeddings": False if args.freeze_embeddings else None,
    }


def model_flags(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "arch": args.arch,
        "out_dim": args.out_dim,
        "activation": args.activation,
        "layers": args.layers,
        "output_gate": False if args.no_output_gate else None,
    }


def add_train_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--config", help="key=value file overriding training and model defaults")
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--delta", type=float, help="margin")
    group.add_argument("--sampling", choices=["max", "mix"])
    group.add_argument("--optimizer", choices=["adagrad", "adam"])
    group.add_argument("--learning-rate", type=float)
    group.add_argument("--lambda-c", type=float)
    group.add_argument("--lambda-w", type=float)
    group.add_argument("--no-clip", action="store_true", help="disable gradient clipping")
    group.add_argument("--freeze-embeddings", action="store_true", help="do not update word vectors")


def add_model_arguments(parser: argparse.ArgumentParser, arch_required: bool = True) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--arch", required=arch_required,
                       choices=["average", "proj", "dan", "rnn", "irnn", "lstm"])
    group.add_argument("--out-dim", type=int)
    group.add_argument("--activation", choices=["tanh", "relu"])
    group.add_argument("--layers", type=int, choices=[1, 2])
    group.add_argument("--no-output-gate", action="store_true", help="LSTM without output gate")


def train_configs(args: argparse.Namespace) -> Tuple[TrainConfig, ModelConfig]:
    """Defaults < config file < command-line flags."""
    file_train, file_model = split_overrides(read_key_values(args.config))
    train_config = build_config(TrainConfig, global_defaults(), file_train, train_flags(args), global_flags(args))
    model_config = build_config(ModelConfig, file_model, model_flags(args))
    return train_config, model_config
