import argparse
import sys

from cli.core.bundle import load_model
from core.errors import EmptyInputError
from core.textdata import format_vector, tokenize


def register(subparsers, parents) -> None:
    parser = subparsers.add_parser("encode", parents=parents,
                                   help="embed sentences read one per line from standard input")
    parser.add_argument("--model", required=True, help="model directory")
    parser.set_defaults(run=run)


def run(args: argparse.Namespace) -> int:
    bundle = load_model(args.model)
    for line_no, line in enumerate(sys.stdin, start=1):
        tokens = tokenize(line, bundle.lowercase)
        if not tokens:
            raise EmptyInputError("empty sentence", line_no)
        sys.stdout.write(format_vector(bundle.encoder.encode(bundle.table, tokens)) + "\n")
    sys.stdout.flush()
    return 0
