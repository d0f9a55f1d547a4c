"""Saving and loading trained models as a directory of text files.

A bundle directory holds ``manifest.txt`` (key=value metadata),
``embeddings.txt`` (the word table) and ``params.txt`` (every compositional
and head parameter as ``name rows cols`` followed by its rows).
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO

import numpy as np

from config.settings import ModelConfig, Task, get_config
from core.encoders import ENCODERS, Encoder
from core.errors import ModelFormatError
from core.supervised import EntailmentHead, Head, SentimentHead, SimilarityHead
from core.textdata import EmbeddingTable, format_vector, load_embeddings, save_embeddings

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.txt"
EMBEDDINGS = "embeddings.txt"
PARAMS = "params.txt"
HEAD_PREFIX = "head."

HEADS = {
    Task.SIMILARITY: SimilarityHead,
    Task.ENTAILMENT: EntailmentHead,
    Task.SENTIMENT: SentimentHead,
}
KNOWN_KEYS = {
    "format_version", "arch", "dim", "out_dim", "activation", "layers", "output_gate",
    "lowercase", "unk_token", "synthetic_unk", "head",
}


@dataclass
class ModelBundle:
    config: ModelConfig
    table: EmbeddingTable
    encoder: Encoder
    lowercase: bool = True
    head: Optional[Head] = None
    task: Optional[Task] = None
    extra: Dict[str, str] = field(default_factory=dict)

    def manifest(self) -> Dict[str, str]:
        values = {
            "format_version": str(FORMAT_VERSION),
            "arch": self.config.arch.value,
            "dim": str(self.table.dim),
            "out_dim": str(self.encoder.out_dim),
            "activation": self.config.activation.value,
            "layers": str(self.config.layers),
            "output_gate": str(self.config.output_gate).lower(),
            "lowercase": str(self.lowercase).lower(),
            "unk_token": self.table.vocab.unk_token,
            "synthetic_unk": str(self.table.synthetic_unk).lower(),
        }
        if self.head is not None:
            values["head"] = self.task.value
        values.update(self.extra)
        return values


def _bool(value: str, key: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ModelFormatError(f"manifest key {key!r} is not a boolean: {value!r}")


def write_params(params: Dict[str, np.ndarray], writer: TextIO) -> None:
    for name, value in params.items():
        matrix = np.atleast_2d(value)
        writer.write(f"{name} {matrix.shape[0]} {matrix.shape[1]}\n")
        for row in matrix:
            writer.write(format_vector(row) + "\n")


def read_params(reader: Iterable[str]) -> Dict[str, np.ndarray]:
    """Parse ``params.txt``. Vectors come back as 1 x n matrices; callers reshape."""
    lines = iter(enumerate(reader, start=1))
    params: Dict[str, np.ndarray] = {}
    for line_no, raw in lines:
        header = raw.split()
        if not header:
            continue
        if len(header) != 3:
            raise ModelFormatError(f"expected 'name rows cols', got {raw.rstrip()!r}", line_no)
        name = header[0]
        try:
            rows, cols = int(header[1]), int(header[2])
        except ValueError as e:
            raise ModelFormatError(f"bad shape for {name!r}", line_no) from e
        data: List[List[float]] = []
        for _ in range(rows):
            entry = next(lines, None)
            if entry is None:
                raise ModelFormatError(f"parameter {name!r} is truncated")
            row_no, row = entry
            try:
                values = [float(v) for v in row.split()]
            except ValueError as e:
                raise ModelFormatError(f"non-numeric value in {name!r}", row_no) from e
            if len(values) != cols:
                raise ModelFormatError(f"{name!r} row has {len(values)} values, expected {cols}", row_no)
            data.append(values)
        params[name] = np.array(data, dtype=np.float64).reshape(rows, cols)
    return params


def _shaped(params: Dict[str, np.ndarray], name: str, shape) -> np.ndarray:
    if name not in params:
        raise ModelFormatError(f"params.txt is missing parameter {name!r}")
    value = params[name]
    if value.size != int(np.prod(shape)):
        raise ModelFormatError(f"parameter {name!r} has {value.size} values, expected shape {shape}")
    return value.reshape(shape)


def save_model(bundle: ModelBundle, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / MANIFEST, "w", encoding="utf-8") as f:
        for key, value in bundle.manifest().items():
            f.write(f"{key}={value}\n")
    with open(directory / EMBEDDINGS, "w", encoding="utf-8") as f:
        save_embeddings(bundle.table, f)
    params = dict(bundle.encoder.params)
    if bundle.head is not None:
        params.update({HEAD_PREFIX + name: p for name, p in bundle.head.params.items()})
    with open(directory / PARAMS, "w", encoding="utf-8") as f:
        write_params(params, f)
    logger.info("Saved %s model to %s", bundle.config.arch.value, directory)
    return directory


def _read_manifest(path: Path) -> Dict[str, str]:
    manifest: Dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ModelFormatError(f"manifest: expected key=value, got {line!r}", line_no)
            key, value = (part.strip() for part in line.split("=", 1))
            manifest[key] = value
    return manifest


def load_model(directory: Path) -> ModelBundle:
    directory = Path(directory)
    if not directory.is_dir():
        raise ModelFormatError(f"model directory {directory} does not exist")
    for name in (MANIFEST, EMBEDDINGS, PARAMS):
        if not (directory / name).is_file():
            raise ModelFormatError(f"model directory {directory} has no {name}")

    manifest = _read_manifest(directory / MANIFEST)
    version = manifest.get("format_version")
    if version != str(FORMAT_VERSION):
        raise ModelFormatError(f"unsupported bundle format version {version!r} (expected {FORMAT_VERSION})")
    for key in manifest:
        if key not in KNOWN_KEYS:
            logger.warning("Ignoring unknown manifest key %r in %s", key, directory / MANIFEST)

    try:
        config = ModelConfig(
            arch=manifest["arch"],
            out_dim=int(manifest["out_dim"]),
            activation=manifest.get("activation", "tanh"),
            layers=int(manifest.get("layers", 1)),
            output_gate=_bool(manifest.get("output_gate", "true"), "output_gate"),
        )
        dim = int(manifest["dim"])
    except KeyError as e:
        raise ModelFormatError(f"manifest is missing {e.args[0]!r}") from e
    except ValueError as e:
        raise ModelFormatError(f"invalid manifest: {e}") from e

    settings = get_config()
    with open(directory / EMBEDDINGS, encoding="utf-8") as f:
        table = load_embeddings(f, unk_token=manifest.get("unk_token", settings.unk_token))
    if table.dim != dim:
        raise ModelFormatError(f"embeddings have dimension {table.dim}, manifest says {dim}")
    table.synthetic_unk = _bool(manifest.get("synthetic_unk", "false"), "synthetic_unk")

    with open(directory / PARAMS, encoding="utf-8") as f:
        stored = read_params(f)
    cls = ENCODERS[config.arch]
    shapes = cls.shapes(config.model_copy(update={"out_dim": cls.resolve_out_dim(config, dim)}), dim)
    encoder = cls(config, dim, {name: _shaped(stored, name, shape) for name, shape in shapes.items()})

    head = task = None
    if "head" in manifest:
        try:
            task = Task(manifest["head"])
        except ValueError as e:
            raise ModelFormatError(f"unknown head {manifest['head']!r}") from e
        head_params = {name[len(HEAD_PREFIX):]: value for name, value in stored.items()
                       if name.startswith(HEAD_PREFIX)}
        for bias in ("b_h", "b_p", "b_s"):
            if bias in head_params:
                head_params[bias] = head_params[bias].reshape(-1)
        expected = ("W_s", "b_s", "W_p", "b_p") if task is Task.SENTIMENT else \
            ("W_times", "W_plus", "b_h", "W_p", "b_p")
        for name in expected:
            if name not in head_params:
                raise ModelFormatError(f"params.txt is missing parameter {HEAD_PREFIX + name!r}")
        head = HEADS[task]({name: head_params[name] for name in expected})

    lowercase = _bool(manifest.get("lowercase", "true"), "lowercase")
    extra = {k: v for k, v in manifest.items() if k not in KNOWN_KEYS}
    logger.info("Loaded %s model from %s", config.arch.value, directory)
    return ModelBundle(config, table, encoder, lowercase, head, task, extra)
