"""Compositional sentence encoders g(x) and their reverse-mode gradients.

Every encoder reads word vectors from an EmbeddingTable passed per call and
keeps its compositional parameters W_c in ``self.params`` (name -> array).
``forward`` returns the sentence vector plus a cache owned by the caller, so
forward/backward pairs can interleave freely.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, List, Optional, Sequence, Tuple, Type

import numpy as np
from scipy.special import expit

from config.settings import Activation, Arch, ModelConfig
from core.errors import ContractError, EmptyInputError
from core.numerics import Rng, make_rng
from core.textdata import EmbeddingTable

logger = logging.getLogger(__name__)

Cache = Dict[str, Any]
Shapes = Dict[str, Tuple[int, ...]]


@dataclass
class EncoderGrads:
    """Gradients for W_c (dense, by name) and for the word rows a batch touched (sparse)."""

    params: Dict[str, np.ndarray]
    words: Dict[int, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, encoder: "Encoder") -> "EncoderGrads":
        return cls({name: np.zeros_like(p) for name, p in encoder.params.items()})

    def add_word_rows(self, ids: Sequence[int], rows: np.ndarray) -> None:
        for i, row in zip(ids, rows):
            i = int(i)
            if i in self.words:
                self.words[i] = self.words[i] + row
            else:
                self.words[i] = np.array(row, dtype=np.float64)

    def accumulate(self, other: "EncoderGrads", scale: float = 1.0) -> None:
        for name, g in other.params.items():
            self.params[name] += scale * g
        for i, row in other.words.items():
            if i in self.words:
                self.words[i] = self.words[i] + scale * row
            else:
                self.words[i] = scale * row

    def word_ids(self) -> np.ndarray:
        return np.array(sorted(self.words), dtype=np.int64)

    def word_matrix(self, ids: np.ndarray, dim: int) -> np.ndarray:
        if len(ids) == 0:
            return np.zeros((0, dim))
        return np.stack([self.words[int(i)] for i in ids])


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def _activate_grad(kind: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - h * h
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def glorot(rng: Rng, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class Encoder(ABC):
    """Base class for the six architectures."""

    arch: ClassVar[Arch]

    def __init__(self, config: ModelConfig, dim: int, params: Dict[str, np.ndarray]):
        self.dim = dim
        self.config = config.model_copy(update={"out_dim": self.resolve_out_dim(config, dim)})
        expected = self.shapes(self.config, dim)
        missing = [name for name in expected if name not in params]
        if missing:
            raise ContractError(f"{self.arch.value} encoder missing parameter {missing[0]!r}")
        self.params: Dict[str, np.ndarray] = {}
        for name, shape in expected.items():
            value = np.array(params[name], dtype=np.float64)
            if value.shape != shape:
                raise ContractError(f"parameter {name!r} has shape {value.shape}, expected {shape}")
            self.params[name] = value
        self._anchor: Optional[Dict[str, np.ndarray]] = None

    @classmethod
    def resolve_out_dim(cls, config: ModelConfig, dim: int) -> int:
        return dim

    @classmethod
    @abstractmethod
    def shapes(cls, config: ModelConfig, dim: int) -> Shapes:
        """Names and shapes of the compositional parameters."""

    @classmethod
    def initialize(cls, config: ModelConfig, dim: int, rng: Rng) -> Dict[str, np.ndarray]:
        """Glorot-uniform matrices, zero biases."""
        params = {}
        for name, shape in cls.shapes(config, dim).items():
            params[name] = glorot(rng, *shape) if len(shape) == 2 else np.zeros(shape)
        return params

    @property
    def out_dim(self) -> int:
        return self.config.out_dim

    def anchor(self) -> Dict[str, np.ndarray]:
        """Values the compositional regularizer pulls toward (zeros unless overridden)."""
        if self._anchor is not None:
            return self._anchor
        return {name: np.zeros_like(p) for name, p in self.params.items()}

    def set_anchor(self, values: Optional[Dict[str, np.ndarray]]) -> None:
        if values is not None:
            for name, p in self.params.items():
                if name not in values or values[name].shape != p.shape:
                    raise ContractError(f"anchor does not match parameter {name!r}")
            values = {name: np.array(values[name], dtype=np.float64) for name in self.params}
        self._anchor = values

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.copy() for name, p in self.params.items()}

    def load_params(self, values: Dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in values or np.shape(values[name]) != p.shape:
                raise ContractError(f"cannot load parameter {name!r}")
            p[...] = values[name]

    def _inputs(self, table: EmbeddingTable, tokens: Sequence[str]) -> Tuple[np.ndarray, np.ndarray]:
        if len(tokens) == 0:
            raise EmptyInputError("cannot encode an empty token sequence")
        if table.dim != self.dim:
            raise ContractError(f"table dimension {table.dim} does not match encoder dimension {self.dim}")
        ids = table.ids(tokens)
        return ids, table.current[ids]

    def _check_out_grad(self, out_grad: np.ndarray) -> np.ndarray:
        out_grad = np.asarray(out_grad, dtype=np.float64)
        if out_grad.shape != (self.out_dim,):
            raise ContractError(f"output gradient shape {out_grad.shape}, expected ({self.out_dim},)")
        return out_grad

    def encode(self, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
        return self.forward(table, tokens)[0]

    @abstractmethod
    def forward(self, table: EmbeddingTable, tokens: Sequence[str]) -> Tuple[np.ndarray, Cache]:
        """Sentence vector and the activations needed by ``backward``."""

    @abstractmethod
    def backward(self, table: EmbeddingTable, cache: Cache, out_grad: np.ndarray) -> EncoderGrads:
        """Gradients of ``out_grad . g(x)`` for the forward pass recorded in ``cache``."""


class AverageEncoder(Encoder):
    arch = Arch.AVERAGE

    @classmethod
    def shapes(cls, config: ModelConfig, dim: int) -> Shapes:
        return {}

    def forward(self, table, tokens):
        ids, xs = self._inputs(table, tokens)
        return xs.mean(axis=0), {"ids": ids}

    def backward(self, table, cache, out_grad):
        out_grad = self._check_out_grad(out_grad)
        ids = cache["ids"]
        grads = EncoderGrads.zeros(self)
        grads.add_word_rows(ids, np.tile(out_grad / len(ids), (len(ids), 1)))
        return grads


class ProjectionEncoder(Encoder):
    arch = Arch.PROJ

    @classmethod
    def resolve_out_dim(cls, config, dim):
        return config.out_dim or dim

    @classmethod
    def shapes(cls, config, dim):
        out = cls.resolve_out_dim(config, dim)
        return {"W_p": (out, dim), "b": (out,)}

    def forward(self, table, tokens):
        ids, xs = self._inputs(table, tokens)
        mean = xs.mean(axis=0)
        return self.params["W_p"] @ mean + self.params["b"], {"ids": ids, "mean": mean}

    def backward(self, table, cache, out_grad):
        out_grad = self._check_out_grad(out_grad)
        ids = cache["ids"]
        grads = EncoderGrads.zeros(self)
        grads.params["W_p"] += np.outer(out_grad, cache["mean"])
        grads.params["b"] += out_grad
        d_mean = self.params["W_p"].T @ out_grad
        grads.add_word_rows(ids, np.tile(d_mean / len(ids), (len(ids), 1)))
        return grads


class DanEncoder(Encoder):
    """Word average followed by one or two nonlinear layers."""

    arch = Arch.DAN

    @classmethod
    def resolve_out_dim(cls, config, dim):
        return config.out_dim or dim

    @classmethod
    def shapes(cls, config, dim):
        out = cls.resolve_out_dim(config, dim)
        shapes: Shapes = {"W_1": (out, dim), "b_1": (out,)}
        if config.layers == 2:
            shapes.update({"W_2": (out, out), "b_2": (out,)})
        return shapes

    def forward(self, table, tokens):
        ids, xs = self._inputs(table, tokens)
        kind = self.config.activation.value
        h = xs.mean(axis=0)
        hs, zs = [h], []
        for layer in range(1, self.config.layers + 1):
            z = self.params[f"W_{layer}"] @ h + self.params[f"b_{layer}"]
            h = _activate(kind, z)
            zs.append(z)
            hs.append(h)
        return h, {"ids": ids, "hs": hs, "zs": zs}

    def backward(self, table, cache, out_grad):
        g = self._check_out_grad(out_grad)
        kind = self.config.activation.value
        ids, hs, zs = cache["ids"], cache["hs"], cache["zs"]
        grads = EncoderGrads.zeros(self)
        for layer in range(self.config.layers, 0, -1):
            dz = g * _activate_grad(kind, zs[layer - 1], hs[layer])
            grads.params[f"W_{layer}"] += np.outer(dz, hs[layer - 1])
            grads.params[f"b_{layer}"] += dz
            g = self.params[f"W_{layer}"].T @ dz
        grads.add_word_rows(ids, np.tile(g / len(ids), (len(ids), 1)))
        return grads


class RnnEncoder(Encoder):
    """h_t = f(W_x x_t + W_h h_{t-1} + b); the output is the last hidden state."""

    arch = Arch.RNN
    divide_by_length: ClassVar[bool] = False

    @classmethod
    def shapes(cls, config, dim):
        return {"W_x": (dim, dim), "W_h": (dim, dim), "b": (dim,)}

    @property
    def activation(self) -> str:
        return self.config.activation.value

    def forward(self, table, tokens):
        ids, xs = self._inputs(table, tokens)
        W_x, W_h, b = self.params["W_x"], self.params["W_h"], self.params["b"]
        h = np.zeros(self.dim)
        hs, zs = [h], []
        for x in xs:
            z = W_x @ x + W_h @ h + b
            h = _activate(self.activation, z)
            zs.append(z)
            hs.append(h)
        out = h / len(ids) if self.divide_by_length else h
        return out, {"ids": ids, "xs": xs, "hs": hs, "zs": zs}

    def backward(self, table, cache, out_grad):
        out_grad = self._check_out_grad(out_grad)
        ids, xs, hs, zs = cache["ids"], cache["xs"], cache["hs"], cache["zs"]
        W_x, W_h = self.params["W_x"], self.params["W_h"]
        grads = EncoderGrads.zeros(self)
        dxs = np.zeros_like(xs)
        dh = out_grad / len(ids) if self.divide_by_length else out_grad
        for t in range(len(ids) - 1, -1, -1):
            dz = dh * _activate_grad(self.activation, zs[t], hs[t + 1])
            grads.params["W_x"] += np.outer(dz, xs[t])
            grads.params["W_h"] += np.outer(dz, hs[t])
            grads.params["b"] += dz
            dxs[t] = W_x.T @ dz
            dh = W_h.T @ dz
        grads.add_word_rows(ids, dxs)
        return grads


class IRnnEncoder(RnnEncoder):
    """Identity-activation RNN started at W_x = W_h = I, b = 0, output divided by length.

    At initialization it computes the word average exactly. Its regularizer
    pulls the parameters back toward that initialization rather than zero.
    """

    arch = Arch.IRNN
    divide_by_length = True

    @property
    def activation(self) -> str:
        return "identity"

    @classmethod
    def initialize(cls, config, dim, rng):
        return cls.identity_params(dim)

    @staticmethod
    def identity_params(dim: int) -> Dict[str, np.ndarray]:
        return {"W_x": np.eye(dim), "W_h": np.eye(dim), "b": np.zeros(dim)}

    def anchor(self):
        if self._anchor is not None:
            return self._anchor
        return self.identity_params(self.dim)


class LstmEncoder(Encoder):
    """Peephole LSTM; without the output gate, h_t = tanh(c_t)."""

    arch = Arch.LSTM

    @classmethod
    def shapes(cls, config, dim):
        square, vector = (dim, dim), (dim,)
        shapes: Shapes = {}
        for gate in ("i", "f"):
            shapes.update({f"W_x{gate}": square, f"W_h{gate}": square, f"W_c{gate}": square, f"b_{gate}": vector})
        shapes.update({"W_xc": square, "W_hc": square, "b_c": vector})
        if config.output_gate:
            shapes.update({"W_xo": square, "W_ho": square, "W_co": square, "b_o": vector})
        return shapes

    def forward(self, table, tokens):
        ids, xs = self._inputs(table, tokens)
        p = self.params
        gated = self.config.output_gate
        h = np.zeros(self.dim)
        c = np.zeros(self.dim)
        steps: List[Dict[str, np.ndarray]] = []
        for x in xs:
            i = expit(p["W_xi"] @ x + p["W_hi"] @ h + p["W_ci"] @ c + p["b_i"])
            f = expit(p["W_xf"] @ x + p["W_hf"] @ h + p["W_cf"] @ c + p["b_f"])
            g = np.tanh(p["W_xc"] @ x + p["W_hc"] @ h + p["b_c"])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            step = {"x": x, "h_prev": h, "c_prev": c, "i": i, "f": f, "g": g, "c": c_new, "tc": tc}
            if gated:
                o = expit(p["W_xo"] @ x + p["W_ho"] @ h + p["W_co"] @ c_new + p["b_o"])
                step["o"] = o
                h = o * tc
            else:
                h = tc
            c = c_new
            steps.append(step)
        return h, {"ids": ids, "steps": steps}

    def backward(self, table, cache, out_grad):
        dh = self._check_out_grad(out_grad).copy()
        p = self.params
        gated = self.config.output_gate
        ids, steps = cache["ids"], cache["steps"]
        grads = EncoderGrads.zeros(self)
        G = grads.params
        dxs = np.zeros((len(ids), self.dim))
        dc_next = np.zeros(self.dim)
        for t in range(len(steps) - 1, -1, -1):
            s = steps[t]
            x, h_prev, c_prev, c = s["x"], s["h_prev"], s["c_prev"], s["c"]
            i, f, g, tc = s["i"], s["f"], s["g"], s["tc"]
            dx = np.zeros(self.dim)
            dh_prev = np.zeros(self.dim)
            if gated:
                o = s["o"]
                da_o = dh * tc * o * (1.0 - o)
                dc = dc_next + dh * o * (1.0 - tc * tc) + p["W_co"].T @ da_o
                G["W_xo"] += np.outer(da_o, x)
                G["W_ho"] += np.outer(da_o, h_prev)
                G["W_co"] += np.outer(da_o, c)
                G["b_o"] += da_o
                dx += p["W_xo"].T @ da_o
                dh_prev += p["W_ho"].T @ da_o
            else:
                dc = dc_next + dh * (1.0 - tc * tc)
            da_i = dc * g * i * (1.0 - i)
            da_f = dc * c_prev * f * (1.0 - f)
            da_g = dc * i * (1.0 - g * g)
            for gate, da in (("i", da_i), ("f", da_f)):
                G[f"W_x{gate}"] += np.outer(da, x)
                G[f"W_h{gate}"] += np.outer(da, h_prev)
                G[f"W_c{gate}"] += np.outer(da, c_prev)
                G[f"b_{gate}"] += da
            G["W_xc"] += np.outer(da_g, x)
            G["W_hc"] += np.outer(da_g, h_prev)
            G["b_c"] += da_g
            dx += p["W_xi"].T @ da_i + p["W_xf"].T @ da_f + p["W_xc"].T @ da_g
            dh_prev += p["W_hi"].T @ da_i + p["W_hf"].T @ da_f + p["W_hc"].T @ da_g
            dc_next = dc * f + p["W_ci"].T @ da_i + p["W_cf"].T @ da_f
            dxs[t] = dx
            dh = dh_prev
        grads.add_word_rows(ids, dxs)
        return grads


ENCODERS: Dict[Arch, Type[Encoder]] = {
    cls.arch: cls
    for cls in (AverageEncoder, ProjectionEncoder, DanEncoder, RnnEncoder, IRnnEncoder, LstmEncoder)
}


def build_encoder(
    config: ModelConfig,
    dim: int,
    rng: Optional[Rng] = None,
    params: Optional[Dict[str, np.ndarray]] = None,
) -> Encoder:
    """Create an encoder, randomly initialized unless ``params`` are given."""
    cls = ENCODERS[Arch(config.arch)]
    if params is None:
        params = cls.initialize(config, dim, rng if rng is not None else make_rng(0))
    encoder = cls(config, dim, params)
    logger.debug("Created %s encoder: dim=%d out=%d", cls.arch.value, dim, encoder.out_dim)
    return encoder


def _expect(enc: Encoder, cls: Type[Encoder]) -> None:
    if type(enc) is not cls:
        raise ContractError(f"expected a {cls.arch.value} encoder, got {enc.arch.value}")


def encode_average(table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    return AverageEncoder(ModelConfig(arch=Arch.AVERAGE), table.dim, {}).encode(table, tokens)


def encode_projection(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    _expect(enc, ProjectionEncoder)
    return enc.encode(table, tokens)


def encode_dan(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    _expect(enc, DanEncoder)
    return enc.encode(table, tokens)


def encode_rnn(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    _expect(enc, RnnEncoder)
    return enc.encode(table, tokens)


def encode_irnn(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    _expect(enc, IRnnEncoder)
    return enc.encode(table, tokens)


def encode_lstm(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str]) -> np.ndarray:
    _expect(enc, LstmEncoder)
    return enc.encode(table, tokens)


def backward(enc: Encoder, table: EmbeddingTable, tokens: Sequence[str], out_grad: np.ndarray) -> EncoderGrads:
    """Run the forward pass for ``tokens`` and return the gradients of ``out_grad . g(tokens)``."""
    _, cache = enc.forward(table, tokens)
    return enc.backward(table, cache, out_grad)
