"""Small numeric helpers shared by training and evaluation.

Everything works in float64. Correlations come from scipy.stats; the
finite-difference checker is the oracle the tests hold every analytic
gradient against.
"""

import math
from typing import Callable, Sequence, Tuple

import numpy as np
from scipy import stats

from core.errors import DegenerateError, NumericError

Rng = np.random.Generator


def make_rng(seed: int, *stream: int) -> Rng:
    """PCG64 generator keyed by ``seed`` and optional sub-stream ids (epoch, worker...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateError("cosine of a zero-norm vector")
    c = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def cosine_grad(u: np.ndarray, v: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """Cosine and its gradients with respect to ``u`` and ``v``.

    The gradient is that of the unclamped ratio.
    """
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise DegenerateError("cosine of a zero-norm vector")
    raw = float(np.dot(u, v)) / (nu * nv)
    du = v / (nu * nv) - raw * u / (nu * nu)
    dv = u / (nu * nv) - raw * v / (nv * nv)
    return min(1.0, max(-1.0, raw)), du, dv


def _check_pairs(xs: Sequence[float], ys: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DegenerateError(f"correlation needs two equal-length lists, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DegenerateError("correlation needs at least two observations")
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateError("correlation undefined for zero-variance data")
    return x, y


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x, y = _check_pairs(xs, ys)
    return float(stats.pearsonr(x, y)[0])


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Pearson correlation of average-tied ranks."""
    x, y = _check_pairs(xs, ys)
    return pearson(stats.rankdata(x, method="average"), stats.rankdata(y, method="average"))


def finite_diff_check(
    loss: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Max relative error between ``analytic`` and central differences of ``loss``.

    ``params`` are live views into the model: each coordinate is nudged in
    place, ``loss()`` re-evaluated, and the value restored. The error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if len(params) != len(analytic):
        raise ValueError("one analytic gradient per parameter array is required")
    worst = 0.0
    for param, grad in zip(params, analytic):
        if param.shape != np.shape(grad):
            raise ValueError(f"gradient shape {np.shape(grad)} does not match parameter {param.shape}")
        flat_grad = np.asarray(grad, dtype=np.float64).reshape(-1)
        for i, idx in enumerate(np.ndindex(param.shape)):
            saved = param[idx]
            param[idx] = saved + eps
            plus = loss()
            param[idx] = saved - eps
            minus = loss()
            param[idx] = saved
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NumericError(f"non-finite loss while perturbing coordinate {idx}")
            numeric = (plus - minus) / (2.0 * eps)
            err = abs(flat_grad[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
