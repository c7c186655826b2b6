"""Dense numeric core.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order with rank 1 to 3.  This module adds the few kernels whose error
behaviour the rest of the package relies on, the package-wide random
generator, and the central-difference gradient checker.

The random generator is numpy's ``PCG64`` bit generator wrapped in
``numpy.random.Generator``; seeds are unsigned 64-bit integers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DimensionError, DomainError, NumericError

DTYPE = np.float64

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Return a PCG64-backed generator; equal seeds give equal streams."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def tensor(data, shape=None) -> np.ndarray:
    """Build a float64 row-major tensor, checking the rank and size invariants."""
    arr = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise DimensionError(f"cannot shape {arr.size} values as {shape}")
        arr = arr.reshape(shape)
    if arr.ndim not in (1, 2, 3) or any(s < 1 for s in arr.shape):
        raise DimensionError(f"tensor shape {arr.shape} must have rank 1-3 and sizes >= 1")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=DTYPE)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _log(x: np.ndarray) -> np.ndarray:
    bad = np.flatnonzero(~(x > 0))
    if bad.size:
        idx = np.unravel_index(bad[0], x.shape)
        raise DomainError(f"log of nonpositive entry {x[idx]!r} at index {tuple(int(i) for i in idx)}")
    return np.log(x)


ELEMENTWISE: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": np.exp,
    "log": _log,
}


def elementwise(fn: str, x: np.ndarray) -> np.ndarray:
    try:
        f = ELEMENTWISE[fn]
    except KeyError:
        raise ValueError(f"unknown elementwise function {fn!r}; choose from {sorted(ELEMENTWISE)}") from None
    return f(np.asarray(x, dtype=DTYPE))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis with per-row max subtraction."""
    x = np.asarray(x, dtype=DTYPE)
    if np.isnan(x).any():
        raise NumericError("softmax input contains NaN")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def glorot(rng: Rng, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    r = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


@dataclass
class GradCheckReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    tol: float

    @property
    def max_rel_err(self) -> float:
        return float(self.rel_err.max()) if self.rel_err.size else 0.0

    @property
    def flagged(self) -> np.ndarray:
        """Flat indices whose relative error exceeds ``tol``."""
        return np.flatnonzero(self.rel_err.ravel() > self.tol)

    @property
    def passed(self) -> bool:
        return self.flagged.size == 0


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` at ``theta``.

    ``theta`` is perturbed in place one coordinate at a time and restored
    afterwards, so ``f`` may close over the very array it is handed.
    """
    flat = theta.reshape(-1)
    if not np.shares_memory(flat, theta):
        raise ValueError("theta must be contiguous so it can be perturbed in place")
    grad = np.empty(flat.size, dtype=DTYPE)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        fp = f(theta)
        flat[i] = orig - epsilon
        fm = f(theta)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite objective while perturbing coordinate {i}")
        grad[i] = (fp - fm) / (2.0 * epsilon)
    return grad.reshape(theta.shape)


def grad_check(
    f: Callable[[np.ndarray], float],
    theta: np.ndarray,
    analytic: np.ndarray,
    epsilon: float = 1e-5,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``f`` around ``theta``."""
    analytic = np.asarray(analytic, dtype=DTYPE)
    if analytic.shape != theta.shape:
        raise DimensionError(f"analytic gradient shape {analytic.shape} != theta shape {theta.shape}")
    if not np.isfinite(f(theta)):
        raise NumericError("objective is not finite at theta")
    numeric = numeric_gradient(f, theta, epsilon)
    return GradCheckReport(analytic, numeric, relative_error(analytic, numeric), tol)
