"""Graph-convolution aggregation of weighted neighbour vectors.

``h'_i = relu(sum_{j : A_ij > 0} A_ij * (h_j W) + b)``.  The adjacency holds
raw nonnegative contribution weights and is not normalised here.  Arrays
may carry a leading batch axis (``A [B, N, N]``, ``H [B, N, f]``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .layers import Cache


@dataclass
class WeightedGraph:
    A: np.ndarray
    H: np.ndarray

    def __post_init__(self) -> None:
        self.A = np.asarray(self.A, dtype=np.float64)
        self.H = np.asarray(self.H, dtype=np.float64)
        N = self.A.shape[-1]
        if self.A.shape[-2] != N or self.H.shape[-2] != N or self.A.ndim != self.H.ndim:
            raise DimensionError(f"adjacency {self.A.shape} and features {self.H.shape} are inconsistent")
        if (self.A < 0).any():
            idx = tuple(int(i) for i in np.argwhere(self.A < 0)[0])
            raise ValueError(f"negative adjacency entry at {idx}")

    @property
    def num_nodes(self) -> int:
        return self.A.shape[-1]


def gcn_aggregate(g: WeightedGraph, W: np.ndarray, b: np.ndarray, activation: bool = True):
    """One aggregation round; ``activation=False`` skips the ReLU (debug mode)."""
    if W.shape[0] != g.H.shape[-1] or b.shape != (W.shape[1],):
        raise DimensionError(f"W {W.shape} / b {b.shape} do not fit features of width {g.H.shape[-1]}")
    HW = g.H @ W
    pre = g.A @ HW + b
    out = np.maximum(pre, 0.0) if activation else pre
    return out, Cache(A=g.A, H=g.H, W=W, HW=HW, pre=pre, activation=activation)


def gcn_backward(cache: Cache, grad_out):
    """Returns ``(grad_H, grad_W, grad_b, grad_A)``; zero adjacency entries get zero gradient."""
    c = cache.consume()
    dpre = grad_out * (c.pre > 0) if c.activation else grad_out
    At = np.swapaxes(c.A, -1, -2)
    dHW = At @ dpre
    grad_A = (dpre @ np.swapaxes(c.HW, -1, -2)) * (c.A > 0)
    grad_H = dHW @ c.W.T
    grad_W = np.swapaxes(c.H, -1, -2) @ dHW
    grad_b = dpre.reshape(-1, dpre.shape[-1]).sum(axis=0)
    if grad_W.ndim == 3:
        grad_W = grad_W.sum(axis=0)
    return grad_H, grad_W, grad_b, grad_A
