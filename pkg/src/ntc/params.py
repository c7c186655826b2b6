from __future__ import annotations

from collections.abc import Iterator

import numpy as np

from .errors import DimensionError


class ParamSet:
    """Ordered named parameters with same-shaped gradient slots.

    Insertion order is the enumeration order used by checkpoints and the
    optimizer.  Names listed in ``frozen`` receive no gradient updates and
    are left out of the L2 norm.
    """

    def __init__(self) -> None:
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.frozen: set[str] = set()

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.ascontiguousarray(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Parameters under ``prefix.`` keyed by their local name."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def trainable(self) -> list[str]:
        return [k for k in self.values if k not in self.frozen]

    def accumulate(self, prefix: str, grads: dict[str, np.ndarray]) -> None:
        for local, g in grads.items():
            name = f"{prefix}.{local}"
            if name in self.frozen:
                continue
            slot = self.grads[name]
            if slot.shape != g.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, expected {slot.shape}")
            slot += g

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def sq_norm(self) -> float:
        """Squared Frobenius norm over all trainable parameters."""
        return float(sum(np.vdot(self.values[k], self.values[k]) for k in self.trainable()))

    def count(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self.values.items()}

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            if self.values[k].shape != v.shape:
                raise DimensionError(f"parameter {k}: shape {v.shape} != {self.values[k].shape}")
            self.values[k][...] = v
