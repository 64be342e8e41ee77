"""Small parameter containers shared by the model modules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping

import numpy as np

from .init import uniform_init
from .tensor import Tensor


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


@dataclass
class GruParams:
    """Stacked GRU weights: rows ``[0:H]`` update gate, ``[H:2H]`` reset gate, ``[2H:3H]`` candidate."""

    W: Tensor  # 3H x in
    U: Tensor  # 3H x H
    b: Tensor  # 3H

    @property
    def hidden(self) -> int:
        return self.U.shape[1]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, hidden: int, dtype=np.float64) -> "GruParams":
        return cls(
            W=param(uniform_init(rng, (3 * hidden, in_dim), in_dim, dtype)),
            U=param(uniform_init(rng, (3 * hidden, hidden), hidden, dtype)),
            b=param(np.zeros(3 * hidden, dtype=dtype)),
        )

    def named(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.U": self.U, f"{prefix}.b": self.b}

    @classmethod
    def from_named(cls, d: Mapping[str, Tensor], prefix: str) -> "GruParams":
        return cls(W=d[f"{prefix}.W"], U=d[f"{prefix}.U"], b=d[f"{prefix}.b"])


@dataclass
class Dense:
    """Affine map ``W x + b``."""

    W: Tensor
    b: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, out_dim: int, in_dim: int, dtype=np.float64) -> "Dense":
        return cls(
            W=param(uniform_init(rng, (out_dim, in_dim), in_dim, dtype)),
            b=param(np.zeros(out_dim, dtype=dtype)),
        )

    def named(self, prefix: str) -> Dict[str, Tensor]:
        return {f"{prefix}.W": self.W, f"{prefix}.b": self.b}

    @classmethod
    def from_named(cls, d: Mapping[str, Tensor], prefix: str) -> "Dense":
        return cls(W=d[f"{prefix}.W"], b=d[f"{prefix}.b"])
