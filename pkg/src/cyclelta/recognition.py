"""TCN recognition module: dilated residual layers over the observed frames.

Layer ``l`` (dilation ``2**l``)::

    F_hat = relu(dilated_conv(F_prev, W1) + b1)
    F     = F_prev + W2 F_hat + b2

The input projection is a 1x1 convolution; a 1x1 classifier with a softmax
over classes gives frame-wise probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping

import numpy as np

from .diffcore import ops
from .diffcore.params import Dense, param
from .diffcore.init import uniform_init
from .diffcore.tensor import Tensor, as_tensor
from .errors import DimensionError


@dataclass
class TcnLayer:
    W1: Tensor  # 3 x K x K
    b1: Tensor
    W2: Tensor  # K x K
    b2: Tensor


@dataclass
class TcnParams:
    input_proj: Dense  # K x D
    layers: List[TcnLayer]
    classifier: Dense  # C x K

    @property
    def width(self) -> int:
        return self.input_proj.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.input_proj.W.shape[1]

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        in_dim: int,
        width: int,
        num_layers: int,
        num_classes: int,
        dtype=np.float64,
    ) -> "TcnParams":
        if num_layers < 1:
            raise DimensionError("TCN needs at least one layer")
        proj = Dense.init(rng, width, in_dim, dtype)
        layers = []
        for _ in range(num_layers):
            layers.append(
                TcnLayer(
                    W1=param(uniform_init(rng, (3, width, width), 3 * width, dtype)),
                    b1=param(np.zeros(width, dtype=dtype)),
                    W2=param(uniform_init(rng, (width, width), width, dtype)),
                    b2=param(np.zeros(width, dtype=dtype)),
                )
            )
        return cls(proj, layers, Dense.init(rng, num_classes, width, dtype))

    def named(self, prefix: str = "tcn") -> Dict[str, Tensor]:
        out = self.input_proj.named(f"{prefix}.in")
        for i, layer in enumerate(self.layers):
            p = f"{prefix}.layer{i}"
            out.update({f"{p}.W1": layer.W1, f"{p}.b1": layer.b1, f"{p}.W2": layer.W2, f"{p}.b2": layer.b2})
        out.update(self.classifier.named(f"{prefix}.cls"))
        return out

    @classmethod
    def from_named(cls, d: Mapping[str, Tensor], prefix: str = "tcn") -> "TcnParams":
        layers = []
        i = 0
        while f"{prefix}.layer{i}.W1" in d:
            p = f"{prefix}.layer{i}"
            layers.append(TcnLayer(d[f"{p}.W1"], d[f"{p}.b1"], d[f"{p}.W2"], d[f"{p}.b2"]))
            i += 1
        return cls(Dense.from_named(d, f"{prefix}.in"), layers, Dense.from_named(d, f"{prefix}.cls"))


@dataclass
class RecognitionOutput:
    features: Tensor  # K x t_o, output of the last dilated layer
    frame_probs: Tensor  # C x t_o
    logits: Tensor = field(repr=False, default=None)


def receptive_field(num_layers: int) -> int:
    """Frames seen by one output of a kernel-3 stack with dilations 1, 2, ..., 2**(L-1)."""
    return 1 + 2 * (2**num_layers - 1)


def tcn_forward(X, params: TcnParams) -> RecognitionOutput:
    X = as_tensor(X)
    if X.data.ndim != 2 or X.shape[1] < 1:
        raise DimensionError(f"expected D x t_o features, got {X.shape}")
    if X.shape[0] != params.in_dim:
        raise DimensionError(f"feature dim {X.shape[0]} != TCN input dim {params.in_dim}")
    F = ops.conv1x1(X, params.input_proj.W, params.input_proj.b)
    for i, layer in enumerate(params.layers):
        hidden = ops.relu(ops.dilated_conv1d(F, layer.W1, layer.b1, 2**i))
        F = ops.add(F, ops.conv1x1(hidden, layer.W2, layer.b2))
    logits = ops.conv1x1(F, params.classifier.W, params.classifier.b)
    return RecognitionOutput(features=F, frame_probs=ops.softmax(logits, axis=0), logits=logits)


def recognition_loss(frame_probs: Tensor, gt_labels) -> Tensor:
    """Mean frame-wise cross entropy ``(1/t_o) sum_t -log p[gt_t, t]``."""
    labels = np.asarray(gt_labels, dtype=np.int64)
    return ops.cross_entropy(frame_probs, labels)
