"""Cycle-consistency decoder: reconstructs the observed segments from the final anticipation state.

Training-only. The GRU starts from the last hidden state of the anticipation
decoder, is teacher-forced on the observed labels and shares the SOS/EOS
scheme of the main decoder, but has no attention.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.params import Dense, GruParams
from .diffcore.tensor import Tensor
from .errors import ContractError, DimensionError, InputError
from .seq2seq import DecodeResult, DecoderParams, SegmentSeq, run_decoder, sequence_loss

ORDERS = ("forward", "reverse")


@dataclass
class CycleParams(DecoderParams):
    @classmethod
    def init(cls, rng: np.random.Generator, num_classes: int, hidden: int, dtype=np.float64) -> "CycleParams":
        n_sym = num_classes + 1
        return cls(
            GruParams.init(rng, n_sym, hidden, dtype),
            Dense.init(rng, n_sym, hidden, dtype),
            Dense.init(rng, 1, hidden, dtype),
            None,
        )

    def named(self, prefix: str = "cyc"):
        return super().named(prefix)

    @classmethod
    def from_named(cls, d, prefix: str = "cyc") -> "CycleParams":
        return cls(
            GruParams.from_named(d, f"{prefix}.gru"),
            Dense.from_named(d, f"{prefix}.label"),
            Dense.from_named(d, f"{prefix}.dur"),
            None,
        )


def ordered_past(gt_past: SegmentSeq, order: str = "forward") -> SegmentSeq:
    if order not in ORDERS:
        raise InputError(f"cycle order must be one of {ORDERS}, got {order!r}")
    return gt_past if order == "forward" else gt_past.reversed()


def cycle_decode(h_init: Tensor, gt_past: SegmentSeq, params: CycleParams, order: str = "forward") -> DecodeResult:
    """Teacher-forced reconstruction of the past; ``len(gt_past) + 1`` steps."""
    if len(gt_past) == 0:
        raise ContractError("cycle decoding needs at least one observed segment")
    if h_init.shape != (params.hidden,):
        raise DimensionError(f"initial state {h_init.shape} vs cycle hidden {params.hidden}")
    return run_decoder(h_init, params, None, teacher=ordered_past(gt_past, order).labels)


def cycle_loss(result: DecodeResult, gt_past: SegmentSeq, order: str = "forward") -> Tensor:
    """CE over the past labels plus EOS, plus MSE of the past relative durations."""
    ce, err = sequence_loss(result.steps, ordered_past(gt_past, order))
    return ops.add(ce, err)
