"""GRU encoder / attention GRU decoder over segment sequences, and the anticipation loss.

Symbol conventions: decoder inputs are one-hot over ``C + 1`` symbols where
index ``C`` is SOS; outputs are logits over ``C + 1`` classes where index ``C``
is EOS. Durations are predicted in log space and normalised by a softmax over
the non-EOS steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .diffcore import ops
from .diffcore.init import uniform_init
from .diffcore.params import Dense, GruParams, param
from .diffcore.tensor import Tensor, as_tensor
from .errors import ContractError, DimensionError, InputError


@dataclass
class SegmentSeq:
    labels: List[int]
    rel_durations: List[float]

    def __post_init__(self):
        if len(self.labels) != len(self.rel_durations):
            raise ContractError("labels and rel_durations differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def reversed(self) -> "SegmentSeq":
        return SegmentSeq(self.labels[::-1], self.rel_durations[::-1])

    def is_normalized(self, tol: float = 1e-6) -> bool:
        d = np.asarray(self.rel_durations, dtype=np.float64)
        return bool(len(d) and (d >= 0).all() and abs(d.sum() - 1.0) <= tol)


@dataclass
class EncoderOutput:
    states: Tensor  # hidden x t_o
    final: Tensor  # hidden


@dataclass
class DecoderStepOut:
    hidden: Tensor
    label_logits: Tensor  # C + 1
    dur_logit: Tensor  # shape (1,)


@dataclass
class DecodeResult:
    steps: List[DecoderStepOut]
    labels: List[int]
    truncated: bool = False  # free-running hit max_steps without EOS

    @property
    def final_hidden(self) -> Tensor:
        return self.steps[-1].hidden


# ---------------------------------------------------------------- encoder


def encode(features, gru: GruParams) -> EncoderOutput:
    features = as_tensor(features)
    if features.data.ndim != 2 or features.shape[1] < 1:
        raise DimensionError(f"encoder expects K x t_o with t_o >= 1, got {features.shape}")
    h0 = Tensor(np.zeros(gru.hidden, dtype=features.dtype))
    states = ops.gru_sequence(features, h0, gru.W, gru.U, gru.b)
    return EncoderOutput(states=states, final=ops.take(states, (slice(None), -1)))


# ---------------------------------------------------------------- attention


@dataclass
class AttnParams:
    Wq: Tensor  # heads x d_A x hidden
    Wk: Tensor
    Wv: Tensor
    out: Dense  # hidden x (heads * d_A)

    @property
    def heads(self) -> int:
        return self.Wq.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int, heads: int = 8, dtype=np.float64) -> "AttnParams":
        if hidden % heads:
            raise DimensionError(f"hidden size {hidden} not divisible by {heads} heads")
        d_a = hidden // heads
        shape = (heads, d_a, hidden)
        return cls(
            Wq=param(uniform_init(rng, shape, hidden, dtype)),
            Wk=param(uniform_init(rng, shape, hidden, dtype)),
            Wv=param(uniform_init(rng, shape, hidden, dtype)),
            out=Dense.init(rng, hidden, heads * d_a, dtype),
        )

    def named(self, prefix: str = "attn"):
        out = {f"{prefix}.Wq": self.Wq, f"{prefix}.Wk": self.Wk, f"{prefix}.Wv": self.Wv}
        out.update(self.out.named(f"{prefix}.out"))
        return out

    @classmethod
    def from_named(cls, d: Mapping[str, Tensor], prefix: str = "attn") -> "AttnParams":
        return cls(d[f"{prefix}.Wq"], d[f"{prefix}.Wk"], d[f"{prefix}.Wv"], Dense.from_named(d, f"{prefix}.out"))


@dataclass
class AttnMemory:
    """Per-head L2-normalised keys and transposed values of the encoder states."""

    keys: Tensor  # heads x d_A x t_o
    values_t: Tensor  # heads x t_o x d_A


def attention_memory(enc_states, params: AttnParams) -> AttnMemory:
    enc_states = as_tensor(enc_states)
    K = ops.l2_normalize(ops.matmul(params.Wk, enc_states), axis=1)
    V = ops.l2_normalize(ops.matmul(params.Wv, enc_states), axis=1)
    return AttnMemory(keys=K, values_t=ops.transpose(V, (0, 2, 1)))


def attend_memory(h_d, memory: AttnMemory, params: AttnParams, return_weights: bool = False):
    h_d = as_tensor(h_d)
    heads, d_a = params.Wq.shape[:2]
    q = ops.l2_normalize(ops.matmul(params.Wq, h_d), axis=1)  # heads x d_A
    scores = ops.matmul(ops.reshape(q, (heads, 1, d_a)), memory.keys)  # heads x 1 x t_o
    weights = ops.softmax(scores, axis=2)
    per_head = ops.matmul(weights, memory.values_t)  # heads x 1 x d_A
    ctx = ops.linear(params.out.W, ops.reshape(per_head, (heads * d_a,)), params.out.b)
    if return_weights:
        return ctx, ops.reshape(weights, (heads, -1))
    return ctx


def attend(h_d, enc_states, params: AttnParams, return_weights: bool = False):
    """Multi-head attention of a decoder state over the encoder states.

    Per head: ``q = Wq h``, ``K = Wk E``, ``V = Wv E``; q and every column of K
    and V are L2-normalised; output ``V softmax(q^T K)^T``. Heads are
    concatenated and projected back to the hidden size.
    """
    return attend_memory(h_d, attention_memory(enc_states, params), params, return_weights)


# ---------------------------------------------------------------- decoder


@dataclass
class DecoderParams:
    gru: GruParams
    label_head: Dense  # (C + 1) x hidden
    dur_head: Dense  # 1 x hidden
    attn: Optional[AttnParams] = None

    @property
    def num_symbols(self) -> int:
        return self.label_head.W.shape[0]

    @property
    def num_classes(self) -> int:
        return self.num_symbols - 1

    @property
    def hidden(self) -> int:
        return self.gru.hidden

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        num_classes: int,
        hidden: int,
        attention: bool = True,
        heads: int = 8,
        dtype=np.float64,
    ) -> "DecoderParams":
        n_sym = num_classes + 1
        in_dim = n_sym + (hidden if attention else 0)
        gru = GruParams.init(rng, in_dim, hidden, dtype)
        label_head = Dense.init(rng, n_sym, hidden, dtype)
        dur_head = Dense.init(rng, 1, hidden, dtype)
        attn = AttnParams.init(rng, hidden, heads, dtype) if attention else None
        return cls(gru, label_head, dur_head, attn)

    def named(self, prefix: str = "dec"):
        out = self.gru.named(f"{prefix}.gru")
        out.update(self.label_head.named(f"{prefix}.label"))
        out.update(self.dur_head.named(f"{prefix}.dur"))
        return out

    @classmethod
    def from_named(cls, d, prefix: str = "dec", attn: Optional[AttnParams] = None) -> "DecoderParams":
        return cls(
            GruParams.from_named(d, f"{prefix}.gru"),
            Dense.from_named(d, f"{prefix}.label"),
            Dense.from_named(d, f"{prefix}.dur"),
            attn,
        )


def one_hot(symbol: int, size: int, dtype=np.float64) -> np.ndarray:
    v = np.zeros(size, dtype=dtype)
    v[symbol] = 1.0
    return v


def decode_step(
    prev_label: int,
    h_prev,
    params: DecoderParams,
    memory: Optional[AttnMemory] = None,
) -> DecoderStepOut:
    """One decoder step; ``prev_label == C`` is SOS.

    With attention parameters the context ``attend(h_prev, ...)`` is concatenated
    after the one-hot input. Without them the input is the bare one-hot.
    """
    n_sym = params.num_symbols
    if not 0 <= int(prev_label) < n_sym:
        raise InputError(f"decoder input symbol {prev_label} outside [0, {n_sym})")
    h_prev = as_tensor(h_prev)
    x = Tensor(one_hot(int(prev_label), n_sym, h_prev.dtype))
    if params.attn is not None:
        if memory is None:
            raise ContractError("attention decoder needs encoder memory")
        x = ops.concat([x, attend_memory(h_prev, memory, params.attn)])
    hidden = ops.gru_cell(x, h_prev, params.gru.W, params.gru.U, params.gru.b)
    return DecoderStepOut(
        hidden=hidden,
        label_logits=ops.linear(params.label_head.W, hidden, params.label_head.b),
        dur_logit=ops.linear(params.dur_head.W, hidden, params.dur_head.b),
    )


def run_decoder(
    h0,
    params: DecoderParams,
    memory: Optional[AttnMemory] = None,
    teacher: Optional[Sequence[int]] = None,
    max_steps: int = 20,
) -> DecodeResult:
    """Teacher-forced (``teacher`` given) or free-running greedy decoding from ``h0``."""
    sos = eos = params.num_classes
    steps: List[DecoderStepOut] = []
    labels: List[int] = []
    h, prev = h0, sos
    if teacher is not None:
        for sym in list(teacher) + [eos]:
            out = decode_step(prev, h, params, memory)
            steps.append(out)
            labels.append(int(np.argmax(out.label_logits.data)))
            h, prev = out.hidden, sym
        return DecodeResult(steps, labels[:-1])
    if max_steps < 1:
        raise ContractError("max_steps must be >= 1")
    for _ in range(max_steps):
        out = decode_step(prev, h, params, memory)
        steps.append(out)
        sym = int(np.argmax(out.label_logits.data))
        if sym == eos:
            return DecodeResult(steps, labels, truncated=False)
        labels.append(sym)
        h, prev = out.hidden, sym
    return DecodeResult(steps, labels, truncated=True)


def decode_sequence(
    enc: EncoderOutput,
    params: DecoderParams,
    mode: str = "free_running",
    gt_labels: Optional[Sequence[int]] = None,
    max_steps: int = 20,
) -> DecodeResult:
    """Decode future segments from the encoder output.

    ``teacher_forced`` runs exactly ``len(gt_labels) + 1`` steps (the last
    targets EOS); ``free_running`` feeds back the argmax and stops at EOS or
    ``max_steps``.
    """
    memory = attention_memory(enc.states, params.attn) if params.attn is not None else None
    if mode == "teacher_forced":
        if gt_labels is None:
            raise ContractError("teacher_forced decoding needs ground-truth labels")
        return run_decoder(enc.final, params, memory, teacher=gt_labels)
    if mode != "free_running":
        raise InputError(f"unknown decode mode {mode!r}")
    return run_decoder(enc.final, params, memory, max_steps=max_steps)


def normalize_durations(dur_logits) -> Tensor:
    """Softmax of the per-step duration logits (EOS step already excluded)."""
    if isinstance(dur_logits, Tensor):
        vec = ops.reshape(dur_logits, (-1,))
    else:
        dur_logits = list(dur_logits)
        if not dur_logits:
            raise ContractError("no duration logits to normalise")
        vec = ops.concat([ops.reshape(as_tensor(d), (1,)) for d in dur_logits])
    if vec.shape[0] == 0:
        raise ContractError("no duration logits to normalise")
    return ops.softmax(vec, axis=0)


def sequence_loss(steps: Sequence[DecoderStepOut], gt: SegmentSeq) -> Tuple[Tensor, Tensor]:
    """Cross entropy over all steps (targets ``gt.labels + [EOS]``) and duration MSE.

    The CE is averaged over the ``len(gt) + 1`` loss steps; the MSE over the
    ``len(gt)`` non-EOS steps, whose duration logits are softmax-normalised.
    """
    if len(steps) != len(gt) + 1:
        raise ContractError(f"{len(steps)} decoder steps for {len(gt)} targets (+EOS)")
    if len(gt) == 0:
        raise ContractError("empty target sequence")
    eos = steps[0].label_logits.shape[0] - 1
    logits = ops.stack([s.label_logits for s in steps], axis=1)  # (C+1) x S
    ce = ops.cross_entropy(ops.softmax(logits, axis=0), list(gt.labels) + [eos])
    durs = normalize_durations([s.dur_logit for s in steps[:-1]])
    return ce, ops.mse(durs, np.asarray(gt.rel_durations, dtype=durs.dtype))


def anticipation_loss(steps: Sequence[DecoderStepOut], gt: SegmentSeq) -> Tensor:
    ce, err = sequence_loss(steps, gt)
    return ops.add(ce, err)
