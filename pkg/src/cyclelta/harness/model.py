"""Full anticipation model: TCN -> GRU encoder -> attention decoder (+ cycle decoder)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np

from ..cycle import CycleParams, cycle_decode, cycle_loss
from ..diffcore import ops
from ..diffcore.params import GruParams
from ..diffcore.tensor import Tensor, no_grad
from ..errors import ConfigError, DataError, DimensionError
from ..recognition import TcnParams, recognition_loss, tcn_forward
from ..seq2seq import (
    AttnParams,
    DecoderParams,
    SegmentSeq,
    anticipation_loss,
    decode_sequence,
    encode,
    normalize_durations,
)

ENCODER_INPUTS = ("raw", "features", "probs")
CYCLE_ORDERS = ("forward", "reverse")

# ablation name -> (encoder_input, rec_loss, cycle, attention)
ABLATIONS = {
    "s2s": ("raw", False, False, False),
    "s2s_tcn": ("features", False, False, False),
    "s2s_tcn_rec": ("features", True, False, False),
    "s2s_tcn_rec_cyc": ("features", True, True, False),
    "full": ("features", True, True, True),
}


@dataclass
class ModelConfig:
    num_classes: int = 12
    feat_dim: int = 16
    tcn_layers: int = 10
    tcn_width: int = 64
    hidden: int = 512
    heads: int = 8
    encoder_input: str = "features"
    rec_loss: bool = True
    cycle: bool = True
    attention: bool = True
    cycle_order: str = "forward"
    max_steps: int = 20
    dtype: str = "float32"

    def __post_init__(self):
        if self.encoder_input not in ENCODER_INPUTS:
            raise ConfigError(f"encoder_input must be one of {ENCODER_INPUTS}")
        if self.cycle_order not in CYCLE_ORDERS:
            raise ConfigError(f"cycle_order must be one of {CYCLE_ORDERS}")
        if self.attention and self.hidden % self.heads:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if min(self.num_classes, self.feat_dim, self.tcn_layers, self.tcn_width, self.hidden, self.max_steps) < 1:
            raise ConfigError("model dimensions must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    @property
    def uses_tcn(self) -> bool:
        return self.encoder_input != "raw" or self.rec_loss

    def with_ablation(self, name: str) -> "ModelConfig":
        if name not in ABLATIONS:
            raise ConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        enc_in, rec, cyc, attn = ABLATIONS[name]
        kw = dict(self.__dict__)
        kw.update(encoder_input=enc_in, rec_loss=rec, cycle=cyc, attention=attn)
        return ModelConfig(**kw)


@dataclass
class LossTerms:
    anticipation: Tensor
    recognition: Optional[Tensor]
    cycle: Optional[Tensor]
    total: Tensor

    def values(self) -> Dict[str, float]:
        f = lambda t: 0.0 if t is None else float(t.data)
        return {"L_A": f(self.anticipation), "L_R": f(self.recognition), "L_cyc": f(self.cycle), "L": f(self.total)}


@dataclass
class Prediction:
    labels: List[int]
    rel_durations: List[float]
    truncated: bool = False
    last_recognized: Optional[int] = None  # TCN argmax at the last observed frame


class AnticipationModel:
    """Holds the named parameters and wires the modules together per ``ModelConfig``."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dt = np.dtype(config.dtype)
        C, H = config.num_classes, config.hidden
        rng = lambda k: np.random.default_rng([seed, k])
        self.tcn: Optional[TcnParams] = None
        if config.uses_tcn:
            self.tcn = TcnParams.init(rng(0), config.feat_dim, config.tcn_width, config.tcn_layers, C, dt)
        enc_in = {"raw": config.feat_dim, "features": config.tcn_width, "probs": C}[config.encoder_input]
        self.encoder = GruParams.init(rng(1), enc_in, H, dt)
        self.decoder = DecoderParams.init(rng(2), C, H, attention=config.attention, heads=config.heads, dtype=dt)
        self.cycle: Optional[CycleParams] = CycleParams.init(rng(4), C, H, dt) if config.cycle else None

    # ------------------------------------------------------------ parameters

    def named_params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        if self.tcn is not None:
            out.update(self.tcn.named("tcn"))
        out.update(self.encoder.named("enc.gru"))
        out.update(self.decoder.named("dec"))
        if self.decoder.attn is not None:
            out.update(self.decoder.attn.named("attn"))
        if self.cycle is not None:
            out.update(self.cycle.named("cyc"))
        return out

    def arch_code(self) -> np.ndarray:
        c = self.config
        return np.array(
            [
                c.heads,
                ENCODER_INPUTS.index(c.encoder_input),
                int(c.attention),
                int(c.rec_loss),
                int(c.cycle),
                CYCLE_ORDERS.index(c.cycle_order),
                c.max_steps,
            ],
            dtype=np.float32,
        )

    def state_dict(self) -> Dict[str, np.ndarray]:
        out = {"meta.arch": self.arch_code()}
        out.update({k: v.data for k, v in self.named_params().items()})
        return out

    @classmethod
    def from_state_dict(cls, state: Mapping[str, np.ndarray], dtype: str = "float32") -> "AnticipationModel":
        if "meta.arch" not in state:
            raise DataError("checkpoint lacks meta.arch")
        code = [int(round(float(v))) for v in np.asarray(state["meta.arch"]).reshape(-1)]
        if len(code) != 7:
            raise DataError("checkpoint meta.arch has wrong length")
        heads, enc_in, attn, rec, cyc, order, max_steps = code
        try:
            label_W = state["dec.label.W"]
            enc_U = state["enc.gru.U"]
            C = label_W.shape[0] - 1
            H = enc_U.shape[1]
            if "tcn.in.W" in state:
                width, feat_dim = state["tcn.in.W"].shape
                layers = sum(1 for k in state if k.startswith("tcn.layer") and k.endswith(".W1"))
            else:
                width, layers = 1, 1
                feat_dim = state["enc.gru.W"].shape[1]
        except (KeyError, IndexError) as exc:
            raise DataError(f"checkpoint missing tensor {exc}") from exc
        config = ModelConfig(
            num_classes=C,
            feat_dim=feat_dim,
            tcn_layers=layers,
            tcn_width=width,
            hidden=H,
            heads=heads,
            encoder_input=ENCODER_INPUTS[enc_in],
            rec_loss=bool(rec),
            cycle=bool(cyc),
            attention=bool(attn),
            cycle_order=CYCLE_ORDERS[order],
            max_steps=max_steps,
            dtype=dtype,
        )
        if config.encoder_input == "raw" and not config.rec_loss and "tcn.in.W" in state:
            raise DataError("checkpoint has TCN tensors but architecture does not use them")
        model = cls(config)
        model.load_state_dict(state)
        return model

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        named = self.named_params()
        expected = set(named) | {"meta.arch"}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise DimensionError(f"checkpoint/model mismatch: missing {missing}, unexpected {extra}")
        for k, p in named.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise DimensionError(f"{k}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data[...] = arr

    # ------------------------------------------------------------ forward

    @property
    def dtype(self):
        """Working precision; follows the parameters (grad checks may cast them)."""
        return self.encoder.W.data.dtype

    def _encoder_input(self, features: Tensor):
        rec = None
        if self.tcn is not None:
            rec = tcn_forward(features, self.tcn)
        enc_in = {"raw": features, "features": rec.features if rec else None, "probs": rec.frame_probs if rec else None}[
            self.config.encoder_input
        ]
        return enc_in, rec

    def losses(self, obs_features: np.ndarray, obs_labels, past: SegmentSeq, future: SegmentSeq) -> LossTerms:
        """All loss terms enabled by the config for one training example (teacher forcing)."""
        cfg = self.config
        X = Tensor(np.asarray(obs_features, dtype=self.dtype))
        if X.shape[0] != cfg.feat_dim:
            raise DimensionError(f"feature dim {X.shape[0]} vs config {cfg.feat_dim}")
        enc_in, rec = self._encoder_input(X)
        L_R = recognition_loss(rec.frame_probs, obs_labels) if cfg.rec_loss else None
        enc = encode(enc_in, self.encoder)
        dec = decode_sequence(enc, self.decoder, mode="teacher_forced", gt_labels=future.labels)
        L_A = anticipation_loss(dec.steps, future)
        L_cyc = None
        if cfg.cycle:
            cyc = cycle_decode(dec.final_hidden, past, self.cycle, cfg.cycle_order)
            L_cyc = cycle_loss(cyc, past, cfg.cycle_order)
        total = L_A
        for term in (L_R, L_cyc):
            if term is not None:
                total = ops.add(total, term)
        return LossTerms(L_A, L_R, L_cyc, total)

    def predict(self, obs_features: np.ndarray, max_steps: Optional[int] = None) -> Prediction:
        """Greedy free-running decode of the future segments; the cycle decoder is not used."""
        cfg = self.config
        with no_grad():
            X = Tensor(np.asarray(obs_features, dtype=self.dtype))
            enc_in, rec = self._encoder_input(X)
            enc = encode(enc_in, self.encoder)
            dec = decode_sequence(enc, self.decoder, mode="free_running", max_steps=max_steps or cfg.max_steps)
            n = len(dec.labels)
            durs = normalize_durations([s.dur_logit for s in dec.steps[:n]]).data.tolist() if n else []
            last = int(np.argmax(rec.frame_probs.data[:, -1])) if rec is not None else None
        return Prediction(dec.labels, [float(d) for d in durs], dec.truncated, last)
