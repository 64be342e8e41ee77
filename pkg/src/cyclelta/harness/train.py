"""Joint training (all loss terms summed), the two-step baseline, and evaluation glue."""
from __future__ import annotations

import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..datagen import TrainExample, VideoSample, make_train_examples, read_dataset
from ..diffcore import checkpoint
from ..diffcore.optim import AdamState, adam_step, step_decay_lr
from ..diffcore.tensor import Tensor
from ..errors import DataError, DimensionError, NumericError
from ..evalmoc import EvalGrid, Predictor, evaluate
from ..recognition import recognition_loss, tcn_forward
from ..seq2seq import SegmentSeq
from .config import RunConfig
from .model import AnticipationModel, LossTerms

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("L_A", "L_R", "L_cyc", "L")


def total_loss(example: TrainExample, model: AnticipationModel) -> LossTerms:
    """``L_A + L_R + L_cyc`` with the terms the model's ablation disables left out."""
    if example.obs_features.shape[0] != model.config.feat_dim:
        raise DimensionError(
            f"{example.video_id}: feature dim {example.obs_features.shape[0]} vs model {model.config.feat_dim}"
        )
    return model.losses(example.obs_features, example.obs_labels, example.past, example.future)


def recognition_only_loss(example: TrainExample, model: AnticipationModel) -> LossTerms:
    X = Tensor(np.asarray(example.obs_features, dtype=model.dtype))
    L_R = recognition_loss(tcn_forward(X, model.tcn).frame_probs, example.obs_labels)
    return LossTerms(None, L_R, None, L_R)


@dataclass
class LossLog:
    rows: List[Tuple[int, float, float, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch," + ",".join(LOSS_COLUMNS) + "\n")
        for epoch, *vals in self.rows:
            buf.write(f"{epoch}," + ",".join(f"{v:.10g}" for v in vals) + "\n")
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def column(self, name: str) -> np.ndarray:
        i = 1 + LOSS_COLUMNS.index(name)
        return np.array([r[i] for r in self.rows])


def build_examples(videos: Sequence[VideoSample], obs_fracs: Sequence[float]) -> List[TrainExample]:
    return [ex for v in videos for ex in make_train_examples(v, obs_fracs)]


def fit(
    model: AnticipationModel,
    examples: Sequence[TrainExample],
    cfg: RunConfig,
    loss_fn: Callable[[TrainExample, AnticipationModel], LossTerms] = total_loss,
    frozen_prefixes: Sequence[str] = (),
    seed_offset: int = 0,
    progress: Optional[Callable[[int, Dict[str, float]], None]] = None,
) -> LossLog:
    """Per-example Adam updates over seeded shuffles, with step-decayed learning rate.

    Parameters whose name starts with a frozen prefix are excluded from the
    graph and the optimiser.
    """
    params = model.named_params()
    trainable = {}
    for k, p in params.items():
        frozen = any(k.startswith(pre) for pre in frozen_prefixes)
        p.requires_grad = not frozen
        if not frozen:
            trainable[k] = p
    state = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1000 + seed_offset])
    out = LossLog()
    for epoch in range(cfg.epochs):
        state.lr = step_decay_lr(epoch, cfg.lr, cfg.lr_decay, cfg.lr_step)
        sums = np.zeros(len(LOSS_COLUMNS))
        for i in rng.permutation(len(examples)):
            ex = examples[i]
            for p in trainable.values():
                p.grad = None
            terms = loss_fn(ex, model)
            vals = terms.values()
            if not math.isfinite(vals["L"]):
                raise NumericError(f"non-finite loss at epoch {epoch} on {ex.video_id} (alpha={ex.alpha})")
            terms.total.backward()
            grads = {k: p.grad for k, p in trainable.items() if p.grad is not None}
            adam_step(trainable, grads, state)
            sums += [vals[c] for c in LOSS_COLUMNS]
        means = sums / max(len(examples), 1)
        out.rows.append((epoch, *map(float, means)))
        if progress:
            progress(epoch, dict(zip(LOSS_COLUMNS, means)))
    for p in params.values():
        p.requires_grad = True
    return out


def _training_data(cfg: RunConfig, videos: Optional[Sequence[VideoSample]]) -> Tuple[Sequence[VideoSample], int, int]:
    """Videos plus ``(C, D)``; reads the ``train`` split when no videos are given."""
    C = cfg.num_classes
    if videos is None:
        dataset = read_dataset(cfg.data_dir)
        videos = dataset.videos("train")
        C = C or dataset.num_classes
    if not videos:
        raise DataError(f"{cfg.data_dir}: no training videos")
    if C is None:
        C = max(int(v.frame_labels.max()) for v in videos) + 1
    return videos, C, videos[0].features.shape[0]


@dataclass
class TrainResult:
    model: AnticipationModel
    loss_log: LossLog
    phase1_state: Optional[Dict[str, np.ndarray]] = None
    phase1_log: Optional[LossLog] = None


def train(cfg: RunConfig, videos: Optional[Sequence[VideoSample]] = None, progress=None) -> TrainResult:
    """End-to-end training on the dataset's ``train`` split (or the given videos)."""
    if cfg.two_step:
        return train_two_step(cfg, videos, progress)
    videos, C, D = _training_data(cfg, videos)
    model = AnticipationModel(cfg.model_config(C, D), seed=cfg.seed)
    examples = build_examples(videos, cfg.train_obs_fracs)
    log_ = fit(model, examples, cfg, progress=progress)
    return TrainResult(model, log_)


def train_two_step(cfg: RunConfig, videos: Optional[Sequence[VideoSample]] = None, progress=None) -> TrainResult:
    """Phase 1: TCN on the recognition loss. Phase 2: TCN frozen, the rest on ``L_A + L_cyc``."""
    videos, C, D = _training_data(cfg, videos)
    mcfg = dataclasses.replace(cfg.model_config(C, D), rec_loss=False)
    if mcfg.encoder_input == "raw":
        mcfg = dataclasses.replace(mcfg, encoder_input="features")
    model = AnticipationModel(mcfg, seed=cfg.seed)
    examples = build_examples(videos, cfg.train_obs_fracs)
    log1 = fit(model, examples, cfg, loss_fn=recognition_only_loss, seed_offset=1, progress=progress)
    phase1 = {k: v.copy() for k, v in model.state_dict().items()}
    log2 = fit(model, examples, cfg, frozen_prefixes=("tcn.",), seed_offset=2, progress=progress)
    return TrainResult(model, log2, phase1, log1)


# ---------------------------------------------------------------- checkpoints


def save_model(model: AnticipationModel, path) -> None:
    checkpoint.save(path, model.state_dict())


def load_model(path, dtype: str = "float32") -> AnticipationModel:
    return AnticipationModel.from_state_dict(checkpoint.load(path), dtype=dtype)


# ---------------------------------------------------------------- evaluation


def model_predictor(model: AnticipationModel) -> Predictor:
    """Free-running decode of the observed prefix; fallback label for empty decodes.

    The fallback is the recognition module's label for the last observed frame,
    or that frame's ground truth when the model has no recognition head.
    """

    def predict(video: VideoSample, t_o: int):
        pred = model.predict(video.features[:, :t_o])
        fallback = pred.last_recognized
        if fallback is None:
            fallback = int(video.frame_labels[t_o - 1])
        if not pred.labels:
            return None, fallback
        return SegmentSeq(pred.labels, pred.rel_durations), fallback

    return predict


def evaluate_model(
    model: AnticipationModel,
    videos: Sequence[VideoSample],
    obs_fracs=(0.2, 0.3),
    pred_fracs=(0.1, 0.2, 0.3, 0.5),
    per_video: bool = False,
) -> EvalGrid:
    grid = EvalGrid(tuple(obs_fracs), tuple(pred_fracs))
    return evaluate(model_predictor(model), videos, model.config.num_classes, grid, per_video=per_video)
