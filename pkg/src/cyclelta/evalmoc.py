"""Mean-over-classes evaluation over observation/prediction percentage grids."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .datagen import TRAIN_PRED_FRAC, VideoSample, frame_count, segments_from_labels
from .errors import ContractError, DataError, InputError
from .seq2seq import SegmentSeq

log = logging.getLogger(__name__)

OBS_FRACS = (0.2, 0.3)
PRED_FRACS = (0.1, 0.2, 0.3, 0.5)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def segments_to_frames(seq: SegmentSeq, horizon: int) -> np.ndarray:
    """Expand a segment sequence to exactly ``horizon`` frame labels.

    Boundaries are ``round(H * cumsum(rel_durations))`` (half up) with the last
    forced to ``H``; a segment whose boundaries coincide gets no frames.
    """
    if horizon < 1:
        raise InputError("horizon must be >= 1")
    if len(seq) == 0:
        raise ContractError("cannot expand an empty segment sequence")
    bounds = [round_half_up(horizon * c) for c in np.cumsum(seq.rel_durations)]
    bounds[-1] = horizon
    out = np.empty(horizon, dtype=np.int64)
    start = 0
    for label, b in zip(seq.labels, bounds):
        b = min(max(b, start), horizon)
        out[start:b] = label
        start = b
    return out


def class_counts(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-class ``(correct, total)`` frame counts with respect to the ground truth."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ContractError(f"prediction length {pred.shape} vs ground truth {gt.shape}")
    total = np.bincount(gt, minlength=num_classes)[:num_classes]
    correct = np.bincount(gt[pred == gt], minlength=num_classes)[:num_classes]
    return correct, total


def moc_from_counts(correct: np.ndarray, total: np.ndarray) -> float:
    present = total > 0
    if not present.any():
        return float("nan")
    return float(np.mean(correct[present] / total[present]))


def moc_accuracy(pred_frames, gt_frames, num_classes: int) -> float:
    """Per-class frame accuracy averaged over classes present in the ground truth."""
    return moc_from_counts(*class_counts(pred_frames, gt_frames, num_classes))


@dataclass
class EvalGrid:
    obs_fracs: Tuple[float, ...] = OBS_FRACS
    pred_fracs: Tuple[float, ...] = PRED_FRACS
    moc: Dict[Tuple[float, float], float] = field(default_factory=dict)

    def cells(self) -> List[Tuple[float, float]]:
        return [(a, b) for a in self.obs_fracs for b in self.pred_fracs]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("obs,pred,moc\n")
        for a, b in self.cells():
            buf.write(f"{a},{b},{self.moc[(a, b)]:.6f}\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "EvalGrid":
        try:
            rows = list(csv.DictReader(Path(path).read_text().splitlines()))
        except OSError as exc:
            raise DataError(f"{path}: {exc.strerror}") from exc
        if not rows or set(rows[0]) != {"obs", "pred", "moc"}:
            raise DataError(f"{path}: expected header obs,pred,moc")
        moc = {(float(r["obs"]), float(r["pred"])): float(r["moc"]) for r in rows}
        obs = tuple(sorted({k[0] for k in moc}))
        pred = tuple(sorted({k[1] for k in moc}))
        return cls(obs, pred, moc)


# A predictor maps (video, t_o) to (future SegmentSeq or None, fallback label).
Predictor = Callable[[VideoSample, int], Tuple[Optional[SegmentSeq], int]]


def future_frames(video: VideoSample, alpha: float, predictor: Predictor) -> Tuple[np.ndarray, int]:
    """Decode once for ``alpha`` and expand over the maximal 50% horizon."""
    T = video.num_frames
    t_o = frame_count(alpha, T)
    horizon = frame_count(TRAIN_PRED_FRAC, T)
    seq, fallback = predictor(video, t_o)
    if seq is None or len(seq) == 0:
        return np.full(horizon, fallback, dtype=np.int64), t_o
    return segments_to_frames(seq, horizon), t_o


def evaluate(
    predictor: Predictor,
    videos: Sequence[VideoSample],
    num_classes: int,
    grid: Optional[EvalGrid] = None,
    per_video: bool = False,
) -> EvalGrid:
    """Fill ``grid`` with MoC for each (observation, prediction) cell.

    Counts are accumulated over the whole set before averaging (dataset-level
    MoC); ``per_video=True`` averages per-video MoC instead.
    """
    grid = grid or EvalGrid()
    grid.moc = {}
    correct = {c: np.zeros(num_classes, dtype=np.int64) for c in grid.cells()}
    total = {c: np.zeros(num_classes, dtype=np.int64) for c in grid.cells()}
    vid_scores: Dict[Tuple[float, float], List[float]] = {c: [] for c in grid.cells()}
    for video in videos:
        T = video.num_frames
        for alpha in grid.obs_fracs:
            frames, t_o = future_frames(video, alpha, predictor)
            for beta in grid.pred_fracs:
                n = frame_count(beta, T)
                if n > T - t_o:
                    log.warning("%s: prediction horizon clamped to %d frames", video.video_id, T - t_o)
                    n = T - t_o
                n = min(n, frames.size)
                gt = video.frame_labels[t_o : t_o + n]
                cc, tt = class_counts(frames[:n], gt, num_classes)
                correct[(alpha, beta)] += cc
                total[(alpha, beta)] += tt
                vid_scores[(alpha, beta)].append(moc_from_counts(cc, tt))
    for cell in grid.cells():
        grid.moc[cell] = float(np.nanmean(vid_scores[cell])) if per_video else moc_from_counts(correct[cell], total[cell])
    return grid


def oracle_predictor(video: VideoSample, t_o: int) -> Tuple[SegmentSeq, int]:
    """Ground-truth future over the 50% horizon; used to sanity-check the protocol."""
    horizon = frame_count(TRAIN_PRED_FRAC, video.num_frames)
    window = video.frame_labels[t_o : t_o + horizon]
    runs = segments_from_labels(window)
    return SegmentSeq([r[0] for r in runs], [(r[2] - r[1]) / horizon for r in runs]), int(video.frame_labels[t_o - 1])
