"""Synthetic activity grammars, video sampling, training-example slicing and dataset files.

A grammar has action classes with uniform integer duration ranges, precursor
rules ("a may only appear after b") and tasks. A task is an ordered list of
slots; each slot is included with its probability and then filled uniformly
from those choices whose precursors have already appeared (and which differ
from the previous action). Frame features are the class prototype (a seeded
unit vector) plus i.i.d. Gaussian noise.

On-disk layout written by :func:`write_dataset`::

    mapping.txt            "<id> <name>" per class
    features/<vid>.feat    b"FEAT" u32 D u32 T, then T blocks of D little-endian f32
    groundTruth/<vid>.txt  one action name per frame
    splits/{train,test}.txt
    tasks.txt              "<vid> <task name>"
    grammar.yaml           the generating grammar
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .errors import ConfigError, DataError, InputError
from .seq2seq import SegmentSeq

FEAT_MAGIC = b"FEAT"
OBS_FRACS = (0.2, 0.3)
TRAIN_PRED_FRAC = 0.5

PathLike = Union[str, Path]


# ---------------------------------------------------------------- grammar


@dataclass
class ActionClass:
    name: str
    min_frames: int
    max_frames: int


@dataclass
class Slot:
    choices: List[int]
    prob: float = 1.0


@dataclass
class Task:
    name: str
    slots: List[Slot]


@dataclass
class Grammar:
    classes: List[ActionClass]
    tasks: List[Task]
    precursors: List[Tuple[int, int]] = field(default_factory=list)  # (action, required earlier)
    feat_dim: int = 16
    noise_sigma: float = 0.5
    min_frames: int = 80
    max_frames: int = 160
    prototype_seed: int = 0
    divergent_tasks: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def names(self) -> List[str]:
        return [c.name for c in self.classes]

    def task_index(self, name: str) -> int:
        for i, t in enumerate(self.tasks):
            if t.name == name:
                return i
        raise ConfigError(f"unknown task {name!r}")

    def requirements(self, action: int) -> List[int]:
        return [b for a, b in self.precursors if a == action]

    def validate(self) -> None:
        C = len(self.classes)
        if C < 1 or not self.tasks:
            raise ConfigError("grammar needs classes and tasks")
        if len(set(self.names)) != C or any(not n or " " in n for n in self.names):
            raise ConfigError("class names must be unique and contain no spaces")
        for c in self.classes:
            if not 1 <= c.min_frames <= c.max_frames:
                raise ConfigError(f"bad duration range for {c.name}")
        seen = set()
        for t in self.tasks:
            for s in t.slots:
                if not s.choices or not 0.0 < s.prob <= 1.0:
                    raise ConfigError(f"task {t.name}: slots need choices and 0 < prob <= 1")
                for c in s.choices:
                    if not 0 <= c < C:
                        raise ConfigError(f"task {t.name}: class index {c} out of range")
                seen.update(s.choices)
        if seen != set(range(C)):
            raise ConfigError(f"classes never reachable: {sorted(set(range(C)) - seen)}")
        for a, b in self.precursors:
            if not (0 <= a < C and 0 <= b < C) or a == b:
                raise ConfigError(f"bad precursor rule {a} <- {b}")
        if self.feat_dim < 1 or self.noise_sigma < 0 or not 1 <= self.min_frames <= self.max_frames:
            raise ConfigError("bad feat_dim / noise_sigma / frame range")
        for name in self.divergent_tasks:
            self.task_index(name)

    def prototypes(self) -> np.ndarray:
        """Seeded unit vectors, one row per class (float32)."""
        rng = np.random.default_rng(self.prototype_seed)
        P = rng.normal(size=(self.num_classes, self.feat_dim))
        P /= np.linalg.norm(P, axis=1, keepdims=True)
        return P.astype(np.float32)

    # -- serialisation

    def to_dict(self) -> dict:
        names = self.names
        return {
            "feat_dim": self.feat_dim,
            "noise_sigma": self.noise_sigma,
            "min_frames": self.min_frames,
            "max_frames": self.max_frames,
            "prototype_seed": self.prototype_seed,
            "classes": [{"name": c.name, "min": c.min_frames, "max": c.max_frames} for c in self.classes],
            "precursors": [{"action": names[a], "requires": names[b]} for a, b in self.precursors],
            "tasks": [
                {
                    "name": t.name,
                    "slots": [
                        {"choices": [names[c] for c in s.choices], **({"prob": s.prob} if s.prob != 1.0 else {})}
                        for s in t.slots
                    ],
                }
                for t in self.tasks
            ],
            "divergent_tasks": list(self.divergent_tasks),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Grammar":
        known = {"feat_dim", "noise_sigma", "min_frames", "max_frames", "prototype_seed", "classes", "precursors", "tasks", "divergent_tasks"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown grammar keys: {sorted(unknown)}")
        try:
            classes = [ActionClass(str(c["name"]), int(c["min"]), int(c["max"])) for c in d["classes"]]
            index = {c.name: i for i, c in enumerate(classes)}

            def cid(name):
                if name not in index:
                    raise ConfigError(f"unknown class {name!r}")
                return index[name]

            tasks = []
            for t in d["tasks"]:
                slots = []
                for s in t["slots"]:
                    if isinstance(s, (list, str)):
                        s = {"choices": s if isinstance(s, list) else [s]}
                    slots.append(Slot([cid(c) for c in s["choices"]], float(s.get("prob", 1.0))))
                tasks.append(Task(str(t["name"]), slots))
            rules = [(cid(r["action"]), cid(r["requires"])) for r in d.get("precursors", [])]
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed grammar: {exc}") from exc
        return cls(
            classes=classes,
            tasks=tasks,
            precursors=rules,
            feat_dim=int(d.get("feat_dim", 16)),
            noise_sigma=float(d.get("noise_sigma", 0.5)),
            min_frames=int(d.get("min_frames", 80)),
            max_frames=int(d.get("max_frames", 160)),
            prototype_seed=int(d.get("prototype_seed", 0)),
            divergent_tasks=[str(x) for x in d.get("divergent_tasks", [])],
        )

    def dump(self, path: PathLike) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def load_grammar(path: PathLike) -> Grammar:
    try:
        d = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"{path}: cannot read grammar ({exc.strerror})") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: grammar must be a mapping")
    return Grammar.from_dict(d)


def default_grammar() -> Grammar:
    text = resources.files("cyclelta").joinpath("data/default_grammar.yaml").read_text()
    return Grammar.from_dict(yaml.safe_load(text))


def rule_violations(labels: Sequence[int], rules: Iterable[Tuple[int, int]]) -> List[Tuple[int, int, int]]:
    """``(position, action, missing precursor)`` for every unmet precursor rule in a segment sequence."""
    out = []
    for i, a in enumerate(labels):
        for act, req in rules:
            if act == a and req not in labels[:i]:
                out.append((i, a, req))
    return out


# ---------------------------------------------------------------- videos


@dataclass
class VideoSample:
    video_id: str
    features: np.ndarray  # D x T, float32
    frame_labels: np.ndarray  # T, int64
    segments: List[Tuple[int, int, int]]  # (class, start, end) with end exclusive
    task: Optional[str] = None

    @property
    def num_frames(self) -> int:
        return int(self.frame_labels.shape[0])

    @property
    def segment_labels(self) -> List[int]:
        return [s[0] for s in self.segments]


def segments_from_labels(labels: Sequence[int]) -> List[Tuple[int, int, int]]:
    """Maximal runs of equal labels as ``(label, start, end)``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        return []
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [labels.size]])
    return [(int(labels[s]), int(s), int(e)) for s, e in zip(starts, ends)]


def _instantiate(grammar: Grammar, task: Task, rng: np.random.Generator) -> List[int]:
    seq: List[int] = []
    for slot in task.slots:
        if rng.random() >= slot.prob:
            continue
        prev = seq[-1] if seq else None
        ok = [c for c in slot.choices if c != prev and all(r in seq for r in grammar.requirements(c))]
        if ok:
            seq.append(int(ok[rng.integers(len(ok))]))
    return seq


def sample_video(grammar: Grammar, task_id: int, seed: int, video_id: str = "video") -> VideoSample:
    """One video of task ``task_id``; deterministic in ``seed``."""
    if not 0 <= task_id < len(grammar.tasks):
        raise InputError(f"task id {task_id} out of range")
    task = grammar.tasks[task_id]
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        seq = _instantiate(grammar, task, rng)
        if not seq:
            continue
        lens = [int(rng.integers(grammar.classes[c].min_frames, grammar.classes[c].max_frames + 1)) for c in seq]
        if grammar.min_frames <= sum(lens) <= grammar.max_frames:
            break
    else:
        raise ConfigError(f"task {task.name}: cannot hit frame range [{grammar.min_frames}, {grammar.max_frames}]")
    labels = np.repeat(np.asarray(seq, dtype=np.int64), lens)
    T = labels.size
    protos = grammar.prototypes()
    noise = rng.normal(size=(grammar.feat_dim, T)).astype(np.float32)
    feats = (protos[labels].T + np.float32(grammar.noise_sigma) * noise).astype(np.float32)
    return VideoSample(video_id, feats, labels, segments_from_labels(labels), task.name)


def generate_videos(grammar: Grammar, count: int, seed: int) -> List[VideoSample]:
    """Video ``i`` uses task ``i mod #tasks`` and seed ``seed XOR i``."""
    return [
        sample_video(grammar, i % len(grammar.tasks), seed ^ i, video_id=f"vid_{i:04d}")
        for i in range(count)
    ]


# ---------------------------------------------------------------- examples


def frame_count(frac: float, total: int) -> int:
    """``round(frac * total)`` with half-up rounding on the exact decimal fraction."""
    x = Fraction(str(frac)) * total
    return int(math.floor(x + Fraction(1, 2)))


@dataclass
class TrainExample:
    video_id: str
    alpha: float
    obs_features: np.ndarray  # D x t_o
    obs_labels: np.ndarray  # t_o
    past: SegmentSeq  # observed segments, durations relative to t_o
    future: SegmentSeq  # segments inside the horizon, durations relative to the horizon
    t_o: int
    horizon_frames: int


def _relative(runs: List[Tuple[int, int, int]], total: int) -> SegmentSeq:
    return SegmentSeq([r[0] for r in runs], [(r[2] - r[1]) / total for r in runs])


def make_example(video: VideoSample, alpha: float, pred_frac: float = TRAIN_PRED_FRAC) -> TrainExample:
    T = video.num_frames
    if T < 10:
        raise InputError(f"{video.video_id}: video too short ({T} frames)")
    t_o = frame_count(alpha, T)
    horizon = min(frame_count(pred_frac, T), T - t_o)
    if t_o < 1 or horizon < 1:
        raise InputError(f"{video.video_id}: empty observation or horizon for alpha={alpha}")
    labels = video.frame_labels
    past = segments_from_labels(labels[:t_o])
    future = segments_from_labels(labels[t_o : t_o + horizon])
    return TrainExample(
        video_id=video.video_id,
        alpha=alpha,
        obs_features=video.features[:, :t_o],
        obs_labels=labels[:t_o],
        past=_relative(past, t_o),
        future=_relative(future, horizon),
        t_o=t_o,
        horizon_frames=horizon,
    )


def make_train_examples(video: VideoSample, obs_fracs: Sequence[float] = OBS_FRACS) -> List[TrainExample]:
    """One example per observation fraction; the future is cut at 50% of the video."""
    return [make_example(video, a) for a in obs_fracs]


# ---------------------------------------------------------------- files


def encode_features(features: np.ndarray) -> bytes:
    D, T = features.shape
    return FEAT_MAGIC + struct.pack("<II", D, T) + np.ascontiguousarray(features.T, dtype="<f4").tobytes()


def decode_features(buf: bytes, source: str = "<bytes>") -> np.ndarray:
    if buf[:4] != FEAT_MAGIC or len(buf) < 12:
        raise DataError(f"{source}: not a feature file")
    D, T = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + 4 * D * T:
        raise DataError(f"{source}: expected {12 + 4 * D * T} bytes, found {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=12).reshape(T, D).T.astype(np.float32)


def write_dataset(
    samples: Sequence[VideoSample],
    splits: Mapping[str, Sequence[str]],
    out_dir: PathLike,
    class_names: Sequence[str],
    grammar: Optional[Grammar] = None,
) -> None:
    out = Path(out_dir)
    try:
        (out / "features").mkdir(parents=True, exist_ok=True)
        (out / "groundTruth").mkdir(exist_ok=True)
        (out / "splits").mkdir(exist_ok=True)
        (out / "mapping.txt").write_text("".join(f"{i} {n}\n" for i, n in enumerate(class_names)))
        for s in samples:
            (out / "features" / f"{s.video_id}.feat").write_bytes(encode_features(s.features))
            (out / "groundTruth" / f"{s.video_id}.txt").write_text("".join(f"{class_names[c]}\n" for c in s.frame_labels))
        for name, ids in splits.items():
            (out / "splits" / f"{name}.txt").write_text("".join(f"{v}\n" for v in ids))
        if any(s.task for s in samples):
            (out / "tasks.txt").write_text("".join(f"{s.video_id} {s.task}\n" for s in samples))
        if grammar is not None:
            grammar.dump(out / "grammar.yaml")
    except OSError as exc:
        raise DataError(f"{out}: cannot write dataset ({exc.strerror})") from exc


def split_ids(ids: Sequence[str], test_frac: float, seed: int) -> Dict[str, List[str]]:
    """Seeded permutation; the first ``round(test_frac * n)`` ids form the test split."""
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = frame_count(test_frac, len(ids))
    test = sorted(ids[i] for i in order[:n_test])
    train = sorted(ids[i] for i in order[n_test:])
    return {"train": train, "test": test}


@dataclass
class Dataset:
    root: Path
    class_names: List[str]
    splits: Dict[str, List[str]]
    tasks: Dict[str, str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def video(self, video_id: str) -> VideoSample:
        return read_video(self.root, video_id, self.class_names, self.tasks.get(video_id))

    def videos(self, split: str) -> List[VideoSample]:
        if split not in self.splits:
            raise DataError(f"{self.root}: no split {split!r}")
        return [self.video(v) for v in self.splits[split]]

    def grammar(self) -> Optional[Grammar]:
        path = self.root / "grammar.yaml"
        return load_grammar(path) if path.exists() else None


def _read_text(path: Path) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def read_mapping(root: PathLike) -> List[str]:
    path = Path(root) / "mapping.txt"
    names = []
    for i, line in enumerate(_read_text(path).splitlines()):
        parts = line.split()
        if len(parts) != 2 or int(parts[0]) != i:
            raise DataError(f"{path}: malformed line {i + 1}")
        names.append(parts[1])
    return names


def read_video(root: PathLike, video_id: str, class_names: Sequence[str], task: Optional[str] = None) -> VideoSample:
    root = Path(root)
    fpath = root / "features" / f"{video_id}.feat"
    try:
        feats = decode_features(fpath.read_bytes(), str(fpath))
    except OSError as exc:
        raise DataError(f"{fpath}: {exc.strerror}") from exc
    index = {n: i for i, n in enumerate(class_names)}
    gpath = root / "groundTruth" / f"{video_id}.txt"
    try:
        labels = np.array([index[n] for n in _read_text(gpath).split()], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"{gpath}: unknown action {exc}") from exc
    if labels.size != feats.shape[1]:
        raise DataError(f"{video_id}: {labels.size} labels for {feats.shape[1]} frames")
    return VideoSample(video_id, feats, labels, segments_from_labels(labels), task)


def read_dataset(root: PathLike) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: dataset directory not found")
    names = read_mapping(root)
    splits = {}
    for p in sorted((root / "splits").glob("*.txt")):
        splits[p.stem] = _read_text(p).split()
    if not splits:
        raise DataError(f"{root}/splits: no split files")
    tasks = {}
    tpath = root / "tasks.txt"
    if tpath.exists():
        for line in _read_text(tpath).splitlines():
            vid, name = line.split()
            tasks[vid] = name
    return Dataset(root, names, splits, tasks)
