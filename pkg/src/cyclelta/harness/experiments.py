"""Desk-scale benchmark runs shared by the experiment scripts and the acceptance suite.

Every run is deterministic, so results are cached on disk under a key made
from the run settings and a digest of the package source; any code change
invalidates the cache.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from ..datagen import Grammar, VideoSample, default_grammar, generate_videos, split_ids
from ..evalmoc import EvalGrid
from .config import RunConfig
from .train import evaluate_model, train

log = logging.getLogger(__name__)

# 200 train / 50 test videos, hidden 64, K 32, L 6, 80 epochs
BENCH_VIDEOS = 250
BENCH_TEST_FRAC = 0.2
BENCH_DATA_SEED = 0
BENCH_MODEL = dict(hidden=64, heads=8, tcn_width=32, tcn_layers=6, epochs=80)


def benchmark_split(grammar: Optional[Grammar] = None) -> Tuple[List[VideoSample], List[VideoSample]]:
    """The same videos ``gen-data`` writes with its default arguments."""
    grammar = grammar or default_grammar()
    videos = generate_videos(grammar, BENCH_VIDEOS, BENCH_DATA_SEED)
    splits = split_ids([v.video_id for v in videos], BENCH_TEST_FRAC, BENCH_DATA_SEED)
    by_id = {v.video_id: v for v in videos}
    return [by_id[i] for i in splits["train"]], [by_id[i] for i in splits["test"]]


def benchmark_config(ablation: str = "full", two_step: bool = False, seed: int = 0, **overrides) -> RunConfig:
    kw = dict(BENCH_MODEL, ablation=ablation, two_step=two_step, seed=seed)
    kw.update(overrides)
    return RunConfig(**kw)


def source_digest() -> str:
    root = Path(__file__).resolve().parents[1]
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".yaml") and "__pycache__" not in p.parts:
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


@dataclass
class RunResult:
    label: str
    grids: Dict[str, EvalGrid]  # "all" plus one entry per evaluated subset
    loss_csv: str
    seconds: float


def run_label(cfg: RunConfig) -> str:
    name = "two_step" if cfg.two_step else cfg.ablation
    return f"{name}_seed{cfg.seed}"


def _cache_key(cfg: RunConfig, grammar: Grammar) -> str:
    blob = json.dumps(
        {"cfg": dataclasses.asdict(cfg), "grammar": grammar.to_dict(), "src": source_digest()}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def run_benchmark(
    cfg: RunConfig,
    grammar: Optional[Grammar] = None,
    cache_dir: Optional[Path] = None,
    subsets: Optional[Dict[str, Sequence[str]]] = None,
) -> RunResult:
    """Train on the benchmark split and evaluate on its test videos (and task subsets).

    ``subsets`` maps a name to task names; by default the grammar's
    precursor-divergent tasks form the ``divergent`` subset.
    """
    grammar = grammar or default_grammar()
    if subsets is None:
        subsets = {"divergent": grammar.divergent_tasks} if grammar.divergent_tasks else {}
    if cfg.num_classes is None:
        cfg = cfg.replace(num_classes=grammar.num_classes)
    label = run_label(cfg)
    folder = None
    if cache_dir is not None:
        folder = Path(cache_dir) / f"{label}-{_cache_key(cfg, grammar)}"
        if (folder / "done").exists():
            grids = {p.stem: EvalGrid.read_csv(p) for p in sorted(folder.glob("*.csv")) if p.stem != "loss"}
            meta = json.loads((folder / "done").read_text())
            return RunResult(label, grids, (folder / "loss.csv").read_text(), meta["seconds"])
    train_videos, test_videos = benchmark_split(grammar)
    t0 = time.perf_counter()
    res = train(cfg, train_videos, progress=lambda e, v: log.info("%s epoch %d L=%.4f", label, e, v["L"]))
    seconds = time.perf_counter() - t0
    grid_kw = dict(obs_fracs=tuple(cfg.obs_fracs), pred_fracs=tuple(cfg.pred_fracs))
    grids = {"all": evaluate_model(res.model, test_videos, **grid_kw)}
    for name, tasks in subsets.items():
        keep = [v for v in test_videos if v.task in set(tasks)]
        grids[name] = evaluate_model(res.model, keep, **grid_kw)
    result = RunResult(label, grids, res.loss_log.to_csv(), seconds)
    if folder is not None:
        folder.mkdir(parents=True, exist_ok=True)
        for name, grid in grids.items():
            grid.write_csv(folder / f"{name}.csv")
        (folder / "loss.csv").write_text(result.loss_csv)
        (folder / "done").write_text(json.dumps({"seconds": seconds}))
        # hand back what a cache hit would, so fresh and cached runs compare equal
        return run_benchmark(cfg, grammar, cache_dir, subsets)
    return result


def mean_grid(results: Sequence[RunResult], subset: str = "all") -> EvalGrid:
    grids = [r.grids[subset] for r in results]
    out = EvalGrid(grids[0].obs_fracs, grids[0].pred_fracs)
    out.moc = {c: sum(g.moc[c] for g in grids) / len(grids) for c in out.cells()}
    return out
