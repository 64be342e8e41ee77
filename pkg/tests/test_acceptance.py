"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Criteria 5-7 train benchmark-size models (about 3.5 minutes each, 18 runs);
their results are cached under ``.cache/runs`` (override with CYCLELTA_CACHE)
keyed by the run settings and the package source, so only the first run is slow.
"""
import contextlib
import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cyclelta.datagen import (
    Grammar,
    default_grammar,
    generate_videos,
    make_example,
    read_dataset,
    split_ids,
    write_dataset,
)
from cyclelta.diffcore.gradcheck import grad_check
from cyclelta.diffcore.tensor import Tensor
from cyclelta.evalmoc import moc_accuracy, segments_to_frames
from cyclelta.harness.config import RunConfig
from cyclelta.harness.experiments import benchmark_config, mean_grid, run_benchmark
from cyclelta.harness.model import AnticipationModel
from cyclelta.harness.train import evaluate_model, load_model, save_model, total_loss, train
from cyclelta.recognition import TcnParams, receptive_field, tcn_forward
from cyclelta.seq2seq import AttnParams, SegmentSeq, attend, normalize_durations

RESULTS = []
CACHE = Path(os.environ.get("CYCLELTA_CACHE", Path(__file__).resolve().parents[1] / ".cache" / "runs"))
SEEDS = (0, 1, 2)


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS when the block completes, FAIL with the reason otherwise."""
    notes = []
    try:
        yield notes
    except BaseException as exc:
        reason = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
        RESULTS.append(f"FAIL  {number}. {title}: {reason}")
        raise
    RESULTS.append(f"PASS  {number}. {title}" + (f" ({'; '.join(notes)})" if notes else ""))


def cached_run(ablation="full", two_step=False, seed=0):
    return run_benchmark(benchmark_config(ablation, two_step=two_step, seed=seed), cache_dir=CACHE)


def four_class_grammar(lo=40, hi=40):
    return Grammar.from_dict(
        {
            "feat_dim": 6,
            "noise_sigma": 0.5,
            "min_frames": lo,
            "max_frames": hi,
            "prototype_seed": 1,
            "classes": [{"name": n, "min": 6, "max": 12} for n in ("a", "b", "c", "d")],
            "precursors": [{"action": "d", "requires": "b"}],
            "tasks": [{"name": "x", "slots": ["a", "b", "c", "d"]}, {"name": "y", "slots": ["a", "c", "b", "a"]}],
        }
    )


def tiny_run_config(**kw):
    base = dict(num_classes=4, feat_dim=6, tcn_layers=3, tcn_width=8, hidden=16, heads=2, epochs=2, seed=5)
    base.update(kw)
    return RunConfig(**base)


# ---------------------------------------------------------------- 1


def test_gradient_integrity():
    with criterion(1, "full composed loss passes grad check (<1e-4, <2 min)") as notes:
        video = generate_videos(four_class_grammar(), 1, 11)[0]
        assert video.num_frames == 40
        ex = make_example(video, 0.3)
        model = AnticipationModel(tiny_run_config(dtype="float64").model_config(), seed=1)
        params = model.named_params()
        assert any(k.startswith("cyc.") for k in params) and any(k.startswith("attn.") for k in params)
        t0 = time.perf_counter()
        err = grad_check(lambda: total_loss(ex, model).total, params, eps=1e-5, numeric_dtype=np.longdouble)
        seconds = time.perf_counter() - t0
        notes.append(f"max rel err {err:.2e}, {seconds:.1f}s, {sum(p.data.size for p in params.values())} params")
        assert err < 1e-4, f"max relative error {err:.3e}"
        assert seconds < 120, f"took {seconds:.0f}s"


# ---------------------------------------------------------------- 2


def test_normalization_invariants():
    with criterion(2, "duration, attention and frame distributions sum to 1 over 1000 cases each"):

        @settings(max_examples=1000)
        @given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
        def durations(logits):
            d = normalize_durations([Tensor([x]) for x in logits]).data
            assert abs(d.sum() - 1) <= 1e-6 and (d >= 0).all()

        @settings(max_examples=1000)
        @given(st.integers(1, 30), st.sampled_from([1, 2, 4, 8]), st.floats(0.01, 100), st.integers(0, 2**32 - 1))
        def attention(T, heads, scale, seed):
            rng = np.random.default_rng(seed)
            p = AttnParams.init(rng, 16, heads)
            _, w = attend(scale * rng.normal(size=16), scale * rng.normal(size=(16, T)), p, return_weights=True)
            assert np.abs(w.data.sum(axis=1) - 1).max() <= 1e-6 and (w.data >= 0).all()

        @settings(max_examples=1000)
        @given(st.integers(1, 40), st.integers(1, 4), st.integers(2, 6), st.integers(0, 2**32 - 1))
        def frame_probs(T, L, C, seed):
            rng = np.random.default_rng(seed)
            tcn = TcnParams.init(rng, 3, 4, L, C)
            P = tcn_forward(Tensor(10 * rng.normal(size=(3, T))), tcn).frame_probs.data
            assert P.shape == (C, T)
            assert np.abs(P.sum(axis=0) - 1).max() <= 1e-6 and (P >= 0).all()

        durations()
        attention()
        frame_probs()


# ---------------------------------------------------------------- 3


def test_receptive_field():
    with criterion(3, "TCN receptive field is 1 + 2(2^L - 1) for L in 1, 3, 5, 10") as notes:
        for L in (1, 3, 5, 10):
            expected = 1 + 2 * (2**L - 1)
            assert receptive_field(L) == expected
            tcn = TcnParams.init(np.random.default_rng(0), 1, 2, L, 3)
            # positive weights so every path carries signal and nothing cancels
            tcn.input_proj.W.data[...] = 1.0
            for layer in tcn.layers:
                layer.W1.data[...] = 0.5
                layer.W2.data[...] = np.eye(2)
            T, t0 = expected + 40, (expected + 40) // 2
            X = np.ones((1, T))
            base = tcn_forward(Tensor(X), tcn).features.data
            X[0, t0] += 1.0
            changed = np.flatnonzero((tcn_forward(Tensor(X), tcn).features.data != base).any(axis=0))
            assert changed.size == expected, f"L={L}: {changed.size} frames moved, expected {expected}"
            notes.append(f"L={L}: {changed.size}")


# ---------------------------------------------------------------- 4


def brute_moc(pred, gt):
    accs = []
    for c in sorted(set(gt)):
        idx = [i for i, g in enumerate(gt) if g == c]
        accs.append(sum(pred[i] == c for i in idx) / len(idx))
    return sum(accs) / len(accs)


def brute_frames(labels, rel, H):
    out, acc = [], 0.0
    ends = []
    for r in rel:
        acc += r
        ends.append(int(np.floor(H * acc + 0.5)))
    ends[-1] = H
    for i in range(H):
        out.append(next(lab for lab, e in zip(labels, ends) if i < e))
    return out


def test_evaluator_oracles():
    with criterion(4, "moc_accuracy and segments_to_frames equal brute-force oracles on 500 cases each"):
        seg_cases = st.integers(1, 6).flatmap(
            lambda n: st.tuples(
                st.lists(st.integers(0, 5), min_size=n, max_size=n),
                st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n),
                st.integers(1, 60),
            )
        )

        @settings(max_examples=500)
        @given(seg_cases)
        def expansion(case):
            labels, w, H = case
            rel = (np.asarray(w) / np.sum(w)).tolist()
            assert segments_to_frames(SegmentSeq(labels, rel), H).tolist() == brute_frames(labels, rel, H)

        @settings(max_examples=500)
        @given(
            st.integers(1, 60).flatmap(
                lambda H: st.tuples(
                    st.lists(st.integers(0, 5), min_size=H, max_size=H),
                    st.lists(st.integers(0, 5), min_size=H, max_size=H),
                )
            )
        )
        def moc(pair):
            pred, gt = pair
            assert moc_accuracy(pred, gt, 6) == brute_moc(pred, gt)

        expansion()
        moc()


# ---------------------------------------------------------------- 5-7


@pytest.mark.slow
def test_learnability():
    with criterion(5, "full model reaches MoC >= 0.80 at 30/10 and >= 0.55 at 20/50 in < 20 min") as notes:
        res = cached_run("full", seed=0)
        grid = res.grids["all"]
        notes.append(f"30/10 {grid.moc[(0.3, 0.1)]:.3f}, 20/50 {grid.moc[(0.2, 0.5)]:.3f}, {res.seconds / 60:.1f} min")
        assert grid.moc[(0.3, 0.1)] >= 0.80, f"MoC 30/10 = {grid.moc[(0.3, 0.1)]:.3f}"
        assert grid.moc[(0.2, 0.5)] >= 0.55, f"MoC 20/50 = {grid.moc[(0.2, 0.5)]:.3f}"
        assert res.seconds < 20 * 60


@pytest.mark.slow
def test_ablation_trends():
    with criterion(6, "recognition and cycle ablation trends at 30/50, mean of 3 seeds") as notes:
        cell = (0.3, 0.5)
        names = ("s2s", "s2s_tcn", "s2s_tcn_rec", "s2s_tcn_rec_cyc")
        runs = {n: [cached_run(n, seed=s) for s in SEEDS] for n in names}
        everything = {n: mean_grid(r, "all").moc[cell] for n, r in runs.items()}
        divergent = {n: mean_grid(r, "divergent").moc[cell] for n, r in runs.items()}
        notes.append(", ".join(f"{n} {v:.3f}" for n, v in everything.items()))
        notes.append(f"divergent: rec {divergent['s2s_tcn_rec']:.3f}, rec+cyc {divergent['s2s_tcn_rec_cyc']:.3f}")
        assert everything["s2s_tcn_rec"] > everything["s2s_tcn"], "recognition loss does not beat s2s_tcn"
        assert everything["s2s_tcn_rec"] >= everything["s2s"], "recognition loss falls below s2s"
        assert divergent["s2s_tcn_rec_cyc"] >= divergent["s2s_tcn_rec"], "cycle loss lowers divergent-task MoC"


@pytest.mark.slow
def test_end_to_end_beats_two_step():
    with criterion(7, "end-to-end >= two-step at every cell, mean of 3 seeds") as notes:
        joint = mean_grid([cached_run("full", seed=s) for s in SEEDS])
        staged = mean_grid([cached_run("full", two_step=True, seed=s) for s in SEEDS])
        margins = {c: joint.moc[c] - staged.moc[c] for c in joint.cells()}
        notes.append(
            "margin " + " ".join(f"{int(a * 100)}/{int(b * 100)}:{100 * m:+.1f}" for (a, b), m in margins.items())
        )
        worse = [c for c, m in margins.items() if m < 0]
        assert not worse, f"two-step ahead at {worse}"


# ---------------------------------------------------------------- 8-9


def test_determinism(tmp_path):
    with criterion(8, "identical seed and config give identical loss logs, checkpoints and results"):
        videos = generate_videos(four_class_grammar(30, 60), 6, 2)
        outputs = []
        for run in ("a", "b"):
            res = train(tiny_run_config(epochs=3), videos)
            save_model(res.model, tmp_path / f"{run}.ckpt")
            res.loss_log.write(tmp_path / f"{run}.loss.csv")
            evaluate_model(load_model(tmp_path / f"{run}.ckpt"), videos).write_csv(tmp_path / f"{run}.csv")
            outputs.append([(tmp_path / f"{run}{ext}").read_bytes() for ext in (".loss.csv", ".ckpt", ".csv")])
        assert outputs[0] == outputs[1]


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_format_round_trips(tmp_path):
    with criterion(9, "dataset and checkpoint write-read-write are byte-identical; feature size 12 + 4DT"):
        g = default_grammar()
        videos = generate_videos(g, 12, 4)
        splits = split_ids([v.video_id for v in videos], 0.25, 4)
        write_dataset(videos, splits, tmp_path / "a", g.names, g)
        ds = read_dataset(tmp_path / "a")
        back = [ds.video(v.video_id) for v in videos]
        write_dataset(back, ds.splits, tmp_path / "b", ds.class_names, ds.grammar())
        assert _tree(tmp_path / "a") == _tree(tmp_path / "b")
        for v in videos:
            size = (tmp_path / "a" / "features" / f"{v.video_id}.feat").stat().st_size
            assert size == 12 + 4 * g.feat_dim * v.num_frames

        model = AnticipationModel(tiny_run_config().model_config(), seed=8)
        save_model(model, tmp_path / "m1.ckpt")
        save_model(load_model(tmp_path / "m1.ckpt"), tmp_path / "m2.ckpt")
        assert (tmp_path / "m1.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()
