import math

import numpy as np
import pytest

from cyclelta.datagen import Grammar, default_grammar, generate_videos, make_example, split_ids, write_dataset
from cyclelta.diffcore import checkpoint
from cyclelta.diffcore.gradcheck import grad_check
from cyclelta.errors import ConfigError, DataError, DimensionError, NumericError
from cyclelta.harness import report
from cyclelta.harness.config import RunConfig, config_from_dict, dump_config, load_config
from cyclelta.harness.model import ABLATIONS, AnticipationModel, ModelConfig
from cyclelta.harness.train import (
    LossLog,
    build_examples,
    fit,
    load_model,
    model_predictor,
    save_model,
    total_loss,
    train,
    train_two_step,
)
from cyclelta.evalmoc import EvalGrid


def tiny_grammar(sigma=0.5):
    return Grammar.from_dict(
        {
            "feat_dim": 6,
            "noise_sigma": sigma,
            "min_frames": 30,
            "max_frames": 60,
            "prototype_seed": 1,
            "classes": [{"name": n, "min": 6, "max": 12} for n in ("a", "b", "c", "d")],
            "precursors": [{"action": "d", "requires": "b"}],
            "tasks": [{"name": "x", "slots": ["a", "b", "c", "d"]}, {"name": "y", "slots": ["a", "c", "b", "a"]}],
        }
    )


def tiny_config(**kw):
    base = dict(num_classes=4, feat_dim=6, tcn_layers=2, tcn_width=8, hidden=16, heads=2, epochs=2, seed=3)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def tiny_videos():
    return generate_videos(tiny_grammar(), 8, 0)


# ---------------------------------------------------------------- config


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(epochs=0)
    with pytest.raises(ConfigError):
        RunConfig(ablation="everything")
    with pytest.raises(ConfigError):
        RunConfig(hidden=20, heads=8)
    with pytest.raises(ConfigError):
        config_from_dict({"epochs": 3, "learning_rate": 0.1})


def test_config_file_round_trip(tmp_path):
    cfg = tiny_config(data_dir=str(tmp_path / "d"))
    dump_config(cfg, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == cfg
    (tmp_path / "rel.yaml").write_text("data_dir: data\nepochs: 5\n")
    assert load_config(tmp_path / "rel.yaml").data_dir == str((tmp_path / "data").resolve())


def test_ablation_table():
    m = {name: tiny_config(ablation=name).model_config() for name in ABLATIONS}
    assert m["s2s"].encoder_input == "raw" and not m["s2s"].uses_tcn
    assert m["s2s_tcn"].encoder_input == "features" and not m["s2s_tcn"].rec_loss
    assert m["s2s_tcn_rec"].rec_loss and not m["s2s_tcn_rec"].cycle
    assert m["s2s_tcn_rec_cyc"].cycle and not m["s2s_tcn_rec_cyc"].attention
    assert m["full"].attention and m["full"].cycle and m["full"].rec_loss


# ---------------------------------------------------------------- loss assembly


def test_ablation_gating_of_parameters():
    prefixes = lambda name: {k.split(".")[0] for k in AnticipationModel(tiny_config(ablation=name).model_config()).named_params()}
    assert prefixes("s2s") == {"enc", "dec"}
    assert prefixes("s2s_tcn") == {"tcn", "enc", "dec"}
    assert prefixes("s2s_tcn_rec_cyc") == {"tcn", "enc", "dec", "cyc"}
    assert prefixes("full") == {"tcn", "enc", "dec", "attn", "cyc"}


def test_s2s_loss_is_anticipation_only(tiny_videos):
    model = AnticipationModel(tiny_config(ablation="s2s").model_config())
    terms = total_loss(make_example(tiny_videos[0], 0.3), model)
    assert terms.total is terms.anticipation and terms.recognition is None and terms.cycle is None


def test_full_loss_dominates_each_term(tiny_videos):
    model = AnticipationModel(tiny_config().model_config())
    for v in tiny_videos:
        vals = total_loss(make_example(v, 0.2), model).values()
        assert all(vals[k] >= 0 for k in vals) and math.isfinite(vals["L"])
        assert vals["L"] == pytest.approx(vals["L_A"] + vals["L_R"] + vals["L_cyc"], rel=1e-6)
        assert vals["L"] >= max(vals["L_A"], vals["L_R"], vals["L_cyc"])


def test_disabled_modules_get_no_gradient(tiny_videos):
    model = AnticipationModel(tiny_config(ablation="s2s_tcn").model_config())
    total_loss(make_example(tiny_videos[1], 0.3), model).total.backward()
    grads = {k: p.grad for k, p in model.named_params().items()}
    assert grads["tcn.layer0.W1"] is not None
    assert grads["tcn.cls.W"] is None  # classifier only feeds L_R, which is off


def test_feature_dim_mismatch_is_dimension_error(tiny_videos):
    model = AnticipationModel(tiny_config(feat_dim=5).model_config())
    with pytest.raises(DimensionError):
        total_loss(make_example(tiny_videos[0], 0.3), model)


def test_full_model_gradient_small_instance():
    g = tiny_grammar()
    v = generate_videos(g, 1, 5)[0]
    ex = make_example(v, 0.3)
    cfg = tiny_config(dtype="float64").model_config()
    model = AnticipationModel(cfg, seed=1)
    params = model.named_params()
    fn = lambda: total_loss(ex, model).total
    assert grad_check(fn, params, numeric_dtype=np.longdouble) < 1e-4


def test_cycle_removal_leaves_inference_unchanged(tiny_videos):
    with_cyc = AnticipationModel(tiny_config(ablation="full").model_config(), seed=4)
    cfg = tiny_config(ablation="full").model_config()
    cfg.cycle = False
    without = AnticipationModel(cfg, seed=4)
    for v in tiny_videos[:3]:
        a, b = with_cyc.predict(v.features[:, :20]), without.predict(v.features[:, :20])
        assert a.labels == b.labels and a.rel_durations == b.rel_durations


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_save_load_save_identical(tmp_path):
    model = AnticipationModel(tiny_config().model_config(), seed=2)
    save_model(model, tmp_path / "a.ckpt")
    save_model(load_model(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt").read_bytes()[:4] == b"CKPT"


def test_checkpoint_restores_architecture(tmp_path):
    for name in ABLATIONS:
        model = AnticipationModel(tiny_config(ablation=name, cycle_order="reverse").model_config(), seed=2)
        save_model(model, tmp_path / f"{name}.ckpt")
        back = load_model(tmp_path / f"{name}.ckpt")
        if model.config.uses_tcn:
            assert back.config == model.config
        else:  # no TCN tensors to read its size from
            assert back.config.with_ablation(name) == model.config.with_ablation(name).__class__(
                **{**model.config.__dict__, "tcn_layers": 1, "tcn_width": 1}
            )


def test_checkpoint_errors(tmp_path):
    model = AnticipationModel(tiny_config().model_config())
    state = model.state_dict()
    state["dec.label.W"] = np.zeros((3, 16), np.float32)
    with pytest.raises(DimensionError):
        model.load_state_dict(state)
    (tmp_path / "bad.ckpt").write_bytes(b"CKPT" + b"\x02\x00\x00\x00" + b"\x00" * 4)
    with pytest.raises(DataError, match="version"):
        load_model(tmp_path / "bad.ckpt")


# ---------------------------------------------------------------- training


def test_training_smoke_and_determinism(tmp_path, tiny_videos):
    cfg = tiny_config()
    a, b = train(cfg, tiny_videos), train(cfg, tiny_videos)
    assert len(a.loss_log.rows) == 2
    assert a.loss_log.to_csv() == b.loss_log.to_csv()
    assert a.loss_log.to_csv().splitlines()[0] == "epoch,L_A,L_R,L_cyc,L"
    save_model(a.model, tmp_path / "a.ckpt")
    save_model(b.model, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert set(checkpoint.load(tmp_path / "a.ckpt")) == set(a.model.state_dict())


def test_training_reduces_anticipation_loss(tiny_videos):
    res = train(tiny_config(epochs=12), tiny_videos)
    L_A = res.loss_log.column("L_A")
    assert L_A[-1] < L_A[0]


def test_nan_loss_raises_numeric_error(tiny_videos):
    model = AnticipationModel(tiny_config().model_config())
    model.decoder.label_head.W.data[...] = np.nan
    with pytest.raises(NumericError):
        fit(model, build_examples(tiny_videos[:1], [0.3]), tiny_config())


def test_two_step_freezes_tcn(tiny_videos):
    res = train_two_step(tiny_config(epochs=2), tiny_videos)
    final = res.model.state_dict()
    for k, v in res.phase1_state.items():
        if k.startswith("tcn."):
            assert np.array_equal(final[k], v), k
    assert not res.model.config.rec_loss
    moved = [k for k in res.phase1_state if not k.startswith(("tcn.", "meta.")) and not np.array_equal(final[k], res.phase1_state[k])]
    assert moved
    assert res.phase1_log.column("L_A").max() == 0.0 and res.phase1_log.column("L_R").min() > 0


def test_two_step_phase_one_separates_clean_data():
    g = tiny_grammar(sigma=0.0)
    vids = generate_videos(g, 6, 1)
    res = train_two_step(tiny_config(epochs=30), vids)
    model = AnticipationModel.from_state_dict(res.phase1_state, dtype="float32")
    from cyclelta.recognition import tcn_forward

    acc = []
    for ex in build_examples(vids, [0.2, 0.3]):  # the frames recognition is trained on
        probs = tcn_forward(ex.obs_features, model.tcn).frame_probs.data
        acc.append((probs.argmax(axis=0) == ex.obs_labels).mean())
    assert np.mean(acc) > 0.99


def test_model_predictor_fallbacks(tiny_videos):
    v = tiny_videos[0]
    s2s = AnticipationModel(tiny_config(ablation="s2s").model_config())
    s2s.decoder.label_head.W.data[...] = 0
    s2s.decoder.label_head.b.data[...] = 0
    s2s.decoder.label_head.b.data[4] = 9.0  # EOS immediately
    seq, fb = model_predictor(s2s)(v, 10)
    assert seq is None and fb == v.frame_labels[9]
    full = AnticipationModel(tiny_config().model_config())
    full.decoder.label_head.W.data[...] = 0
    full.decoder.label_head.b.data[...] = 0
    full.decoder.label_head.b.data[4] = 9.0
    seq, fb = model_predictor(full)(v, 10)
    assert seq is None and fb == full.predict(v.features[:, :10]).last_recognized


# ---------------------------------------------------------------- report


def _grid(values):
    g = EvalGrid()
    g.moc = dict(zip(g.cells(), values))
    return g


def test_report_mean_std_and_delta():
    base = [("base", _grid([0.1] * 8)), ("base", _grid([0.3] * 8))]
    new = [("new", _grid([0.2 + 0.1 * i for i in range(8)])) for _ in range(3)]
    methods = report.summarize(base + new)
    assert methods["base"].mean((0.2, 0.1)) == pytest.approx(0.2)
    assert methods["base"].std((0.2, 0.1)) == pytest.approx(np.sqrt(0.02))
    csv = report.to_csv(methods, "base").splitlines()
    assert csv[0] == "method,obs,pred,mean,std,n,delta,run0,run1,run2"
    # new at (0.3, 0.5) is the last cell: 0.2 + 0.7 = 0.9, baseline mean 0.2
    last = csv[-1].split(",")
    assert last[:7] == ["new", "0.3", "0.5", "0.900000", "0.000000", "3", "+0.700000"]
    assert "±" in report.to_text(methods, "base")


def test_report_file_grouping(tmp_path):
    for seed, v in enumerate([0.4, 0.6]):
        _grid([v] * 8).write_csv(tmp_path / f"full_seed{seed}.csv")
    _grid([0.5] * 8).write_csv(tmp_path / "two_step_seed0.csv")
    methods = report.load_results(sorted(tmp_path.glob("*.csv")))
    assert list(methods) == ["full", "two_step"]
    assert methods["full"].mean((0.2, 0.5)) == pytest.approx(0.5)
    assert report.method_name("runs/full_seed12.csv") == "full"


def test_report_empty_input():
    from cyclelta.errors import InputError

    with pytest.raises(InputError):
        report.load_results([])


@pytest.mark.slow
def test_benchmark_run_lowers_anticipation_loss():
    from cyclelta.harness.experiments import benchmark_config, run_benchmark
    from test_acceptance import CACHE

    res = run_benchmark(benchmark_config("full", seed=0), cache_dir=CACHE)
    rows = [line.split(",") for line in res.loss_csv.splitlines()[1:]]
    L_A = {int(r[0]): float(r[1]) for r in rows}
    assert L_A[39] < L_A[0]  # 40th epoch vs 1st
