"""Command line: gen-data, train, predict, eval, report.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from ..datagen import default_grammar, frame_count, generate_videos, load_grammar, read_dataset, split_ids, write_dataset
from ..errors import ConfigError, ContractError, DataError, DimensionError, InputError, NumericError
from ..evalmoc import EvalGrid, evaluate, future_frames
from . import report
from .config import RunConfig, load_config
from .train import load_model, model_predictor, save_model, train

log = logging.getLogger("cyclelta")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fractions(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x]


def cmd_gen_data(args) -> int:
    grammar = load_grammar(args.grammar) if args.grammar else default_grammar()
    videos = generate_videos(grammar, args.videos, args.seed)
    splits = split_ids([v.video_id for v in videos], args.test_frac, args.seed)
    write_dataset(videos, splits, args.out, grammar.names, grammar)
    print(f"wrote {len(videos)} videos to {args.out} (train {len(splits['train'])}, test {len(splits['test'])})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.ablation:
        overrides["ablation"] = args.ablation
    if args.two_step:
        overrides["two_step"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.data:
        overrides["data_dir"] = args.data
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    cfg = cfg.replace(**overrides) if overrides else cfg

    def progress(epoch, vals):
        log.info("epoch %d  " + "  ".join(f"{k}={v:.4f}" for k, v in vals.items()), epoch)

    res = train(cfg, progress=progress)
    out = Path(args.out)
    save_model(res.model, out)
    res.loss_log.write(f"{out}.loss.csv")
    if res.phase1_state is not None:
        from ..diffcore import checkpoint

        checkpoint.save(f"{out}.phase1", res.phase1_state)
        res.phase1_log.write(f"{out}.phase1.loss.csv")
    print(f"saved {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.ckpt)
    dataset = read_dataset(args.data)
    video = dataset.video(args.video)
    T = video.num_frames
    t_o = frame_count(args.obs, T)
    if not 1 <= t_o < T:
        raise InputError(f"observation fraction {args.obs} leaves no frames to observe or predict")
    predictor = model_predictor(model)
    seq, fallback = predictor(video, t_o)
    frames, _ = future_frames(video, args.obs, predictor)
    n = frame_count(args.pred, T)
    if n > T - t_o:
        log.warning("%s: prediction horizon clamped to %d frames", video.video_id, T - t_o)
        n = T - t_o
    n = min(n, frames.size)
    names = dataset.class_names
    if seq is None:
        print(f"{names[fallback]} 1.000000")
    else:
        for label, d in zip(seq.labels, seq.rel_durations):
            print(f"{names[label]} {d:.6f}")
    print(" ".join(names[c] for c in frames[:n]))
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    dataset = read_dataset(args.data)
    videos = dataset.videos(args.split)
    if args.tasks:
        keep = set(args.tasks.split(","))
        videos = [v for v in videos if v.task in keep]
        if not videos:
            raise DataError(f"{args.data}: no {args.split} videos for tasks {sorted(keep)}")
    if model.config.num_classes != dataset.num_classes:
        raise DimensionError(f"checkpoint has {model.config.num_classes} classes, dataset {dataset.num_classes}")
    grid = EvalGrid(tuple(_fractions(args.obs)), tuple(_fractions(args.pred)))
    grid = evaluate(model_predictor(model), videos, dataset.num_classes, grid, per_video=args.per_video)
    grid.write_csv(args.out)
    sys.stdout.write(grid.to_csv())
    return EXIT_OK


def cmd_report(args) -> int:
    methods = report.load_results(args.inputs)
    Path(args.out).write_text(report.to_csv(methods, args.baseline))
    print(report.to_text(methods, args.baseline))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cyclelta", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="sample a synthetic dataset from a grammar")
    g.add_argument("--grammar", help="grammar YAML (default: packaged grammar)")
    g.add_argument("--out", required=True)
    g.add_argument("--videos", type=int, default=250)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--test-frac", type=float, default=0.2)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model and write a checkpoint plus <out>.loss.csv")
    t.add_argument("--config")
    t.add_argument("--ablation", choices=["s2s", "s2s_tcn", "s2s_tcn_rec", "s2s_tcn_rec_cyc", "full"])
    t.add_argument("--two-step", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--data", help="dataset directory (overrides the config)")
    t.add_argument("--epochs", type=int, help="override the configured epoch count")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="anticipate the future of one video")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--video", required=True)
    pr.add_argument("--obs", type=float, default=0.2)
    pr.add_argument("--pred", type=float, default=0.5)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="MoC over the observation/prediction grid")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--tasks", help="comma-separated task names to keep")
    e.add_argument("--obs", default="0.2,0.3")
    e.add_argument("--pred", default="0.1,0.2,0.3,0.5")
    e.add_argument("--per-video", action="store_true", help="average per-video MoC instead of pooling counts")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="aggregate results CSVs into a comparison table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--baseline", help="method to compute deltas against (default: first input)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DimensionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
