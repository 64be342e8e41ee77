"""Ablation study on the benchmark split: five model variants x seeds.

Writes one MoC grid per run (``<method>_seed<k>.csv``) for all test videos and
for the divergent-task subset, then a report table for each.

    python3 scripts/run_ablation.py --seeds 0 1 2 --out results/ablation
"""
import argparse
import logging
from pathlib import Path

from cyclelta.harness import report
from cyclelta.harness.experiments import benchmark_config, run_benchmark

VARIANTS = ["s2s", "s2s_tcn", "s2s_tcn_rec", "s2s_tcn_rec_cyc", "full"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--variants", nargs="+", default=VARIANTS, choices=VARIANTS)
    ap.add_argument("--out", default="results/ablation")
    ap.add_argument("--cache", default=".cache/runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    paths = {}
    for variant in args.variants:
        for seed in args.seeds:
            res = run_benchmark(benchmark_config(variant, seed=seed), cache_dir=args.cache)
            for subset, grid in res.grids.items():
                path = out / subset / f"{res.label}.csv"
                path.parent.mkdir(parents=True, exist_ok=True)
                grid.write_csv(path)
                paths.setdefault(subset, []).append(path)
            print(f"{res.label}: {res.seconds:.0f}s", flush=True)
    for subset, files in paths.items():
        methods = report.load_results(files)
        (out / f"report_{subset}.csv").write_text(report.to_csv(methods))
        print(f"== {subset} test videos\n{report.to_text(methods)}")


if __name__ == "__main__":
    main()
