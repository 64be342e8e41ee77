"""End-to-end vs two-step training on the benchmark split, paired by seed.

    python3 scripts/run_two_step.py --seeds 0 1 2 --out results/two_step
"""
import argparse
import logging
from pathlib import Path

from cyclelta.harness import report
from cyclelta.harness.experiments import benchmark_config, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="results/two_step")
    ap.add_argument("--cache", default=".cache/runs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for two_step in (False, True):
        for seed in args.seeds:
            res = run_benchmark(benchmark_config("full", two_step=two_step, seed=seed), cache_dir=args.cache)
            name = "two_step" if two_step else "end_to_end"
            path = out / f"{name}_seed{seed}.csv"
            res.grids["all"].write_csv(path)
            files.append(path)
            print(f"{name} seed {seed}: {res.seconds:.0f}s", flush=True)
    methods = report.load_results(files)
    (out / "report.csv").write_text(report.to_csv(methods, baseline="two_step"))
    print(report.to_text(methods, baseline="two_step"))


if __name__ == "__main__":
    main()
