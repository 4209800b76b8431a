"""Run the two-environment benchmark and write reports and plots under one directory.

    python scripts/run_benchmark.py --trials 50 --out results
"""
import argparse
import time
from dataclasses import replace
from pathlib import Path

from craneplan.chain import data_path
from craneplan.pipeline import PipelineConfig, emit_plots, load_config, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else PipelineConfig()
    for env in ("1", "2"):
        cfg = replace(base, scene=str(data_path(f"env{env}.json")))
        t0 = time.perf_counter()
        rep = run_benchmark(env, args.trials, cfg, seed=args.seed, workers=args.workers)
        out = Path(args.out) / f"env{env}"
        rep.save(out)
        emit_plots(rep, out)
        print(f"env{env}: {time.perf_counter() - t0:.0f} s")
        for mode, a in rep.aggregates.items():
            tf = "n/a" if a["traverse_time_mean"] is None else f"{a['traverse_time_mean']:.2f}"
            print(f"  {mode:9s} {a['success_rate']:5.1f}%  t_F {tf} s  "
                  f"IK {a['ik_time_mean']:.3f} / Path {a['path_time_mean']:.3f} / Traj {a['traj_time_mean']:.3f} s")


if __name__ == "__main__":
    main()
