"""Plan one motion in the loading-bay scene and report the swing of the passive joints.

    python scripts/plan_example.py [--env 2] [--seed 4] [--out example_out]
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from craneplan.chain import data_path, forward_kinematics, hang_batch
from craneplan.pipeline import PipelineConfig, plan, sample_goal
from craneplan.trajectory import save_solution


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--env", default="1", choices=("1", "2"))
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--out", default="example_out")
    args = ap.parse_args()

    cfg = replace(PipelineConfig(), scene=str(data_path(f"env{args.env}.json")))
    spec, scene = cfg.load()
    goal = sample_goal(spec, scene, np.random.default_rng(args.seed), cfg.goal_margin)
    target = forward_kinematics(spec, goal)
    print("target position", np.round(target.position, 3))

    for mode in ("two_step", "naive"):
        rep = plan(target, cfg, mode, spec=spec, scene=scene)
        line = f"{mode:9s} {rep.status:18s} " + " ".join(f"{k} {v:.2f}s" for k, v in rep.timings.items())
        sol = rep.trajectory
        if sol is not None:
            Q = sol.states[:, :spec.n]
            swing = np.abs(Q - hang_batch(spec, Q.copy()))[:, spec.passive_idx].max()
            line += f"  t_F {sol.t_F:.2f}s  min d {sol.min_distance:.3f} m  max swing {swing:.2f} rad"
            save_solution(sol, spec, Path(args.out) / f"{mode}.csv")
        print(line)


if __name__ == "__main__":
    main()
