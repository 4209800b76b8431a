"""Command line: ``plan``, ``bench`` and ``validate``.

Exit codes: 0 success, 2 planning failure, 3 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .chain import ContractError, Pose, data_path, load_chain
from .collision import batch_signed_distance, load_scene
from .pipeline import ConfigError, PipelineConfig, emit_plots, load_config, plan, run_benchmark
from .trajectory import load_solution, save_solution

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 2, 3
ENV_SCENES = {"1": "env1.json", "2": "env2.json"}


def _config(path) -> PipelineConfig:
    return PipelineConfig() if path is None else load_config(path)


def cmd_plan(args) -> int:
    cfg = _config(args.config)
    try:
        target = Pose.from_dict(json.loads(Path(args.target).read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read target pose: {exc}") from exc
    if not target.is_valid(1e-6):
        raise ConfigError("target rotation is not a proper rotation")
    spec, scene = cfg.load()
    rep = plan(target, cfg, args.mode, spec=spec, scene=scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = dict(status=rep.status, mode=rep.mode, failed_stage=rep.failed_stage,
                   detail=rep.detail, timings=rep.timings)
    if rep.ik is not None:
        summary["q_goal"] = rep.ik.q_d.tolist()
    if rep.trajectory is not None:
        save_solution(rep.trajectory, spec, out / "trajectory.csv",
                      extra=dict(pipeline_status=rep.status, timings=rep.timings))
        summary["t_F"] = rep.trajectory.t_F
    (out / "plan.json").write_text(json.dumps(summary, indent=2, default=float))
    print(json.dumps({k: summary[k] for k in ("status", "timings")}, default=float))
    return EXIT_OK if rep.success else EXIT_FAIL


def cmd_bench(args) -> int:
    cfg = _config(args.config)
    if args.env is not None:
        cfg = replace(cfg, scene=str(data_path(ENV_SCENES[args.env])))
    rep = run_benchmark(args.env or Path(cfg.scene).stem, args.trials, cfg, seed=args.seed)
    out = Path(args.out)
    rep.save(out)
    files = emit_plots(rep, out)
    def f(v):
        return "n/a" if v is None else f"{v:.2f}"

    for mode, agg in rep.aggregates.items():
        print(f"{mode:9s} success {agg['success_rate']:6.1f}%  "
              f"t_F {f(agg['traverse_time_mean'])}+-{f(agg['traverse_time_std'])} s  "
              f"compute {agg['computation_time_mean']:.2f}+-{agg['computation_time_std']:.2f} s  "
              f"[IK {agg['ik_time_mean']:.3f} / Path Opt. {agg['path_time_mean']:.3f} / "
              f"Traj. Opt. {agg['traj_time_mean']:.3f} s]")
    if not files:
        print("no trials ran; nothing plotted", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        spec = load_chain(args.chain or data_path("reference_crane.json"))
        scene = load_scene(args.scene)
        scene.check_chain(spec)
        _, states, _ = load_solution(args.trajectory, spec)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    d = batch_signed_distance(scene, spec, states[:, :spec.n])
    worst = int(np.argmin(d))
    print(json.dumps(dict(points=len(d), min_distance=float(d[worst]), worst_index=worst,
                          valid=bool(d[worst] >= 0.0))))
    return EXIT_OK if d[worst] >= 0.0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="craneplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", help="plan one motion to a target pose")
    sp.add_argument("--config")
    sp.add_argument("--target", required=True, help="JSON with position and rotation or quaternion")
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("two_step", "naive"), default="two_step")
    sp.set_defaults(func=cmd_plan)

    sb = sub.add_parser("bench", help="Monte Carlo benchmark in both modes")
    sb.add_argument("--config")
    sb.add_argument("--env", choices=sorted(ENV_SCENES))
    sb.add_argument("--trials", type=int, default=50)
    sb.add_argument("--seed", type=int, default=0)
    sb.add_argument("--out", required=True)
    sb.set_defaults(func=cmd_bench)

    sv = sub.add_parser("validate", help="re-check a trajectory CSV against a scene")
    sv.add_argument("--trajectory", required=True)
    sv.add_argument("--scene", required=True)
    sv.add_argument("--chain")
    sv.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if not isinstance(exc, PermissionError) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
