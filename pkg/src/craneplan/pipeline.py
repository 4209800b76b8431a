"""End-to-end planning: IK goal, global spline path, then collocation.

``run_benchmark`` repeats the pipeline on sampled goals in two modes:

* ``two_step``: the evolved path seeds and guides the collocation problem;
* ``naive``: the straight joint-space line is used instead, so collision
  avoidance is left entirely to luck.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bspline import BSplinePath, initial_control_points
from .chain import (ChainSpec, ContractError, Pose, data_path, forward_kinematics, home_configuration,
                    load_chain, passive_equilibrium)
from .collision import CollisionScene, load_scene, scene_signed_distance
from .ik import IKProblem, IKSettings, IKSolution, IKWeights, solve_ik
from .path import EvolutionConfig, PathCostWeights, PathResult, optimize_path
from .trajectory import TrajectoryConfig, TrajectorySolution, plan_trajectory

log = logging.getLogger(__name__)

MODES = ("two_step", "naive")
STAGES = ("ik", "path", "traj")
FAILURE_CODES = {"ik": "ik_failed", "path": "path_failed", "traj": "nlp_failed"}
POST_CHECK_FAILED = "post_check_failed"
WORKERS_ENV = "CRANEPLAN_WORKERS"
MAX_GOAL_DRAWS = 10_000

GOAL_SAMPLING_NOTE = ("goals are sampled in configuration space (passive joints hanging at rest, "
                      "clearance above the margin) and the target pose is FK of that sample")


class ConfigError(ContractError):
    pass


def _build(cls, data, where):
    if data is None:
        return cls()
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    extra = set(data) - names
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")
    try:
        return cls(**data)
    except (TypeError, ContractError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass(frozen=True)
class PipelineConfig:
    chain: str = str(data_path("reference_crane.json"))
    scene: str = str(data_path("env1.json"))
    ik_weights: IKWeights = field(default_factory=IKWeights)
    ik: IKSettings = field(default_factory=IKSettings)
    path_cost: PathCostWeights = field(default_factory=lambda: PathCostWeights(clearance=0.05, hang=True))
    path: EvolutionConfig = field(default_factory=lambda: EvolutionConfig(max_iters=40))
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    rng_seed: int = 0
    stage_budget: float = 30.0
    goal_margin: float = 0.05
    start: tuple | None = None
    # on a failed post-check, re-solve with t_F >= factor * t_F (slower motion, less swing)
    slowdown_retries: int = 2
    slowdown_factor: float = 2.0

    def __post_init__(self):
        for name in ("chain", "scene"):
            p = Path(getattr(self, name))
            if not p.is_file():
                raise ConfigError(f"{name} file not found: {p}")
        if not (np.isfinite(self.stage_budget) and self.stage_budget > 0):
            raise ConfigError("stage_budget must be positive")
        if self.goal_margin < 0:
            raise ConfigError("goal_margin must be non-negative")
        if self.slowdown_retries < 0 or not self.slowdown_factor > 1.0:
            raise ConfigError("need slowdown_retries >= 0 and slowdown_factor > 1")

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        extra = set(data) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        kw = dict(data)
        for name in ("chain", "scene"):
            if name in kw:
                p = Path(kw[name])
                if not p.is_absolute() and base_dir is not None:
                    p = Path(base_dir) / p
                kw[name] = str(p)
        kw["ik_weights"] = _build(IKWeights, data.get("ik_weights"), "ik_weights")
        kw["ik"] = _build(IKSettings, data.get("ik"), "ik")
        if "path_cost" in data:
            kw["path_cost"] = _build(PathCostWeights, data["path_cost"], "path_cost")
        if "path" in data:
            kw["path"] = _build(EvolutionConfig, data["path"], "path")
        kw["trajectory"] = _build(TrajectoryConfig, data.get("trajectory"), "trajectory")
        if kw.get("start") is not None:
            kw["start"] = tuple(float(v) for v in kw["start"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def load(self) -> tuple[ChainSpec, CollisionScene]:
        try:
            spec = load_chain(self.chain)
            scene = load_scene(self.scene)
            scene.check_chain(spec)
        except (OSError, ValueError, KeyError) as exc:
            raise ConfigError(f"cannot load chain/scene: {exc}") from exc
        return spec, scene

    def start_configuration(self, spec: ChainSpec, scene: CollisionScene) -> np.ndarray:
        if self.start is not None:
            q = np.asarray(self.start, dtype=float)
        elif scene.home is not None:
            q = np.asarray(scene.home, dtype=float)
        else:
            q = home_configuration(spec)
        if q.shape != (spec.n,) or not spec.within_limits(q):
            raise ConfigError("start configuration has the wrong size or violates joint limits")
        return q


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return PipelineConfig.from_dict(data, base_dir=path.parent)


@dataclass
class PlanReport:
    status: str  # "success" or a failure code
    mode: str
    timings: dict
    failed_stage: str | None = None
    ik: IKSolution | None = None
    path: PathResult | BSplinePath | None = None
    trajectory: TrajectorySolution | None = None
    detail: str = ""

    @property
    def success(self) -> bool:
        return self.status == "success"


def plan(target: Pose, config: PipelineConfig, mode: str = "two_step", *, spec=None, scene=None,
         q_start=None, path_seed: int | None = None) -> PlanReport:
    """Run IK, path optimization (two-step mode only) and collocation for one target.

    The first failing stage ends the run; its code is the report status.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}")
    if spec is None or scene is None:
        spec, scene = config.load()
    q0 = config.start_configuration(spec, scene) if q_start is None else np.asarray(q_start, dtype=float)
    budget = config.stage_budget
    timings = {s: 0.0 for s in STAGES}
    t_all = time.perf_counter()

    def finish(rep: PlanReport) -> PlanReport:
        rep.timings["total"] = time.perf_counter() - t_all
        return rep

    t = time.perf_counter()
    ik = solve_ik(IKProblem(spec, target, q0, scene, config.ik_weights), config.ik)
    timings["ik"] = time.perf_counter() - t
    if not ik.converged or ik.signed_distance < 0 or timings["ik"] > budget:
        return finish(PlanReport(FAILURE_CODES["ik"], mode, timings, "ik", ik,
                                 detail=f"residual {ik.residual_norm:.3g}, d {ik.signed_distance:.3g}"))
    q_goal = ik.q_d

    t = time.perf_counter()
    if mode == "two_step":
        pcfg = config.path if path_seed is None else replace(config.path, rng_seed=path_seed)
        pres = optimize_path(q0, q_goal, scene, spec, config.path_cost, pcfg)
        path = pres.path
        timings["path"] = time.perf_counter() - t
        if not pres.success or timings["path"] > budget:
            return finish(PlanReport(FAILURE_CODES["path"], mode, timings, "path", ik, pres,
                                     detail=f"min distance {pres.cost.min_distance:.3g}"))
    else:
        path = pres = BSplinePath.clamped(initial_control_points(q0, q_goal, config.path.n_ctrl))
        timings["path"] = time.perf_counter() - t

    t = time.perf_counter()
    tcfg = config.trajectory
    if tcfg.max_time is None or tcfg.max_time > budget:
        tcfg = replace(tcfg, max_time=budget)
    sol = plan_trajectory(path, spec, scene, tcfg, q0, q_goal)
    for _ in range(config.slowdown_retries):
        left = budget - (time.perf_counter() - t)
        if sol.status != "collision_post_check_failed" or left <= 0:
            break
        tf_min = config.slowdown_factor * sol.t_F
        if tf_min > tcfg.tf_max:
            break
        log.info("post-check failed at t_F %.2f s; retrying with t_F >= %.2f s", sol.t_F, tf_min)
        slow = replace(tcfg, tf_min=tf_min, tf_init=max(tcfg.tf_init, tf_min), max_time=left)
        sol = plan_trajectory(path, spec, scene, slow, q0, q_goal)
    timings["traj"] = time.perf_counter() - t
    if sol.status == "collision_post_check_failed":
        return finish(PlanReport(POST_CHECK_FAILED, mode, timings, "traj", ik, pres, sol,
                                 detail=f"min distance {sol.min_distance:.3g}"))
    if not sol.success:
        return finish(PlanReport(FAILURE_CODES["traj"], mode, timings, "traj", ik, pres, sol,
                                 detail=sol.status))
    return finish(PlanReport("success", mode, timings, None, ik, pres, sol))


# -- benchmark -----------------------------------------------------------------

ROW_FIELDS = ("trial", "mode", "success", "status", "failed_stage", "t_F", "nlp_iterations",
              "min_distance", "time_ik", "time_path", "time_traj", "time_total",
              "goal_position", "goal_q")
TIMING_FIELDS = ("time_ik", "time_path", "time_traj", "time_total")


def _mean_std(v) -> tuple[float | None, float | None]:
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return None, None
    return float(np.mean(v)), float(np.std(v))


def compute_aggregates(rows: list[dict]) -> dict:
    """Per-mode success rate, traverse and computation times, stage means."""
    out = {}
    for mode in MODES:
        sel = [r for r in rows if r["mode"] == mode]
        if not sel:
            continue
        ok = [r for r in sel if r["success"]]
        tf = _mean_std([r["t_F"] for r in ok])
        comp = _mean_std([r["time_total"] for r in sel])
        out[mode] = dict(
            trials=len(sel), successes=len(ok),
            success_rate=100.0 * len(ok) / len(sel),
            traverse_time_mean=tf[0], traverse_time_std=tf[1],
            computation_time_mean=comp[0], computation_time_std=comp[1],
            **{f"{s}_time_mean": _mean_std([r[f"time_{s}"] for r in sel])[0] for s in STAGES},
        )
    return out


def _close(a, b, tol=1e-12) -> bool:
    if a is None or b is None:
        return a is b
    if isinstance(a, float) or isinstance(b, float):
        a, b = float(a), float(b)
        return abs(a - b) <= tol * max(1.0, abs(a), abs(b))
    return a == b


@dataclass
class BenchmarkReport:
    env: str
    seed: int
    trials: int
    rows: list[dict]
    aggregates: dict
    skipped: list[int] = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def check(self):
        fresh = compute_aggregates(self.rows)
        if set(fresh) != set(self.aggregates):
            raise ContractError("report aggregates do not cover the same modes as the rows")
        for mode, agg in fresh.items():
            for key, val in agg.items():
                if key not in self.aggregates[mode] or not _close(val, self.aggregates[mode][key]):
                    raise ContractError(f"aggregate {mode}.{key} does not match the trial rows")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BenchmarkReport":
        rep = cls(**data)
        rep.check()
        return rep

    def deterministic_view(self) -> dict:
        """Everything except wall-clock fields."""
        rows = [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in self.rows]
        aggs = {m: {k: v for k, v in a.items() if k.startswith("traverse") or "time" not in k}
                for m, a in self.aggregates.items()}
        return dict(env=self.env, seed=self.seed, trials=self.trials, rows=rows,
                    aggregates=aggs, skipped=self.skipped)

    def save(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        js = out_dir / "report.json"
        js.write_text(json.dumps(self.to_dict(), indent=2))
        cs = out_dir / "report.csv"
        cs.write_text(rows_to_csv(self.rows))
        return js, cs


def load_report(path) -> BenchmarkReport:
    return BenchmarkReport.from_dict(json.loads(Path(path).read_text()))


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROW_FIELDS)
    for r in rows:
        w.writerow([" ".join(repr(float(x)) for x in r[k]) if isinstance(r[k], list)
                    else repr(r[k]) if isinstance(r[k], float) else "" if r[k] is None else r[k]
                    for k in ROW_FIELDS])
    return buf.getvalue()


def sample_goal(spec: ChainSpec, scene: CollisionScene, rng: np.random.Generator, margin: float,
                max_draws: int = MAX_GOAL_DRAWS) -> np.ndarray | None:
    """Rejection-sample a hanging configuration with clearance above ``margin``."""
    for _ in range(max_draws):
        q = passive_equilibrium(spec, spec.random_configuration(rng))
        if spec.within_limits(q) and scene_signed_distance(scene, spec, q) > margin:
            return q
    return None


def _row(trial, rep: PlanReport, goal_q, goal_pos) -> dict:
    sol = rep.trajectory
    return dict(
        trial=trial, mode=rep.mode, success=rep.success, status=rep.status,
        failed_stage=rep.failed_stage or "",
        t_F=float(sol.t_F) if sol is not None and rep.success else None,
        nlp_iterations=int(sol.iterations) if sol is not None else 0,
        min_distance=float(sol.min_distance) if sol is not None else None,
        time_ik=rep.timings["ik"], time_path=rep.timings["path"], time_traj=rep.timings["traj"],
        time_total=rep.timings["total"],
        goal_position=[float(v) for v in goal_pos], goal_q=[float(v) for v in goal_q],
    )


def _run_trial(args):
    config, trial, goal_q, path_seed = args
    spec, scene = config.load()
    target = forward_kinematics(spec, goal_q)
    out = []
    for mode in MODES:
        rep = plan(target, config, mode, spec=spec, scene=scene, path_seed=path_seed)
        log.info("trial %d %s: %s", trial, mode, rep.status)
        out.append(_row(trial, rep, goal_q, target.position))
    return out


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    return max(1, n)


def run_benchmark(env: str, trials: int, config: PipelineConfig, seed: int | None = None,
                  workers: int | None = None) -> BenchmarkReport:
    """Sample ``trials`` goals and plan each in both modes; rows come back in trial order."""
    if trials < 1:
        raise ContractError("trials must be at least 1")
    seed = config.rng_seed if seed is None else int(seed)
    spec, scene = config.load()
    rng = np.random.default_rng(seed)
    jobs, skipped = [], []
    for trial in range(trials):
        q = sample_goal(spec, scene, rng, config.goal_margin)
        if q is None:
            log.warning("trial %d skipped: no collision-free goal in %d draws", trial, MAX_GOAL_DRAWS)
            skipped.append(trial)
            continue
        path_seed = int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])
        jobs.append((config, trial, q, path_seed))
    workers = worker_count() if workers is None else max(1, int(workers))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_trial, jobs))
    else:
        results = [_run_trial(j) for j in jobs]
    rows = [r for res in results for r in res]
    header = dict(goal_sampling=GOAL_SAMPLING_NOTE, config=json.loads(json.dumps(config.to_dict())),
                  modes=list(MODES), time_buckets=list(STAGES))
    return BenchmarkReport(env=str(env), seed=seed, trials=trials, rows=rows,
                           aggregates=compute_aggregates(rows), skipped=skipped, header=header)


# -- plots -----------------------------------------------------------------------

def emit_plots(report: BenchmarkReport, out_dir) -> list[Path]:
    """Three SVG charts plus the row CSV; nothing is written for an empty report."""
    if not report.rows:
        return []
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plt.rcParams["svg.hashsalt"] = "craneplan"
    meta = {"Date": None}
    written = []
    modes = [m for m in MODES if m in report.aggregates]

    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(modes, [report.aggregates[m]["success_rate"] for m in modes], color=["C0", "C1"][:len(modes)])
    ax.set_ylabel("success rate [%]")
    ax.set_ylim(0, 105)
    ax.set_title(f"env {report.env}, {report.trials} trials")
    fig.tight_layout()
    written.append(out_dir / "success_rate.svg")
    fig.savefig(written[-1], metadata=meta)
    plt.close(fig)

    for name, key, label in (("traverse_time.svg", "t_F", "traverse time t_F [s]"),
                             ("computation_time.svg", "time_total", "computation time [s]")):
        fig, ax = plt.subplots(figsize=(4, 3))
        data = [[r[key] for r in report.rows if r["mode"] == m and (key != "t_F" or r["success"])]
                for m in modes]
        data = [d if d else [np.nan] for d in data]
        ax.boxplot(data)
        ax.set_xticks(range(1, len(modes) + 1), modes)
        ax.set_ylabel(label)
        fig.tight_layout()
        written.append(out_dir / name)
        fig.savefig(written[-1], metadata=meta)
        plt.close(fig)

    written.append(out_dir / "trials.csv")
    written[-1].write_text(rows_to_csv(report.rows))
    return written
