import json
import math

import numpy as np
import pytest

from craneplan import cli
from craneplan.chain import ContractError, Pose, data_path, forward_kinematics
from craneplan.path import EvolutionConfig
from craneplan.pipeline import (ConfigError, PipelineConfig, compute_aggregates, emit_plots, load_config,
                                load_report, plan, rows_to_csv, run_benchmark, sample_goal)
from craneplan.trajectory import TrajectoryConfig


def _fast(scene="env2.json"):
    return PipelineConfig(scene=str(data_path(scene)), path=EvolutionConfig(max_iters=10),
                          trajectory=TrajectoryConfig(n_s=20))


@pytest.fixture(scope="module")
def small_report():
    return run_benchmark("2", 2, _fast(), seed=5, workers=1)


def test_trivial_plan_returns_shortest_time():
    cfg = _fast("env1.json")
    spec, scene = cfg.load()
    q0 = cfg.start_configuration(spec, scene)
    rep = plan(forward_kinematics(spec, q0), cfg, "two_step", spec=spec, scene=scene)
    assert rep.success and rep.failed_stage is None
    assert np.isclose(rep.trajectory.t_F, cfg.trajectory.tf_min, atol=1e-6)


def test_unreachable_target_stops_at_ik():
    cfg = _fast("env1.json")
    rep = plan(Pose(np.eye(3), np.array([80.0, 0.0, 0.0])), cfg, "naive")
    assert rep.status == "ik_failed" and rep.failed_stage == "ik"
    assert rep.trajectory is None and rep.timings["traj"] == 0.0


def test_stage_times_add_up(small_report):
    for r in small_report.rows:
        assert r["time_ik"] + r["time_path"] + r["time_traj"] <= r["time_total"] + 1e-9
        assert r["time_total"] - (r["time_ik"] + r["time_path"] + r["time_traj"]) < 0.5


def test_rows_cover_both_modes_in_trial_order(small_report):
    keys = [(r["trial"], r["mode"]) for r in small_report.rows]
    assert keys == [(0, "two_step"), (0, "naive"), (1, "two_step"), (1, "naive")]
    for r in small_report.rows:
        assert r["success"] == (r["status"] == "success")
        assert r["success"] or r["status"] in ("ik_failed", "path_failed", "nlp_failed", "post_check_failed")


def test_aggregates_recompute_from_rows(small_report):
    small_report.check()
    agg = compute_aggregates(small_report.rows)
    for mode in ("two_step", "naive"):
        sel = [r for r in small_report.rows if r["mode"] == mode]
        assert agg[mode]["success_rate"] == 100.0 * sum(r["success"] for r in sel) / len(sel)


def test_report_round_trip_and_tamper_detection(tmp_path, small_report):
    js, cs = small_report.save(tmp_path)
    again = load_report(js)
    assert again.deterministic_view() == small_report.deterministic_view()
    assert cs.read_text() == rows_to_csv(small_report.rows)
    data = json.loads(js.read_text())
    data["aggregates"]["two_step"]["success_rate"] += 1.0
    js.write_text(json.dumps(data))
    with pytest.raises(ContractError):
        load_report(js)


def test_benchmark_is_deterministic(small_report):
    again = run_benchmark("2", 2, _fast(), seed=5, workers=1)
    assert again.deterministic_view() == small_report.deterministic_view()
    assert rows_to_csv([{**r, "time_ik": 0.0, "time_path": 0.0, "time_traj": 0.0, "time_total": 0.0}
                        for r in again.rows]) == \
        rows_to_csv([{**r, "time_ik": 0.0, "time_path": 0.0, "time_traj": 0.0, "time_total": 0.0}
                     for r in small_report.rows])


def test_plots_written_and_reproducible(tmp_path, small_report):
    a = emit_plots(small_report, tmp_path / "a")
    b = emit_plots(small_report, tmp_path / "b")
    assert [p.name for p in a] == ["success_rate.svg", "traverse_time.svg", "computation_time.svg", "trials.csv"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()


def test_empty_report_writes_nothing(tmp_path, small_report):
    from dataclasses import replace
    empty = replace(small_report, rows=[], aggregates={})
    assert emit_plots(empty, tmp_path) == []
    assert not any(tmp_path.iterdir())


def test_goal_sampling_gives_hanging_clear_configuration(env2):
    cfg = _fast()
    spec, scene = cfg.load()
    q = sample_goal(spec, scene, np.random.default_rng(0), 0.05)
    from craneplan.chain import passive_gravity
    from craneplan.collision import scene_signed_distance
    assert spec.within_limits(q)
    assert np.max(np.abs(passive_gravity(spec, q))) < 1e-5
    assert scene_signed_distance(scene, spec, q) > 0.05


def test_config_validation(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"path": {"population": 5, "elites": 10}}))
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text(json.dumps({"unknown": 1}))
    with pytest.raises(ConfigError):
        load_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"scene": str(data_path("env2.json")), "trajectory": {"n_s": 30}}))
    cfg = load_config(good)
    assert cfg.trajectory.n_s == 30 and cfg.path_cost.hang
    with pytest.raises(ConfigError):
        PipelineConfig(stage_budget=math.inf)


def _write_target(path, q):
    from craneplan.chain import reference_crane
    pose = forward_kinematics(reference_crane(), q)
    path.write_text(json.dumps(pose.to_dict()))


def test_cli_exit_codes(tmp_path, env1, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": str(data_path("env1.json")), "trajectory": {"n_s": 20},
                               "path": {"max_iters": 5}}))
    tgt = tmp_path / "target.json"
    _write_target(tgt, np.asarray(env1.home))
    out = tmp_path / "out"
    assert cli.main(["plan", "--config", str(cfg), "--target", str(tgt), "--out", str(out)]) == cli.EXIT_OK
    assert (out / "trajectory.csv").exists() and (out / "plan.json").exists()
    assert cli.main(["validate", "--trajectory", str(out / "trajectory.csv"),
                     "--scene", str(data_path("env1.json"))]) == cli.EXIT_OK

    far = tmp_path / "far.json"
    far.write_text(json.dumps({"position": [80.0, 0.0, 0.0], "quaternion": [1, 0, 0, 0]}))
    assert cli.main(["plan", "--config", str(cfg), "--target", str(far), "--out", str(out)]) == cli.EXIT_FAIL

    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert cli.main(["plan", "--config", str(broken), "--target", str(tgt), "--out", str(out)]) == cli.EXIT_CONFIG
    assert cli.main(["plan", "--config", str(cfg), "--target", str(tmp_path / "missing.json"),
                     "--out", str(out)]) == cli.EXIT_CONFIG
    capsys.readouterr()
