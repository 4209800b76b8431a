import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from craneplan.chain import ContractError, Pose, forward_kinematics, passive_equilibrium, reference_crane
from craneplan.collision import scene_signed_distance
from craneplan.ik import (IKProblem, IKSettings, IKWeights, InvalidRotationError, ik_residual, so3_exp,
                          so3_log, solve_ik)

from oracles import random_rotation

CRANE = reference_crane()
vec = st.tuples(*[st.floats(-1.0, 1.0, allow_nan=False)] * 3)


@given(vec, st.floats(0.0, np.pi - 1e-6))
def test_log_exp_round_trip(axis, angle):
    a = np.array(axis)
    if np.linalg.norm(a) < 1e-3:
        return
    v = angle * a / np.linalg.norm(a)
    assert np.allclose(so3_log(so3_exp(v)), v, atol=1e-9)


def test_log_near_and_at_pi():
    for angle in (np.pi, np.pi - 1e-9, 1e-12, 0.0):
        for axis in (np.array([1.0, 0, 0]), np.array([1.0, 2.0, -2.0]) / 3.0):
            R = so3_exp(angle * axis)
            w = so3_log(R)
            assert np.isclose(np.linalg.norm(w), angle, atol=1e-7)
            assert np.allclose(so3_exp(w), R, atol=1e-9)


def test_log_batched(rng):
    Rs = np.array([random_rotation(rng) for _ in range(20)])
    W = so3_log(Rs)
    for R, w in zip(Rs, W):
        assert np.allclose(so3_log(R), w, atol=1e-14)
        assert np.allclose(so3_exp(w), R, atol=1e-10)


def test_log_rejects_non_rotations():
    with pytest.raises(InvalidRotationError):
        so3_log(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidRotationError):
        so3_log(2.0 * np.eye(3))


def _hanging(rng, scene=None):
    while True:
        q = passive_equilibrium(CRANE, CRANE.random_configuration(rng))
        if CRANE.within_limits(q) and (scene is None or scene_signed_distance(scene, CRANE, q) > 0.05):
            return q


def test_residual_vanishes_at_consistent_goal(rng, env1):
    q = _hanging(rng, env1)
    r = ik_residual(IKProblem(CRANE, forward_kinematics(CRANE, q), env1.home, env1), q)
    assert r.shape == (8,)
    assert np.max(np.abs(r)) < 1e-9


def test_residual_components_are_weighted(rng):
    q = _hanging(rng)
    tgt = forward_kinematics(CRANE, q)
    shifted = Pose(tgt.rotation, tgt.position + np.array([0.1, 0.0, 0.0]))
    p = IKProblem(CRANE, shifted, q, weights=IKWeights(lambda_q=2.0))
    r = ik_residual(p, q)
    assert np.allclose(r[:3], [-0.1, 0, 0])
    q2 = q.copy()
    q2[CRANE.passive_idx[0]] += 0.2
    assert ik_residual(p, q2)[7] > 0


def test_solves_random_reachable_targets(env2):
    rng = np.random.default_rng(3)
    s = IKSettings()
    for _ in range(8):
        q = _hanging(rng, env2)
        sol = solve_ik(IKProblem(CRANE, forward_kinematics(CRANE, q), env2.home, env2), s)
        assert sol.converged
        assert sol.position_error <= s.pos_tol and sol.rotation_error <= s.rot_tol
        assert sol.signed_distance >= 0 and sol.passive_torque_sq <= s.eq_tol
        assert CRANE.within_limits(sol.q_d)


def test_seed_at_goal_returns_immediately(env1):
    q = np.asarray(env1.home)
    sol = solve_ik(IKProblem(CRANE, forward_kinematics(CRANE, q), q, env1))
    assert sol.converged and sol.attempts == 1 and sol.iterations == 0


def test_unreachable_target_reports_failure():
    tgt = Pose(np.eye(3), np.array([60.0, 0.0, 0.0]))
    sol = solve_ik(IKProblem(CRANE, tgt, passive_equilibrium(CRANE, 0.5 * (CRANE.q_min + CRANE.q_max))),
                   IKSettings(restarts=2, max_iters=50))
    assert not sol.converged
    assert sol.position_error > 1.0
    assert sol.attempts == 3


def test_solve_is_deterministic(env1):
    rng = np.random.default_rng(11)
    q = _hanging(rng, env1)
    p = IKProblem(CRANE, forward_kinematics(CRANE, q), env1.home, env1)
    a, b = solve_ik(p), solve_ik(p)
    assert np.array_equal(a.q_d, b.q_d) and a.iterations == b.iterations


def test_problem_contracts():
    good = forward_kinematics(CRANE, CRANE.q_min)
    with pytest.raises(ContractError):
        IKProblem(CRANE, good, CRANE.q_max + 1.0)
    with pytest.raises(InvalidRotationError):
        IKProblem(CRANE, Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3)), CRANE.q_min)
    with pytest.raises(ContractError):
        IKWeights(lambda_c=0.0)


@pytest.mark.slow
def test_random_reachable_targets_converge_at_high_rate(env2):
    rng = np.random.default_rng(21)
    ok = 0
    for _ in range(100):
        q = _hanging(rng, env2)
        sol = solve_ik(IKProblem(CRANE, forward_kinematics(CRANE, q), env2.home, env2))
        ok += sol.converged and sol.signed_distance > 0
    assert ok >= 95
