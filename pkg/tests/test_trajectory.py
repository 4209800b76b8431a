import numpy as np
import pytest

from craneplan.bspline import BSplinePath, initial_control_points
from craneplan.chain import (ContractError, forward_dynamics, integrate_rk4, passive_equilibrium, reference_crane,
                             simple_chain)
from craneplan.trajectory import (TrajectoryConfig, build_nlp, load_solution, plan_trajectory, save_solution,
                                  solve_nlp)

from oracles import central_jacobian

CRANE = reference_crane()


def _goal(q0, shift):
    q = q0.copy()
    q[list(CRANE.boom)] += shift
    return passive_equilibrium(CRANE, q)


@pytest.fixture(scope="module")
def short_move(env1):
    q0 = np.asarray(env1.home)
    qd = _goal(q0, 0.15)
    path = BSplinePath.clamped(initial_control_points(q0, qd))
    return q0, qd, path


@pytest.fixture(scope="module")
def crane_solution(short_move):
    q0, qd, path = short_move
    return plan_trajectory(path, CRANE, None, TrajectoryConfig(), q0, qd)


def _perturbed(problem, xi, seed):
    z = xi + 0.01 * np.random.default_rng(seed).normal(size=xi.size)
    z[0] = xi[0]
    return np.clip(z, problem.lower, problem.upper)


def test_crane_problem_dimensions(short_move):
    q0, qd, path = short_move
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(), q0, qd)
    assert problem.n == 1 + 101 * (16 + 6) == 2223
    assert problem.m == 100 * 16
    assert xi.shape == (2223,)
    assert problem.jacobian(xi).shape == (1600, 2223)


def test_boundary_states_are_pinned(short_move):
    q0, qd, path = short_move
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(n_s=10), q0, qd)
    assert np.array_equal(problem.lower[problem.ix[0]], problem.upper[problem.ix[0]])
    assert np.array_equal(problem.lower[problem.ix[-1]][:8], qd)
    assert np.all(problem.upper[problem.ix[-1]][8:] == 0)


def test_gradient_and_jacobian_match_finite_differences(short_move):
    q0, qd, path = short_move
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(n_s=4), q0, qd)
    for seed in range(10):
        z = _perturbed(problem, xi, seed)
        g_fd = central_jacobian(lambda v: np.array([problem.objective(v)]), z, 1e-6)[0]
        assert np.max(np.abs(problem.gradient(z) - g_fd)) <= 1e-4 * max(1.0, np.abs(g_fd).max())
        J_fd = central_jacobian(problem.constraints, z, 1e-6)
        J = problem.jacobian(z).toarray()
        assert np.max(np.abs(J - J_fd)) <= 1e-4 * max(1.0, np.abs(J_fd).max())


def test_lagrangian_hessian_matches_finite_differences(short_move):
    q0, qd, path = short_move
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(n_s=3), q0, qd)
    z = _perturbed(problem, xi, 1)
    y = np.random.default_rng(2).normal(size=problem.m)

    def grad_l(v):
        return problem.gradient(v) + problem.jacobian(v).T @ y

    H_fd = central_jacobian(grad_l, z, 1e-5)
    H = problem.hessian(z, y).toarray()
    assert np.allclose(H, H.T, atol=0)
    assert np.max(np.abs(H - 0.5 * (H_fd + H_fd.T))) < 1e-3 * max(1.0, np.abs(H_fd).max())


def test_defect_vanishes_on_exact_constant_acceleration_motion():
    spec = simple_chain(["prismatic", "prismatic"], [0.0, 0.0], [1.0, 2.0], limits=(-5, 5),
                        velocity_limit=10, acceleration_limit=2.0)
    u = np.array([0.7, -0.4])
    N, t_F = 10, 2.0
    t = t_F * np.arange(N + 1) / N
    q = 0.5 * u * t[:, None] ** 2
    X = np.concatenate([q, u * t[:, None]], axis=1)
    path = BSplinePath.clamped(initial_control_points(q[0], q[-1]))
    problem, _ = build_nlp(path, spec, TrajectoryConfig(n_s=N), q[0], q[-1])
    z = problem.pack(t_F, X, np.tile(u, (N + 1, 1)))
    assert np.max(np.abs(problem.constraints(z))) <= 1e-12


def test_resampled_reference_rows(short_move):
    from craneplan.trajectory import resample_reference
    q0, qd, path = short_move
    ref = resample_reference(path, CRANE, 100)
    assert np.array_equal(ref[0], q0[CRANE.actuated]) and np.allclose(ref[-1], qd[CRANE.actuated], atol=0)
    assert np.allclose(ref[50], path(0.5)[CRANE.actuated], atol=1e-12)
    flat = BSplinePath.clamped(initial_control_points(q0, q0))
    assert np.allclose(resample_reference(flat, CRANE, 10), q0[CRANE.actuated], rtol=0, atol=1e-14)


def test_defect_is_trapezoidal_rule(short_move):
    q0, qd, path = short_move
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(n_s=6), q0, qd)
    z = _perturbed(problem, xi, 3)
    t_F, X, U = problem.unpack(z)
    h = t_F / 6
    f = np.array([forward_dynamics(CRANE, x, u) for x, u in zip(X, U)])
    ref = X[1:] - X[:-1] - 0.5 * h * (f[:-1] + f[1:])
    assert np.allclose(problem.constraints(z).reshape(6, 16), ref, atol=1e-9)


def test_double_integrator_reaches_minimum_time():
    # |u| <= 1 from rest to rest over unit distance: bang-bang time is 2
    spec = simple_chain(["prismatic"], [0.0], [1.0], limits=(-2, 2), velocity_limit=10,
                        acceleration_limit=1.0)
    path = BSplinePath.clamped(initial_control_points([0.0], [1.0]))
    sol = plan_trajectory(path, spec, None, TrajectoryConfig(omega_s=0.0, omega_t=0.0))
    assert sol.success
    assert abs(sol.t_F - 2.0) < 0.02
    assert sol.max_defect <= 1e-6 and sol.max_bound_violation <= 1e-8


def test_crane_solution_is_feasible(crane_solution):
    sol = crane_solution
    assert sol.success, sol.status
    assert sol.max_defect <= 1e-6 and sol.max_bound_violation <= 1e-8
    assert np.all(sol.states[:, :8] >= CRANE.q_min - 1e-8) and np.all(sol.states[:, :8] <= CRANE.q_max + 1e-8)


def test_objective_recomputes_from_grid(short_move, crane_solution):
    q0, qd, path = short_move
    sol = crane_solution
    cfg = TrajectoryConfig()
    ref = path(np.arange(101) / 100)[:, CRANE.actuated]
    e = sol.states[:, CRANE.actuated] - ref
    J = sol.t_F + cfg.omega_s * cfg.r_scale * np.sum(sol.controls ** 2) + cfg.omega_t * np.sum(e * e)
    assert abs(J - sol.objective) <= 1e-10 * max(1.0, abs(J))


def test_rk4_replay_reaches_goal(crane_solution):
    sol = crane_solution
    N = len(sol.controls) - 1
    h = sol.t_F / N

    def u(t):
        return np.array([np.interp(t, sol.times, sol.controls[:, i]) for i in range(sol.controls.shape[1])])

    xs = integrate_rk4(CRANE, sol.states[0], u, h / 10, 10 * N)
    assert np.linalg.norm(xs[-1, :8] - sol.states[-1, :8]) <= 1e-3
    assert np.linalg.norm(xs[-1, 8:] - sol.states[-1, 8:]) <= 1e-2


def test_tracking_weight_monotone_on_double_integrator():
    spec = simple_chain(["prismatic"], [0.0], [1.0], limits=(-2, 2), velocity_limit=10,
                        acceleration_limit=1.0)
    path = BSplinePath.clamped(initial_control_points([0.0], [1.0]))
    ref = path(np.arange(101) / 100)[:, 0]
    errs = []
    for w in (0.0, 1.0, 10.0):
        sol = plan_trajectory(path, spec, None, TrajectoryConfig(omega_s=0.0, omega_t=w))
        assert sol.success
        errs.append(np.sum((sol.states[:, 0] - ref) ** 2))
    assert errs[0] > errs[1] > errs[2]


def test_constant_path_gives_shortest_time(env1):
    q = np.asarray(env1.home)
    path = BSplinePath.clamped(initial_control_points(q, q))
    sol = plan_trajectory(path, CRANE, env1, TrajectoryConfig(n_s=20))
    assert sol.success
    assert np.isclose(sol.t_F, 0.1, atol=1e-6)
    assert np.allclose(sol.states[:, :8], q, atol=1e-6)


def test_save_and_load_round_trip(tmp_path, crane_solution):
    save_solution(crane_solution, CRANE, tmp_path / "traj.csv", extra={"note": "x"})
    t, X, U = load_solution(tmp_path / "traj.csv", CRANE)
    assert np.array_equal(X, crane_solution.states) and np.array_equal(U, crane_solution.controls)
    assert np.array_equal(t, crane_solution.times)
    assert (tmp_path / "traj.json").exists()


def test_contracts(short_move):
    q0, qd, path = short_move
    with pytest.raises(ContractError):
        TrajectoryConfig(tf_min=0.0)
    with pytest.raises(ContractError):
        build_nlp(path, CRANE, TrajectoryConfig(), qd, q0)
    problem, xi = build_nlp(path, CRANE, TrajectoryConfig(n_s=4), q0, qd)
    sol = solve_nlp(problem, xi)
    assert sol.config["n_s"] == 4
