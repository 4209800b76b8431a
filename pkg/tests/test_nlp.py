import numpy as np
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from craneplan.nlp import IPOptions, solve


class HS071:
    """x1 x4 (x1 + x2 + x3) + x3 with a product inequality written via a bounded slack."""
    n, m = 5, 2
    lower = np.array([1.0, 1, 1, 1, 25])
    upper = np.array([5.0, 5, 5, 5, np.inf])

    def objective(self, x):
        return x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2]

    def gradient(self, x):
        return np.array([x[3] * (2 * x[0] + x[1] + x[2]), x[0] * x[3], x[0] * x[3] + 1,
                         x[0] * (x[0] + x[1] + x[2]), 0.0])

    def constraints(self, x):
        return np.array([np.prod(x[:4]) - x[4], np.sum(x[:4] ** 2) - 40])

    def jacobian(self, x):
        p = np.prod(x[:4])
        return sp.csr_matrix(np.array([[p / x[0], p / x[1], p / x[2], p / x[3], -1], [*(2 * x[:4]), 0]]))

    def hessian(self, x, y):
        H = np.zeros((5, 5))
        H[0, 0] = 2 * x[3]
        H[0, 1] = H[1, 0] = H[0, 2] = H[2, 0] = x[3]
        H[0, 3] = H[3, 0] = 2 * x[0] + x[1] + x[2]
        H[1, 3] = H[3, 1] = H[2, 3] = H[3, 2] = x[0]
        for i in range(4):
            for j in range(4):
                if i != j:
                    H[i, j] += y[0] * np.prod([x[k] for k in range(4) if k not in (i, j)])
            H[i, i] += 2 * y[1]
        return sp.csr_matrix(H)


class QP:
    def __init__(self, Q, g, A, b, lower, upper):
        self.Q, self.g, self.A, self.b = Q, g, A, b
        self.lower, self.upper = lower, upper
        self.n, self.m = len(g), len(b)

    def objective(self, x):
        return 0.5 * x @ self.Q @ x + self.g @ x

    def gradient(self, x):
        return self.Q @ x + self.g

    def constraints(self, x):
        return self.A @ x - self.b

    def jacobian(self, x):
        return sp.csr_matrix(self.A)

    def hessian(self, x, y):
        return sp.csr_matrix(self.Q)


def test_hs071_reference_optimum():
    r = solve(HS071(), np.array([1.0, 5, 5, 1, 25]))
    assert r.converged
    assert np.isclose(r.objective, 17.0140173, atol=1e-5)
    assert np.allclose(r.x[:4], [1.0, 4.742999, 3.821151, 1.379408], atol=1e-4)


def test_bound_constrained_qp_is_clipped_minimizer():
    n = 6
    g = np.array([3.0, -3.0, 0.5, -0.2, 10.0, -10.0])
    prob = QP(np.eye(n), g, np.zeros((0, n)), np.zeros(0), -np.ones(n), np.ones(n))
    r = solve(prob, np.zeros(n))
    assert r.converged
    assert np.allclose(r.x, np.clip(-g, -1, 1), atol=1e-5)
    assert np.all(r.x >= prob.lower) and np.all(r.x <= prob.upper)


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_equality_qp_matches_kkt_solution(seed):
    rng = np.random.default_rng(seed)
    n, m = 8, 3
    M = rng.normal(size=(n, n))
    Q = M @ M.T + np.eye(n)
    g, A, b = rng.normal(size=n), rng.normal(size=(m, n)), rng.normal(size=m)
    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    x_ref = np.linalg.solve(K, np.concatenate([-g, b]))[:n]
    inf = np.full(n, np.inf)
    r = solve(QP(Q, g, A, b, -inf, inf), np.zeros(n))
    assert r.converged
    assert np.allclose(r.x, x_ref, atol=1e-5)


def test_nonconvex_problem_agrees_with_scipy():
    # Rosenbrock on a disc boundary, bounded box
    class Rosen:
        n, m = 3, 1
        lower = np.array([-2.0, -2.0, 0.0])
        upper = np.array([2.0, 2.0, np.inf])

        def objective(self, x):
            return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2

        def gradient(self, x):
            return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2), 0])

        def constraints(self, x):
            return np.array([x[0] ** 2 + x[1] ** 2 + x[2] - 1.5])

        def jacobian(self, x):
            return sp.csr_matrix(np.array([[2 * x[0], 2 * x[1], 1.0]]))

        def hessian(self, x, y):
            H = np.zeros((3, 3))
            H[0, 0] = 2 - 400 * (x[1] - 3 * x[0] ** 2) + 2 * y[0]
            H[0, 1] = H[1, 0] = -400 * x[0]
            H[1, 1] = 200 + 2 * y[0]
            return sp.csr_matrix(H)

    r = solve(Rosen(), np.array([-1.0, 1.0, 0.5]))
    ref = minimize(lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2, [-1.0, 1.0],
                   constraints=[{"type": "ineq", "fun": lambda z: 1.5 - z[0] ** 2 - z[1] ** 2}],
                   method="SLSQP", options={"ftol": 1e-12})
    assert r.converged
    assert np.isclose(r.objective, ref.fun, atol=1e-6)


def test_fixed_variables_stay_fixed():
    n = 4
    lower = np.array([-1.0, 0.3, -1.0, -1.0])
    upper = np.array([1.0, 0.3, 1.0, 1.0])
    prob = QP(np.eye(n), np.ones(n), np.ones((1, n)), np.array([0.0]), lower, upper)
    r = solve(prob, np.zeros(n))
    assert r.converged and r.x[1] == 0.3
    assert abs(r.x.sum()) < 1e-6


def test_iteration_limit_reports_status():
    r = solve(HS071(), np.array([1.0, 5, 5, 1, 25]), IPOptions(max_iter=2))
    assert not r.converged and r.iterations == 2
    assert r.status == "max_iter"
