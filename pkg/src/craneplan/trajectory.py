"""Minimum-time trajectories by trapezoidal direct collocation.

Decision vector ``xi = [t_F, x_0 .. x_N, u_0 .. u_N]`` with states
``x = [q, qdot]`` and controls ``u`` = actuated joint accelerations. The
objective trades traverse time against control effort and tracking of the
actuated part of a reference path. Boundary states are pinned through equal
bounds, so they are reproduced bitwise.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import nlp
from .bspline import BSplinePath
from .chain import ChainSpec, ContractError, SingularConfigurationError, passive_acceleration
from .collision import CollisionScene, batch_signed_distance


@dataclass(frozen=True)
class TrajectoryConfig:
    n_s: int = 100
    omega_s: float = 1e-3
    omega_t: float = 10.0
    r_scale: float = 0.01
    tf_init: float = 10.0
    tf_min: float = 0.1
    tf_max: float = 120.0
    fd_step: float = 1e-6
    hessian_step: float = 1e-4
    curvature: bool = True
    max_iter: int = 300
    max_time: float | None = 30.0
    tf_step_ratio: float = 0.5

    def __post_init__(self):
        if self.n_s < 1:
            raise ContractError("n_s must be positive")
        if self.omega_s < 0 or self.omega_t < 0 or self.r_scale <= 0:
            raise ContractError("weights must be non-negative and R positive definite")
        if not self.tf_step_ratio > 0:
            raise ContractError("tf_step_ratio must be positive")
        if not 0 < self.tf_min <= self.tf_init <= self.tf_max:
            raise ContractError("need 0 < tf_min <= tf_init <= tf_max")


@dataclass
class TrajectorySolution:
    states: np.ndarray
    controls: np.ndarray
    t_F: float
    objective: float
    max_defect: float
    max_bound_violation: float
    stationarity: float
    converged: bool
    iterations: int
    status: str
    solve_time: float = 0.0
    min_distance: float = np.inf
    config: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        N = len(self.states) - 1
        return self.t_F * np.arange(N + 1) / N

    @property
    def success(self) -> bool:
        return self.status == "converged"


class TrajectoryNLP:
    """Collocation transcription; implements the interface expected by ``nlp.solve``."""

    def __init__(self, spec: ChainSpec, reference, x_start, x_goal, config: TrajectoryConfig,
                 R=None):
        self.spec, self.config = spec, config
        N = self.N = config.n_s
        nd, na = spec.n, spec.n_actuated
        self.nx, self.nu = 2 * nd, na
        self.reference = np.asarray(reference, dtype=float)
        if self.reference.shape != (N + 1, na):
            raise ContractError(f"reference must have shape {(N + 1, na)}")
        self.x_start = np.asarray(x_start, dtype=float)
        self.x_goal = np.asarray(x_goal, dtype=float)
        self.R = config.r_scale * np.eye(na) if R is None else np.asarray(R, dtype=float)
        if self.R.shape != (na, na) or np.any(np.linalg.eigvalsh(0.5 * (self.R + self.R.T)) <= 0):
            raise ContractError("R must be a symmetric positive definite n_a x n_a matrix")
        self.omega_s, self.omega_t = config.omega_s, config.omega_t

        self.ix = 1 + np.arange((N + 1) * self.nx).reshape(N + 1, self.nx)
        self.iu = self.ix[-1, -1] + 1 + np.arange((N + 1) * na).reshape(N + 1, na)
        self.n = 1 + (N + 1) * (self.nx + na)
        self.m = N * self.nx
        self.act = spec.actuated
        self.pas = spec.passive_idx

        xl = np.concatenate([spec.q_min, -spec.velocity_limits])
        xu = np.concatenate([spec.q_max, spec.velocity_limits])
        for label, xb in (("start", self.x_start), ("goal", self.x_goal)):
            if xb.shape != (self.nx,):
                raise ContractError(f"{label} state must have length {self.nx}")
            if np.any(xb < xl) or np.any(xb > xu):
                raise ContractError(f"{label} state violates the state bounds")
        lower = np.empty(self.n)
        upper = np.empty(self.n)
        lower[0], upper[0] = config.tf_min, config.tf_max
        lower[self.ix] = xl
        upper[self.ix] = xu
        lower[self.ix[0]] = upper[self.ix[0]] = self.x_start
        lower[self.ix[-1]] = upper[self.ix[-1]] = self.x_goal
        ul = spec.acceleration_limits[self.act]
        lower[self.iu] = -ul
        upper[self.iu] = ul
        self.lower, self.upper = lower, upper
        self._cache_key = None
        self._build_patterns()

    # -- packing ---------------------------------------------------------------

    def unpack(self, xi):
        xi = np.asarray(xi, dtype=float)
        return float(xi[0]), xi[self.ix], xi[self.iu]

    def step_limit(self, xi) -> np.ndarray:
        """Per-variable step caps: t_F may shrink or grow by a bounded fraction."""
        lim = np.full(self.n, np.inf)
        lim[0] = self.config.tf_step_ratio * abs(float(xi[0]))
        return lim

    def pack(self, t_F, X, U) -> np.ndarray:
        xi = np.empty(self.n)
        xi[0] = t_F
        xi[self.ix] = X
        xi[self.iu] = U
        return xi

    # -- dynamics --------------------------------------------------------------

    def dynamics(self, X, U) -> np.ndarray:
        nd = self.spec.n
        f = np.empty(X.shape)
        f[:, :nd] = X[:, nd:]
        f[:, nd + self.act] = U
        if len(self.pas):
            ap = passive_acceleration(self.spec, X, U)
            bad = ~np.all(np.isfinite(ap), axis=1)
            if np.any(bad):
                raise SingularConfigurationError("singular passive mass block on the grid",
                                                 index=int(np.flatnonzero(bad)[0]))
            f[:, nd + self.pas] = ap
        return f

    def _dynamics_jacobian(self, X, U):
        """Per-point ``df/dx`` ``(N+1, nx, nx)`` and ``df/du`` ``(N+1, nx, nu)``."""
        nd, nx, nu = self.spec.n, self.nx, self.nu
        K = len(X)
        Fx = np.zeros((K, nx, nx))
        Fu = np.zeros((K, nx, nu))
        Fx[:, np.arange(nd), nd + np.arange(nd)] = 1.0
        Fu[:, nd + self.act, np.arange(nu)] = 1.0
        npas = len(self.pas)
        if npas:
            Z = np.concatenate([X, U], axis=1)
            nz = nx + nu
            h = self.config.fd_step * np.maximum(1.0, np.abs(Z))
            probes = np.repeat(Z[:, None, :], 2 * nz, axis=1)
            ar = np.arange(nz)
            probes[:, ar, ar] += h
            probes[:, nz + ar, ar] -= h
            probes = probes.reshape(-1, nz)
            ap = passive_acceleration(self.spec, probes[:, :nx], probes[:, nx:])
            if not np.all(np.isfinite(ap)):
                bad = np.flatnonzero(~np.all(np.isfinite(ap), axis=1))[0] // (2 * nz)
                raise SingularConfigurationError("singular passive mass block on the grid", index=int(bad))
            ap = ap.reshape(K, 2 * nz, npas)
            D = (ap[:, :nz] - ap[:, nz:]) / (2.0 * h[:, :, None])  # (K, nz, npas)
            Fx[:, nd + self.pas, :] = np.swapaxes(D[:, :nx], 1, 2)
            Fu[:, nd + self.pas, :] = np.swapaxes(D[:, nx:], 1, 2)
        return Fx, Fu

    def _passive_hessians(self, X, U, weights):
        """Hessians of ``weights_k . a_p(z_k)`` over ``z = [x, u]`` by forward differences."""
        K = len(X)
        nz = self.nx + self.nu
        Z = np.concatenate([X, U], axis=1)
        h = self.config.hessian_step
        iu, ju = np.triu_indices(nz)
        E = np.eye(nz) * h
        shifts = np.concatenate([np.zeros((1, nz)), E, E[iu] + E[ju]])
        probes = (Z[:, None, :] + shifts[None]).reshape(-1, nz)
        ap = passive_acceleration(self.spec, probes[:, :self.nx], probes[:, self.nx:])
        psi = np.einsum("ksp,kp->ks", ap.reshape(K, len(shifts), -1), weights)
        p0 = psi[:, :1]
        pi = psi[:, 1:1 + nz]
        pij = psi[:, 1 + nz:]
        vals = (pij - pi[:, iu] - pi[:, ju] + p0) / (h * h)
        Hs = np.zeros((K, nz, nz))
        Hs[:, iu, ju] = vals
        Hs[:, ju, iu] = vals
        return Hs

    def _evaluate(self, xi):
        key = np.asarray(xi).tobytes()
        if key != self._cache_key:
            t_F, X, U = self.unpack(xi)
            self._cache = dict(t_F=t_F, X=X, U=U, f=self.dynamics(X, U))
            self._cache_key = key
        return self._cache

    def _derivatives(self, xi):
        ev = self._evaluate(xi)
        if "Fx" not in ev:
            ev["Fx"], ev["Fu"] = self._dynamics_jacobian(ev["X"], ev["U"])
        return ev

    # -- objective ---------------------------------------------------------------

    def objective(self, xi) -> float:
        t_F, X, U = self.unpack(xi)
        e = X[:, self.act] - self.reference
        effort = np.einsum("ki,ij,kj->", U, self.R, U)
        return float(t_F + self.omega_s * effort + self.omega_t * np.sum(e * e))

    def gradient(self, xi) -> np.ndarray:
        t_F, X, U = self.unpack(xi)
        g = np.zeros(self.n)
        g[0] = 1.0
        g[self.ix[:, self.act]] = 2.0 * self.omega_t * (X[:, self.act] - self.reference)
        g[self.iu] = self.omega_s * U @ (self.R + self.R.T)
        return g

    # -- constraints -------------------------------------------------------------

    def constraints(self, xi) -> np.ndarray:
        ev = self._evaluate(xi)
        X, f = ev["X"], ev["f"]
        h = ev["t_F"] / self.N
        d = X[1:] - X[:-1] - 0.5 * h * (f[:-1] + f[1:])
        return d.ravel()

    def _build_patterns(self):
        N, nx, nu = self.N, self.nx, self.nu
        rows = np.arange(N)[:, None] * nx + np.arange(nx)[None, :]  # (N, nx)
        blocks_r, blocks_c = [], []
        # t_F column
        blocks_r.append(rows.ravel())
        blocks_c.append(np.zeros(N * nx, dtype=int))
        for shift in (0, 1):
            cx = self.ix[shift:N + shift]  # (N, nx)
            cu = self.iu[shift:N + shift]
            blocks_r.append(np.repeat(rows, nx, axis=1).ravel())
            blocks_c.append(np.tile(cx, (1, nx)).ravel())
            blocks_r.append(np.repeat(rows, nu, axis=1).ravel())
            blocks_c.append(np.tile(cu, (1, nx)).ravel())
        self._jac_rows = np.concatenate(blocks_r)
        self._jac_cols = np.concatenate(blocks_c)

    def jacobian(self, xi) -> sp.csr_matrix:
        ev = self._derivatives(xi)
        N, nx = self.N, self.nx
        h = ev["t_F"] / N
        f, Fx, Fu = ev["f"], ev["Fx"], ev["Fu"]
        eye = np.eye(nx)
        vals = [(-0.5 / N * (f[:-1] + f[1:])).ravel()]
        for shift, sign in ((0, -1.0), (1, 1.0)):
            Bx = sign * eye - 0.5 * h * Fx[shift:N + shift]
            Bu = -0.5 * h * Fu[shift:N + shift]
            vals.append(Bx.ravel())
            vals.append(Bu.ravel())
        return sp.csr_matrix((np.concatenate(vals), (self._jac_rows, self._jac_cols)),
                             shape=(self.m, self.n))

    # -- Lagrangian Hessian ------------------------------------------------------

    def hessian(self, xi, y) -> sp.csr_matrix:
        """Objective Hessian, exact ``t_F`` cross terms and (optionally) dynamics curvature."""
        ev = self._derivatives(xi)
        N, nx, nu = self.N, self.nx, self.nu
        Y = np.asarray(y, dtype=float).reshape(N, nx)
        # each grid point enters the two adjacent defects
        Yk = np.zeros((N + 1, nx))
        Yk[:-1] += Y
        Yk[1:] += Y
        rows, cols, vals = [], [], []

        diag = np.zeros(self.n)
        diag[self.ix[:, self.act]] = 2.0 * self.omega_t
        rows.append(np.arange(self.n))
        cols.append(np.arange(self.n))
        vals.append(diag)
        Rs = self.omega_s * (self.R + self.R.T)
        rows.append(np.repeat(self.iu, nu, axis=1).ravel())
        cols.append(np.tile(self.iu, (1, nu)).ravel())
        vals.append(np.broadcast_to(Rs.ravel(), (N + 1, nu * nu)).ravel())

        # d^2 / dt_F dz_k of -(t_F / 2N) (y_{k-1} + y_k) . f_k
        cross_x = -0.5 / N * np.einsum("ki,kij->kj", Yk, ev["Fx"])
        cross_u = -0.5 / N * np.einsum("ki,kij->kj", Yk, ev["Fu"])
        idx = np.concatenate([self.ix.ravel(), self.iu.ravel()])
        cv = np.concatenate([cross_x.ravel(), cross_u.ravel()])
        rows += [np.zeros_like(idx), idx]
        cols += [idx, np.zeros_like(idx)]
        vals += [cv, cv]

        if self.config.curvature and len(self.pas):
            h = ev["t_F"] / N
            w = -0.5 * h * Yk[:, self.spec.n + self.pas]
            Hs = self._passive_hessians(ev["X"], ev["U"], w)
            Z = np.concatenate([self.ix, self.iu], axis=1)  # (N+1, nz)
            nz = Z.shape[1]
            rows.append(np.repeat(Z, nz, axis=1).ravel())
            cols.append(np.tile(Z, (1, nz)).ravel())
            vals.append(Hs.ravel())
        H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        return H


def resample_reference(path: BSplinePath, spec: ChainSpec, n_s: int) -> np.ndarray:
    s = np.arange(n_s + 1) / n_s
    return path(s)[:, spec.actuated]


def build_nlp(path: BSplinePath, spec: ChainSpec, config: TrajectoryConfig = TrajectoryConfig(),
              q_start=None, q_goal=None):
    """Transcribe tracking of ``path``; returns the NLP and its initial guess."""
    q0 = path(0.0) if q_start is None else np.asarray(q_start, dtype=float)
    qd = path(1.0) if q_goal is None else np.asarray(q_goal, dtype=float)
    if np.max(np.abs(path(0.0) - q0)) > 1e-9 or np.max(np.abs(path(1.0) - qd)) > 1e-9:
        raise ContractError("path endpoints do not match the boundary configurations")
    nd = spec.n
    x_start = np.concatenate([q0, np.zeros(nd)])
    x_goal = np.concatenate([qd, np.zeros(nd)])
    N = config.n_s
    problem = TrajectoryNLP(spec, resample_reference(path, spec, N), x_start, x_goal, config)

    s = np.arange(N + 1) / N
    tf = config.tf_init
    h = tf / N
    Q = path(s)
    Qd = path.derivative()(s) / tf
    acc = np.zeros((N + 1, nd))
    acc[1:-1] = (Q[2:] - 2.0 * Q[1:-1] + Q[:-2]) / (h * h)
    acc[0], acc[-1] = acc[1], acc[-2]
    X = np.concatenate([Q, Qd], axis=1)
    U = acc[:, spec.actuated]
    xi = problem.pack(tf, X, U)
    xi = np.clip(xi, problem.lower, problem.upper)
    return problem, xi


def _bound_violation(problem: TrajectoryNLP, xi) -> float:
    return float(max(np.max(problem.lower - xi), np.max(xi - problem.upper), 0.0))


def solve_nlp(problem: TrajectoryNLP, xi0, options: nlp.IPOptions | None = None) -> TrajectorySolution:
    cfg = problem.config
    opts = options or nlp.IPOptions(max_iter=cfg.max_iter, max_time=cfg.max_time)
    t0 = time.perf_counter()
    try:
        res = nlp.solve(problem, xi0, opts)
    except SingularConfigurationError:
        raise
    elapsed = time.perf_counter() - t0
    t_F, X, U = problem.unpack(res.x)
    defect = float(np.max(np.abs(problem.constraints(res.x)))) if problem.m else 0.0
    viol = _bound_violation(problem, res.x)
    converged = res.converged and defect <= opts.constr_tol and viol <= 1e-8
    return TrajectorySolution(states=X.copy(), controls=U.copy(), t_F=t_F,
                              objective=problem.objective(res.x), max_defect=defect,
                              max_bound_violation=viol, stationarity=res.dual_infeasibility,
                              converged=converged, iterations=res.iterations,
                              status="converged" if converged else res.status,
                              solve_time=elapsed, config=asdict(cfg))


def plan_trajectory(path: BSplinePath, spec: ChainSpec, scene: CollisionScene | None,
                    config: TrajectoryConfig = TrajectoryConfig(), q_start=None, q_goal=None,
                    options: nlp.IPOptions | None = None) -> TrajectorySolution:
    """Collocation solve along ``path`` followed by a collision check of every grid state."""
    problem, xi0 = build_nlp(path, spec, config, q_start, q_goal)
    try:
        sol = solve_nlp(problem, xi0, options)
    except SingularConfigurationError as exc:
        t_F, X, U = problem.unpack(xi0)
        return TrajectorySolution(states=X, controls=U, t_F=t_F, objective=np.nan,
                                  max_defect=np.inf, max_bound_violation=np.inf,
                                  stationarity=np.inf, converged=False, iterations=0,
                                  status=f"singular_dynamics@{exc.index}", config=asdict(config))
    if scene is not None:
        d = batch_signed_distance(scene, spec, sol.states[:, :spec.n])
        sol.min_distance = float(np.min(d))
        if sol.converged and sol.min_distance < 0.0:
            sol.status = "collision_post_check_failed"
    return sol


# -- files ---------------------------------------------------------------------

def solution_header(spec: ChainSpec) -> list[str]:
    nd, na = spec.n, spec.n_actuated
    return (["k", "t"] + [f"q_{i}" for i in range(nd)] + [f"qd_{i}" for i in range(nd)]
            + [f"u_{i}" for i in range(na)])


def save_solution(sol: TrajectorySolution, spec: ChainSpec, csv_path, extra: dict | None = None):
    """Write the grid CSV and a JSON sidecar next to it."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(solution_header(spec))
        for k, (t, x, u) in enumerate(zip(sol.times, sol.states, sol.controls)):
            w.writerow([k, repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u])
    meta = dict(t_F=sol.t_F, objective=sol.objective, max_defect=sol.max_defect,
                max_bound_violation=sol.max_bound_violation, stationarity=sol.stationarity,
                converged=sol.converged, status=sol.status, iterations=sol.iterations,
                min_distance=sol.min_distance, config=sol.config)
    if extra:
        meta.update(extra)
    csv_path.with_suffix(".json").write_text(json.dumps(meta, indent=2, default=float))


def load_solution(csv_path, spec: ChainSpec):
    """Read a grid CSV; returns ``(t, states, controls)``."""
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    if header != solution_header(spec):
        raise ContractError("trajectory CSV header does not match the chain")
    nd = spec.n
    return body[:, 1], body[:, 2:2 + 2 * nd], body[:, 2 + 2 * nd:]
