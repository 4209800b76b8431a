"""Collision-aware inverse kinematics by damped least squares.

The stacked residual has eight entries: gripper position error (3), weighted
orientation error as an axis-angle vector (3), a hinge penalty on negative
signed distance (1) and the squared passive gravity torque (1). The last entry
pins the swinging joints to a configuration they would actually hang in.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chain import (ChainSpec, ContractError, Pose, gravity_vector, link_frames, mat3_mul,
                    passive_equilibrium)
from .collision import CollisionScene, batch_signed_distance

ROTATION_TOL = 1e-6
_SMALL_ANGLE = 1e-4


class InvalidRotationError(ValueError):
    pass


def _check_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvalidRotationError(f"expected (..., 3, 3), got {R.shape}")
    err = np.linalg.norm(np.swapaxes(R, -1, -2) @ R - np.eye(3), axis=(-2, -1))
    if np.any(~np.isfinite(err)) or np.any(err > ROTATION_TOL) or np.any(np.linalg.det(R) <= 0):
        raise InvalidRotationError("matrix is not a proper rotation")
    return R


def so3_log(R) -> np.ndarray:
    """Axis-angle vector ``theta * axis`` with ``theta`` in [0, pi]. Batched over leading axes."""
    R = _check_rotation(R)
    w = np.stack([R[..., 2, 1] - R[..., 1, 2],
                  R[..., 0, 2] - R[..., 2, 0],
                  R[..., 1, 0] - R[..., 0, 1]], -1)
    c = np.clip(0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0), -1.0, 1.0)
    s = 0.5 * np.linalg.norm(w, axis=-1)
    theta = np.arctan2(s, c)

    # generic branch: theta / sin(theta) * w / 2, with the series near zero
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(theta < _SMALL_ANGLE,
                         1.0 + theta ** 2 / 6.0 + 7.0 * theta ** 4 / 360.0,
                         theta / np.where(s > 0, s, 1.0))
    out = 0.5 * ratio[..., None] * w

    # near pi the antisymmetric part vanishes; read the axis off the symmetric part
    far = c < 0.0
    if np.any(far):
        S = 0.5 * (R + np.swapaxes(R, -1, -2))
        nn = (S - c[..., None, None] * np.eye(3)) / (1.0 - c)[..., None, None]
        k = np.argmax(np.diagonal(nn, axis1=-2, axis2=-1), axis=-1)
        col = np.take_along_axis(nn, k[..., None, None], axis=-1)[..., 0]
        diag = np.take_along_axis(np.diagonal(nn, axis1=-2, axis2=-1), k[..., None], axis=-1)
        axis = col / np.sqrt(np.maximum(diag, 1e-300))
        sign = np.where(np.sum(axis * w, axis=-1) < 0, -1.0, 1.0)
        out = np.where(far[..., None], (sign * theta)[..., None] * axis, out)
    return out


def so3_exp(v) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v, axis=-1)
    K = np.zeros(v.shape[:-1] + (3, 3))
    K[..., 0, 1], K[..., 0, 2] = -v[..., 2], v[..., 1]
    K[..., 1, 0], K[..., 1, 2] = v[..., 2], -v[..., 0]
    K[..., 2, 0], K[..., 2, 1] = -v[..., 1], v[..., 0]
    small = theta < _SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    A = np.where(small, 1.0 - theta ** 2 / 6.0, np.sin(t) / t)
    B = np.where(small, 0.5 - theta ** 2 / 24.0, (1.0 - np.cos(t)) / t ** 2)
    return np.eye(3) + A[..., None, None] * K + B[..., None, None] * (K @ K)


@dataclass(frozen=True)
class IKWeights:
    lambda_q: float = 0.5
    lambda_c: float = 10.0
    lambda_e: float = 1.0

    def __post_init__(self):
        for name in ("lambda_q", "lambda_c", "lambda_e"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ContractError(f"IK weight {name} must be positive, got {v}")


@dataclass(frozen=True)
class IKSettings:
    max_iters: int = 200
    restarts: int = 15
    restart_seed: int = 0
    fd_step: float = 1e-6
    damping: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 10.0
    tol_cost: float = 1e-8
    tol_step: float = 1e-10
    pos_tol: float = 1e-4
    rot_tol: float = 1e-3
    eq_tol: float = 1e-4
    regularization: float = 0.0


@dataclass(frozen=True, eq=False)
class IKProblem:
    spec: ChainSpec
    target: Pose
    seed: np.ndarray
    scene: CollisionScene | None = None
    weights: IKWeights = field(default_factory=IKWeights)

    def __post_init__(self):
        seed = np.asarray(self.spec.check_q(self.seed), dtype=float)
        if seed.ndim != 1:
            raise ContractError("IK seed must be a single configuration")
        if not self.spec.within_limits(seed):
            raise ContractError("IK seed lies outside the joint limits")
        if not self.target.is_valid(1e-6):
            raise InvalidRotationError("target rotation is not a proper rotation")
        object.__setattr__(self, "seed", seed)


@dataclass
class IKSolution:
    q_d: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    attempts: int = 1
    position_error: float = np.inf
    rotation_error: float = np.inf
    signed_distance: float = np.inf
    passive_torque_sq: float = np.inf


def _residual_parts(problem: IKProblem, Q, counter=None):
    """Stacked residuals ``(B, 8)`` and the raw passive torques ``(B, n_p)``."""
    spec, w = problem.spec, problem.weights
    Q = np.atleast_2d(Q)
    R, p = link_frames(spec, Q)
    Rg, pg = R[:, -1], p[:, -1]
    Rd = np.asarray(problem.target.rotation, float)
    r = np.empty((len(Q), 8))
    r[:, 0:3] = pg - np.asarray(problem.target.position, float)
    Rerr = mat3_mul(np.broadcast_to(Rd.T, Rg.shape), Rg)
    r[:, 3:6] = w.lambda_q * so3_log(Rerr)
    if problem.scene is not None:
        d = batch_signed_distance(problem.scene, spec, Q, counter=counter)
        r[:, 6] = w.lambda_c * np.maximum(-d, 0.0)
    else:
        r[:, 6] = 0.0
    gp = gravity_vector(spec, Q)[:, spec.passive_idx]
    r[:, 7] = w.lambda_e * np.sum(gp * gp, axis=-1)
    return r, gp


def ik_residual(problem: IKProblem, q) -> np.ndarray:
    """Stacked residual ``[r_p, r_q, r_c, r_e]`` (8 entries) at ``q``."""
    q = np.asarray(problem.spec.check_q(q), dtype=float)
    if q.ndim != 1:
        raise ContractError("ik_residual takes a single configuration")
    return _residual_parts(problem, q)[0][0]


def _diagnostics(problem: IKProblem, q) -> dict:
    spec = problem.spec
    R, p = link_frames(spec, q)
    perr = float(np.linalg.norm(p[-1] - problem.target.position))
    rerr = float(np.linalg.norm(so3_log(problem.target.rotation.T @ R[-1])))
    d = np.inf
    if problem.scene is not None:
        d = float(batch_signed_distance(problem.scene, spec, q[None])[0])
    gp = gravity_vector(spec, q)[spec.passive_idx]
    return dict(position_error=perr, rotation_error=rerr, signed_distance=d,
                passive_torque_sq=float(gp @ gp))


def _accept(diag: dict, s: IKSettings) -> bool:
    return (diag["position_error"] <= s.pos_tol and diag["rotation_error"] <= s.rot_tol
            and diag["signed_distance"] >= 0.0 and diag["passive_torque_sq"] <= s.eq_tol)


def _hang(spec: ChainSpec, q) -> np.ndarray:
    return np.clip(passive_equilibrium(spec, q), spec.q_min, spec.q_max)


def _levenberg_marquardt(problem: IKProblem, q0, s: IKSettings, trace=None):
    """Damped Gauss-Newton on the stacked residual over the actuated joints.

    After every step the passive joints are moved to their hanging rest pose,
    and the Jacobian is chained through the implicit derivative of that pose
    (``dq_p/dq_a = -K_pp^-1 K_pa`` with ``K`` the passive torque Jacobian).
    Joints resting on a bound are held there when the step would leave the
    box; the remaining step is clamped.
    """
    spec = problem.spec
    lo, hi = spec.q_min, spec.q_max
    n = spec.n
    act, pas = spec.actuated, spec.passive_idx
    reg = np.sqrt(s.regularization)

    def evaluate(Q):
        r, gp = _residual_parts(problem, Q)
        if reg > 0:
            r = np.concatenate([r, reg * (np.atleast_2d(Q) - problem.seed)], axis=1)
        return r, gp

    q = _hang(spec, np.clip(q0, lo, hi))
    r = evaluate(q)[0][0]
    cost = float(r @ r)
    mu = s.damping
    it = 0
    for it in range(1, s.max_iters + 1):
        if cost < s.tol_cost:
            it -= 1
            break
        # one batched call: the base point plus n forward perturbations
        probes = np.repeat(q[None], n + 1, axis=0)
        h = np.where(q + s.fd_step <= hi, s.fd_step, -s.fd_step)
        probes[1 + np.arange(n), np.arange(n)] += h
        rr, gg = evaluate(probes)
        r = rr[0]
        J = (rr[1:] - r).T / h
        K = (gg[1:] - gg[0]).T / h
        try:
            dpda = -np.linalg.solve(K[:, pas], K[:, act])
        except np.linalg.LinAlgError:
            dpda = np.zeros((len(pas), len(act)))
        Jr = J[:, act] + J[:, pas] @ dpda
        JtJ = Jr.T @ Jr
        g = Jr.T @ r
        scale = np.diag(JtJ) + 1e-12 * max(1.0, float(np.max(np.diag(JtJ))))
        qa = q[act]
        while True:
            # joints pinned at a bound with the step pointing outward drop out
            free = np.ones(len(act), dtype=bool)
            for _ in range(len(act)):
                da = np.zeros(len(act))
                Hf = (JtJ + mu * np.diag(scale))[np.ix_(free, free)]
                try:
                    da[free] = -np.linalg.solve(Hf, g[free])
                except np.linalg.LinAlgError:
                    break
                blocked = free & (((qa <= lo[act]) & (da < 0)) | ((qa >= hi[act]) & (da > 0)))
                if not blocked.any():
                    break
                free &= ~blocked
            q_new = q.copy()
            q_new[act] = np.clip(q[act] + da, lo[act], hi[act])
            q_new[pas] = q[pas] + dpda @ (q_new[act] - q[act])
            q_new = _hang(spec, np.clip(q_new, lo, hi))
            step = float(np.linalg.norm(q_new - q))
            r_new = evaluate(q_new)[0][0]
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                q, r, cost = q_new, r_new, cost_new
                mu = max(mu / s.damping_down, 1e-12)
                if trace is not None:
                    trace.append(cost)
                break
            mu *= s.damping_up
            if step < s.tol_step or mu > 1e16:
                return q, cost, it, False
        if step < s.tol_step:
            break
    return q, cost, it, cost < s.tol_cost


def solve_ik(problem: IKProblem, settings: IKSettings | None = None, trace=None) -> IKSolution:
    """Damped least squares from the seed, then from seeded random restarts.

    Returns the first attempt whose final iterate meets every tolerance; if
    none does, the attempt with the smallest residual is returned with
    ``converged=False``.
    """
    s = settings or IKSettings()
    spec = problem.spec
    rng = np.random.default_rng(s.restart_seed)
    starts = [problem.seed]
    if s.restarts > 0:
        starts += list(spec.random_configuration(rng, s.restarts))
    best = None
    total = 0
    for k, q0 in enumerate(starts):
        q, cost, its, _ = _levenberg_marquardt(problem, q0, s, trace)
        total += its
        diag = _diagnostics(problem, q)
        ok = _accept(diag, s)
        sol = IKSolution(q_d=q, residual_norm=float(np.sqrt(cost)), iterations=total,
                         converged=ok, attempts=k + 1, **diag)
        if ok:
            return sol
        if best is None or sol.residual_norm < best.residual_norm:
            best = sol
    best.iterations = total
    best.attempts = len(starts)
    return best
