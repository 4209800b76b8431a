"""Serial-chain kinematics and underactuated rigid-body dynamics.

Joints follow the standard (distal) Denavit-Hartenberg convention: the
transform from frame ``i-1`` to frame ``i`` is ``Rz(theta) Tz(d) Tx(a) Rx(alpha)``
and joint ``i`` moves along / about the z axis of frame ``i-1``. Frame 0 is
the base, frame ``n`` is the gripper center.

All dynamics routines accept arbitrary leading batch dimensions on ``q`` and
``qdot``; mass matrix and bias forces are computed with the composite rigid
body algorithm and recursive Newton-Euler in world-frame spatial coordinates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from ._kernels import hang_passive, passive_accelerations

PASSIVE_COND_LIMIT = 1e12


class ContractError(ValueError):
    """Raised when an input violates a documented precondition."""


class SingularConfigurationError(RuntimeError):
    """The passive block of the mass matrix is numerically singular."""

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class JointSpec:
    kind: str  # "revolute" | "prismatic"
    a: float
    alpha: float
    d: float
    theta_offset: float
    limits: tuple[float, float]
    velocity_limit: float
    acceleration_limit: float
    mass: float
    com: tuple[float, float, float] = (0.0, 0.0, 0.0)
    inertia: tuple = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0))

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ContractError(f"unknown joint kind {self.kind!r}")
        lo, hi = self.limits
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ContractError(f"joint limits must be finite with q_min < q_max, got {self.limits}")
        if self.mass <= 0:
            raise ContractError("joint mass must be positive")
        inertia = np.asarray(self.inertia, dtype=float)
        if inertia.shape != (3, 3) or not np.allclose(inertia, inertia.T, atol=1e-12):
            raise ContractError("link inertia must be a symmetric 3x3 matrix")
        if np.linalg.eigvalsh(inertia).min() <= 0:
            raise ContractError("link inertia must be positive definite")
        if self.velocity_limit <= 0 or self.acceleration_limit <= 0:
            raise ContractError("velocity and acceleration limits must be positive")

    @property
    def prismatic(self) -> bool:
        return self.kind == "prismatic"


@dataclass(frozen=True)
class ChainSpec:
    joints: tuple[JointSpec, ...]
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)
    boom: tuple[int, ...] = ()
    passive: tuple[int, ...] = ()
    gripper: tuple[int, ...] = ()
    name: str = ""

    def __post_init__(self):
        n = len(self.joints)
        sets = [tuple(self.boom), tuple(self.passive), tuple(self.gripper)]
        flat = [i for s in sets for i in s]
        if sorted(flat) != list(range(n)):
            raise ContractError(
                "boom/passive/gripper index sets must be disjoint and cover 0..n_d-1")

    @property
    def n(self) -> int:
        return len(self.joints)

    @cached_property
    def actuated(self) -> np.ndarray:
        """Actuated joint indices in control order (boom, then gripper)."""
        return np.array(self.boom + self.gripper, dtype=int)

    @cached_property
    def passive_idx(self) -> np.ndarray:
        return np.array(self.passive, dtype=int)

    @property
    def n_actuated(self) -> int:
        return len(self.boom) + len(self.gripper)

    @cached_property
    def q_min(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints])

    @cached_property
    def q_max(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints])

    @cached_property
    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity_limit for j in self.joints])

    @cached_property
    def acceleration_limits(self) -> np.ndarray:
        return np.array([j.acceleration_limit for j in self.joints])

    @cached_property
    def _dh(self):
        a = np.array([j.a for j in self.joints])
        alpha = np.array([j.alpha for j in self.joints])
        d = np.array([j.d for j in self.joints])
        theta = np.array([j.theta_offset for j in self.joints])
        prismatic = np.array([j.prismatic for j in self.joints])
        return a, alpha, d, theta, prismatic

    @cached_property
    def _inertial(self):
        masses = np.array([j.mass for j in self.joints])
        coms = np.array([j.com for j in self.joints], dtype=float)
        inertias = np.array([j.inertia for j in self.joints], dtype=float)
        return masses, coms, inertias

    @cached_property
    def g_vec(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.ndim == 0 or q.shape[-1] != self.n:
            raise ContractError(f"expected configuration(s) of dimension {self.n}, got shape {q.shape}")
        return q

    def random_configuration(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.n,) if size is None else (size, self.n)
        return rng.uniform(self.q_min, self.q_max, size=shape)

    def within_limits(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        H = np.eye(4)
        H[:3, :3] = self.rotation
        H[:3, 3] = self.position
        return H

    @classmethod
    def from_matrix(cls, H) -> "Pose":
        H = np.asarray(H, dtype=float)
        return cls(H[:3, :3].copy(), H[:3, 3].copy())

    def is_valid(self, tol: float = 1e-10) -> bool:
        R = np.asarray(self.rotation)
        return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)

    def to_dict(self) -> dict:
        return {"rotation": np.asarray(self.rotation).tolist(),
                "position": np.asarray(self.position).tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        if "quaternion" in data:
            R = quat_to_matrix(data["quaternion"])
        else:
            R = np.asarray(data.get("rotation", np.eye(3)), dtype=float)
        return cls(R, np.asarray(data["position"], dtype=float))


def quat_to_matrix(quat) -> np.ndarray:
    """Rotation matrix from a ``(w, x, y, z)`` quaternion (normalized here)."""
    w, x, y, z = np.asarray(quat, dtype=float) / np.linalg.norm(quat)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# -- small batched linear algebra with a fixed evaluation order ------------
# Results must not depend on batch size, so no BLAS-backed products here.

def mat3_mul(A, B):
    return (A[..., :, 0, None] * B[..., None, 0, :]
            + A[..., :, 1, None] * B[..., None, 1, :]
            + A[..., :, 2, None] * B[..., None, 2, :])


def mat3_vec(A, v):
    return A[..., :, 0] * v[..., None, 0] + A[..., :, 1] * v[..., None, 1] + A[..., :, 2] * v[..., None, 2]


def cross(a, b):
    return np.stack([a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
                     a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
                     a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]], axis=-1)


def skew(v):
    v = np.asarray(v)
    z = np.zeros(v.shape[:-1])
    return np.stack([np.stack([z, -v[..., 2], v[..., 1]], -1),
                     np.stack([v[..., 2], z, -v[..., 0]], -1),
                     np.stack([-v[..., 1], v[..., 0], z], -1)], -2)


# -- kinematics ------------------------------------------------------------

def link_frames(spec: ChainSpec, q):
    """World rotations ``(..., n+1, 3, 3)`` and origins ``(..., n+1, 3)`` of frames 0..n."""
    q = spec.check_q(q)
    a, alpha, d, theta0, prismatic = spec._dh
    theta = np.where(prismatic, theta0, theta0 + q)
    dd = np.where(prismatic, d + q, d)
    ct, st = np.cos(theta), np.sin(theta)
    ca, sa = np.cos(alpha), np.sin(alpha)
    ca = np.broadcast_to(ca, ct.shape)
    sa = np.broadcast_to(sa, ct.shape)
    zero = np.zeros_like(ct)
    # local DH rotation Rz(theta) Rx(alpha), shape (..., n, 3, 3)
    Rl = np.stack([
        np.stack([ct, -st * ca, st * sa], -1),
        np.stack([st, ct * ca, -ct * sa], -1),
        np.stack([zero, sa, ca], -1),
    ], -2)
    tl = np.stack([a * ct, a * st, dd], -1)

    batch = q.shape[:-1]
    n = spec.n
    R = np.empty(batch + (n + 1, 3, 3))
    p = np.empty(batch + (n + 1, 3))
    R[..., 0, :, :] = np.eye(3)
    p[..., 0, :] = 0.0
    for i in range(n):
        Rprev = R[..., i, :, :]
        R[..., i + 1, :, :] = mat3_mul(Rprev, Rl[..., i, :, :])
        p[..., i + 1, :] = p[..., i, :] + mat3_vec(Rprev, tl[..., i, :])
    return R, p


def forward_kinematics(spec: ChainSpec, q) -> Pose:
    """Gripper-center pose for a single configuration."""
    q = spec.check_q(q)
    if q.ndim != 1:
        raise ContractError("forward_kinematics takes a single configuration; use link_frames for batches")
    R, p = link_frames(spec, q)
    return Pose(R[-1].copy(), p[-1].copy())


def link_poses(spec: ChainSpec, q) -> list[Pose]:
    """Poses of frames 0..n (frame i is attached to link i, frame 0 is the base)."""
    R, p = link_frames(spec, q)
    return [Pose(R[i].copy(), p[i].copy()) for i in range(spec.n + 1)]


# -- dynamics ----------------------------------------------------------------

def _world_inertials(spec: ChainSpec, R, p):
    """Per-link world com ``(..., n, 3)``, world inertia about com ``(..., n, 3, 3)``."""
    masses, coms, inertias = spec._inertial
    Rl = R[..., 1:, :, :]
    c = p[..., 1:, :] + mat3_vec(Rl, coms)
    Iw = mat3_mul(mat3_mul(Rl, inertias), np.swapaxes(Rl, -1, -2))
    return masses, c, Iw


def _motion_subspaces(spec: ChainSpec, R, p):
    """Joint motion vectors ``(..., n, 6)`` as (angular, linear-at-origin)."""
    prismatic = spec._dh[4]
    z = R[..., :-1, :, 2]
    o = p[..., :-1, :]
    ang = np.where(prismatic[:, None], 0.0, z)
    lin = np.where(prismatic[:, None], z, cross(o, z))
    return np.concatenate([ang, lin], -1)


def _spatial_inertia(m, c, Ic):
    """6x6 spatial inertia about the world origin, ordering (angular, linear)."""
    cx = skew(c)
    m = np.asarray(m)[..., None, None]
    top = np.concatenate([Ic - m * (cx @ cx), m * cx], -1)
    bot = np.concatenate([-m * cx, m * np.broadcast_to(np.eye(3), cx.shape)], -1)
    return np.concatenate([top, bot], -2)


def _crm(v, m):
    """Spatial motion cross product ``v x m``."""
    w, vo = v[..., :3], v[..., 3:]
    return np.concatenate([cross(w, m[..., :3]), cross(w, m[..., 3:]) + cross(vo, m[..., :3])], -1)


def _crf(v, f):
    """Spatial force cross product ``v x* f``."""
    w, vo = v[..., :3], v[..., 3:]
    return np.concatenate([cross(w, f[..., :3]) + cross(vo, f[..., 3:]), cross(w, f[..., 3:])], -1)


def _dynamics_terms(spec: ChainSpec, q):
    R, p = link_frames(spec, q)
    masses, c, Iw = _world_inertials(spec, R, p)
    S = _motion_subspaces(spec, R, p)
    Isp = _spatial_inertia(masses, c, Iw)
    return S, Isp


def mass_matrix(spec: ChainSpec, q) -> np.ndarray:
    """Joint-space inertia matrix M(q) by the composite rigid body algorithm."""
    q = spec.check_q(q)
    S, Isp = _dynamics_terms(spec, q)
    n = spec.n
    M = np.empty(q.shape[:-1] + (n, n))
    Ic = np.zeros(q.shape[:-1] + (6, 6))
    for i in range(n - 1, -1, -1):
        Ic = Ic + Isp[..., i, :, :]
        F = np.einsum("...ij,...j->...i", Ic, S[..., i, :])
        col = np.einsum("...kj,...j->...k", S[..., : i + 1, :], F)
        M[..., : i + 1, i] = col
        M[..., i, : i + 1] = col
    return M


def inverse_dynamics(spec: ChainSpec, q, qdot, qddot, gravity=None) -> np.ndarray:
    """Generalized forces tau = M qddot + b by recursive Newton-Euler."""
    q = spec.check_q(q)
    qdot = np.broadcast_to(np.asarray(qdot, dtype=float), q.shape)
    qddot = np.broadcast_to(np.asarray(qddot, dtype=float), q.shape)
    g = spec.g_vec if gravity is None else np.asarray(gravity, dtype=float)
    S, Isp = _dynamics_terms(spec, q)
    n = spec.n
    batch = q.shape[:-1]
    v = np.zeros(batch + (6,))
    a = np.zeros(batch + (6,))
    a[..., 3:] = -g
    forces = []
    for i in range(n):
        Si = S[..., i, :]
        vj = Si * qdot[..., i, None]
        a = a + _crm(v, vj) + Si * qddot[..., i, None]
        v = v + vj
        Iv = np.einsum("...ij,...j->...i", Isp[..., i, :, :], v)
        Ia = np.einsum("...ij,...j->...i", Isp[..., i, :, :], a)
        forces.append(Ia + _crf(v, Iv))
    tau = np.empty(batch + (n,))
    f = np.zeros(batch + (6,))
    for i in range(n - 1, -1, -1):
        f = f + forces[i]
        tau[..., i] = np.einsum("...j,...j->...", S[..., i, :], f)
    return tau


def bias_vector(spec: ChainSpec, q, qdot) -> np.ndarray:
    """Coriolis, centrifugal and gravity forces b(q, qdot)."""
    q = spec.check_q(q)
    return inverse_dynamics(spec, q, qdot, np.zeros_like(q))


def gravity_vector(spec: ChainSpec, q) -> np.ndarray:
    """Generalized gravity torques ``dV/dq`` from tail sums of link weights."""
    R, p = link_frames(spec, q)
    masses, c, _ = _world_inertials(spec, R, p)
    f = masses[:, None] * spec.g_vec
    F = np.cumsum(f[::-1], axis=0)[::-1]
    Mo = np.flip(np.cumsum(np.flip(cross(c, np.broadcast_to(f, c.shape)), -2), axis=-2), -2)
    z = R[..., :-1, :, 2]
    o = p[..., :-1, :]
    moment = np.sum(z * (Mo - cross(o, np.broadcast_to(F, o.shape))), axis=-1)
    force = np.sum(z * F, axis=-1)
    return -np.where(spec._dh[4], force, moment)


def passive_gravity(spec: ChainSpec, q) -> np.ndarray:
    """Gravity torques on the passive joints (zero at hanging equilibrium)."""
    return gravity_vector(spec, q)[..., spec.passive_idx]


def potential_energy(spec: ChainSpec, q) -> np.ndarray:
    R, p = link_frames(spec, q)
    masses, c, _ = _world_inertials(spec, R, p)
    return -np.einsum("...i,...ij,j->...", np.broadcast_to(masses, c.shape[:-1]), c, spec.g_vec)


def kinetic_energy(spec: ChainSpec, q, qdot) -> np.ndarray:
    M = mass_matrix(spec, q)
    return 0.5 * np.einsum("...i,...ij,...j->...", qdot, M, qdot)


def mass_matrix_blocks(spec: ChainSpec, M) -> dict[str, np.ndarray]:
    """Partition of M into boom / passive / gripper blocks and their couplings."""
    b, p, g = (np.array(s, dtype=int) for s in (spec.boom, spec.passive, spec.gripper))
    blk = lambda r, c: M[..., r[:, None], c[None, :]]  # noqa: E731
    return {"M_ab": blk(b, b), "M_p": blk(p, p), "M_ag": blk(g, g),
            "M_abp": blk(b, p), "M_agp": blk(g, p), "M_pg": blk(p, g)}


def bias_blocks(spec: ChainSpec, b) -> dict[str, np.ndarray]:
    return {"b_ab": b[..., list(spec.boom)], "b_p": b[..., list(spec.passive)],
            "b_ag": b[..., list(spec.gripper)]}


def forward_dynamics(spec: ChainSpec, x, u) -> np.ndarray:
    """State derivative f(x, u) with actuated accelerations as inputs.

    ``x = [q, qdot]`` and ``u`` holds boom then gripper accelerations. The
    actuated entries of the returned acceleration are copies of ``u``; the
    passive ones solve the passive rows of ``M qddot + b = tau`` with zero
    passive torque. Works on batches.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n = spec.n
    if x.shape[-1] != 2 * n or u.shape[-1] != spec.n_actuated:
        raise ContractError("state or control dimension does not match the chain")
    q, qd = x[..., :n], x[..., n:]
    batch = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    qdd = np.empty(batch + (n,))
    qdd[..., spec.actuated] = u
    pi = spec.passive_idx
    if len(pi):
        M = mass_matrix(spec, q)
        b = bias_vector(spec, q, qd)
        Mpp = M[..., pi[:, None], pi[None, :]]
        Mpa = M[..., pi[:, None], spec.actuated[None, :]]
        ev = np.linalg.eigvalsh(Mpp)
        cond = ev[..., -1] / np.maximum(ev[..., 0], 1e-300)
        bad = ~(cond < PASSIVE_COND_LIMIT)
        if np.any(bad):
            idx = np.argwhere(bad)[0] if bad.ndim else None
            raise SingularConfigurationError(
                f"passive mass block condition number exceeds {PASSIVE_COND_LIMIT:g}", index=idx)
        rhs = np.einsum("...ij,...j->...i", Mpa, np.broadcast_to(u, batch + u.shape[-1:])) + b[..., pi]
        qdd[..., pi] = -np.linalg.solve(Mpp, rhs[..., None])[..., 0]
    out = np.empty(batch + (2 * n,))
    out[..., :n] = np.broadcast_to(qd, batch + (n,))
    out[..., n:] = qdd
    return out


def passive_acceleration(spec: ChainSpec, x, u) -> np.ndarray:
    """Passive joint accelerations for batched ``x`` ``(B, 2n)`` and ``u`` ``(B, n_a)``.

    Compiled counterpart of the passive rows of :func:`forward_dynamics`; rows
    whose passive mass block is singular come back as NaN instead of raising.
    """
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
    U = np.ascontiguousarray(np.atleast_2d(np.asarray(u, dtype=float)))
    if X.shape[-1] != 2 * spec.n or U.shape[-1] != spec.n_actuated or len(X) != len(U):
        raise ContractError("state or control dimension does not match the chain")
    a, alpha, d, theta0, prismatic = spec._dh
    masses, coms, inertias = spec._inertial
    out = np.empty((len(X), len(spec.passive_idx)))
    if len(spec.passive_idx):
        passive_accelerations(X, U, a, alpha, d, theta0, prismatic, masses, coms, inertias,
                              spec.g_vec, spec.actuated.astype(np.int64),
                              spec.passive_idx.astype(np.int64), out)
    return out


def _compiled_dynamics(spec: ChainSpec, x, u) -> np.ndarray:
    n = spec.n
    out = np.empty(2 * n)
    out[:n] = x[n:]
    out[n + spec.actuated] = u
    if len(spec.passive_idx):
        ap = passive_acceleration(spec, x[None], np.asarray(u, dtype=float)[None])[0]
        if not np.all(np.isfinite(ap)):
            raise SingularConfigurationError("singular passive mass block during rollout")
        out[n + spec.passive_idx] = ap
    return out


def integrate_rk4(spec: ChainSpec, x0, u_profile, h: float, steps: int, compiled: bool = True) -> np.ndarray:
    """Fixed-step RK4 rollout; returns states of shape ``(steps + 1, 2 n)``.

    ``u_profile`` is either an array of per-step controls (held constant over
    each step, shape ``(steps, n_a)`` or ``(n_a,)``) or a callable ``u(t)``.
    ``compiled=False`` evaluates :func:`forward_dynamics` instead of the kernel.
    """
    if h <= 0:
        raise ContractError("step size must be positive")
    f = _compiled_dynamics if compiled else forward_dynamics
    U = None
    if not callable(u_profile):
        U = np.asarray(u_profile, dtype=float)
        if U.ndim == 1:
            U = np.broadcast_to(U, (steps, U.shape[0]))

    xs = np.empty((steps + 1, 2 * spec.n))
    xs[0] = x0
    x = np.asarray(x0, dtype=float)
    for k in range(steps):
        t = k * h
        if U is None:
            u0, um, u1 = u_profile(t), u_profile(t + 0.5 * h), u_profile(t + h)
        else:
            u0 = um = u1 = U[k]
        k1 = f(spec, x, u0)
        k2 = f(spec, x + 0.5 * h * k1, um)
        k3 = f(spec, x + 0.5 * h * k2, um)
        k4 = f(spec, x + h * k3, u1)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        xs[k + 1] = x
    return xs


def passive_equilibrium(spec: ChainSpec, q, iters: int = 100, tol: float = 1e-10) -> np.ndarray:
    """Return ``q`` with the passive joints moved to a stable hanging rest pose.

    Minimizes potential energy over the passive joints (actuated joints held)
    with Newton steps on the passive gravity torque, falling back to gradient
    steps where the stiffness is not positive definite. ``tol`` is relative
    to the total weight of the chain.
    """
    q = np.array(spec.check_q(q), dtype=float)
    pi = spec.passive_idx
    if not len(pi):
        return q
    scale = max(1.0, _gravity_scale(spec))
    step = 1e-6
    V = float(potential_energy(spec, q))
    for _ in range(iters):
        g = passive_gravity(spec, q)
        if np.max(np.abs(g)) < tol * scale:
            break
        probes = np.repeat(q[None], len(pi), axis=0)
        probes[np.arange(len(pi)), pi] += step
        K = (passive_gravity(spec, probes) - g).T / step
        K = 0.5 * (K + K.T)
        if np.linalg.eigvalsh(K).min() > 0:
            dq = -np.linalg.solve(K, g)
        else:
            dq = -g / scale
        dq = dq * min(1.0, 0.5 / max(np.abs(dq).max(), 1e-300))
        for _ in range(30):
            trial = q.copy()
            trial[pi] += dq
            Vt = float(potential_energy(spec, trial))
            if Vt <= V + 1e-14 * scale:
                break
            dq = 0.5 * dq
        q, V = trial, Vt
    for i in pi:
        if not spec.joints[i].prismatic:
            lo, hi = spec.joints[i].limits
            k = np.ceil((lo - q[i]) / (2 * np.pi))
            if q[i] + 2 * np.pi * k <= hi:
                q[i] += 2 * np.pi * k
    return q


def hang_batch(spec: ChainSpec, Q, iters: int = 8, step: float = 1e-7) -> np.ndarray:
    """Passive joints of each row moved to the nearby rest pose (compiled batched Newton).

    Cheaper and less careful than :func:`passive_equilibrium`: no line search
    and no wrapping, so the passive values given should already lie near the
    stable rest pose (e.g. interpolated between two rest poses).
    """
    Q = np.array(spec.check_q(Q), dtype=float, ndmin=2)
    pi = spec.passive_idx
    if not len(pi):
        return Q
    a, alpha, d, theta0, prismatic = spec._dh
    masses, coms, _ = spec._inertial
    tol = 1e-10 * max(1.0, _gravity_scale(spec))
    Q = np.ascontiguousarray(Q)
    hang_passive(Q, a, alpha, d, theta0, prismatic, masses, coms, spec.g_vec,
                 pi.astype(np.int64), iters, step, tol)
    return Q


def _gravity_scale(spec: ChainSpec) -> float:
    masses = spec._inertial[0]
    return float(np.sum(masses) * np.linalg.norm(spec.g_vec))


# -- file format -------------------------------------------------------------

_JOINT_KEYS = {"kind", "a", "alpha", "d", "theta_offset", "limits", "velocity_limit",
               "acceleration_limit", "mass", "com", "inertia", "name"}
_TOP_KEYS = {"joints", "gravity", "partition", "name", "description", "version", "units"}
_PARTITION_KEYS = {"boom", "passive", "gripper"}


def _reject_unknown(data: dict, allowed: set, where: str):
    extra = set(data) - allowed
    if extra:
        raise ContractError(f"unknown keys in {where}: {sorted(extra)}")


def chain_from_dict(data: dict) -> ChainSpec:
    _reject_unknown(data, _TOP_KEYS, "chain spec")
    joints = []
    for k, jd in enumerate(data["joints"]):
        _reject_unknown(jd, _JOINT_KEYS, f"joint {k}")
        joints.append(JointSpec(
            kind=jd["kind"], a=float(jd["a"]), alpha=float(jd["alpha"]), d=float(jd["d"]),
            theta_offset=float(jd.get("theta_offset", 0.0)),
            limits=tuple(float(v) for v in jd["limits"]),
            velocity_limit=float(jd["velocity_limit"]),
            acceleration_limit=float(jd["acceleration_limit"]),
            mass=float(jd["mass"]),
            com=tuple(float(v) for v in jd.get("com", (0.0, 0.0, 0.0))),
            inertia=tuple(tuple(float(v) for v in row) for row in jd["inertia"]),
        ))
    part = data["partition"]
    _reject_unknown(part, _PARTITION_KEYS, "partition")
    return ChainSpec(
        joints=tuple(joints),
        gravity=tuple(float(v) for v in data.get("gravity", (0.0, 0.0, -9.81))),
        boom=tuple(int(i) for i in part.get("boom", ())),
        passive=tuple(int(i) for i in part.get("passive", ())),
        gripper=tuple(int(i) for i in part.get("gripper", ())),
        name=data.get("name", ""),
    )


def chain_to_dict(spec: ChainSpec) -> dict:
    return {
        "name": spec.name,
        "gravity": list(spec.gravity),
        "partition": {"boom": list(spec.boom), "passive": list(spec.passive),
                      "gripper": list(spec.gripper)},
        "joints": [{
            "kind": j.kind, "a": j.a, "alpha": j.alpha, "d": j.d, "theta_offset": j.theta_offset,
            "limits": list(j.limits), "velocity_limit": j.velocity_limit,
            "acceleration_limit": j.acceleration_limit, "mass": j.mass, "com": list(j.com),
            "inertia": [list(r) for r in j.inertia],
        } for j in spec.joints],
    }


def load_chain(path) -> ChainSpec:
    with open(path) as fh:
        return chain_from_dict(json.load(fh))


def data_path(name: str) -> Path:
    return Path(__file__).with_name("data") / name


def reference_crane() -> ChainSpec:
    return load_chain(data_path("reference_crane.json"))


def home_configuration(spec: ChainSpec, q=None) -> np.ndarray:
    """Mid-range actuated joints with the passive joints hanging at rest."""
    if q is None:
        q = 0.5 * (spec.q_min + spec.q_max)
    return passive_equilibrium(spec, q)


def simple_chain(kinds: Sequence[str], lengths: Sequence[float], masses: Sequence[float],
                 gravity=(0.0, 0.0, -9.81), passive: Sequence[int] = (), planar_axis: str = "y",
                 limits=(-np.pi, np.pi), velocity_limit=10.0, acceleration_limit=10.0) -> ChainSpec:
    """Planar test chains: revolute links rotate about the base z axis.

    Each link carries a point-like mass (tiny isotropic inertia) at its distal
    end. With ``gravity`` along -y the chain is a vertical-plane pendulum.
    """
    joints = []
    for kind, L, m in zip(kinds, lengths, masses):
        if kind == "revolute":
            joints.append(JointSpec("revolute", L, 0.0, 0.0, 0.0, tuple(limits), velocity_limit,
                                    acceleration_limit, m, (0.0, 0.0, 0.0), _tiny_inertia(m)))
        else:
            joints.append(JointSpec("prismatic", 0.0, 0.0, 0.0, 0.0, tuple(limits), velocity_limit,
                                    acceleration_limit, m, (0.0, 0.0, 0.0), _tiny_inertia(m)))
    n = len(joints)
    act = tuple(i for i in range(n) if i not in passive)
    return ChainSpec(tuple(joints), tuple(gravity), boom=act, passive=tuple(passive), gripper=())


def _tiny_inertia(m: float, r: float = 1e-3):
    v = 0.4 * m * r * r
    return ((v, 0.0, 0.0), (0.0, v, 0.0), (0.0, 0.0, v))
