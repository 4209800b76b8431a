"""Clamped B-spline curves in joint space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ContractError


def clamped_knots(n_ctrl: int, degree: int) -> np.ndarray:
    """Uniform knots on [0, 1] with ``degree + 1`` repeats at each end."""
    if n_ctrl < degree + 1:
        raise ContractError(f"need at least {degree + 1} control points, got {n_ctrl}")
    inner = np.arange(1, n_ctrl - degree) / (n_ctrl - degree)
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


@dataclass(frozen=True, eq=False)
class BSplinePath:
    control_points: np.ndarray
    knots: np.ndarray
    degree: int = 3

    def __post_init__(self):
        P = np.asarray(self.control_points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        U = np.asarray(self.knots, dtype=float)
        p = int(self.degree)
        if P.ndim != 2 or len(U) != len(P) + p + 1:
            raise ContractError("knot count must equal control points + degree + 1")
        if np.any(np.diff(U) < 0) or not np.all(np.isfinite(P)):
            raise ContractError("knots must be non-decreasing and control points finite")
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "knots", U)
        object.__setattr__(self, "degree", p)

    @classmethod
    def clamped(cls, control_points, degree: int = 3) -> "BSplinePath":
        P = np.asarray(control_points, dtype=float)
        return cls(P, clamped_knots(len(P), degree), degree)

    @property
    def n_ctrl(self) -> int:
        return self.control_points.shape[0]

    @property
    def dim(self) -> int:
        return self.control_points.shape[1]

    def _span(self, s: np.ndarray) -> np.ndarray:
        U, p = self.knots, self.degree
        k = np.searchsorted(U, s, side="right") - 1
        return np.clip(k, p, self.n_ctrl - 1)

    def __call__(self, s) -> np.ndarray:
        """De Boor evaluation at scalar or array ``s`` in [0, 1]."""
        s_arr = np.asarray(s, dtype=float)
        if np.any(~np.isfinite(s_arr)) or np.any(s_arr < 0.0) or np.any(s_arr > 1.0):
            raise ContractError("spline parameter must lie in [0, 1]")
        flat = np.atleast_1d(s_arr).ravel()
        U, p, P = self.knots, self.degree, self.control_points
        k = self._span(flat)
        idx = k[:, None] - p + np.arange(p + 1)
        d = P[idx]  # (m, p+1, dim)
        for r in range(1, p + 1):
            for j in range(p, r - 1, -1):
                i = k - p + j
                lo, hi = U[i], U[i + p + 1 - r]
                denom = hi - lo
                alpha = np.where(denom > 0, (flat - lo) / np.where(denom > 0, denom, 1.0), 0.0)
                d[:, j] = (1.0 - alpha)[:, None] * d[:, j - 1] + alpha[:, None] * d[:, j]
        out = d[:, p]
        return out.reshape(s_arr.shape + (self.dim,))

    def derivative(self) -> "BSplinePath":
        """Derivative curve ``dq/ds`` as a spline of one degree lower."""
        U, p, P = self.knots, self.degree, self.control_points
        if p == 0:
            return BSplinePath(np.zeros_like(P), U, 0)
        span = U[p + 1:p + len(P)] - U[1:len(P)]
        with np.errstate(divide="ignore", invalid="ignore"):
            Q = np.where(span[:, None] > 0, p * np.diff(P, axis=0) / span[:, None], 0.0)
        return BSplinePath(Q, U[1:-1], p - 1)

    def basis_matrix(self, s) -> np.ndarray:
        """``B`` with ``path(s) = B @ control_points``; shape ``(len(s), n_ctrl)``."""
        unit = BSplinePath(np.eye(self.n_ctrl), self.knots, self.degree)
        return unit(np.atleast_1d(np.asarray(s, dtype=float)))


def initial_control_points(q0, qd, n_ctrl: int = 12, degree: int = 3) -> np.ndarray:
    """Pinned end rows, interior rows evenly spaced on the segment q0 -> qd."""
    q0 = np.asarray(q0, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if q0.shape != qd.shape or q0.ndim != 1:
        raise ContractError("q0 and qd must be vectors of equal length")
    free = n_ctrl - 2 * (degree + 1)
    if free < 0:
        raise ContractError(f"need at least {2 * (degree + 1)} control points, got {n_ctrl}")
    P = np.empty((n_ctrl, len(q0)))
    P[:degree + 1] = q0
    P[n_ctrl - degree - 1:] = qd
    t = np.arange(1, free + 1) / (free + 1)
    P[degree + 1:degree + 1 + free] = q0 + t[:, None] * (qd - q0)
    return P
