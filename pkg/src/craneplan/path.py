"""Sampling-based optimization of a collision-free joint-space spline.

A Gaussian over the free control points is refined by elite recombination
with log-rank weights. Costs for a whole population go through one batched
collision query.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .bspline import BSplinePath, initial_control_points
from .chain import ChainSpec, ContractError, hang_batch
from .collision import CheckCounter, CollisionScene, batch_signed_distance

log = logging.getLogger(__name__)

DEGREE = 3


@dataclass(frozen=True)
class PathCostWeights:
    w_c: float = 10.0
    w_l: float = 10.0
    n_s: int = 100
    clearance: float = 0.0
    # collision term evaluated with passive joints at their rest pose
    hang: bool = False

    def __post_init__(self):
        if self.n_s < 2:
            raise ContractError("n_s must be at least 2")
        if self.w_c < 0 or self.w_l < 0 or self.clearance < 0:
            raise ContractError("path cost weights and clearance must be non-negative")


@dataclass(frozen=True)
class EvolutionConfig:
    population: int = 100
    elites: int = 20
    max_iters: int = 300
    cost_tolerance: float = 0.0
    epsilon: float = 1e-8
    sigma: float = 1.0
    init_scale: float = 0.3
    stall_iters: int = 20
    stall_tol: float = 1e-6
    n_ctrl: int = 12
    rng_seed: int = 0
    # score samples after clipping them to the joint box; spline points are
    # convex combinations of control points, so the path then respects limits
    project_limits: bool = True

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ContractError("need 1 <= elites <= population")
        if self.epsilon <= 0 or self.sigma <= 0 or self.init_scale <= 0:
            raise ContractError("epsilon, sigma and init_scale must be positive")
        if self.n_ctrl < 2 * (DEGREE + 1):
            raise ContractError(f"n_ctrl must be at least {2 * (DEGREE + 1)}")


@dataclass
class DistributionState:
    mean: np.ndarray
    covariance: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        D = self.mean.size
        if self.covariance.shape != (D, D):
            raise ContractError("covariance shape does not match the mean")
        if not self.sigma > 0:
            raise ContractError("sigma must be positive")


@dataclass
class PathCost:
    total: float
    length: float
    collision: float
    limits: float
    min_distance: float


@dataclass
class PathResult:
    path: BSplinePath
    cost: PathCost
    success: bool
    iterations: int
    evaluations: int
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


def log_rank_weights(nu: int) -> np.ndarray:
    if nu < 1:
        raise ContractError("nu must be at least 1")
    raw = np.log(nu + 0.5) - np.log(np.arange(1, nu + 1))
    return raw / raw.sum()


class _CheckpointCost:
    """Batched cost over full control-point arrays ``(B, n_c, n_d)``.

    Checkpoints are ``s_k = k / n_s``; every sum runs over ``k = 1..n_s``, so a
    population of ``B`` costs exactly ``B * n_s`` distance queries. With
    ``hang`` set, the passive coordinates are first relaxed to the gravity
    rest pose for the sampled actuated values; the length and limit terms
    still see the raw checkpoints.
    """

    def __init__(self, scene: CollisionScene | None, spec: ChainSpec, weights: PathCostWeights,
                 n_ctrl: int, counter: CheckCounter | None = None):
        self.scene, self.spec, self.weights, self.counter = scene, spec, weights, counter
        s = self.s = np.arange(weights.n_s + 1) / weights.n_s
        unit = BSplinePath.clamped(np.eye(n_ctrl), DEGREE)
        self.basis = unit(s)

    def __call__(self, P: np.ndarray):
        w = self.weights
        Q = np.einsum("kc,bcd->bkd", self.basis, P)
        steps = np.diff(Q, axis=1)
        J_p = np.sum(steps * steps, axis=(1, 2))
        checks = Q[:, 1:]
        B, K, n = checks.shape
        if self.scene is not None:
            flat = checks.reshape(B * K, n)
            if w.hang and len(self.spec.passive_idx):
                # warm start: passive values interpolated between the end poses
                pi = self.spec.passive_idx
                s = self.s[1:, None]
                start = (1.0 - s) * P[:, None, 0, pi] + s * P[:, None, -1, pi]
                flat = flat.copy()
                flat[:, pi] = start.reshape(B * K, len(pi))
                flat = hang_batch(self.spec, flat)
            d = batch_signed_distance(self.scene, self.spec, flat,
                                      counter=self.counter).reshape(B, K)
        else:
            d = np.full((B, K), np.inf)
        J_c = np.sum(np.maximum(w.clearance - d, 0.0), axis=1)
        over = np.maximum(checks - self.spec.q_max, 0.0)
        under = np.maximum(self.spec.q_min - checks, 0.0)
        J_l = np.sum(over * over + under * under, axis=(1, 2))
        total = J_p + w.w_c * J_c + w.w_l * J_l
        return total, J_p, J_c, J_l, d.min(axis=1)


def path_cost(path: BSplinePath, scene: CollisionScene | None, spec: ChainSpec,
              weights: PathCostWeights = PathCostWeights(), counter: CheckCounter | None = None) -> PathCost:
    """Total cost and its length, collision and limit parts for one path."""
    if path.degree != DEGREE:
        raise ContractError("path cost expects a cubic spline")
    fn = _CheckpointCost(scene, spec, weights, path.n_ctrl, counter)
    vals = fn(path.control_points[None])
    return PathCost(*(float(v[0]) for v in vals))


def evolve_step(dist: DistributionState, config: EvolutionConfig, cost_fn, rng: np.random.Generator):
    """One generation: sample, evaluate in one batch, recombine elites.

    Returns the new distribution, the best sample of this generation and its cost.
    """
    D = dist.mean.size
    try:
        L = np.linalg.cholesky(dist.covariance)
    except np.linalg.LinAlgError:
        log.warning("covariance lost definiteness; resetting to sigma^2 I")
        L = dist.sigma * np.eye(D)
    z = rng.standard_normal((config.population, D))
    samples = dist.mean + dist.sigma * z @ L.T
    costs = np.asarray(cost_fn(samples), dtype=float)
    order = np.argsort(costs, kind="stable")
    elite = samples[order[:config.elites]]
    w = log_rank_weights(config.elites)
    mean = w @ elite
    dev = elite - mean
    cov = (dev.T * w) @ dev + config.epsilon * np.eye(D)
    cov = 0.5 * (cov + cov.T)
    best = order[0]
    return DistributionState(mean, cov, dist.sigma), samples[best].copy(), float(costs[best])


def _assemble(free: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Insert flattened free rows ``(B, ñ_c * n_d)`` between the pinned rows."""
    B = free.shape[0]
    P = np.repeat(template[None], B, axis=0)
    n_free = template.shape[0] - 2 * (DEGREE + 1)
    P[:, DEGREE + 1:DEGREE + 1 + n_free] = free.reshape(B, n_free, template.shape[1])
    return P


def optimize_path(q0, qd, scene: CollisionScene | None, spec: ChainSpec,
                  weights: PathCostWeights = PathCostWeights(),
                  config: EvolutionConfig = EvolutionConfig(),
                  counter: CheckCounter | None = None) -> PathResult:
    """Evolve the free control points and return the best path ever sampled."""
    q0 = np.asarray(spec.check_q(q0), dtype=float)
    qd = np.asarray(spec.check_q(qd), dtype=float)
    if q0.ndim != 1 or qd.ndim != 1:
        raise ContractError("optimize_path takes single start and goal configurations")
    if not (spec.within_limits(q0) and spec.within_limits(qd)):
        raise ContractError("start and goal must lie within the joint limits")
    effective = dict(weights=asdict(weights), evolution=asdict(config))
    template = initial_control_points(q0, qd, config.n_ctrl, DEGREE)
    fn = _CheckpointCost(scene, spec, weights, config.n_ctrl, counter)

    def result(P, its, evals, history):
        path = BSplinePath.clamped(P, DEGREE)
        parts = fn(P[None])
        cost = PathCost(*(float(v[0]) for v in parts))
        ok = cost.min_distance >= 0.0 and cost.limits == 0.0
        return PathResult(path, cost, ok, its, evals, history, effective)

    if np.array_equal(q0, qd):
        return result(template, 0, 0, [])

    n_free = config.n_ctrl - 2 * (DEGREE + 1)
    D = n_free * spec.n
    if D == 0:
        return result(template, 0, 0, [])

    lo, hi = np.tile(spec.q_min, n_free), np.tile(spec.q_max, n_free)

    def project(free):
        return np.clip(free, lo, hi) if config.project_limits else free

    def cost_fn(free):
        return fn(_assemble(project(free), template))[0]

    span = config.init_scale * (spec.q_max - spec.q_min)
    mean = template[DEGREE + 1:DEGREE + 1 + n_free].ravel().copy()
    dist = DistributionState(mean, np.diag(np.tile(span * span, n_free)), config.sigma)
    rng = np.random.default_rng(config.rng_seed)

    best_x = mean.copy()
    best_f = float(cost_fn(mean[None])[0])
    history = [best_f]
    its = 0
    for its in range(1, config.max_iters + 1):
        dist, x, f = evolve_step(dist, config, cost_fn, rng)
        if f < best_f:
            best_x, best_f = x, f
        history.append(best_f)
        if best_f <= config.cost_tolerance:
            break
        if its >= config.stall_iters and history[-config.stall_iters - 1] - best_f < config.stall_tol:
            break
    P = _assemble(project(best_x[None]), template)[0]
    return result(P, its, 1 + its * config.population, history)
