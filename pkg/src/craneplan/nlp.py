"""Primal-dual interior-point solver for sparse, bound-constrained NLPs.

Solves ``min f(x)  s.t.  c(x) = 0,  lower <= x <= upper``. Variables with
equal bounds are held fixed and removed from the linear algebra. Newton steps
come from the quasi-definite KKT system

    [ W + Sigma + dw I   A^T  ] [dx]     [grad phi]
    [ A                -dc I  ] [y+] = - [c       ]

factored by sparse LU with diagonal pivoting, whose pivot signs give the
inertia used to decide on Hessian regularization. Globalization is a
backtracking filter line search (objective-with-barrier vs. constraint
violation) with second-order correction and a minimum-norm feasibility
restoration when the step size collapses.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu


class SparseNLP(Protocol):
    n: int
    m: int
    lower: np.ndarray
    upper: np.ndarray

    def objective(self, x) -> float: ...

    def gradient(self, x) -> np.ndarray: ...

    def constraints(self, x) -> np.ndarray: ...

    def jacobian(self, x) -> sp.spmatrix: ...

    def hessian(self, x, y) -> sp.spmatrix: ...


@dataclass(frozen=True)
class IPOptions:
    constr_tol: float = 1e-6
    dual_tol: float = 1e-4
    compl_tol: float = 1e-6
    max_iter: int = 300
    max_time: float | None = None
    mu_init: float = 0.1
    mu_min: float = 1e-11
    kappa_eps: float = 10.0
    kappa_mu: float = 0.2
    theta_mu: float = 1.5
    tau_min: float = 0.99
    bound_push: float = 1e-2
    bound_frac: float = 1e-2
    delta_c: float = 1e-10
    armijo: float = 1e-4
    max_backtracks: int = 40
    kappa_sigma: float = 1e10
    gamma_theta: float = 1e-5
    gamma_phi: float = 1e-8
    gamma_alpha: float = 0.05
    switch_delta: float = 1.0
    s_theta: float = 1.1
    s_phi: float = 2.3
    restoration_iters: int = 20


@dataclass
class IPResult:
    x: np.ndarray
    y: np.ndarray
    z_lower: np.ndarray
    z_upper: np.ndarray
    objective: float
    constraint_violation: float
    dual_infeasibility: float
    complementarity: float
    iterations: int
    converged: bool
    status: str
    history: list = field(default_factory=list)


class _Inertia(Exception):
    pass


def _factor(K: sp.csc_matrix, m: int):
    """LU with diagonal pivots; raises ``_Inertia`` unless exactly ``m`` pivots are negative."""
    try:
        lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise _Inertia(str(exc)) from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise _Inertia("off-diagonal pivot")
    d = lu.U.diagonal()
    if not np.all(np.isfinite(d)) or np.any(d == 0):
        raise _Inertia("zero pivot")
    if int(np.sum(d < 0)) != m:
        raise _Inertia("wrong inertia")
    return lu


def _fraction_to_boundary(s, ds, tau) -> float:
    neg = ds < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * s[neg] / ds[neg])))


def solve(problem: SparseNLP, x0, options: IPOptions = IPOptions(), y0=None, log=None) -> IPResult:
    opt = options
    t_start = time.perf_counter()
    lo = np.asarray(problem.lower, dtype=float)
    hi = np.asarray(problem.upper, dtype=float)
    n, m = problem.n, problem.m
    fixed = lo == hi
    free = np.flatnonzero(~fixed)
    nf = len(free)
    hasL = np.isfinite(lo[free])
    hasU = np.isfinite(hi[free])
    lf, uf = lo[free], hi[free]

    # push the starting point into the interior
    x = np.array(x0, dtype=float)
    x[fixed] = lo[fixed]
    xf = x[free]
    width = np.where(hasL & hasU, uf - lf, np.inf)
    with np.errstate(invalid="ignore"):
        pL = np.minimum(opt.bound_push * np.maximum(1.0, np.abs(lf)), opt.bound_frac * width)
        pU = np.minimum(opt.bound_push * np.maximum(1.0, np.abs(uf)), opt.bound_frac * width)
        xf = np.where(hasL, np.maximum(xf, lf + pL), xf)
        xf = np.where(hasU, np.minimum(xf, uf - pU), xf)
    x[free] = xf

    mu = opt.mu_init
    y = np.zeros(m) if y0 is None else np.array(y0, dtype=float)

    def slacks(xf):
        sL = np.where(hasL, xf - lf, 1.0)
        sU = np.where(hasU, uf - xf, 1.0)
        return sL, sU

    sL, sU = slacks(x[free])
    zL = np.where(hasL, mu / sL, 0.0)
    zU = np.where(hasU, mu / sU, 0.0)

    def barrier(xv):
        sl, su = slacks(xv[free])
        if np.any(sl[hasL] <= 0) or np.any(su[hasU] <= 0):
            return np.inf
        return -mu * (np.sum(np.log(sl[hasL])) + np.sum(np.log(su[hasU])))

    def theta(cv) -> float:
        return float(np.sum(np.abs(cv)))

    def phi(xv) -> float:
        bar = barrier(xv)
        if not np.isfinite(bar):
            return np.inf
        return float(problem.objective(xv)) + bar

    def step_bound(d, sl=None, su=None):
        sl = sL if sl is None else sl
        su = sU if su is None else su
        tau = max(opt.tau_min, 1.0 - mu)
        return min(_fraction_to_boundary(sl[hasL], d[hasL], tau),
                   _fraction_to_boundary(su[hasU], -d[hasU], tau))

    def step_cap(xv, d):
        """Largest step allowed by the problem's optional per-variable limits."""
        limit = getattr(problem, "step_limit", None)
        if limit is None:
            return 1.0
        cap = np.asarray(limit(xv), dtype=float)[free]
        big = np.abs(d) > cap
        return float(np.min(cap[big] / np.abs(d[big]))) if np.any(big) else 1.0

    def restore(x, c):
        """Damped minimum-norm feasibility steps until the violation drops by 10%."""
        th0 = theta(c)
        for _ in range(opt.restoration_iters):
            sl, su = slacks(x[free])
            D = np.where(hasL, 1.0 / sl ** 2, 0.0) + np.where(hasU, 1.0 / su ** 2, 0.0)
            A_r = problem.jacobian(x).tocsc()[:, free]
            W = sp.diags(mu * D + np.sqrt(mu))
            K = sp.bmat([[W, A_r.T], [A_r, -opt.delta_c * sp.eye(m)]], format="csc")
            try:
                lu_r = _factor(K, m)
            except _Inertia:
                return None
            p = lu_r.solve(-np.concatenate([np.zeros(nf), c]))[:nf]
            a = min(step_bound(p, sl, su), step_cap(x, p))
            ok = False
            for _ in range(opt.max_backtracks):
                xt = x.copy()
                xt[free] += a * p
                ct = problem.constraints(xt)
                if np.all(np.isfinite(ct)) and theta(ct) <= (1.0 - 1e-4 * a) * theta(c):
                    ok = True
                    break
                a *= 0.5
            if not ok:
                return None
            x, c = xt, ct
            if theta(c) <= 0.9 * th0 and not any(theta(c) >= tf and phi(x) >= pf for tf, pf in filt):
                return x, c
        return None

    dw_last = 0.0
    history = []
    status = "max_iter"
    it = 0
    c = problem.constraints(x)
    th_init = theta(c)
    theta_max = 1e4 * max(1.0, th_init)
    theta_min = 1e-4 * max(1.0, th_init)
    filt: list[tuple[float, float]] = []
    errs = (np.inf, np.inf, np.inf)
    for it in range(opt.max_iter + 1):
        g = problem.gradient(x)[free]
        A = problem.jacobian(x).tocsc()[:, free]
        # optimality measures on the original problem
        stat = g + A.T @ y - zL + zU
        dual_inf = float(np.max(np.abs(stat))) if nf else 0.0
        cviol = float(np.max(np.abs(c))) if m else 0.0
        comp = np.concatenate([(sL * zL)[hasL], (sU * zU)[hasU]])
        compl = float(np.max(comp)) if comp.size else 0.0
        errs = (dual_inf, cviol, compl)
        history.append(dict(iter=it, mu=mu, objective=float(problem.objective(x)),
                            constr=cviol, dual=dual_inf, compl=compl))
        if log is not None:
            log(history[-1])
        if dual_inf <= opt.dual_tol and cviol <= opt.constr_tol and compl <= opt.compl_tol:
            status = "converged"
            break
        if it == opt.max_iter:
            break
        if opt.max_time is not None and time.perf_counter() - t_start > opt.max_time:
            status = "time_limit"
            break

        # barrier parameter update (monotone); the filter restarts with each new mu
        while mu > opt.mu_min:
            err_mu = max(dual_inf, cviol, float(np.max(np.abs(comp - mu))) if comp.size else 0.0)
            if err_mu > opt.kappa_eps * mu:
                break
            mu = max(opt.mu_min, min(opt.kappa_mu * mu, mu ** opt.theta_mu))
            filt = []

        grad_phi = g - np.where(hasL, mu / sL, 0.0) + np.where(hasU, mu / sU, 0.0)
        Sigma = np.where(hasL, zL / sL, 0.0) + np.where(hasU, zU / sU, 0.0)
        H = problem.hessian(x, y).tocsc()[free][:, free]
        W0 = (H + sp.diags(Sigma)).tocsc()
        rhs = -np.concatenate([grad_phi, c])

        dw = 0.0
        lu = None
        for attempt in range(60):
            K = sp.bmat([[W0 + dw * sp.eye(nf), A.T], [A, -opt.delta_c * sp.eye(m)]], format="csc")
            try:
                lu = _factor(K, m)
                break
            except _Inertia:
                if dw == 0.0:
                    dw = 1e-4 if dw_last == 0.0 else max(1e-20, dw_last / 3.0)
                else:
                    dw *= 8.0 if dw_last > 0 else 100.0
                if dw > 1e40:
                    break
        if lu is None:
            status = "factorization_failed"
            break
        if dw > 0:
            dw_last = dw
        sol = lu.solve(rhs)
        dx_f = sol[:nf]
        y_new = sol[nf:]
        dx = np.zeros(n)
        dx[free] = dx_f

        # multiplier steps
        tau = max(opt.tau_min, 1.0 - mu)
        dzL = np.where(hasL, mu / sL - zL - zL / sL * dx_f, 0.0)
        dzU = np.where(hasU, mu / sU - zU + zU / sU * dx_f, 0.0)
        a_max = min(step_bound(dx_f), step_cap(x, dx_f))
        a_z = min(_fraction_to_boundary(zL[hasL], dzL[hasL], tau),
                  _fraction_to_boundary(zU[hasU], dzU[hasU], tau))

        # filter line search
        th, ph = theta(c), phi(x)
        D = float(grad_phi @ dx_f)
        if D < 0:
            a_min = min(opt.gamma_theta, opt.gamma_phi * th / -D)
            if th <= theta_min:
                a_min = min(a_min, opt.switch_delta * th ** opt.s_theta / (-D) ** opt.s_phi)
        else:
            a_min = opt.gamma_theta
        a_min *= opt.gamma_alpha

        def acceptable(th_t, ph_t, alpha):
            if not (np.isfinite(th_t) and np.isfinite(ph_t)) or th_t >= theta_max:
                return None
            if any(th_t >= tf and ph_t >= pf for tf, pf in filt):
                return None
            switching = D < 0 and alpha * (-D) ** opt.s_phi > opt.switch_delta * th ** opt.s_theta
            if switching and th <= theta_min:
                return "f" if ph_t <= ph + opt.armijo * alpha * D else None
            if th_t <= (1.0 - opt.gamma_theta) * th or ph_t <= ph - opt.gamma_phi * th:
                return "h"
            return None

        alpha = a_max
        kind = None
        used_soc = False
        x_trial, c_t = x, c
        for k in range(opt.max_backtracks):
            if alpha < a_min:
                break
            x_trial = x + alpha * dx
            c_t = problem.constraints(x_trial)
            th_t = theta(c_t) if np.all(np.isfinite(c_t)) else np.inf
            kind = acceptable(th_t, phi(x_trial), alpha)
            if kind:
                break
            if k == 0 and m and th_t >= th:
                # second-order correction against the Maratos effect
                corr = lu.solve(-np.concatenate([np.zeros(nf), c_t]))[:nf]
                dsoc = dx_f + corr
                a_soc = step_bound(dsoc)
                xs = x.copy()
                xs[free] += a_soc * dsoc
                cs = problem.constraints(xs)
                th_s = theta(cs) if np.all(np.isfinite(cs)) else np.inf
                kind = acceptable(th_s, phi(xs), alpha)
                if kind:
                    x_trial, c_t, used_soc = xs, cs, True
                    break
            alpha *= 0.5
        history[-1].update(alpha=float(alpha), alpha_max=float(a_max), delta_w=float(dw),
                           step=kind or "restoration", soc=used_soc)
        if kind is None:
            filt.append(((1.0 - opt.gamma_theta) * th, ph - opt.gamma_phi * th))
            restored = restore(x, c) if m else None
            if restored is None:
                status = "restoration_failed"
                break
            x, c = restored
            sL, sU = slacks(x[free])
            zL = np.where(hasL, np.clip(zL, mu / (opt.kappa_sigma * sL), opt.kappa_sigma * mu / sL), 0.0)
            zU = np.where(hasU, np.clip(zU, mu / (opt.kappa_sigma * sU), opt.kappa_sigma * mu / sU), 0.0)
            continue
        if kind == "h":
            filt.append(((1.0 - opt.gamma_theta) * th, ph - opt.gamma_phi * th))
        x = x_trial
        c = c_t
        y = y + alpha * (y_new - y)
        zL = zL + a_z * dzL
        zU = zU + a_z * dzU
        sL, sU = slacks(x[free])
        # keep multipliers near the central path
        zL = np.where(hasL, np.clip(zL, mu / (opt.kappa_sigma * sL), opt.kappa_sigma * mu / sL), 0.0)
        zU = np.where(hasU, np.clip(zU, mu / (opt.kappa_sigma * sU), opt.kappa_sigma * mu / sU), 0.0)

    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[free] = zL
    z_upper[free] = zU
    return IPResult(x=x, y=y, z_lower=z_lower, z_upper=z_upper,
                    objective=float(problem.objective(x)), constraint_violation=errs[1],
                    dual_infeasibility=errs[0], complementarity=errs[2], iterations=it,
                    converged=status == "converged", status=status, history=history)
