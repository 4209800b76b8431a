"""Compiled batch kernels for collision and dynamics queries (numba, IEEE arithmetic, no fastmath)."""
import numpy as np
from numba import njit

PARALLEL_EPS = 1e-8


@njit(cache=True, inline="always")
def _cross_axis(t1, t2, c1, c2, ca1, ca2, hA1, hA2, hB1, hB2, cb1, cb2):
    # axis uA_i x uB_j expressed in A's frame; see obb_distance
    norm = np.sqrt(c1 * c1 + c2 * c2)
    if norm > PARALLEL_EPS:
        proj = abs(t2 * c1 - t1 * c2)
        rA = hA1 * ca2 + hA2 * ca1
        rB = hB1 * cb2 + hB2 * cb1
        return (proj - rA - rB) / norm
    return -np.inf


@njit(cache=True)
def obb_distance(RA, cA, hA, RB, cB, hB, faces_only):
    # C[i][j] = uA_i . uB_j, t = RA^T (cB - cA)
    c00 = RA[0, 0] * RB[0, 0] + RA[1, 0] * RB[1, 0] + RA[2, 0] * RB[2, 0]
    c01 = RA[0, 0] * RB[0, 1] + RA[1, 0] * RB[1, 1] + RA[2, 0] * RB[2, 1]
    c02 = RA[0, 0] * RB[0, 2] + RA[1, 0] * RB[1, 2] + RA[2, 0] * RB[2, 2]
    c10 = RA[0, 1] * RB[0, 0] + RA[1, 1] * RB[1, 0] + RA[2, 1] * RB[2, 0]
    c11 = RA[0, 1] * RB[0, 1] + RA[1, 1] * RB[1, 1] + RA[2, 1] * RB[2, 1]
    c12 = RA[0, 1] * RB[0, 2] + RA[1, 1] * RB[1, 2] + RA[2, 1] * RB[2, 2]
    c20 = RA[0, 2] * RB[0, 0] + RA[1, 2] * RB[1, 0] + RA[2, 2] * RB[2, 0]
    c21 = RA[0, 2] * RB[0, 1] + RA[1, 2] * RB[1, 1] + RA[2, 2] * RB[2, 1]
    c22 = RA[0, 2] * RB[0, 2] + RA[1, 2] * RB[1, 2] + RA[2, 2] * RB[2, 2]
    a00, a01, a02 = abs(c00), abs(c01), abs(c02)
    a10, a11, a12 = abs(c10), abs(c11), abs(c12)
    a20, a21, a22 = abs(c20), abs(c21), abs(c22)
    dx = cB[0] - cA[0]
    dy = cB[1] - cA[1]
    dz = cB[2] - cA[2]
    t0 = RA[0, 0] * dx + RA[1, 0] * dy + RA[2, 0] * dz
    t1 = RA[0, 1] * dx + RA[1, 1] * dy + RA[2, 1] * dz
    t2 = RA[0, 2] * dx + RA[1, 2] * dy + RA[2, 2] * dz
    a0, a1, a2 = hA[0], hA[1], hA[2]
    b0, b1, b2 = hB[0], hB[1], hB[2]

    best = abs(t0) - a0 - (b0 * a00 + b1 * a01 + b2 * a02)
    best = max(best, abs(t1) - a1 - (b0 * a10 + b1 * a11 + b2 * a12))
    best = max(best, abs(t2) - a2 - (b0 * a20 + b1 * a21 + b2 * a22))
    best = max(best, abs(t0 * c00 + t1 * c10 + t2 * c20) - b0 - (a0 * a00 + a1 * a10 + a2 * a20))
    best = max(best, abs(t0 * c01 + t1 * c11 + t2 * c21) - b1 - (a0 * a01 + a1 * a11 + a2 * a21))
    best = max(best, abs(t0 * c02 + t1 * c12 + t2 * c22) - b2 - (a0 * a02 + a1 * a12 + a2 * a22))
    if faces_only:
        return best
    # i = 0: (i1, i2) = (1, 2)
    best = max(best, _cross_axis(t1, t2, c10, c20, a10, a20, a1, a2, b1, b2, a01, a02))
    best = max(best, _cross_axis(t1, t2, c11, c21, a11, a21, a1, a2, b2, b0, a02, a00))
    best = max(best, _cross_axis(t1, t2, c12, c22, a12, a22, a1, a2, b0, b1, a00, a01))
    # i = 1: (i1, i2) = (2, 0)
    best = max(best, _cross_axis(t2, t0, c20, c00, a20, a00, a2, a0, b1, b2, a11, a12))
    best = max(best, _cross_axis(t2, t0, c21, c01, a21, a01, a2, a0, b2, b0, a12, a10))
    best = max(best, _cross_axis(t2, t0, c22, c02, a22, a02, a2, a0, b0, b1, a10, a11))
    # i = 2: (i1, i2) = (0, 1)
    best = max(best, _cross_axis(t0, t1, c00, c10, a00, a10, a0, a1, b1, b2, a21, a22))
    best = max(best, _cross_axis(t0, t1, c01, c11, a01, a11, a0, a1, b2, b0, a22, a20))
    best = max(best, _cross_axis(t0, t1, c02, c12, a02, a12, a0, a1, b0, b1, a20, a21))
    return best


@njit(cache=True)
def obb_scene_min(BR, Bp, H, ia, ib, out):
    """``out[b] = min(out[b], min_k d(pair k))`` for every configuration ``b``."""
    for b in range(BR.shape[0]):
        m = out[b]
        for k in range(ia.shape[0]):
            i = ia[k]
            j = ib[k]
            d = obb_distance(BR[b, i], Bp[b, i], H[i], BR[b, j], Bp[b, j], H[j], False)
            if d < m:
                m = d
        out[b] = m


@njit(cache=True)
def dh_body_poses(Q, a, alpha, d, theta0, prismatic, body_link, body_R, body_t, BR, Bp):
    """World poses of collision bodies for a batch of configurations.

    ``body_link[k] < 0`` marks a static body whose pose is ``body_R[k], body_t[k]``.
    Link frames follow the standard DH product used by ``chain.link_frames``.
    """
    n = a.shape[0]
    nb = body_link.shape[0]
    FR = np.empty((n + 1, 3, 3))
    Fp = np.empty((n + 1, 3))
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    for b in range(Q.shape[0]):
        for r in range(3):
            for c in range(3):
                FR[0, r, c] = 1.0 if r == c else 0.0
            Fp[0, r] = 0.0
        for i in range(n):
            if prismatic[i]:
                th = theta0[i]
                di = d[i] + Q[b, i]
            else:
                th = theta0[i] + Q[b, i]
                di = d[i]
            ct = np.cos(th)
            st = np.sin(th)
            # local rotation Rz(th) Rx(alpha) and translation (a ct, a st, d)
            l00, l01, l02 = ct, -st * ca[i], st * sa[i]
            l10, l11, l12 = st, ct * ca[i], -ct * sa[i]
            l20, l21, l22 = 0.0, sa[i], ca[i]
            tx, ty, tz = a[i] * ct, a[i] * st, di
            for r in range(3):
                p0, p1, p2 = FR[i, r, 0], FR[i, r, 1], FR[i, r, 2]
                FR[i + 1, r, 0] = p0 * l00 + p1 * l10 + p2 * l20
                FR[i + 1, r, 1] = p0 * l01 + p1 * l11 + p2 * l21
                FR[i + 1, r, 2] = p0 * l02 + p1 * l12 + p2 * l22
                Fp[i + 1, r] = Fp[i, r] + (p0 * tx + p1 * ty + p2 * tz)
        for k in range(nb):
            lk = body_link[k]
            if lk < 0:
                for r in range(3):
                    for c in range(3):
                        BR[b, k, r, c] = body_R[k, r, c]
                    Bp[b, k, r] = body_t[k, r]
            else:
                for r in range(3):
                    p0, p1, p2 = FR[lk, r, 0], FR[lk, r, 1], FR[lk, r, 2]
                    for c in range(3):
                        BR[b, k, r, c] = p0 * body_R[k, 0, c] + p1 * body_R[k, 1, c] + p2 * body_R[k, 2, c]
                    Bp[b, k, r] = Fp[lk, r] + (p0 * body_t[k, 0] + p1 * body_t[k, 1] + p2 * body_t[k, 2])


@njit(cache=True)
def _cross(a, b, out):
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


@njit(cache=True)
def passive_accelerations(X, U, a, alpha, d, theta0, prismatic, masses, coms, inertias,
                          g, act, pas, out):
    """Passive joint accelerations for a batch of states and actuated accelerations.

    World-frame formulation: the passive rows of the mass matrix come from
    composite inertias about the origin, the bias from a Newton-Euler pass
    with zero joint accelerations. Rows with a singular passive block are set to NaN.
    """
    n = a.shape[0]
    npas = pas.shape[0]
    R = np.empty((n + 1, 3, 3))
    o = np.empty((n + 1, 3))
    c = np.empty((n, 3))
    Iw = np.empty((n, 3, 3))
    w = np.zeros((n + 1, 3))
    dw = np.zeros((n + 1, 3))
    A = np.zeros((n + 1, 3))
    Fh = np.empty((n, 3))
    Ld = np.empty((n, 3))
    Jv = np.empty((3,))
    Jk = np.empty((3,))
    tmp = np.empty((3,))
    tmp2 = np.empty((3,))
    r = np.empty((3,))
    Mp = np.empty((npas, n))
    bias = np.empty((n,))
    Mpp = np.empty((npas, npas))
    rhs = np.empty((npas,))
    CI = np.empty((n + 1, 3, 3))
    Cm = np.empty((n + 1,))
    Cmc = np.empty((n + 1, 3))
    Sw = np.empty((n, 3))
    Sv = np.empty((n, 3))
    ca = np.cos(alpha)
    sa = np.sin(alpha)
    for b in range(X.shape[0]):
        for i in range(3):
            for j in range(3):
                R[0, i, j] = 1.0 if i == j else 0.0
            o[0, i] = 0.0
        for j in range(n):
            qj = X[b, j]
            if prismatic[j]:
                th = theta0[j]
                dj = d[j] + qj
            else:
                th = theta0[j] + qj
                dj = d[j]
            ct = np.cos(th)
            st = np.sin(th)
            l00, l01, l02 = ct, -st * ca[j], st * sa[j]
            l10, l11, l12 = st, ct * ca[j], -ct * sa[j]
            l20, l21, l22 = 0.0, sa[j], ca[j]
            tx, ty, tz = a[j] * ct, a[j] * st, dj
            for i in range(3):
                p0, p1, p2 = R[j, i, 0], R[j, i, 1], R[j, i, 2]
                R[j + 1, i, 0] = p0 * l00 + p1 * l10 + p2 * l20
                R[j + 1, i, 1] = p0 * l01 + p1 * l11 + p2 * l21
                R[j + 1, i, 2] = p0 * l02 + p1 * l12 + p2 * l22
                o[j + 1, i] = o[j, i] + (p0 * tx + p1 * ty + p2 * tz)
        for L in range(n):
            F = L + 1
            for i in range(3):
                c[L, i] = o[F, i] + R[F, i, 0] * coms[L, 0] + R[F, i, 1] * coms[L, 1] + R[F, i, 2] * coms[L, 2]
            for i in range(3):
                for k in range(3):
                    tmp[k] = (R[F, i, 0] * inertias[L, 0, k] + R[F, i, 1] * inertias[L, 1, k]
                              + R[F, i, 2] * inertias[L, 2, k])
                for k in range(3):
                    Iw[L, i, k] = tmp[0] * R[F, k, 0] + tmp[1] * R[F, k, 1] + tmp[2] * R[F, k, 2]

        # composite inertia of links k..n-1 about the world origin (suffix sums)
        cm = 0.0
        cmc0, cmc1, cmc2 = 0.0, 0.0, 0.0
        for i in range(3):
            for k in range(3):
                CI[n, i, k] = 0.0
        Cm[n] = 0.0
        for i in range(3):
            Cmc[n, i] = 0.0
        for L in range(n - 1, -1, -1):
            m = masses[L]
            cm += m
            cmc0 += m * c[L, 0]
            cmc1 += m * c[L, 1]
            cmc2 += m * c[L, 2]
            cc = c[L, 0] * c[L, 0] + c[L, 1] * c[L, 1] + c[L, 2] * c[L, 2]
            for i in range(3):
                for k in range(3):
                    CI[L, i, k] = CI[L + 1, i, k] + Iw[L, i, k] - m * c[L, i] * c[L, k]
                CI[L, i, i] += m * cc
            Cm[L] = cm
            Cmc[L, 0] = cmc0
            Cmc[L, 1] = cmc1
            Cmc[L, 2] = cmc2
        # motion subspaces (angular, linear at origin)
        for j in range(n):
            for i in range(3):
                tmp[i] = R[j, i, 2]
            if prismatic[j]:
                for i in range(3):
                    Sw[j, i] = 0.0
                    Sv[j, i] = tmp[i]
            else:
                for i in range(3):
                    Sw[j, i] = tmp[i]
                _cross(o[j], tmp, tmp2)
                for i in range(3):
                    Sv[j, i] = tmp2[i]

        # passive rows of the mass matrix: S_r . (I_C(max(r, c)) S_c)
        for pi in range(npas):
            row = pas[pi]
            for col in range(n):
                k = row if row > col else col
                w0, w1, w2 = Sw[col, 0], Sw[col, 1], Sw[col, 2]
                v0, v1, v2 = Sv[col, 0], Sv[col, 1], Sv[col, 2]
                mc0, mc1, mc2 = Cmc[k, 0], Cmc[k, 1], Cmc[k, 2]
                h0 = CI[k, 0, 0] * w0 + CI[k, 0, 1] * w1 + CI[k, 0, 2] * w2 + (mc1 * v2 - mc2 * v1)
                h1 = CI[k, 1, 0] * w0 + CI[k, 1, 1] * w1 + CI[k, 1, 2] * w2 + (mc2 * v0 - mc0 * v2)
                h2 = CI[k, 2, 0] * w0 + CI[k, 2, 1] * w1 + CI[k, 2, 2] * w2 + (mc0 * v1 - mc1 * v0)
                p0 = Cm[k] * v0 - (mc1 * w2 - mc2 * w1)
                p1 = Cm[k] * v1 - (mc2 * w0 - mc0 * w2)
                p2 = Cm[k] * v2 - (mc0 * w1 - mc1 * w0)
                Mp[pi, col] = (Sw[row, 0] * h0 + Sw[row, 1] * h1 + Sw[row, 2] * h2
                               + Sv[row, 0] * p0 + Sv[row, 1] * p1 + Sv[row, 2] * p2)

        # Newton-Euler bias with zero joint accelerations
        for i in range(3):
            w[0, i] = 0.0
            dw[0, i] = 0.0
            A[0, i] = 0.0
        for j in range(n):
            F = j + 1
            qd = X[b, n + j]
            for i in range(3):
                r[i] = o[F, i] - o[j, i]
                tmp[i] = qd * R[j, i, 2]
            if prismatic[j]:
                for i in range(3):
                    w[F, i] = w[j, i]
                    dw[F, i] = dw[j, i]
                _cross(dw[j], r, tmp2)
                for i in range(3):
                    A[F, i] = A[j, i] + tmp2[i]
                _cross(w[j], r, tmp2)
                _cross(w[j], tmp2, Jv)
                _cross(w[j], tmp, Jk)
                for i in range(3):
                    A[F, i] += Jv[i] + 2.0 * Jk[i]
            else:
                _cross(w[j], tmp, Jk)
                for i in range(3):
                    w[F, i] = w[j, i] + tmp[i]
                    dw[F, i] = dw[j, i] + Jk[i]
                _cross(dw[F], r, tmp2)
                for i in range(3):
                    A[F, i] = A[j, i] + tmp2[i]
                _cross(w[F], r, tmp2)
                _cross(w[F], tmp2, Jv)
                for i in range(3):
                    A[F, i] += Jv[i]
        for L in range(n):
            F = L + 1
            for i in range(3):
                r[i] = c[L, i] - o[F, i]
            _cross(dw[F], r, tmp)
            _cross(w[F], r, tmp2)
            _cross(w[F], tmp2, Jv)
            for i in range(3):
                Fh[L, i] = masses[L] * (A[F, i] + tmp[i] + Jv[i] - g[i])
            for i in range(3):
                tmp[i] = Iw[L, i, 0] * w[F, 0] + Iw[L, i, 1] * w[F, 1] + Iw[L, i, 2] * w[F, 2]
            _cross(w[F], tmp, tmp2)
            for i in range(3):
                Ld[L, i] = Iw[L, i, 0] * dw[F, 0] + Iw[L, i, 1] * dw[F, 1] + Iw[L, i, 2] * dw[F, 2] + tmp2[i]
        Ft0, Ft1, Ft2 = 0.0, 0.0, 0.0
        Nt0, Nt1, Nt2 = 0.0, 0.0, 0.0
        for j in range(n - 1, -1, -1):
            Ft0 += Fh[j, 0]
            Ft1 += Fh[j, 1]
            Ft2 += Fh[j, 2]
            Nt0 += c[j, 1] * Fh[j, 2] - c[j, 2] * Fh[j, 1] + Ld[j, 0]
            Nt1 += c[j, 2] * Fh[j, 0] - c[j, 0] * Fh[j, 2] + Ld[j, 1]
            Nt2 += c[j, 0] * Fh[j, 1] - c[j, 1] * Fh[j, 0] + Ld[j, 2]
            z0, z1, z2 = R[j, 0, 2], R[j, 1, 2], R[j, 2, 2]
            if prismatic[j]:
                bias[j] = z0 * Ft0 + z1 * Ft1 + z2 * Ft2
            else:
                m0 = Nt0 - (o[j, 1] * Ft2 - o[j, 2] * Ft1)
                m1 = Nt1 - (o[j, 2] * Ft0 - o[j, 0] * Ft2)
                m2 = Nt2 - (o[j, 0] * Ft1 - o[j, 1] * Ft0)
                bias[j] = z0 * m0 + z1 * m1 + z2 * m2

        for pi in range(npas):
            sacc = bias[pas[pi]]
            for k in range(act.shape[0]):
                sacc += Mp[pi, act[k]] * U[b, k]
            rhs[pi] = -sacc
            for pk in range(npas):
                Mpp[pi, pk] = Mp[pi, pas[pk]]
        if npas == 1:
            if Mpp[0, 0] > 0.0:
                out[b, 0] = rhs[0] / Mpp[0, 0]
            else:
                out[b, 0] = np.nan
        elif npas == 2:
            m00, m01, m11 = Mpp[0, 0], 0.5 * (Mpp[0, 1] + Mpp[1, 0]), Mpp[1, 1]
            tr = 0.5 * (m00 + m11)
            disc = np.sqrt(0.25 * (m00 - m11) ** 2 + m01 * m01)
            lo_ev, hi_ev = tr - disc, tr + disc
            det = m00 * m11 - m01 * m01
            if lo_ev <= 0.0 or hi_ev > 1e12 * lo_ev or det <= 0.0:
                out[b, 0] = np.nan
                out[b, 1] = np.nan
            else:
                out[b, 0] = (m11 * rhs[0] - m01 * rhs[1]) / det
                out[b, 1] = (m00 * rhs[1] - m01 * rhs[0]) / det
        else:
            ev = np.linalg.eigvalsh(Mpp)
            if ev[0] <= 0.0 or ev[-1] > 1e12 * ev[0]:
                for pi in range(npas):
                    out[b, pi] = np.nan
            else:
                sol = np.linalg.solve(Mpp, rhs)
                for pi in range(npas):
                    out[b, pi] = sol[pi]


@njit(cache=True)
def _passive_torques(q, a, alpha, d, theta0, prismatic, masses, coms, g, pas, R, o, c, out):
    """Gravity torques dV/dq on the passive joints from link-weight tail sums."""
    n = a.shape[0]
    for i in range(3):
        for j in range(3):
            R[0, i, j] = 1.0 if i == j else 0.0
        o[0, i] = 0.0
    for j in range(n):
        if prismatic[j]:
            th = theta0[j]
            dj = d[j] + q[j]
        else:
            th = theta0[j] + q[j]
            dj = d[j]
        ct, st = np.cos(th), np.sin(th)
        ca, sa = np.cos(alpha[j]), np.sin(alpha[j])
        tx, ty, tz = a[j] * ct, a[j] * st, dj
        for i in range(3):
            p0, p1, p2 = R[j, i, 0], R[j, i, 1], R[j, i, 2]
            R[j + 1, i, 0] = p0 * ct + p1 * st
            R[j + 1, i, 1] = -p0 * st * ca + p1 * ct * ca + p2 * sa
            R[j + 1, i, 2] = p0 * st * sa - p1 * ct * sa + p2 * ca
            o[j + 1, i] = o[j, i] + (p0 * tx + p1 * ty + p2 * tz)
    for L in range(n):
        F = L + 1
        for i in range(3):
            c[L, i] = o[F, i] + R[F, i, 0] * coms[L, 0] + R[F, i, 1] * coms[L, 1] + R[F, i, 2] * coms[L, 2]
    for k in range(pas.shape[0]):
        j = pas[k]
        z0, z1, z2 = R[j, 0, 2], R[j, 1, 2], R[j, 2, 2]
        f0 = f1 = f2 = 0.0
        m0 = m1 = m2 = 0.0
        for L in range(j, n):
            w0, w1, w2 = masses[L] * g[0], masses[L] * g[1], masses[L] * g[2]
            r0, r1, r2 = c[L, 0] - o[j, 0], c[L, 1] - o[j, 1], c[L, 2] - o[j, 2]
            f0 += w0
            f1 += w1
            f2 += w2
            m0 += r1 * w2 - r2 * w1
            m1 += r2 * w0 - r0 * w2
            m2 += r0 * w1 - r1 * w0
        if prismatic[j]:
            out[k] = -(z0 * f0 + z1 * f1 + z2 * f2)
        else:
            out[k] = -(z0 * m0 + z1 * m1 + z2 * m2)


@njit(cache=True)
def hang_passive(Q, a, alpha, d, theta0, prismatic, masses, coms, g, pas, iters, step, tol):
    """In-place Newton on the passive gravity torques, row by row, warm-started from Q."""
    n = a.shape[0]
    npas = pas.shape[0]
    R = np.empty((n + 1, 3, 3))
    o = np.empty((n + 1, 3))
    c = np.empty((n, 3))
    g0 = np.empty(npas)
    g1 = np.empty(npas)
    K = np.empty((npas, npas))
    q = np.empty(n)
    for b in range(Q.shape[0]):
        for i in range(n):
            q[i] = Q[b, i]
        for _ in range(iters):
            _passive_torques(q, a, alpha, d, theta0, prismatic, masses, coms, g, pas, R, o, c, g0)
            worst = 0.0
            for k in range(npas):
                worst = max(worst, abs(g0[k]))
            if worst < tol:
                break
            for k in range(npas):
                q[pas[k]] += step
                _passive_torques(q, a, alpha, d, theta0, prismatic, masses, coms, g, pas, R, o, c, g1)
                q[pas[k]] -= step
                for i in range(npas):
                    K[i, k] = (g1[i] - g0[i]) / step
            Ks = 0.5 * (K + K.T)
            ev = np.linalg.eigvalsh(Ks)
            if ev[0] > 0:
                dq = -np.linalg.solve(Ks, g0)
            else:
                dq = -g0 / max(abs(ev[-1]), 1.0)
            big = 0.0
            for k in range(npas):
                big = max(big, abs(dq[k]))
            s = 1.0 if big <= 0.5 else 0.5 / big
            for k in range(npas):
                q[pas[k]] += s * dq[k]
        for k in range(npas):
            Q[b, pas[k]] = q[pas[k]]
