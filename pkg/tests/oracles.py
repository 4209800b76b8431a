"""Independent reference implementations used only by the tests."""
import numpy as np
from scipy.optimize import linprog, nnls


def dh_matrix(theta, d, a, alpha):
    ct, st, ca, sa = np.cos(theta), np.sin(theta), np.cos(alpha), np.sin(alpha)
    Rz = np.array([[ct, -st, 0, 0], [st, ct, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    Tz = np.eye(4)
    Tz[2, 3] = d
    Tx = np.eye(4)
    Tx[0, 3] = a
    Rx = np.array([[1, 0, 0, 0], [0, ca, -sa, 0], [0, sa, ca, 0], [0, 0, 0, 1]])
    return Rz @ Tz @ Tx @ Rx


def naive_fk(spec, q):
    """Product of per-joint homogeneous matrices, one 4x4 at a time."""
    T = np.eye(4)
    for j, qi in zip(spec.joints, q):
        theta = j.theta_offset + (0.0 if j.prismatic else qi)
        d = j.d + (qi if j.prismatic else 0.0)
        T = T @ dh_matrix(theta, d, j.a, j.alpha)
    return T


def box_vertices(R, c, h):
    s = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], dtype=float)
    return c + (s * h) @ R.T


def in_box(P, R, c, h, tol=0.0):
    local = (P - c) @ R
    return np.all(np.abs(local) <= h + tol, axis=-1)


def sample_box(R, c, h, n, rng):
    """Interior, face, edge and vertex samples of an oriented box."""
    u = rng.uniform(-1, 1, size=(n, 3))
    k = n // 4
    # push a quarter to faces and a quarter to edges
    u[:k, 0] = np.sign(u[:k, 0])
    u[k:2 * k, :2] = np.sign(u[k:2 * k, :2])
    pts = c + (u * h) @ R.T
    return np.vstack([pts, box_vertices(R, c, h)])


def sampled_overlap(boxA, boxB, rng, n=4000) -> bool:
    """True when some sampled point of one box lies inside the other."""
    pa = sample_box(*boxA, n, rng)
    pb = sample_box(*boxB, n, rng)
    return bool(in_box(pa, *boxB).any() or in_box(pb, *boxA).any())


def witness_depth(boxA, boxB) -> float:
    """Largest ball-like margin t with a point x inside both boxes shrunk by t (LP)."""
    A, b = [], []
    for R, c, h in (boxA, boxB):
        for k in range(3):
            n = R[:, k]
            A += [np.append(n, 1.0), np.append(-n, 1.0)]
            b += [n @ c + h[k], -(n @ c) + h[k]]
    res = linprog(c=[0, 0, 0, -1.0], A_ub=np.array(A), b_ub=np.array(b),
                  bounds=[(None, None)] * 3 + [(None, 10.0)], method="highs")
    return float(-res.fun)


def support_distance(VA, VB) -> float:
    """Euclidean distance between the convex hulls of two point sets.

    Minimizes ``|z|`` over convex combinations of the Minkowski-difference
    vertices; the returned value is the norm of a feasible point, hence
    never below the true distance.
    """
    D = (VA[:, None, :] - VB[None, :, :]).reshape(-1, 3)
    big = 1e3
    M = np.vstack([D.T, big * np.ones(len(D))])
    lam, _ = nnls(M, np.append(np.zeros(3), big), maxiter=50 * len(D))
    lam = lam / lam.sum()
    return float(np.linalg.norm(lam @ D))


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_box(rng, spread=1.5):
    return random_rotation(rng), rng.uniform(-spread, spread, 3) * 0.5, rng.uniform(0.1, 0.8, 3)


def cox_de_boor(knots, degree, i, s):
    """Recursive basis function N_{i,p}(s), right-closed on the last span."""
    U = knots
    if degree == 0:
        if U[i] <= s < U[i + 1]:
            return 1.0
        if s == U[-1] and U[i] < U[i + 1] == U[-1]:
            return 1.0
        return 0.0
    out = 0.0
    if U[i + degree] > U[i]:
        out += (s - U[i]) / (U[i + degree] - U[i]) * cox_de_boor(U, degree - 1, i, s)
    if U[i + degree + 1] > U[i + 1]:
        out += (U[i + degree + 1] - s) / (U[i + degree + 1] - U[i + 1]) * cox_de_boor(U, degree - 1, i + 1, s)
    return out


def central_jacobian(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(f(x))
    J = np.empty((f0.size, x.size))
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h * max(1.0, abs(x[k]))
        J[:, k] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))) / (2 * e[k])
    return J


def five_point_gradient(f, x, h=1e-3):
    """Fourth-order central differences; for large-magnitude scalars where a tiny step loses digits."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)
    return g
