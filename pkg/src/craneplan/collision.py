"""Separating-axis collision queries for convex polytopes.

The signed distance of a pair is the largest projection gap over the SAT
candidate axes (face normals of both bodies and pairwise edge cross
products). Positive values are a lower bound on the Euclidean separation,
negative values are the negated SAT penetration depth. A scene distance
d(q) is the minimum over its active pairs.

Batched evaluation only uses elementwise array arithmetic, so the value for
a configuration does not depend on which batch it was evaluated in.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ._kernels import PARALLEL_EPS, dh_body_poses, obb_distance, obb_scene_min
from .chain import ChainSpec, ContractError, Pose, cross, link_frames, mat3_mul, mat3_vec

NO_PAIRS_DISTANCE = 1e9  # returned by scene queries with no active pairs
CONVEX_TOL = 1e-9


class InvalidGeometryError(ValueError):
    pass


class CheckCounter:
    """Counts configurations passed through scene distance queries."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)

    def reset(self):
        self.count = 0


def _unique_directions(dirs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out: list[np.ndarray] = []
    for v in dirs:
        v = v / np.linalg.norm(v)
        if not any(abs(abs(float(v @ w)) - 1.0) < tol for w in out):
            out.append(v)
    return np.array(out).reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class ConvexMesh:
    vertices: np.ndarray
    faces: tuple
    face_normals: np.ndarray  # outward unit normals, one per face
    edge_directions: np.ndarray  # unit, deduplicated up to sign
    axis_normals: np.ndarray  # face normals deduplicated up to sign (SAT axes)
    half_extents: np.ndarray | None = None  # set for boxes centered at the local origin

    @classmethod
    def from_faces(cls, vertices, faces, half_extents=None) -> "ConvexMesh":
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[1] != 3 or len(V) < 4:
            raise InvalidGeometryError("a convex mesh needs at least 4 three-dimensional vertices")
        centroid = V.mean(axis=0)
        normals, edges = [], []
        for f in faces:
            P = V[list(f)]
            if len(f) < 3:
                raise InvalidGeometryError("faces need at least 3 vertices")
            # Newell normal
            nrm = np.zeros(3)
            for a, b in zip(P, np.roll(P, -1, axis=0)):
                nrm += np.cross(a, b)
            area2 = np.linalg.norm(nrm)
            if area2 < 1e-12:
                raise InvalidGeometryError(f"degenerate face {tuple(f)}")
            nrm /= area2
            if nrm @ (P.mean(axis=0) - centroid) < 0:
                nrm = -nrm
            normals.append(nrm)
            for a, b in zip(P, np.roll(P, -1, axis=0)):
                e = b - a
                if np.linalg.norm(e) > 1e-12:
                    edges.append(e)
        normals = np.array(normals)
        offsets = np.einsum("fk,fk->f", normals, np.array([V[list(f)].mean(axis=0) for f in faces]))
        excess = V @ normals.T - offsets[None, :]
        if excess.max() > CONVEX_TOL * max(1.0, np.abs(V).max()):
            raise InvalidGeometryError("mesh is not convex (a vertex lies in front of a face plane)")
        return cls(V, tuple(tuple(f) for f in faces), normals, _unique_directions(np.array(edges)),
                   _unique_directions(normals),
                   None if half_extents is None else np.asarray(half_extents, dtype=float))

    @classmethod
    def box(cls, size) -> "ConvexMesh":
        h = 0.5 * np.asarray(size, dtype=float)
        if np.any(h <= 0):
            raise InvalidGeometryError("box dimensions must be positive")
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        V = signs * h
        faces = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
        return cls.from_faces(V, faces, half_extents=h)

    @classmethod
    def prism(cls, polygon, height: float) -> "ConvexMesh":
        """Convex polygon in the xy plane extruded symmetrically along z."""
        P = np.asarray(polygon, dtype=float)
        if len(P) < 3 or height <= 0:
            raise InvalidGeometryError("a prism needs a polygon with >= 3 points and positive height")
        area = 0.5 * np.sum(P[:, 0] * np.roll(P[:, 1], -1) - np.roll(P[:, 0], -1) * P[:, 1])
        if area < 0:
            P = P[::-1]
        m = len(P)
        bottom = np.column_stack([P, np.full(m, -0.5 * height)])
        top = np.column_stack([P, np.full(m, 0.5 * height)])
        V = np.vstack([bottom, top])
        faces = [tuple(range(m - 1, -1, -1)), tuple(range(m, 2 * m))]
        faces += [(i, (i + 1) % m, m + (i + 1) % m, m + i) for i in range(m)]
        return cls.from_faces(V, faces)


@dataclass(frozen=True, eq=False)
class CollisionBody:
    mesh: ConvexMesh
    link: int | None = None  # None: static world body
    pose: Pose = field(default_factory=Pose)  # world pose, or offset in the link frame
    name: str = ""

    @property
    def is_robot(self) -> bool:
        return self.link is not None


@dataclass(frozen=True, eq=False)
class CollisionScene:
    bodies: tuple[CollisionBody, ...]
    pairs: tuple[tuple[int, int], ...]
    name: str = ""
    home: np.ndarray | None = None

    def __post_init__(self):
        nb = len(self.bodies)
        for i, j in self.pairs:
            if not (0 <= i < nb and 0 <= j < nb):
                raise ContractError(f"pair ({i}, {j}) references a missing body")
            if i == j:
                raise ContractError("a body cannot be paired with itself")
        adjacent = _adjacent_pairs(self.bodies)
        for i, j in self.pairs:
            if (i, j) in adjacent:
                raise ContractError(f"pair ({i}, {j}) joins bodies on adjacent links")

    def check_chain(self, spec: ChainSpec):
        for b in self.bodies:
            if b.link is not None and not 0 <= b.link <= spec.n:
                raise ContractError(f"body {b.name!r} is attached to link {b.link}, chain has {spec.n}")

    @property
    def robot_bodies(self):
        return [i for i, b in enumerate(self.bodies) if b.is_robot]


def _adjacent_pairs(bodies) -> set:
    """Robot body pairs on the same link or on consecutive body-carrying links."""
    links = sorted({b.link for b in bodies if b.link is not None})
    nxt = {a: b for a, b in zip(links, links[1:])}
    out = set()
    for i, j in combinations(range(len(bodies)), 2):
        li, lj = bodies[i].link, bodies[j].link
        if li is None or lj is None:
            continue
        lo, hi = min(li, lj), max(li, lj)
        if lo == hi or nxt.get(lo) == hi:
            out.add((i, j))
            out.add((j, i))
    return out


def auto_pairs(bodies, exclude=()) -> tuple[tuple[int, int], ...]:
    """All robot-obstacle pairs plus robot self pairs on non-adjacent links."""
    adjacent = _adjacent_pairs(bodies)
    skip = {tuple(sorted(p)) for p in exclude}
    pairs = []
    for i, j in combinations(range(len(bodies)), 2):
        bi, bj = bodies[i], bodies[j]
        if not (bi.is_robot or bj.is_robot):
            continue
        if (i, j) in adjacent or (i, j) in skip:
            continue
        pairs.append((i, j))
    return tuple(pairs)


# -- pair distances ------------------------------------------------------------

def _gap(minA, maxA, minB, maxB):
    return np.maximum(minB - maxA, minA - maxB)


def box_box_distance(RA, cA, hA, RB, cB, hB, faces_only: bool = False) -> float:
    """SAT signed distance between two oriented boxes (closed-form projections).

    ``R*`` are world rotations, ``c*`` centers and ``h*`` half extents.
    """
    f = lambda x: np.ascontiguousarray(x, dtype=float)  # noqa: E731
    return float(obb_distance(f(RA), f(cA), f(hA), f(RB), f(cB), f(hB), faces_only))


def _dot3(a, b):
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


def mesh_mesh_distance(meshA: ConvexMesh, RA, pA, meshB: ConvexMesh, RB, pB, faces_only: bool = False):
    """SAT signed distance by explicit vertex projection (any convex meshes).

    Poses broadcast over leading batch dimensions.
    """
    VA = pA[..., None, :] + mat3_vec(RA[..., None, :, :], meshA.vertices)
    VB = pB[..., None, :] + mat3_vec(RB[..., None, :, :], meshB.vertices)
    nA = mat3_vec(RA[..., None, :, :], meshA.axis_normals)
    nB = mat3_vec(RB[..., None, :, :], meshB.axis_normals)
    axes = [nA, nB]
    if not faces_only:
        eA = mat3_vec(RA[..., None, :, :], meshA.edge_directions)
        eB = mat3_vec(RB[..., None, :, :], meshB.edge_directions)
        cx = cross(eA[..., :, None, :], eB[..., None, :, :])
        cx = cx.reshape(cx.shape[:-3] + (-1, 3))
        axes.append(cx)
    best = None
    for ax in axes:
        if ax.shape[-2] == 0:
            continue
        norm = np.sqrt(_dot3(ax, ax))
        valid = norm > PARALLEL_EPS
        unit = ax / np.where(valid, norm, 1.0)[..., None]
        projA = _dot3(unit[..., :, None, :], VA[..., None, :, :])
        projB = _dot3(unit[..., :, None, :], VB[..., None, :, :])
        g = _gap(projA.min(-1), projA.max(-1), projB.min(-1), projB.max(-1))
        g = np.where(valid, g, -np.inf).max(-1)
        best = g if best is None else np.maximum(best, g)
    return best


def _pair_value(meshA, RA, pA, meshB, RB, pB, faces_only=False):
    if meshA.half_extents is not None and meshB.half_extents is not None:
        return box_box_distance(RA, pA, meshA.half_extents, RB, pB, meshB.half_extents, faces_only)
    return mesh_mesh_distance(meshA, RA, pA, meshB, RB, pB, faces_only)


def pair_signed_distance(meshA: ConvexMesh, poseA: Pose, meshB: ConvexMesh, poseB: Pose) -> float:
    """Signed SAT distance between two posed convex meshes."""
    return float(_pair_value(meshA, np.asarray(poseA.rotation, float), np.asarray(poseA.position, float),
                             meshB, np.asarray(poseB.rotation, float), np.asarray(poseB.position, float)))


# -- scene queries -------------------------------------------------------------

def body_poses(scene: CollisionScene, spec: ChainSpec, q):
    """World rotations ``(B, nb, 3, 3)`` and positions ``(B, nb, 3)`` of all bodies."""
    Q = np.atleast_2d(np.asarray(spec.check_q(q), dtype=float))
    nb = len(scene.bodies)
    link = np.array([-1 if b.link is None else b.link for b in scene.bodies], dtype=np.int64)
    Rl = np.array([np.asarray(b.pose.rotation, float) for b in scene.bodies]).reshape(nb, 3, 3)
    tl = np.array([np.asarray(b.pose.position, float) for b in scene.bodies]).reshape(nb, 3)
    a, alpha, d, theta0, prismatic = spec._dh
    BR = np.empty((len(Q), nb, 3, 3))
    Bp = np.empty((len(Q), nb, 3))
    dh_body_poses(np.ascontiguousarray(Q), a, alpha, d, theta0, prismatic, link, Rl, tl, BR, Bp)
    return BR, Bp


def _pair_groups(scene: CollisionScene):
    boxes = [(i, j) for i, j in scene.pairs
             if scene.bodies[i].mesh.half_extents is not None and scene.bodies[j].mesh.half_extents is not None]
    others = [(i, j) for i, j in scene.pairs if (i, j) not in set(boxes)]
    return boxes, others


def _scene_min(scene: CollisionScene, BR, Bp):
    out = np.full(Bp.shape[0], NO_PAIRS_DISTANCE)
    boxes, others = _pair_groups(scene)
    if boxes:
        H = np.array([b.mesh.half_extents if b.mesh.half_extents is not None else np.zeros(3)
                      for b in scene.bodies])
        ia = np.array([i for i, _ in boxes], dtype=np.int64)
        ib = np.array([j for _, j in boxes], dtype=np.int64)
        obb_scene_min(np.ascontiguousarray(BR), np.ascontiguousarray(Bp), H, ia, ib, out)
    for i, j in others:
        d = mesh_mesh_distance(scene.bodies[i].mesh, BR[:, i], Bp[:, i],
                               scene.bodies[j].mesh, BR[:, j], Bp[:, j])
        out = np.minimum(out, d)
    return out


def scene_signed_distance(scene: CollisionScene, spec: ChainSpec, q, broad_phase: bool = True,
                          counter: CheckCounter | None = None) -> float:
    """d(q): minimum SAT distance over the active pairs (``NO_PAIRS_DISTANCE`` if none).

    With ``broad_phase`` the face-normal axes of a pair are tested first; a
    pair whose face-only gap already reaches the running minimum cannot lower
    it (SAT distance is a maximum over axes) and its edge axes are skipped.
    """
    q = spec.check_q(q)
    if q.ndim != 1:
        raise ContractError("scene_signed_distance takes one configuration")
    if counter is not None:
        counter.add(1)
    BR, Bp = body_poses(scene, spec, q)
    if not broad_phase:
        return float(_scene_min(scene, BR, Bp)[0])
    BR, Bp = BR[0], Bp[0]
    best = NO_PAIRS_DISTANCE
    for i, j in scene.pairs:
        mA, mB = scene.bodies[i].mesh, scene.bodies[j].mesh
        lower = _pair_value(mA, BR[i], Bp[i], mB, BR[j], Bp[j], faces_only=True)
        if lower >= best:
            continue
        best = min(best, float(_pair_value(mA, BR[i], Bp[i], mB, BR[j], Bp[j])))
    return best


def batch_signed_distance(scene: CollisionScene, spec: ChainSpec, configurations,
                          counter: CheckCounter | None = None, chunk: int = 4096) -> np.ndarray:
    """Elementwise d(q) over a list of configurations.

    Chunking bounds memory only; every value equals the scalar query.
    """
    Q = np.asarray(configurations, dtype=float)
    if Q.ndim == 1:
        Q = Q[None]
    if Q.ndim != 2 or len(Q) == 0:
        raise ContractError("batch_signed_distance needs a nonempty list of configurations")
    spec.check_q(Q)
    bad = ~np.isfinite(Q).all(axis=1)
    if bad.any():
        raise ContractError(f"configuration {int(np.argmax(bad))} is not finite")
    out = np.empty(len(Q))
    for s in range(0, len(Q), chunk):
        BR, Bp = body_poses(scene, spec, Q[s:s + chunk])
        out[s:s + chunk] = _scene_min(scene, BR, Bp)
    if counter is not None:
        counter.add(len(Q))
    return out


# -- scene files ---------------------------------------------------------------

_BODY_KEYS = {"name", "mesh", "attach", "link", "pose"}
_SCENE_KEYS = {"name", "description", "units", "bodies", "pairs", "exclude", "home"}


def _pose_from(data) -> Pose:
    if data is None:
        return Pose()
    return Pose.from_dict({"position": data.get("position", [0.0, 0.0, 0.0]), **data})


def _mesh_from(data) -> ConvexMesh:
    if "box" in data:
        return ConvexMesh.box(data["box"])
    if "prism" in data:
        return ConvexMesh.prism(data["prism"]["polygon"], float(data["prism"]["height"]))
    if "vertices" in data:
        return ConvexMesh.from_faces(data["vertices"], data["faces"])
    raise ContractError(f"unknown mesh description {sorted(data)}")


def scene_from_dict(data: dict) -> CollisionScene:
    extra = set(data) - _SCENE_KEYS
    if extra:
        raise ContractError(f"unknown keys in scene: {sorted(extra)}")
    bodies = []
    for k, bd in enumerate(data["bodies"]):
        extra = set(bd) - _BODY_KEYS
        if extra:
            raise ContractError(f"unknown keys in body {k}: {sorted(extra)}")
        attach = bd.get("attach", "world")
        if attach == "world":
            link = None
        elif attach == "link":
            link = int(bd["link"])
        else:
            raise ContractError(f"attach must be 'world' or 'link', got {attach!r}")
        bodies.append(CollisionBody(_mesh_from(bd["mesh"]), link, _pose_from(bd.get("pose")),
                                    bd.get("name", f"body{k}")))
    bodies = tuple(bodies)
    pairs = data.get("pairs", "auto")
    if pairs == "auto":
        pairs = auto_pairs(bodies, data.get("exclude", ()))
    else:
        pairs = tuple((int(i), int(j)) for i, j in pairs)
    home = data.get("home")
    return CollisionScene(bodies, pairs, data.get("name", ""),
                          None if home is None else np.asarray(home, dtype=float))


def load_scene(path) -> CollisionScene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
