"""Convex polytopes in 2-D and 3-D task-force space.

Polytopes carry a half-space representation, a vertex representation, or both.
Zonotopes (linear images of boxes) are built with both representations
directly from their generators; other conversions go through
:func:`enumerate_vertices` (H to V) or :func:`facets_from_vertices` (V to H).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

DET_TOL = 1e-10
MEMBER_TOL = 1e-9
MERGE_TOL = 1e-8


@dataclass(frozen=True)
class Box:
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        lb = np.asarray(self.lb, dtype=float)
        ub = np.asarray(self.ub, dtype=float)
        if lb.shape != ub.shape or lb.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if np.any(lb > ub):
            raise ValueError("box needs lb <= ub componentwise")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)


@dataclass(frozen=True)
class HalfSpaceRep:
    """The set {f : normals @ f <= offsets}."""

    normals: np.ndarray
    offsets: np.ndarray
    bounded: bool = True
    degenerate: bool = False

    def __post_init__(self):
        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        offsets = np.asarray(self.offsets, dtype=float).reshape(-1)
        if normals.shape[0] != offsets.shape[0]:
            raise ValueError("one offset per normal required")
        if normals.size and np.linalg.norm(normals, axis=1).min() <= 1e-12:
            raise ValueError("half-space normals must be nonzero")
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "offsets", offsets)

    @property
    def dim(self) -> int:
        return self.normals.shape[1]

    def __len__(self):
        return len(self.offsets)

    def contains(self, points, tol: float = MEMBER_TOL) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all(pts @ self.normals.T <= self.offsets + tol, axis=1)


@dataclass(frozen=True)
class VertexRep:
    vertices: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=float))

    def __len__(self):
        return len(self.vertices)


@dataclass(frozen=True)
class Polytope:
    dim: int
    hrep: HalfSpaceRep | None = None
    vrep: VertexRep | None = None
    degenerate: bool = False
    empty: bool = False
    generators: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.hrep is None and self.vrep is None:
            raise ValueError("a polytope needs at least one representation")

    @property
    def vertices(self) -> np.ndarray:
        return self.with_vrep().vrep.vertices

    def with_vrep(self) -> Polytope:
        if self.vrep is not None:
            return self
        return replace(self, vrep=enumerate_vertices(self.hrep))

    def with_hrep(self) -> Polytope:
        if self.hrep is not None:
            return self
        return replace(self, hrep=facets_from_vertices(self.vrep))

    def contains(self, points, tol: float = MEMBER_TOL) -> np.ndarray:
        if self.empty:
            return np.zeros(len(np.atleast_2d(points)), dtype=bool)
        return self.with_hrep().hrep.contains(points, tol)


@dataclass(frozen=True)
class Cone:
    apex: np.ndarray
    axis: np.ndarray
    half_aperture: float
    facets: int = 8

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("cone axis must be a unit vector")
        if not 0.0 < self.half_aperture < np.pi / 2:
            raise ValueError("cone half-aperture must lie in (0, pi/2)")
        if self.facets < 3:
            raise ValueError("cone needs at least 3 facets")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float))


def empty_polytope(dim: int) -> Polytope:
    return Polytope(dim, vrep=VertexRep(np.zeros((0, dim))), degenerate=True, empty=True)


# --------------------------------------------------------------------------
# zonotopes


def _unit_rows(rows):
    rows = np.asarray(rows, dtype=float)
    norms = np.linalg.norm(rows, axis=1)
    keep = norms > 1e-12
    return rows[keep] / norms[keep, None]


def _dedupe_directions(normals):
    if len(normals) == 0:
        return normals
    _, idx = np.unique(np.round(normals, 9), axis=0, return_index=True)
    return normals[np.sort(idx)]


def _zonotope_normals(G: np.ndarray, rank: int, basis: np.ndarray) -> np.ndarray:
    """Candidate facet normals of the zonotope spanned by the columns of G.

    ``basis`` holds left singular vectors of G; columns past ``rank`` span the
    orthogonal complement, which contributes equality-type facet pairs for flat
    zonotopes.
    """
    m = G.shape[0]
    gens = G.T[np.linalg.norm(G, axis=0) > 1e-12]
    normals = []
    if rank == m == 2:
        normals = [np.array([-g[1], g[0]]) for g in gens]
    elif rank == m == 3:
        normals = [np.cross(gi, gj) for gi, gj in combinations(gens, 2)]
    elif rank == 2:  # flat polygon inside 3-D space
        w = basis[:, 2]
        normals = [np.cross(w, g) for g in gens]
    elif rank == 1:
        normals = [basis[:, 0]]
    normals = list(_unit_rows(normals)) if len(normals) else []
    normals += list(basis[:, rank:].T)
    if not normals:
        return np.zeros((0, m))
    normals = _dedupe_directions(np.array(normals))
    return np.vstack([normals, -normals])


def _hull_vertices(points: np.ndarray, center: np.ndarray, basis: np.ndarray, rank: int):
    """Extreme points of ``points``, computed in the rank-dimensional affine hull."""
    if rank == 0:
        return center[None, :]
    local = (points - center) @ basis[:, :rank]
    if rank == 1:
        return points[[np.argmin(local[:, 0]), np.argmax(local[:, 0])]]
    hull = ConvexHull(local)
    return points[np.sort(hull.vertices)]


def map_box(A, box: Box) -> Polytope:
    """The zonotope {A @ t : t in box}, with both representations.

    Facet normals come from single generators (2-D) or generator pairs (3-D);
    every offset is ``n @ c + sum_k |n @ g_k|``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, n = A.shape
    if n != len(box.lb):
        raise ValueError(f"matrix has {n} columns but box has {len(box.lb)} dimensions")
    center = A @ ((box.lb + box.ub) / 2)
    G = A * ((box.ub - box.lb) / 2)
    U, s, _ = np.linalg.svd(G, full_matrices=True)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > max(smax * 1e-8, 1e-12))) if smax > 0 else 0

    normals = _zonotope_normals(G, rank, U)
    offsets = normals @ center + np.abs(normals @ G).sum(axis=1)
    degenerate = rank < m
    hrep = HalfSpaceRep(normals, offsets, bounded=True, degenerate=degenerate)

    gens = G.T[np.linalg.norm(G, axis=0) > 1e-12]
    if len(gens):
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * len(gens), indexing="ij")).reshape(len(gens), -1).T
        points = center + signs @ gens
    else:
        points = center[None, :]
    verts = _merge_points(_hull_vertices(points, center, U, rank))
    return Polytope(m, hrep=hrep, vrep=VertexRep(verts), degenerate=degenerate, generators=G)


# --------------------------------------------------------------------------
# metrics and cones


def inscribed_radius_at(P: Polytope, center) -> float:
    """Radius of the largest ball around a fixed ``center`` that fits inside ``P``."""
    if P.empty or P.degenerate:
        return 0.0
    h = P.with_hrep().hrep
    center = np.asarray(center, dtype=float)
    norms = np.linalg.norm(h.normals, axis=1)
    slack = (h.offsets - h.normals @ center) / norms
    return float(max(0.0, slack.min()))


def _perpendicular_frame(axis):
    helper = np.eye(3)[np.argmin(np.abs(axis))]
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(axis, e1)


def make_cone(cone: Cone) -> HalfSpaceRep:
    """Polyhedral cone inscribed in the circular cone of the given half-aperture.

    In 2-D the cone is exactly two half-planes. In 3-D it is a pyramid whose
    ``cone.facets`` edge rays lie on the circular cone, so it never overestimates.
    The apex lies on every facet.
    """
    axis, theta, apex = cone.axis, cone.half_aperture, cone.apex
    if len(axis) == 2:
        def rot(a):
            return np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        normals = np.array([rot(theta + np.pi / 2) @ axis, rot(-theta - np.pi / 2) @ axis])
    elif len(axis) == 3:
        e1, e2 = _perpendicular_frame(axis)
        phis = 2 * np.pi * np.arange(cone.facets) / cone.facets
        rays = np.cos(theta) * axis + np.sin(theta) * (np.outer(np.cos(phis), e1) + np.outer(np.sin(phis), e2))
        normals = np.cross(np.roll(rays, -1, axis=0), rays)
    else:
        raise ValueError("cones are supported in 2-D and 3-D only")
    normals = normals / np.linalg.norm(normals, axis=1)[:, None]
    return HalfSpaceRep(normals, normals @ apex, bounded=False)


# --------------------------------------------------------------------------
# representation conversion


def is_bounded(h: HalfSpaceRep) -> bool:
    """True iff no nonzero direction d satisfies normals @ d <= 0."""
    normals = _unit_rows(h.normals)
    m = h.dim
    if len(normals) <= m:
        return False
    if m == 2:
        ang = np.sort(np.arctan2(normals[:, 1], normals[:, 0]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        return bool(gaps.max() < np.pi - 1e-12)
    try:
        hull = ConvexHull(normals)
    except QhullError:
        return False
    return bool(np.all(hull.equations[:, -1] < -1e-12))


def _merge_points(points, tol: float = MERGE_TOL):
    """Drop points within ``tol`` (relative to magnitude) of an earlier point."""
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return points
    scale = np.maximum(1.0, np.abs(points).max(axis=1))
    close = np.abs(points[:, None, :] - points[None, :, :]).max(axis=2) <= tol * scale[None, :]
    dup = np.tril(close, k=-1).any(axis=1)
    return points[~dup]


class UnboundedError(ValueError):
    pass


def enumerate_vertices(h: HalfSpaceRep) -> VertexRep:
    """Vertices of a bounded H-polytope by exhaustive facet m-tuple intersection.

    Each m-tuple of facets with a well-conditioned normal matrix yields a
    candidate point; candidates outside any half-space are discarded and the
    survivors are merged.
    """
    m = h.dim
    if not is_bounded(h):
        raise UnboundedError("half-space representation is unbounded")
    norms = np.linalg.norm(h.normals, axis=1)
    A = h.normals / norms[:, None]
    b = h.offsets / norms
    scale = max(1.0, np.abs(b).max())
    tuples = np.array(list(combinations(range(len(b)), m)))
    if len(tuples) == 0:
        return VertexRep(np.zeros((0, m)))
    mats = A[tuples]
    ok = np.abs(np.linalg.det(mats)) >= DET_TOL
    tuples, mats = tuples[ok], mats[ok]
    if len(tuples) == 0:
        return VertexRep(np.zeros((0, m)))
    pts = np.linalg.solve(mats, b[tuples][..., None])[..., 0]
    inside = np.all(pts @ A.T <= b + MEMBER_TOL * scale, axis=1)
    pts = pts[inside]
    if len(pts) == 0:
        return VertexRep(np.zeros((0, m)))
    return VertexRep(_merge_points(pts))


def facets_from_vertices(v: VertexRep) -> HalfSpaceRep:
    """Facet description of the convex hull of a full-dimensional vertex set."""
    pts = v.vertices
    try:
        hull = ConvexHull(pts)
    except QhullError:
        raise ValueError("vertex set is not full-dimensional") from None
    eq = hull.equations
    eq = eq[np.unique(np.round(eq, 9), axis=0, return_index=True)[1]]
    return HalfSpaceRep(eq[:, :-1], -eq[:, -1])


def _support_counts(h: HalfSpaceRep, verts: np.ndarray, scale: float) -> np.ndarray:
    norms = np.linalg.norm(h.normals, axis=1)
    gap = np.abs(verts @ h.normals.T - h.offsets) / norms
    return (gap <= 1e-7 * scale).sum(axis=0)


def intersect(P: Polytope, C: HalfSpaceRep) -> Polytope:
    """Intersection of a bounded polytope with extra half-spaces (e.g. a cone)."""
    m = P.dim
    if P.empty:
        return P
    hp = P.with_hrep().hrep
    combined = HalfSpaceRep(np.vstack([hp.normals, C.normals]), np.concatenate([hp.offsets, C.offsets]))
    if P.degenerate:
        # flat input: clip the vertex hull instead of intersecting facets
        verts = P.vertices
        keep = C.contains(verts)
        if not keep.any():
            return empty_polytope(m)
        return Polytope(m, hrep=combined, vrep=VertexRep(verts[keep]), degenerate=True)
    verts = enumerate_vertices(combined).vertices
    if len(verts) == 0:
        return empty_polytope(m)
    scale = max(1.0, np.abs(verts).max())
    flat = len(verts) <= m or np.linalg.matrix_rank(verts[1:] - verts[0], tol=1e-9 * scale) < m
    counts = _support_counts(combined, verts, scale)
    kept = combined if flat else HalfSpaceRep(combined.normals[counts >= m], combined.offsets[counts >= m])
    return Polytope(m, hrep=kept, vrep=VertexRep(verts), degenerate=bool(flat))


# --------------------------------------------------------------------------
# volume


def _polygon_area(verts: np.ndarray) -> float:
    c = verts.mean(axis=0)
    d = verts - c
    order = np.argsort(np.arctan2(d[:, 1], d[:, 0]))
    d = d[order]
    e = np.roll(d, -1, axis=0)
    return float(0.5 * np.abs(d[:, 0] * e[:, 1] - d[:, 1] * e[:, 0]).sum())


def volume(P: Polytope) -> float:
    """m-dimensional volume by fan triangulation from the vertex centroid."""
    if P.empty or P.degenerate:
        return 0.0
    verts = P.vertices
    if len(verts) <= P.dim:
        return 0.0
    if P.dim == 2:
        return _polygon_area(verts)
    h = P.with_hrep().hrep
    centroid = verts.mean(axis=0)
    scale = max(1.0, np.abs(verts).max())
    total = 0.0
    norms = np.linalg.norm(h.normals, axis=1)
    seen = set()
    for a, b, nrm in zip(h.normals, h.offsets, norms):
        hit = np.flatnonzero(np.abs(verts @ a - b) / nrm <= 1e-7 * scale)
        # near-parallel generators can yield the same face twice under
        # slightly different normals; count each vertex set once
        key = hit.tobytes()
        if len(hit) < 3 or key in seen:
            continue
        seen.add(key)
        on = verts[hit]
        fc = on.mean(axis=0)
        e1, e2 = _perpendicular_frame(a / nrm)
        d = on - fc
        ring = on[np.argsort(np.arctan2(d @ e2, d @ e1))]
        nxt = np.roll(ring, -1, axis=0)
        tets = np.stack([ring - centroid, nxt - centroid, np.broadcast_to(fc - centroid, ring.shape)], axis=1)
        total += np.abs(np.linalg.det(tets)).sum() / 6.0
    return float(total)


def dump_polytope(P: Polytope) -> str:
    """Plain-text dump: ``v x y [z]`` per vertex, ``h a1 a2 [a3] b`` per facet."""
    lines = []
    if P.vrep is not None or P.hrep is not None:
        try:
            for v in P.vertices:
                lines.append("v " + " ".join(f"{x:.12g}" for x in v))
        except UnboundedError:
            pass
    if P.hrep is not None:
        for a, b in zip(P.hrep.normals, P.hrep.offsets):
            lines.append("h " + " ".join(f"{x:.12g}" for x in a) + f" {b:.12g}")
    return "\n".join(lines) + "\n"
