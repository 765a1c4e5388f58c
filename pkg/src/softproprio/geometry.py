"""Planar triangle meshes, barycentric anchors and centerline sampling.

Nodal configurations are flat arrays ``q = [x0, y0, x1, y1, ...]`` in mm.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import PointOutsideMesh, ValidationError

#: distance (mm) within which a point still counts as inside a triangle
INSIDE_TOL = 1e-6


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Counter-clockwise triangulation with outward-oriented boundary edges.

    Boundary edges keep the orientation they have inside their triangle, so the
    material lies on the left of each edge and the outward normal on its right.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    fixed_vertices: frozenset

    def __post_init__(self):
        v = _frozen(self.vertices, float).reshape(-1, 2)
        t = _frozen(self.triangles, np.int64).reshape(-1, 3)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.boundary_edges is None:
            b = _frozen(_ordered_boundary(t), np.int64)
        else:
            b = _frozen(self.boundary_edges, np.int64).reshape(-1, 2)
        object.__setattr__(self, "boundary_edges", b)
        object.__setattr__(self, "fixed_vertices", frozenset(int(i) for i in self.fixed_vertices))
        self._validate()

    def _validate(self):
        if not np.all(np.isfinite(self.vertices)):
            raise ValidationError("vertex coordinates must be finite")
        n = len(self.vertices)
        if len(self.triangles) == 0:
            raise ValidationError("mesh has no triangles")
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise ValidationError("triangle index out of range")
        if np.any(self.signed_areas() <= 0):
            raise ValidationError("triangles must be counter-clockwise with positive area")
        if not self.fixed_vertices:
            raise ValidationError("at least one fixed vertex is required")
        if min(self.fixed_vertices) < 0 or max(self.fixed_vertices) >= n:
            raise ValidationError("fixed vertex index out of range")
        expected = {tuple(e) for e in _ordered_boundary(self.triangles)}
        given = {tuple(e) for e in self.boundary_edges.tolist()}
        if expected != given:
            raise ValidationError("boundary_edges must be exactly the outward-oriented single-triangle edges")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_dofs(self) -> int:
        return 2 * len(self.vertices)

    @property
    def rest_q(self) -> np.ndarray:
        return self.vertices.ravel().copy()

    def fixed_dofs(self) -> np.ndarray:
        idx = np.array(sorted(self.fixed_vertices), dtype=np.int64)
        return np.sort(np.concatenate([2 * idx, 2 * idx + 1]))

    def signed_areas(self, q=None) -> np.ndarray:
        x = self.vertices if q is None else np.asarray(q, float).reshape(-1, 2)
        a, b, c = (x[self.triangles[:, k]] for k in range(3))
        return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))

    def boundary_loops(self) -> list[list[int]]:
        """Boundary edges chained into closed vertex loops."""
        return _chain_loops(self.boundary_edges)

    def to_json(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "fixed": sorted(self.fixed_vertices),
        }

    @classmethod
    def from_json(cls, data: dict) -> "TriMesh":
        try:
            return cls(data["vertices"], data["triangles"], data["boundary_edges"], data["fixed"])
        except KeyError as exc:
            raise ValidationError(f"mesh file is missing key {exc}") from None


def load_mesh(path) -> TriMesh:
    return TriMesh.from_json(json.loads(Path(path).read_text()))


def save_mesh(mesh: TriMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_json()))


def _ordered_boundary(triangles) -> np.ndarray:
    edges = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    single = edges[counts[inverse.ravel()] == 1]
    loops = _chain_loops(single)
    return np.array([(loop[i], loop[(i + 1) % len(loop)]) for loop in loops for i in range(len(loop))],
                    dtype=np.int64).reshape(-1, 2)


def _chain_loops(edges) -> list[list[int]]:
    nxt = {}
    for i, j in np.asarray(edges).tolist():
        if i in nxt:
            raise ValidationError(f"boundary is not a set of simple loops at vertex {i}")
        nxt[i] = j
    loops = []
    remaining = dict(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        cur = remaining.pop(start)
        while cur != start:
            if cur not in remaining:
                raise ValidationError("boundary edges do not close into loops")
            loop.append(cur)
            cur = remaining.pop(cur)
        loops.append(loop)
    return loops


def structured_mesh(xs: Sequence[float], ys: Sequence[float], *, holes: Iterable = (),
                    fixed: str = "left", pattern: str = "uniform") -> TriMesh:
    """Grid of quads, each split into two counter-clockwise right triangles.

    ``holes`` is an iterable of ``(xmin, xmax, ymin, ymax)`` boxes; grid cells whose
    centers fall inside a box are removed and unused vertices dropped.
    ``fixed="left"`` anchors every vertex on the ``x == xs[0]`` line.  With
    ``pattern="alternate"`` the diagonal direction flips in a checkerboard, which
    softens the bending stiffness error of constant-strain elements.
    """
    if pattern not in ("uniform", "alternate"):
        raise ValidationError(f"unknown triangulation pattern {pattern!r}")
    xs = np.asarray(xs, float)
    ys = np.asarray(ys, float)
    if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
        raise ValidationError("grid coordinates must be strictly increasing")
    nx = len(xs)
    holes = list(holes)
    vid = lambda i, j: j * nx + i  # noqa: E731
    tris = []
    for j in range(len(ys) - 1):
        for i in range(nx - 1):
            cx, cy = 0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])
            if any(h[0] < cx < h[1] and h[2] < cy < h[3] for h in holes):
                continue
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if pattern == "alternate" and (i + j) % 2:
                tris.append((a, b, d))
                tris.append((b, c, d))
            else:
                tris.append((a, b, c))
                tris.append((a, c, d))
    gx, gy = np.meshgrid(xs, ys)
    verts = np.column_stack([gx.ravel(), gy.ravel()])
    tris = np.array(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = verts[used]
    tris = remap[tris]
    if fixed != "left":
        raise ValidationError(f"unsupported fixed rule {fixed!r}")
    fixed_set = np.nonzero(np.isclose(verts[:, 0], xs[0]))[0]
    return TriMesh(verts, tris, None, fixed_set)


def strip_mesh(length: float, height: float, rows: int = 2, cols: int = 24,
               pattern: str = "uniform") -> TriMesh:
    """Cantilevered rectangle ``[0, length] x [0, height]`` clamped at ``x = 0``."""
    return structured_mesh(np.linspace(0.0, length, cols + 1), np.linspace(0.0, height, rows + 1),
                           pattern=pattern)


@dataclass(frozen=True)
class BarycentricAnchor:
    triangle_index: int
    weights: tuple

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if len(w) != 3 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise ValidationError(f"invalid barycentric weights {w}")
        object.__setattr__(self, "weights", w)


def _barycentric_all(verts, tris, p):
    a, b, c = (verts[tris[:, k]] for k in range(3))
    v0, v1 = b - a, c - a
    d = p - a
    det = v0[:, 0] * v1[:, 1] - v0[:, 1] * v1[:, 0]
    w1 = (d[:, 0] * v1[:, 1] - d[:, 1] * v1[:, 0]) / det
    w2 = (v0[:, 0] * d[:, 1] - v0[:, 1] * d[:, 0]) / det
    w = np.column_stack([1.0 - w1 - w2, w1, w2])
    # height of vertex k above its opposite edge turns weights into distances
    opp = np.stack([np.linalg.norm(c - b, axis=1), np.linalg.norm(c - a, axis=1),
                    np.linalg.norm(b - a, axis=1)], axis=1)
    heights = det[:, None] / opp
    return w, w * heights


def barycentric_coords(mesh: TriMesh, p) -> BarycentricAnchor:
    """Anchor ``p`` to the lowest-index triangle containing it (within 1e-6 mm)."""
    p = np.asarray(p, float)
    w, dist = _barycentric_all(mesh.vertices, mesh.triangles, p)
    inside = np.nonzero(dist.min(axis=1) >= -INSIDE_TOL)[0]
    if len(inside) == 0:
        raise PointOutsideMesh(f"point {p.tolist()} is not inside the mesh")
    t = int(inside[0])
    wt = np.clip(w[t], 0.0, 1.0)
    wt /= wt.sum()
    return BarycentricAnchor(t, tuple(wt))


def anchor_dofs(mesh: TriMesh, anchor: BarycentricAnchor) -> np.ndarray:
    """Vertex indices carrying the anchor's weights."""
    return mesh.triangles[anchor.triangle_index]


def anchor_position(mesh: TriMesh, anchor: BarycentricAnchor, q) -> np.ndarray:
    x = np.asarray(q, float).reshape(-1, 2)
    idx = mesh.triangles[anchor.triangle_index]
    return np.asarray(anchor.weights) @ x[idx]


@dataclass(frozen=True)
class Centerline:
    anchors: tuple
    arc_positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = _frozen(self.arc_positions, float)
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "arc_positions", s)
        if len(s) != len(self.anchors):
            raise ValidationError("one arc position per anchor is required")
        if len(s) and (s[0] != 0.0 or np.any(np.diff(s) <= 0)):
            raise ValidationError("arc positions must start at 0 and increase strictly")

    def __len__(self):
        return len(self.anchors)

    def positions(self, mesh: TriMesh, q) -> np.ndarray:
        """``(n, 2)`` anchor positions under configuration ``q``."""
        x = np.asarray(q, float).reshape(-1, 2)
        tri = mesh.triangles[[a.triangle_index for a in self.anchors]]
        w = np.array([a.weights for a in self.anchors])
        return np.einsum("nk,nkd->nd", w, x[tri])


def polyline_points(path, n: int) -> tuple[np.ndarray, np.ndarray]:
    """``n`` points at equal arc-length spacing along a polyline and their arc coordinates."""
    path = np.asarray(path, float).reshape(-1, 2)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.linspace(0.0, cum[-1], n)
    pts = np.column_stack([np.interp(s, cum, path[:, 0]), np.interp(s, cum, path[:, 1])])
    return pts, s


def sample_centerline(mesh: TriMesh, path, n: int) -> Centerline:
    if n < 2:
        raise ValidationError("a centerline needs at least two points")
    pts, s = polyline_points(path, n)
    if s[-1] <= 0:
        raise ValidationError("centerline path has zero length")
    return Centerline(tuple(barycentric_coords(mesh, p) for p in pts), s)
