"""Constraint Jacobian rows (force, pressure, length), pose effectors and compliance.

Pressure efforts are expressed in N/mm^2 (MPa) so that ``H^T lam`` is in N; the
scenario layer converts from kPa.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateSegment, SingularSystem, ValidationError
from .geometry import BarycentricAnchor, TriMesh, anchor_position

KPA_TO_N_PER_MM2 = 1e-3

# (dy, -dx): right-hand normal scaled by edge length
_RIGHT = np.array([[0.0, 1.0], [-1.0, 0.0]])


def _spread(mesh: TriMesh, anchor: BarycentricAnchor, vec, out=None) -> np.ndarray:
    """Distribute a 2-vector onto the anchor's triangle DOFs by barycentric weight."""
    row = np.zeros(mesh.n_dofs) if out is None else out
    for w, v in zip(anchor.weights, mesh.triangles[anchor.triangle_index]):
        row[2 * v:2 * v + 2] += w * np.asarray(vec, float)
    return row


@dataclass(frozen=True)
class ForceConstraint:
    anchor: BarycentricAnchor
    direction: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in self.direction)
        if len(d) != 2 or abs(np.hypot(*d) - 1.0) > 1e-9:
            raise ValidationError(f"force direction {d} must be a unit 2-vector")
        object.__setattr__(self, "direction", d)


def force_rows(mesh: TriMesh, c: ForceConstraint) -> np.ndarray:
    """One row: ``H^T lam`` applies ``lam * direction`` at the anchor point."""
    return _spread(mesh, c.anchor, c.direction)


@dataclass(frozen=True)
class PressureConstraint:
    """Chamber wall as a chain of edges whose right-hand normals point into the material."""

    chamber_edges: tuple

    def __post_init__(self):
        edges = tuple((int(i), int(j)) for i, j in self.chamber_edges)
        if not edges:
            raise ValidationError("chamber needs at least one edge")
        for (_, j), (k, _) in zip(edges[:-1], edges[1:]):
            if j != k:
                raise ValidationError("chamber edges must be contiguous")
        object.__setattr__(self, "chamber_edges", edges)

    @property
    def closed(self) -> bool:
        return self.chamber_edges[0][0] == self.chamber_edges[-1][1]

    @classmethod
    def from_boundary_loop(cls, mesh: TriMesh, loop) -> "PressureConstraint":
        """Chamber from a mesh boundary loop around a cavity.

        Mesh boundary edges carry the material's outward normal, which for a cavity
        points into the cavity; the edges are reversed so pressure pushes on the walls.
        """
        loop = list(loop)
        edges = [(loop[(i + 1) % len(loop)], loop[i]) for i in reversed(range(len(loop)))]
        known = {tuple(e) for e in mesh.boundary_edges.tolist()}
        if any((j, i) not in known for i, j in edges):
            raise ValidationError("chamber loop does not follow mesh boundary edges")
        return cls(tuple(edges))


def _edge_arrays(c: PressureConstraint):
    e = np.array(c.chamber_edges, dtype=np.int64)
    return e[:, 0], e[:, 1]


def pressure_rows(mesh: TriMesh, c: PressureConstraint, q, thickness: float) -> np.ndarray:
    """One row in mm^2: each edge adds ``(length * thickness / 2) * normal`` to both endpoints."""
    x = np.asarray(q, float).reshape(-1, 2)
    i, j = _edge_arrays(c)
    ln = (x[j] - x[i]) @ _RIGHT.T * (0.5 * thickness)
    row = np.zeros((mesh.n_vertices, 2))
    np.add.at(row, i, ln)
    np.add.at(row, j, ln)
    return row.ravel()


def pressure_jacobian(mesh: TriMesh, c: PressureConstraint, thickness: float) -> sp.csr_matrix:
    """d(row^T)/dq; the pressure row is linear in q so this is constant."""
    i, j = _edge_arrays(c)
    blocks_r, blocks_c, vals = [], [], []
    blk = 0.5 * thickness * _RIGHT
    for a, b in zip(i.tolist(), j.tolist()):
        for node in (a, b):
            for src, sign in ((b, 1.0), (a, -1.0)):
                for r in range(2):
                    for s in range(2):
                        if blk[r, s]:
                            blocks_r.append(2 * node + r)
                            blocks_c.append(2 * src + s)
                            vals.append(sign * blk[r, s])
    n = mesh.n_dofs
    return sp.coo_matrix((vals, (blocks_r, blocks_c)), shape=(n, n)).tocsr()


@dataclass(frozen=True)
class LengthConstraint:
    """Inextensible chain of segments between consecutive anchors."""

    segment_anchors: tuple
    rest_lengths: tuple

    def __post_init__(self):
        anchors = tuple(self.segment_anchors)
        rest = tuple(float(v) for v in self.rest_lengths)
        if len(rest) != len(anchors) - 1:
            raise ValidationError("need one rest length per segment")
        if min(rest, default=1.0) <= 0:
            raise ValidationError("rest lengths must be positive")
        object.__setattr__(self, "segment_anchors", anchors)
        object.__setattr__(self, "rest_lengths", rest)

    @classmethod
    def from_anchors(cls, mesh: TriMesh, anchors) -> "LengthConstraint":
        anchors = tuple(anchors)
        pts = np.array([anchor_position(mesh, a, mesh.rest_q) for a in anchors])
        return cls(anchors, tuple(np.linalg.norm(np.diff(pts, axis=0), axis=1)))

    @property
    def n_segments(self) -> int:
        return len(self.rest_lengths)


def anchor_map(mesh: TriMesh, anchors) -> sp.csr_matrix:
    """Sparse ``(2 * len(anchors), n_dofs)`` map with ``map @ q`` the stacked anchor positions."""
    r, cc, v = [], [], []
    for k, a in enumerate(anchors):
        for w, vert in zip(a.weights, mesh.triangles[a.triangle_index]):
            for i in range(2):
                r.append(2 * k + i)
                cc.append(2 * int(vert) + i)
                v.append(w)
    return sp.csr_matrix((v, (r, cc)), shape=(2 * len(anchors), mesh.n_dofs))


@lru_cache(maxsize=64)
def _segment_map(mesh: TriMesh, c: "LengthConstraint") -> sp.csr_matrix:
    """Sparse map from q to the stacked segment vectors ``(dx_0, dy_0, dx_1, ...)``."""
    P = anchor_map(mesh, c.segment_anchors)
    return (P[2:] - P[:-2]).tocsr()


def _segments(mesh, c: LengthConstraint, q):
    S = _segment_map(mesh, c)
    d = (S @ np.asarray(q, float)).reshape(-1, 2)
    ln = np.linalg.norm(d, axis=1)
    if np.any(ln <= 1e-9):
        raise DegenerateSegment("length-constraint segment has collapsed")
    return d, ln, S


def segment_lengths(mesh: TriMesh, c: LengthConstraint, q) -> np.ndarray:
    return _segments(mesh, c, q)[1]


def length_rows(mesh: TriMesh, c: LengthConstraint, q) -> np.ndarray:
    """Row k is the gradient of segment k's length with respect to q."""
    d, ln, S = _segments(mesh, c, q)
    u = d / ln[:, None]
    n = c.n_segments
    U = sp.csr_matrix((u.ravel(), (np.repeat(np.arange(n), 2), np.arange(2 * n))), shape=(n, 2 * n))
    return (U @ S).toarray()


def length_hessian(mesh: TriMesh, c: LengthConstraint, q, weights) -> sp.csr_matrix:
    """``sum_k weights[k] * d^2 len_k / dq^2``."""
    d, ln, S = _segments(mesh, c, q)
    u = d / ln[:, None]
    w = np.asarray(weights, float) / ln
    blocks = w[:, None, None] * (np.eye(2)[None] - u[:, :, None] * u[:, None, :])
    G = sp.block_diag(list(blocks), format="csr") if len(blocks) else sp.csr_matrix((0, 0))
    return (S.T @ G @ S).tocsr()


@dataclass(frozen=True)
class PoseEffector:
    anchor: BarycentricAnchor
    kind: str = "position"

    def __post_init__(self):
        if self.kind not in ("position", "orientation"):
            raise ValidationError(f"unknown effector kind {self.kind!r}")

    @property
    def width(self) -> int:
        return 2 if self.kind == "position" else 1


def _triangle_rotation(mesh: TriMesh, t: int, q):
    """Polar rotation angle of triangle ``t`` and its gradient over the 6 triangle DOFs."""
    idx = mesh.triangles[t]
    X = mesh.vertices[idx]
    x = np.asarray(q, float).reshape(-1, 2)[idx]
    dm_inv = np.linalg.inv(np.column_stack([X[1] - X[0], X[2] - X[0]]))
    F = np.column_stack([x[1] - x[0], x[2] - x[0]]) @ dm_inv
    a = F[1, 0] - F[0, 1]
    b = F[0, 0] + F[1, 1]
    cs = [-(dm_inv[0] + dm_inv[1]), dm_inv[0], dm_inv[1]]
    g = np.empty(6)
    den = a * a + b * b
    for k, ck in enumerate(cs):
        g[2 * k] = (b * -ck[1] - a * ck[0]) / den
        g[2 * k + 1] = (b * ck[0] - a * ck[1]) / den
    return np.arctan2(a, b), g, idx


def effector_values(mesh: TriMesh, e: PoseEffector, q) -> np.ndarray:
    if e.kind == "position":
        return anchor_position(mesh, e.anchor, q)
    return np.array([_triangle_rotation(mesh, e.anchor.triangle_index, q)[0]])


def effector_rows(mesh: TriMesh, e: PoseEffector, q) -> np.ndarray:
    """Two rows (x, y) for a position effector, one row (rotation) for orientation."""
    n = mesh.n_dofs
    if e.kind == "position":
        return np.stack([_spread(mesh, e.anchor, (1.0, 0.0)), _spread(mesh, e.anchor, (0.0, 1.0))])
    _, g, idx = _triangle_rotation(mesh, e.anchor.triangle_index, q)
    row = np.zeros(n)
    for k, v in enumerate(idx):
        row[2 * v:2 * v + 2] += g[2 * k:2 * k + 2]
    return row[None, :]


@dataclass
class ConstraintSet:
    """All constraints of one device; actuation rows are ordered pressures first, then forces."""

    mesh: TriMesh
    thickness: float
    pressures: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    effectors: list = field(default_factory=list)
    orientation_scale: float = 1.0

    def __post_init__(self):
        self._free = np.ones(self.mesh.n_dofs, bool)
        self._free[self.mesh.fixed_dofs()] = False
        jac = [pressure_jacobian(self.mesh, c, self.thickness).tocoo() for c in self.pressures]
        self._pjac_parts = (np.concatenate([j.row for j in jac]) if jac else np.zeros(0, int),
                            np.concatenate([j.col for j in jac]) if jac else np.zeros(0, int),
                            [j.data for j in jac])

    @property
    def n_pressure(self) -> int:
        return len(self.pressures)

    @property
    def n_actuation(self) -> int:
        return len(self.pressures) + len(self.forces)

    @property
    def n_bilateral(self) -> int:
        return sum(c.n_segments for c in self.lengths)

    @property
    def n_effector_rows(self) -> int:
        return sum(e.width for e in self.effectors)

    def actuation_rows(self, q) -> np.ndarray:
        rows = [pressure_rows(self.mesh, c, q, self.thickness) for c in self.pressures]
        rows += [force_rows(self.mesh, c) for c in self.forces]
        H = np.array(rows).reshape(len(rows), self.mesh.n_dofs)
        H[:, ~self._free] = 0.0
        return H

    def actuation_load(self, q, lam) -> np.ndarray:
        if self.n_actuation == 0:
            return np.zeros(self.mesh.n_dofs)
        return self.actuation_rows(q).T @ np.asarray(lam, float)

    def actuation_jacobian(self, q, lam) -> sp.csr_matrix:
        """Derivative of the pressure load ``H(q)^T lam`` (constant, since rows are linear in q)."""
        n = self.mesh.n_dofs
        rows, cols, data = self._pjac_parts
        if not data:
            return sp.csr_matrix((n, n))
        vals = np.concatenate([lam[k] * d for k, d in enumerate(data)])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    def bilateral_rows(self, q) -> sp.csr_matrix:
        if not self.lengths:
            return sp.csr_matrix((0, self.mesh.n_dofs))
        H = np.vstack([length_rows(self.mesh, c, q) for c in self.lengths])
        H[:, ~self._free] = 0.0
        return sp.csr_matrix(H)

    def bilateral_residual(self, q) -> np.ndarray:
        if not self.lengths:
            return np.zeros(0)
        return np.concatenate([segment_lengths(self.mesh, c, q) - np.array(c.rest_lengths)
                               for c in self.lengths])

    def bilateral_hessian(self, q, mu) -> sp.csr_matrix:
        n = self.mesh.n_dofs
        out = sp.csr_matrix((n, n))
        start = 0
        for c in self.lengths:
            out = out + length_hessian(self.mesh, c, q, mu[start:start + c.n_segments])
            start += c.n_segments
        return out

    def relative_length_errors(self, q) -> np.ndarray:
        if not self.lengths:
            return np.zeros(0)
        rest = np.concatenate([c.rest_lengths for c in self.lengths])
        return self.bilateral_residual(q) / rest

    def effector_rows(self, q) -> np.ndarray:
        rows = []
        for e in self.effectors:
            r = effector_rows(self.mesh, e, q)
            rows.append(r * (self.orientation_scale if e.kind == "orientation" else 1.0))
        H = np.vstack(rows) if rows else np.zeros((0, self.mesh.n_dofs))
        H[:, ~self._free] = 0.0
        return H

    def effector_values(self, q) -> np.ndarray:
        vals = []
        for e in self.effectors:
            v = effector_values(self.mesh, e, q)
            vals.append(v * (self.orientation_scale if e.kind == "orientation" else 1.0))
        return np.concatenate(vals) if vals else np.zeros(0)


def compute_compliance(K, H_e, H_f, H_b=None) -> np.ndarray:
    """``W = H_e K^-1 H_f^T``; with bilateral rows ``H_b`` the solve is restricted to
    displacements that keep those rows stationary (saddle-point system)."""
    K = sp.csc_matrix(K)
    H_f = np.atleast_2d(np.asarray(H_f, float))
    H_e = np.atleast_2d(np.asarray(H_e, float))
    n = K.shape[0]
    if H_b is not None and H_b.shape[0]:
        Hb = sp.csr_matrix(H_b)
        M = sp.bmat([[K, Hb.T], [Hb, None]], format="csc")
        rhs = np.vstack([H_f.T, np.zeros((Hb.shape[0], H_f.shape[0]))])
    else:
        M, rhs = K, H_f.T
    try:
        lu = spla.splu(M)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from None
    X = lu.solve(np.asfortranarray(rhs))[:n]
    if not np.all(np.isfinite(X)):
        raise SingularSystem("compliance solve produced non-finite values")
    return H_e @ X
