"""Corotational constant-strain triangles in plane strain and the quasi-static solve.

Units: positions in mm, forces in N, stiffness in N/mm.  Young's modulus is given
in Pa and converted to N/mm^2 (MPa) when stiffness is formed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateElement, NonConvergence, SingularSystem, ValidationError
from .geometry import TriMesh

log = logging.getLogger(__name__)

PA_TO_N_PER_MM2 = 1e-6


@dataclass(frozen=True)
class Material:
    young_modulus: float  # Pa
    poisson_ratio: float
    thickness: float  # out-of-plane depth, mm

    def __post_init__(self):
        if not self.young_modulus > 0:
            raise ValidationError("young_modulus must be positive")
        if not 0.0 <= self.poisson_ratio < 0.5:
            raise ValidationError("poisson_ratio must lie in [0, 0.5)")
        if not self.thickness > 0:
            raise ValidationError("thickness must be positive")

    def scaled(self, factor: float) -> "Material":
        return replace(self, young_modulus=self.young_modulus * factor)

    def elasticity(self) -> np.ndarray:
        """Plane-strain constitutive matrix in N/mm^2 (Voigt order xx, yy, 2xy)."""
        e = self.young_modulus * PA_TO_N_PER_MM2
        nu = self.poisson_ratio
        k = e / ((1.0 + nu) * (1.0 - 2.0 * nu))
        return k * np.array([[1.0 - nu, nu, 0.0], [nu, 1.0 - nu, 0.0], [0.0, 0.0, 0.5 - nu]])


@dataclass(frozen=True, eq=False)
class SystemState:
    """Nodal positions, previous positions and accumulated constraint efforts.

    ``lam`` holds actuation efforts (pressure rows first, then force rows);
    ``multipliers`` holds the bilateral length-constraint multipliers.
    """

    q: np.ndarray
    q_prev: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    iterations: int = 0

    def __post_init__(self):
        if np.shape(self.q) != np.shape(self.q_prev):
            raise ValidationError("q and q_prev must have the same length")

    @classmethod
    def at_rest(cls, mesh: TriMesh, n_efforts: int = 0, n_bilateral: int = 0) -> "SystemState":
        q = mesh.rest_q
        return cls(q, q.copy(), np.zeros(n_efforts), np.zeros(n_bilateral))


def _b_matrix(coords):
    (x1, y1), (x2, y2), (x3, y3) = coords
    two_a = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    b = np.array([y2 - y3, y3 - y1, y1 - y2])
    c = np.array([x3 - x2, x1 - x3, x2 - x1])
    B = np.zeros((3, 6))
    B[0, 0::2] = b
    B[1, 1::2] = c
    B[2, 0::2] = c
    B[2, 1::2] = b
    if abs(two_a) <= 2e-12:
        return B, 0.5 * two_a
    return B / two_a, 0.5 * two_a


def element_stiffness(coords, material: Material) -> np.ndarray:
    """Linear CST stiffness ``B^T C B * area * thickness`` (N/mm), DOFs ``x0 y0 x1 y1 x2 y2``."""
    coords = np.asarray(coords, float).reshape(3, 2)
    B, area = _b_matrix(coords)
    if area <= 1e-12:
        raise DegenerateElement(f"element area {area:g} mm^2 is not positive")
    return B.T @ material.elasticity() @ B * area * material.thickness


class ElasticBody:
    """Per-element rest data for one mesh/material pair; evaluates forces and tangents."""

    def __init__(self, mesh: TriMesh, material: Material):
        self.mesh = mesh
        self.material = material
        tri = mesh.triangles
        self.rest = mesh.vertices[tri]  # (ne, 3, 2)
        dm = np.stack([self.rest[:, 1] - self.rest[:, 0], self.rest[:, 2] - self.rest[:, 0]], axis=2)
        self.dm_inv = np.linalg.inv(dm)
        self.ke = np.stack([element_stiffness(c, material) for c in self.rest])
        self.dofs = np.stack([2 * tri[:, 0], 2 * tri[:, 0] + 1, 2 * tri[:, 1], 2 * tri[:, 1] + 1,
                              2 * tri[:, 2], 2 * tri[:, 2] + 1], axis=1)
        self.n = mesh.n_dofs
        self.free = np.ones(self.n, bool)
        self.free[mesh.fixed_dofs()] = False
        self._rows = np.repeat(self.dofs, 6, axis=1).ravel()
        self._cols = np.tile(self.dofs, (1, 6)).ravel()

    def _kinematics(self, q):
        x = np.asarray(q, float).reshape(-1, 2)[self.mesh.triangles]
        ds = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
        F = ds @ self.dm_inv
        det = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
        if np.any(det <= 0):
            bad = int(np.nonzero(det <= 0)[0][0])
            raise DegenerateElement(f"element {bad} is inverted or collapsed")
        a = F[:, 1, 0] - F[:, 0, 1]
        b = F[:, 0, 0] + F[:, 1, 1]
        theta = np.arctan2(a, b)
        c, s = np.cos(theta), np.sin(theta)
        R = np.stack([np.stack([c, -s], 1), np.stack([s, c], 1)], 1)
        xl = np.einsum("nki,nij->nkj", x, R)  # R^T x_k per node
        u = (xl - self.rest).reshape(-1, 6)
        return x, F, a, b, theta, R, xl, u

    def rotation_angles(self, q) -> np.ndarray:
        return self._kinematics(q)[4]

    def rotation_gradients(self, q) -> np.ndarray:
        """d(theta_e)/dx for each element's polar rotation, shape ``(ne, 6)``."""
        _, _, a, b, *_ = self._kinematics(q)
        return self._theta_grad(a, b)

    def _theta_grad(self, a, b):
        c1, c2 = self.dm_inv[:, 0, :], self.dm_inv[:, 1, :]
        cs = [-(c1 + c2), c1, c2]
        g = np.empty((len(a), 6))
        den = a * a + b * b
        for k, ck in enumerate(cs):
            # da/dx_k = (-c_k1, c_k0), db/dx_k = (c_k0, c_k1)
            g[:, 2 * k] = (b * -ck[:, 1] - a * ck[:, 0]) / den
            g[:, 2 * k + 1] = (b * ck[:, 0] - a * ck[:, 1]) / den
        return g

    def energy(self, q) -> float:
        u = self._kinematics(q)[7]
        return 0.5 * float(np.einsum("ni,nij,nj->", u, self.ke, u))

    def _local_forces(self, R, u):
        fl = np.einsum("nij,nj->ni", self.ke, u)
        f = np.einsum("nkj,nij->nki", fl.reshape(-1, 3, 2), R).reshape(-1, 6)
        return fl, f

    def forces(self, q) -> np.ndarray:
        _, _, _, _, _, R, _, u = self._kinematics(q)
        f = self._local_forces(R, u)[1]
        return np.bincount(self.dofs.ravel(), weights=f.ravel(), minlength=self.n)

    def element_tangents(self, q):
        _, _, a, b, _, R, xl, u = self._kinematics(q)
        fl, f = self._local_forces(R, u)
        ne = len(u)
        Rh = np.zeros((ne, 6, 6))
        for k in range(3):
            Rh[:, 2 * k:2 * k + 2, 2 * k:2 * k + 2] = R
        km = Rh @ self.ke @ Rh.transpose(0, 2, 1)
        fl3 = fl.reshape(-1, 3, 2)
        jfl = np.stack([-fl3[..., 1], fl3[..., 0]], -1).reshape(-1, 6)
        jxl = np.stack([-xl[..., 1], xl[..., 0]], -1).reshape(-1, 6)
        w = jfl - np.einsum("nij,nj->ni", self.ke, jxl)
        v = np.einsum("nij,nj->ni", Rh, w)
        km += v[:, :, None] * self._theta_grad(a, b)[:, None, :]
        return km, f

    def tangent(self, q, project: bool = True) -> sp.csr_matrix:
        km = self.element_tangents(q)[0]
        K = sp.coo_matrix((km.ravel(), (self._rows, self._cols)), shape=(self.n, self.n)).tocsr()
        return project_fixed(K, self.free) if project else K


def project_fixed(K, free) -> sp.csr_matrix:
    """Replace rows and columns of fixed DOFs by the identity."""
    d = sp.diags(free.astype(float))
    return (d @ K @ d + sp.diags((~free).astype(float))).tocsr()


@lru_cache(maxsize=64)
def elastic_body(mesh: TriMesh, material: Material) -> ElasticBody:
    return ElasticBody(mesh, material)


def elastic_energy(mesh: TriMesh, material: Material, q) -> float:
    return elastic_body(mesh, material).energy(q)


def internal_forces(mesh: TriMesh, material: Material, q) -> np.ndarray:
    """Corotational internal forces, the gradient of the elastic energy (N)."""
    q = np.asarray(q, float)
    if q.shape != (mesh.n_dofs,):
        raise ValidationError(f"q has shape {q.shape}, expected ({mesh.n_dofs},)")
    return elastic_body(mesh, material).forces(q)


def assemble_tangent_stiffness(mesh: TriMesh, material: Material, q) -> sp.csr_matrix:
    """Consistent tangent dF/dq with fixed DOFs projected to identity."""
    return elastic_body(mesh, material).tangent(np.asarray(q, float))


def gravity_loads(mesh: TriMesh, material: Material, density: float, g=(0.0, -9.81)) -> np.ndarray:
    """Lumped body-force load (N) for ``density`` in kg/mm^3 and ``g`` in m/s^2."""
    area = mesh.signed_areas()
    per_node = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3.0, 3),
                           minlength=mesh.n_vertices) * material.thickness * density
    f = (per_node[:, None] * np.asarray(g, float)[None, :]).ravel()
    f[mesh.fixed_dofs()] = 0.0
    return f


def _factor(A):
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from None


def quasi_static_step(state: SystemState, mesh: TriMesh, material: Material, loads=None,
                      constraints=None, efforts=None, *, tol: float = 1e-8, max_iter: int = 50,
                      length_tol: float = 1e-10) -> SystemState:
    """Newton iteration on static equilibrium ``P - F(q) + H^T lam = 0``.

    ``constraints`` (a :class:`~softproprio.constraints.ConstraintSet`) supplies the
    configuration-dependent actuation rows H and bilateral length constraints, which are
    enforced exactly through Lagrange multipliers.  ``efforts`` are the total actuation
    efforts; they default to ``state.lam``.
    """
    body = elastic_body(mesh, material)
    n = mesh.n_dofs
    free = body.free
    P = np.zeros(n) if loads is None else np.asarray(loads, float).copy()
    P[~free] = 0.0
    lam = state.lam if efforts is None else np.asarray(efforts, float)
    q = np.array(state.q, float)
    nb = 0 if constraints is None else constraints.n_bilateral
    mu = np.zeros(nb) if len(state.multipliers) != nb else np.array(state.multipliers, float)
    fi = np.nonzero(free)[0]

    def residual(q, mu):
        r = P - body.forces(q)
        g = np.zeros(0)
        if constraints is not None:
            r += constraints.actuation_load(q, lam)
            if nb:
                HL = constraints.bilateral_rows(q)
                r += HL.T @ mu
                g = constraints.bilateral_residual(q)
        r[~free] = 0.0
        return r, g

    r, g = residual(q, mu)
    it = 0
    while True:
        rn = max(np.abs(r).max(initial=0.0), 0.0)
        gn = np.abs(g).max(initial=0.0)
        if rn < tol and gn < length_tol:
            break
        if it >= max_iter:
            raise NonConvergence(f"residual {rn:.3e} N after {it} Newton iterations")
        A = body.tangent(q, project=False)
        if constraints is not None:
            A = A - constraints.actuation_jacobian(q, lam)
            if nb:
                A = A - constraints.bilateral_hessian(q, mu)
        A = A.tocsr()[fi][:, fi]
        if nb:
            HL = constraints.bilateral_rows(q).tocsc()[:, fi]
            M = sp.bmat([[A, -HL.T], [HL, None]], format="csc")
            rhs = np.concatenate([r[fi], -g])
        else:
            M, rhs = A, r[fi]
        lu = _factor(M)
        sol = lu.solve(rhs)
        dq = np.zeros(n)
        dq[fi] = sol[:len(fi)]
        dmu = sol[len(fi):]
        # natural monotonicity test: the simplified Newton increment at the trial point,
        # computed with the same factorization, must shrink
        size = np.linalg.norm(sol)
        step = 1.0
        for _ in range(30):
            try:
                q_try, mu_try = q + step * dq, mu + step * dmu
                r_try, g_try = residual(q_try, mu_try)
                trial = lu.solve(np.concatenate([r_try[fi], -g_try]) if nb else r_try[fi])
                if np.linalg.norm(trial) <= (1.0 - 0.25 * step) * size or step < 1e-3:
                    break
            except DegenerateElement:
                if step < 1e-3:
                    raise
            step *= 0.5
        q, mu, r, g = q_try, mu_try, r_try, g_try
        it += 1
    q[~free] = mesh.rest_q[~free]
    return SystemState(q, np.array(state.q, float), np.array(lam, float), mu, it)
