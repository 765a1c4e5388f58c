"""Inverse problem: find effort changes that best explain an observed shape change.

Each step solves::

    min  ||W dlam - d||^2 + ridge ||dlam||^2
    s.t. dlam_i = v_i          (known actuation, e.g. chamber pressure)
         lo_i <= dlam_i <= hi_i

with a primal active-set method on the box after eliminating the equality rows.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSet, compute_compliance
from .errors import IllConditioned, NonConvergence, ValidationError
from .fem import Material, SystemState, elastic_body, project_fixed, quasi_static_step

log = logging.getLogger(__name__)

DEFAULT_RIDGE = 1e-9
COND_LIMIT = 1e12


@dataclass
class QpProblem:
    W: np.ndarray
    delta_target: np.ndarray
    bounds: np.ndarray  # (n, 2) rows of [min, max]
    equality: dict = field(default_factory=dict)
    regularization: float = DEFAULT_RIDGE

    def __post_init__(self):
        self.W = np.atleast_2d(np.asarray(self.W, float))
        self.delta_target = np.asarray(self.delta_target, float).ravel()
        self.bounds = np.asarray(self.bounds, float).reshape(-1, 2)
        self.equality = {int(k): float(v) for k, v in self.equality.items()}
        m, n = self.W.shape
        if len(self.delta_target) != m:
            raise ValidationError("target length must equal the number of rows of W")
        if len(self.bounds) != n:
            raise ValidationError("one [min, max] pair per column of W is required")
        if np.any(self.bounds[:, 0] > self.bounds[:, 1]):
            raise ValidationError("bounds must satisfy min <= max")
        for k, v in self.equality.items():
            if not 0 <= k < n:
                raise ValidationError(f"equality row {k} out of range")
            if not self.bounds[k, 0] <= v <= self.bounds[k, 1]:
                raise ValidationError(f"equality value for row {k} lies outside its bounds")
        if self.regularization < 0:
            raise ValidationError("regularization must be non-negative")

    @property
    def dim(self) -> int:
        return self.W.shape[1]

    def objective(self, x) -> float:
        """Penalized objective, including the ridge term."""
        r = self.W @ x - self.delta_target
        return float(r @ r + self.regularization * (x @ x))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * (self.W.T @ (self.W @ x - self.delta_target) + self.regularization * x)


@dataclass
class QpSolution:
    delta_lambda: np.ndarray
    objective: float  # ||W dlam - d||^2, without the ridge term
    active_set: tuple  # (row, -1 lower | +1 upper) for rows held at a bound
    iterations: int
    kkt_residual: float
    ill_conditioned: bool = False


def _kkt(grad, status, free_mask):
    res = np.zeros_like(grad)
    res[free_mask] = np.abs(grad[free_mask])
    lo = status == -1
    hi = status == 1
    res[lo] = np.maximum(0.0, -grad[lo])
    res[hi] = np.maximum(0.0, grad[hi])
    return float(res.max(initial=0.0))


def solve_qp(p: QpProblem) -> QpSolution:
    n = p.dim
    x_full = np.zeros(n)
    eq = np.array(sorted(p.equality), dtype=np.int64)
    for k in eq:
        x_full[k] = p.equality[k]
    var = np.array([k for k in range(n) if k not in p.equality], dtype=np.int64)
    nv = len(var)
    lo, hi = p.bounds[var, 0], p.bounds[var, 1]
    b = p.delta_target - p.W[:, eq] @ x_full[eq]
    sq = np.sqrt(p.regularization)
    A = np.vstack([p.W[:, var], sq * np.eye(nv)])
    rhs = np.concatenate([b, np.zeros(nv)])

    x = np.clip(np.zeros(nv), lo, hi)
    status = np.zeros(nv, dtype=np.int64)  # -1 at lower, +1 at upper, 0 free
    status[lo == hi] = -1
    max_changes = 100 * max(n, 1)
    changes = 0
    scale = max(1.0, float(np.abs(A).max(initial=0.0)) ** 2 * max(1.0, float(np.abs(rhs).max(initial=0.0))))
    tol = 1e-13 * scale
    ill = False
    while True:
        free = np.nonzero(status == 0)[0]
        if len(free):
            fixed = status != 0
            z = np.linalg.lstsq(A[:, free], rhs - A[:, fixed] @ x[fixed], rcond=None)[0]
        else:
            z = np.zeros(0)
        p_step = z - x[free]
        below = z < lo[free]
        above = z > hi[free]
        if not (below.any() or above.any()):
            x[free] = z
            grad = A.T @ (A @ x - rhs)
            mult = np.where(status == -1, grad, np.where(status == 1, -grad, np.inf))
            mult[lo == hi] = np.inf
            k = int(np.argmin(mult)) if nv else 0
            if nv == 0 or mult[k] >= -tol:
                break
            status[k] = 0
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.full(len(free), np.inf)
                t[below] = (lo[free][below] - x[free][below]) / p_step[below]
                t[above] = (hi[free][above] - x[free][above]) / p_step[above]
            alpha = float(np.clip(t.min(), 0.0, 1.0))
            x[free] = x[free] + alpha * p_step
            blocking = free[np.nonzero(t <= t.min() + 1e-15)[0]]
            for k in blocking:
                if below[free == k][0]:
                    x[k], status[k] = lo[k], -1
                else:
                    x[k], status[k] = hi[k], 1
        changes += 1
        if changes > max_changes:
            raise NonConvergence(f"active set did not settle after {max_changes} changes")

    free = np.nonzero(status == 0)[0]
    if len(free):
        s = np.linalg.svd(A[:, free], compute_uv=False)
        cond = (s[0] / s[-1]) ** 2 if s[-1] > 0 else np.inf
        if cond > COND_LIMIT:
            ill = True
            warnings.warn(f"reduced normal matrix condition {cond:.2e} exceeds {COND_LIMIT:.0e}",
                          IllConditioned, stacklevel=2)
    x_full[var] = x
    full_status = np.zeros(n, dtype=np.int64)
    full_status[var] = status
    grad = p.gradient(x_full)
    free_mask = np.zeros(n, bool)
    free_mask[var[status == 0]] = True
    kkt = _kkt(grad, full_status, free_mask)
    r = p.W @ x_full - p.delta_target
    active = tuple((int(var[i]), int(status[i])) for i in range(nv) if status[i] != 0)
    return QpSolution(x_full, float(r @ r), active, changes, kkt, ill)


def system_tangent(mesh, material: Material, constraints: ConstraintSet, q, lam, mu):
    """Consistent tangent of the constrained system, fixed DOFs projected."""
    body = elastic_body(mesh, material)
    K = body.tangent(q, project=False)
    if constraints.n_pressure:
        K = K - constraints.actuation_jacobian(q, lam)
    if constraints.n_bilateral:
        K = K - constraints.bilateral_hessian(q, mu)
    return project_fixed(K.tocsr(), body.free)


class InverseModel:
    """Tracks a deforming device by solving one inverse problem per sensed shape change.

    The goal effector values accumulate the supplied per-step shape deltas; each call
    re-linearizes around the current state up to ``refine_iterations`` extra times so the
    nonlinear equilibrium catches up with the goal.
    """

    def __init__(self, mesh, material: Material, constraints: ConstraintSet, loads=None, *,
                 force_bounds=(-50.0, 50.0), ridge: float = DEFAULT_RIDGE,
                 refine_iterations: int = 3, refine_tol: float = 1e-6, state: SystemState = None):
        self.mesh = mesh
        self.material = material
        self.constraints = constraints
        self.loads = loads
        self.force_bounds = tuple(float(v) for v in force_bounds)
        self.ridge = ridge
        self.refine_iterations = refine_iterations
        self.refine_tol = refine_tol
        self.state = state or SystemState.at_rest(mesh, constraints.n_actuation, constraints.n_bilateral)
        self.goal = constraints.effector_values(self.state.q)
        self.ill_conditioned_steps = 0
        self.newton_iterations = 0

    @property
    def forces(self) -> np.ndarray:
        """Accumulated external force efforts (N); ``force_bounds`` limit these totals."""
        return self.state.lam[self.constraints.n_pressure:].copy()

    def _scale_delta(self, shape_delta):
        c = self.constraints
        out = np.asarray(shape_delta, float).ravel().copy()
        if len(out) != c.n_effector_rows:
            from .errors import ShapeMismatch
            raise ShapeMismatch(f"shape delta has {len(out)} entries, effectors expect {c.n_effector_rows}")
        pos = 0
        for e in c.effectors:
            if e.kind == "orientation":
                out[pos] *= c.orientation_scale
            pos += e.width
        return out

    def estimate_step(self, shape_delta, known_pressure=None):
        """Return ``(force effort change, new state)`` for one sensed shape change.

        ``known_pressure`` holds the pressure-row changes (N/mm^2), imposed as equalities.
        """
        c = self.constraints
        npr = c.n_pressure
        dp = np.zeros(npr) if known_pressure is None else np.asarray(known_pressure, float).ravel()
        if len(dp) != npr:
            raise ValidationError(f"expected {npr} known pressure values")
        self.goal = self.goal + self._scale_delta(shape_delta)
        p_target = self.state.lam[:npr] + dp
        lo, hi = self.force_bounds
        total = np.zeros(c.n_actuation)
        state = self.state
        for it in range(1 + self.refine_iterations):
            q = state.q
            dd = self.goal - c.effector_values(q)
            remaining = p_target - state.lam[:npr]
            if it > 0 and np.abs(dd).max(initial=0.0) < self.refine_tol and not np.any(remaining):
                break
            f = state.lam[npr:]
            bounds = np.vstack([np.tile([-np.inf, np.inf], (npr, 1)),
                                np.column_stack([np.minimum(lo - f, 0.0), np.maximum(hi - f, 0.0)])])
            K = system_tangent(self.mesh, self.material, c, q, state.lam, state.multipliers)
            W = compute_compliance(K, c.effector_rows(q), c.actuation_rows(q), c.bilateral_rows(q))
            problem = QpProblem(W, dd, bounds, {i: remaining[i] for i in range(npr)}, self.ridge)
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", IllConditioned)
                sol = solve_qp(problem)
            if caught:
                self.ill_conditioned_steps += 1
            dlam = sol.delta_lambda
            dlam[:npr] = remaining  # bitwise equality on known rows
            total += dlam
            state = quasi_static_step(state, self.mesh, self.material, self.loads, c, state.lam + dlam)
            self.newton_iterations += state.iterations
        self.state = state
        return total[npr:], state
