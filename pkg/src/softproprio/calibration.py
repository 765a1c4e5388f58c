"""Scalar parameter identification by golden-section search.

Two objectives are provided: marker position error over a pressure sweep (for Young's
modulus) and force-trace error (for a factor that scales stiffness and pressure together).
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoMinimumInInterval, ValidationError
from .fem import SystemState, quasi_static_step
from .pipeline import Recording, reconstruct
from .scenario import Device, build_device, pressure_effort

log = logging.getLogger(__name__)

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
FLAT_TOL = 1e-6


@dataclass
class CalibrationResult:
    young_modulus: float  # Pa
    scaling_factor: float
    residual: float
    trace: list = field(default_factory=list)  # (parameter, objective) in evaluation order

    def __post_init__(self):
        if not (self.young_modulus > 0 and self.scaling_factor > 0):
            raise ValidationError("calibrated parameters must be positive")

    def to_json(self) -> dict:
        return {"young_modulus_pa": self.young_modulus, "scaling_factor": self.scaling_factor,
                "residual": self.residual, "trace": [[float(p), float(v)] for p, v in self.trace]}


def golden_section(f, lo: float, hi: float, rel_tol: float = 0.005):
    """Minimize a unimodal scalar function on ``[lo, hi]``.

    Stops when the bracket is narrower than ``rel_tol`` times the initial interval.
    Raises :class:`NoMinimumInInterval` when the best value sits at an endpoint (the
    objective is monotone on the interval) or when the objective is flat.
    Returns ``(x_best, f_best, trace)``.
    """
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValidationError("search interval must satisfy lo < hi")
    trace = []

    def ev(x):
        v = float(f(x))
        trace.append((float(x), v))
        log.debug("golden section f(%.6g) = %.6g", x, v)
        return v

    a, b = lo, hi
    c, d = b - INV_PHI * (b - a), a + INV_PHI * (b - a)
    fc, fd = ev(c), ev(d)
    width = rel_tol * (hi - lo)
    while b - a > width:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - INV_PHI * (b - a)
            fc = ev(c)
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * (b - a)
            fd = ev(d)
    x, fx = (c, fc) if fc <= fd else (d, fd)
    f_lo, f_hi = ev(lo), ev(hi)
    values = np.array([v for _, v in trace])
    if values.max() - values.min() <= FLAT_TOL * (1.0 + abs(values.max())):
        raise NoMinimumInInterval("objective is flat over the interval", lo)
    if f_lo <= fx:
        raise NoMinimumInInterval("objective decreases toward the lower end of the interval", lo)
    if f_hi <= fx:
        raise NoMinimumInInterval("objective decreases toward the upper end of the interval", hi)
    return x, fx, trace


def _with_config(device: Device, young_modulus=None, pressure_scale=None) -> Device:
    cfg = copy.deepcopy(device.config)
    if young_modulus is not None:
        cfg["material"]["young_modulus_pa"] = float(young_modulus)
    if pressure_scale is not None:
        cfg["pressure_scale"] = float(pressure_scale)
    return build_device(cfg)


def sweep_markers(device: Device, pressures_kpa) -> np.ndarray:
    """Marker positions ``(L, n_markers, 2)`` at each pressure level, applied in the given order."""
    c = device.forward
    state = SystemState.at_rest(device.mesh, c.n_actuation, c.n_bilateral)
    out = []
    for p in pressures_kpa:
        efforts = np.concatenate([np.full(c.n_pressure, pressure_effort(device, p)), np.zeros(len(c.forces))])
        state = quasi_static_step(state, device.mesh, device.material, device.loads, c, efforts)
        out.append(device.markers.positions(device.mesh, state.q))
    return np.array(out)


def sweep_error(device: Device, pressures_kpa, reference, weights=None) -> float:
    """Mean (weighted) marker distance in mm between the model and the references."""
    err = np.linalg.norm(sweep_markers(device, pressures_kpa) - np.asarray(reference, float), axis=2)
    if weights is not None:
        err = err * np.asarray(weights, float)
    return float(err.mean())


def identify_young_modulus(device: Device, pressures_kpa, reference_markers, interval_pa,
                           rel_tol: float = 0.005, weights=None) -> CalibrationResult:
    """Young's modulus minimizing mean marker error over a pressure sweep."""
    pressures_kpa = np.asarray(pressures_kpa, float)
    reference = np.asarray(reference_markers, float)
    if len(np.unique(pressures_kpa)) < 3:
        raise ValidationError("a sweep needs at least three distinct pressure levels")
    if reference.shape != (len(pressures_kpa), len(device.markers), 2):
        raise ValidationError(f"reference markers must have shape {(len(pressures_kpa), len(device.markers), 2)}")
    if device.forward.n_pressure == 0:
        raise ValidationError("device has no pressure chamber to sweep")
    lo, hi = (float(v) for v in interval_pa)
    if not 0 < lo < hi:
        raise ValidationError("interval must be positive with lo < hi")
    x, fx, trace = golden_section(
        lambda e: sweep_error(_with_config(device, young_modulus=e), pressures_kpa, reference, weights),
        lo, hi, rel_tol)
    return CalibrationResult(x, 1.0, fx, trace)


def force_trace_error(device: Device, recordings, shapes=None) -> float:
    """Mean ``|estimated - measured|`` total force over all frames of all traces (N)."""
    errs = []
    for i, rec in enumerate(recordings):
        s = rec.shapes if shapes is None else shapes[i]
        est = reconstruct(device, rec, s).forces_n.sum(axis=1)
        errs.append(np.abs(est - rec.forces_n.sum(axis=1)))
    return float(np.concatenate(errs).mean())


def calibrate_scaling_factor(device: Device, recordings, interval, rel_tol: float = 0.005,
                             shapes=None) -> CalibrationResult:
    """Factor ``s`` multiplying both Young's modulus and pressure inputs of ``device``.

    ``recordings`` are validation traces with measured forces; ``shapes`` optionally replaces
    their recorded shape vectors (e.g. with regressor predictions).
    """
    recordings = list(recordings)
    if not recordings:
        raise ValidationError("need at least one validation trace")
    if not all(isinstance(r, Recording) for r in recordings):
        raise ValidationError("validation traces must be recordings")
    lo, hi = (float(v) for v in interval)
    if not 0 < lo < hi:
        raise ValidationError("interval must be positive with lo < hi")
    e0 = device.material.young_modulus
    p0 = device.pressure_scale

    def objective(s):
        return force_trace_error(_with_config(device, young_modulus=e0 * s, pressure_scale=p0 * s),
                                 recordings, shapes)

    x, fx, trace = golden_section(objective, lo, hi, rel_tol)
    return CalibrationResult(e0 * x, x, fx, trace)
