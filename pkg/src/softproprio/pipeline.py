"""End-to-end pipelines: forward recording, shape reconstruction and error metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeMismatch, SolverError, ValidationError
from .fem import SystemState, quasi_static_step
from .inverse import InverseModel
from .scenario import Device, Schedule, build_device, config_hash, make_schedule, pressure_effort
from .sensor import SensorRecording, curvature_profile, simulate_resistance, window_stack


@dataclass
class Recording:
    """Ground-truth frames of one forward run."""

    times: np.ndarray
    pressure_kpa: np.ndarray
    forces_n: np.ndarray  # (T, n_sites)
    markers: np.ndarray  # (T, n_markers, 2) mm
    resistances: np.ndarray  # (T, m) ohm
    shapes: np.ndarray  # (T, k) rad or mm, relative to rest
    max_length_error: float = 0.0  # worst relative length-layer error over all frames

    def __len__(self):
        return len(self.times)

    def as_sensor_recording(self, split="train", name="") -> SensorRecording:
        return SensorRecording(self.resistances, self.shapes, split, name)


def _seeds(seed):
    schedule_seed, noise_seed = np.random.SeedSequence(int(seed)).spawn(2)
    return schedule_seed, noise_seed


def scenario_schedule(device: Device, seed=None) -> Schedule:
    seed = device.config.get("seed", 0) if seed is None else seed
    return make_schedule(device.config.get("schedule", {}), len(device.forward.forces), _seeds(seed)[0])


def run_forward(device: Device, schedule: Schedule = None, seed=None) -> Recording:
    """Step the device through ``schedule`` and record markers, resistances and shapes."""
    seed = device.config.get("seed", 0) if seed is None else seed
    if schedule is None:
        schedule = scenario_schedule(device, seed)
    rng = np.random.default_rng(_seeds(seed)[1])
    c = device.forward
    npr = c.n_pressure
    state = SystemState.at_rest(device.mesh, c.n_actuation, c.n_bilateral)
    T = len(schedule)
    markers = np.zeros((T, len(device.markers), 2))
    R = np.zeros((T, device.layout.n_segments))
    S = np.zeros((T, device.estimation.n_effector_rows))
    worst = 0.0
    for i in range(T):
        efforts = np.concatenate([np.full(npr, pressure_effort(device, schedule.pressure_kpa[i])),
                                  schedule.forces_n[i]])
        try:
            state = quasi_static_step(state, device.mesh, device.material, device.loads, c, efforts)
        except SolverError as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc
        q = state.q
        markers[i] = device.markers.positions(device.mesh, q)
        kappa = curvature_profile(device.mesh, q, device.sensor_line)
        R[i] = simulate_resistance(device.layout, device.sensor_line.arc_positions, kappa, rng)
        S[i] = device.shape_values(q)
        if c.n_bilateral:
            worst = max(worst, float(np.abs(c.relative_length_errors(q)).max()))
    return Recording(schedule.times.copy(), schedule.pressure_kpa.copy(), schedule.forces_n.copy(),
                     markers, R, S, worst)


# -- reconstruction ---------------------------------------------------------------------

def predict_series(regressor, resistances) -> np.ndarray:
    """Shape prediction for every frame; the first frames reuse the earliest reading as history."""
    R = np.asarray(resistances, float)
    w = regressor.window_
    if R.shape[1] * w != regressor.n_features_in_:
        raise ShapeMismatch(f"regressor expects {regressor.n_features_in_ // w} segments, got {R.shape[1]}")
    padded = np.vstack([np.repeat(R[:1], w - 1, axis=0), R])
    return regressor.predict(window_stack(padded, w).reshape(len(R), -1))


@dataclass
class Reconstruction:
    markers: np.ndarray  # (T, n_markers, 2)
    forces_n: np.ndarray  # (T, n_estimation_sites)
    newton_iterations: int = 0
    ill_conditioned_steps: int = 0


def reconstruct(device: Device, recording: Recording, shapes) -> Reconstruction:
    """Track the recording with the inverse model driven by per-frame shape vectors."""
    shapes = np.asarray(shapes, float)
    c = device.estimation
    if shapes.shape != (len(recording), c.n_effector_rows):
        raise ShapeMismatch(f"expected shapes of shape {(len(recording), c.n_effector_rows)}, got {shapes.shape}")
    est = device.config.get("estimation", {})
    model = InverseModel(device.mesh, device.material, c, device.loads, force_bounds=device.force_bounds,
                         ridge=est.get("ridge", 1e-9), refine_iterations=est.get("refine_iterations", 3))
    T = len(recording)
    markers = np.zeros((T, len(device.markers), 2))
    forces = np.zeros((T, len(c.forces)))
    prev_shape = np.zeros(c.n_effector_rows)
    prev_p = np.zeros(c.n_pressure)
    for i in range(T):
        p = np.full(c.n_pressure, pressure_effort(device, recording.pressure_kpa[i]))
        try:
            model.estimate_step(shapes[i] - prev_shape, p - prev_p)
        except SolverError as exc:
            raise type(exc)(f"frame {i}: {exc}") from exc
        prev_shape, prev_p = shapes[i], p
        markers[i] = device.markers.positions(device.mesh, model.state.q)
        forces[i] = model.forces
    return Reconstruction(markers, forces, model.newton_iterations, model.ill_conditioned_steps)


@dataclass
class MetricsReport:
    device: str
    shape_source: str  # exact | learned | recorded
    frames: int
    marker_error_pct: list  # mean over frames; None where excluded
    marker_max_error_pct: list
    excluded_markers: list
    exclusion_reason: str
    named_markers: dict
    force_error_pct_of_range: float | None
    force_range_n: float
    runtime: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def marker_errors_pct(device: Device, estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame marker errors normalized by each marker's rest distance to the base reference.

    Returns ``(errors (T, n) in %, excluded mask)``; excluded markers carry NaN.
    """
    rest = device.markers.positions(device.mesh, device.mesh.rest_q)
    norm = np.linalg.norm(rest - device.reference_point, axis=1)
    excluded = norm < 1e-9
    err = np.linalg.norm(np.asarray(estimated) - np.asarray(truth), axis=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = 100.0 * err / norm
    pct[:, excluded] = np.nan
    return pct, excluded


def force_error_pct(estimated, measured) -> tuple[float | None, float]:
    """``mean|est - meas| / (max(meas) - min(meas))`` in %, or None for a constant trace."""
    measured = np.asarray(measured, float)
    rng = float(measured.max() - measured.min()) if len(measured) else 0.0
    if rng <= 1e-12:
        return None, rng
    return float(100.0 * np.mean(np.abs(np.asarray(estimated) - measured)) / rng), rng


def score(device: Device, recording: Recording, rec: Reconstruction, shape_source: str):
    """Metrics report plus per-frame traces for one reconstruction."""
    pct, excluded = marker_errors_pct(device, rec.markers, recording.markers)
    measured = recording.forces_n.sum(axis=1)
    estimated = rec.forces_n.sum(axis=1)
    f_err, f_range = force_error_pct(estimated, measured)
    mean = [None if excluded[j] else float(np.mean(pct[:, j])) for j in range(pct.shape[1])]
    worst = [None if excluded[j] else float(np.max(pct[:, j])) for j in range(pct.shape[1])]
    named = {k: int(v) for k, v in device.config["markers"].get("named", {}).items()}
    named.setdefault("tip", pct.shape[1] - 1)
    report = MetricsReport(
        device=device.device, shape_source=shape_source, frames=len(recording),
        marker_error_pct=mean, marker_max_error_pct=worst,
        excluded_markers=[int(j) for j in np.nonzero(excluded)[0]],
        exclusion_reason="marker coincides with the base reference point, so its normalizer is zero",
        named_markers=named, force_error_pct_of_range=f_err, force_range_n=f_range,
        runtime={"newton_iterations": rec.newton_iterations,
                 "ill_conditioned_steps": rec.ill_conditioned_steps})
    traces = {"t": recording.times, "measured_force_n": measured, "estimated_force_n": estimated,
              "site_forces_n": rec.forces_n, "marker_error_pct": pct}
    return report, traces


def reconstruct_and_score(device: Device, recording: Recording, regressor=None, exact_shape=False):
    """Reconstruct from predicted (or exact) shapes and score against the recording."""
    if exact_shape:
        shapes, source = recording.shapes, "exact"
    else:
        if regressor is None:
            raise ValidationError("a regressor is required unless exact shapes are requested")
        shapes, source = predict_series(regressor, recording.resistances), "learned"
    return score(device, recording, reconstruct(device, recording, shapes), source)


# -- files ------------------------------------------------------------------------------

RECORDING_CSV = "recording.csv"
MANIFEST_JSON = "manifest.json"


def _fmt(v) -> str:
    return repr(float(v))


def save_recording(recording: Recording, directory, config: dict, seed) -> Path:
    """Write ``recording.csv`` and ``manifest.json`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    n_sites = recording.forces_n.shape[1]
    n_markers = recording.markers.shape[1]
    m, k = recording.resistances.shape[1], recording.shapes.shape[1]
    header = (["t", "pressure_kpa"] + [f"f_{i}" for i in range(n_sites)]
              + [f"m_{i}_{a}" for i in range(n_markers) for a in "xy"]
              + [f"r_{j}" for j in range(m)] + [f"s_{j}" for j in range(k)])
    with open(d / RECORDING_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(recording)):
            row = [recording.times[i], recording.pressure_kpa[i], *recording.forces_n[i],
                   *recording.markers[i].ravel(), *recording.resistances[i], *recording.shapes[i]]
            w.writerow([_fmt(v) for v in row])
    manifest = {
        "version": 1, "scenario_sha256": config_hash(config), "scenario": config, "seed": int(seed),
        "frames": len(recording), "force_sites": n_sites, "markers": n_markers,
        "resistance_segments": m, "shape_values": k,
        "units": {"t": "s", "pressure": "kPa", "f": "N", "m": "mm", "r": "ohm",
                  "s": "rad" if config["sensor"].get("mode", "orientation") == "orientation" else "mm"},
        "max_relative_length_error": recording.max_length_error,
    }
    (d / MANIFEST_JSON).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def load_recording(directory) -> tuple[Recording, dict]:
    d = Path(directory)
    try:
        manifest = json.loads((d / MANIFEST_JSON).read_text())
        with open(d / RECORDING_CSV, newline="") as fh:
            rows = list(csv.reader(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read recording {d}: {exc}") from None
    if config_hash(manifest["scenario"]) != manifest["scenario_sha256"]:
        raise ValidationError(f"scenario hash mismatch in {d / MANIFEST_JSON}")
    header = rows[0]
    body = np.array(rows[1:], dtype=float).reshape(-1, len(header))
    col = {h: i for i, h in enumerate(header)}

    def cols(prefix):
        return body[:, [i for h, i in col.items() if h.startswith(prefix)]]

    T = len(body)
    rec = Recording(body[:, col["t"]], body[:, col["pressure_kpa"]], cols("f_"),
                    cols("m_").reshape(T, manifest["markers"], 2), cols("r_"), cols("s_"),
                    manifest.get("max_relative_length_error", 0.0))
    return rec, manifest


def device_for_recording(manifest: dict) -> Device:
    return build_device(manifest["scenario"])


def write_traces_csv(path, traces: dict) -> None:
    sites = np.atleast_2d(traces["site_forces_n"])
    pct = traces["marker_error_pct"]
    header = (["t", "measured_force_n", "estimated_force_n"] + [f"est_f_{i}" for i in range(sites.shape[1])]
              + [f"marker_err_pct_{j}" for j in range(pct.shape[1])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(traces["t"])):
            row = [traces["t"][i], traces["measured_force_n"][i], traces["estimated_force_n"][i],
                   *sites[i], *pct[i]]
            w.writerow(["nan" if not np.isfinite(v) else _fmt(v) for v in row])
