"""Scenario configuration: device geometry, material, sensor, constraints and load schedule.

Configs are JSON with a ``version`` field; units are spelled out in key names
(``length_mm``, ``pressure_kpa``, ``force_n``).  ``preset:strip`` and ``preset:finger``
name the bundled scenarios.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .constraints import (KPA_TO_N_PER_MM2, ConstraintSet, ForceConstraint, LengthConstraint,
                          PoseEffector, PressureConstraint)
from .errors import ValidationError
from .fem import Material, gravity_loads
from .geometry import (Centerline, TriMesh, barycentric_coords, load_mesh, polyline_points,
                       sample_centerline, strip_mesh, structured_mesh)
from .sensor import FRAME_RATE_HZ, SensorLayout

CONFIG_VERSION = 1


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data) -> str:
    return hashlib.sha256(canonical_json(data).encode()).hexdigest()


def load_preset(name: str) -> dict:
    try:
        text = resources.files("softproprio.presets").joinpath(f"{name}.json").read_text()
    except FileNotFoundError:
        raise ValidationError(f"no bundled preset named {name!r}") from None
    return resolve_scenario(json.loads(text))


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_scenario(spec, base_dir=None) -> dict:
    """Scenario dict from a preset reference, a file path or an inline dict.

    An inline dict with an ``extends`` key is merged over that preset/file.
    """
    if isinstance(spec, str):
        if spec.startswith("preset:"):
            data = load_preset(spec.split(":", 1)[1])
        else:
            path = Path(spec)
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            try:
                data = json.loads(path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ValidationError(f"cannot read scenario {spec}: {exc}") from None
            base_dir = path.parent
        return resolve_scenario(data, base_dir)
    if not isinstance(spec, dict):
        raise ValidationError("scenario must be an object, a path or 'preset:<name>'")
    if "extends" in spec:
        base = resolve_scenario(spec["extends"], base_dir)
        rest = {k: v for k, v in spec.items() if k != "extends"}
        return deep_merge(base, rest)
    data = copy.deepcopy(spec)
    if base_dir is not None and isinstance(data.get("mesh"), dict) and "path" in data["mesh"]:
        data["mesh"]["path"] = str((Path(base_dir) / data["mesh"]["path"]).resolve())
    return data


@dataclass
class Device:
    """A scenario compiled into meshes, constraint sets and sensing geometry."""

    config: dict
    mesh: TriMesh
    material: Material
    loads: np.ndarray
    forward: ConstraintSet  # pressure, length layer, schedule force sites
    estimation: ConstraintSet  # pressure, length layer, candidate force sites, effectors
    markers: Centerline
    reference_point: np.ndarray
    sensor_line: Centerline
    layout: SensorLayout
    mode: str
    force_bounds: tuple

    @property
    def device(self) -> str:
        return self.config["device"]

    @property
    def pressure_scale(self) -> float:
        return float(self.config.get("pressure_scale", 1.0))

    def shape_values(self, q) -> np.ndarray:
        """Nominal shape vector relative to the rest configuration (rad or mm)."""
        c = self.estimation
        return (c.effector_values(q) - c.effector_values(self.mesh.rest_q)) / self._row_scale

    @property
    def _row_scale(self) -> np.ndarray:
        c = self.estimation
        return np.concatenate([np.full(e.width, c.orientation_scale if e.kind == "orientation" else 1.0)
                               for e in c.effectors])

    def with_stiffness_scale(self, factor: float) -> "Device":
        """Copy with Young's modulus multiplied by ``factor`` (pressure scale tracked separately)."""
        cfg = copy.deepcopy(self.config)
        cfg["material"]["young_modulus_pa"] *= factor
        return build_device(cfg)


def _mesh_from(cfg) -> TriMesh:
    kind = cfg.get("kind", "strip")
    if kind == "strip":
        return strip_mesh(cfg["length_mm"], cfg["height_mm"], cfg.get("rows", 2), cfg.get("cols", 24),
                          cfg.get("pattern", "uniform"))
    if kind == "grid":
        holes = [tuple(h) for h in cfg.get("holes_mm", [])]
        return structured_mesh(cfg["xs_mm"], cfg["ys_mm"], holes=holes, pattern=cfg.get("pattern", "uniform"))
    if kind == "file":
        return load_mesh(cfg["path"])
    raise ValidationError(f"unknown mesh kind {kind!r}")


def _cavity_loops(mesh: TriMesh):
    """Boundary loops that run clockwise, i.e. cavities inside the outer boundary."""
    for loop in mesh.boundary_loops():
        pts = mesh.vertices[loop]
        x, y = pts[:, 0], pts[:, 1]
        if 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) < 0:
            yield loop, pts


def _point_in_polygon(p, pts) -> bool:
    inside = False
    for (x1, y1), (x2, y2) in zip(pts, np.roll(pts, -1, axis=0)):
        if (y1 > p[1]) != (y2 > p[1]) and p[0] < x1 + (p[1] - y1) * (x2 - x1) / (y2 - y1):
            inside = not inside
    return inside


def _chambers(mesh: TriMesh, cfg) -> list:
    """One pressure constraint per cavity; all cavities share the supply pressure.

    ``inside_points_mm`` selects cavities by an interior point; ``all_cavities`` takes every one.
    """
    loops = list(_cavity_loops(mesh))
    if cfg.get("all_cavities", False):
        if not loops:
            raise ValidationError("mesh has no cavities")
        return [PressureConstraint.from_boundary_loop(mesh, loop) for loop, _ in loops]
    out = []
    for target in cfg.get("inside_points_mm", []):
        hit = [loop for loop, pts in loops if _point_in_polygon(np.asarray(target, float), pts)]
        if not hit:
            raise ValidationError(f"no cavity encloses {list(target)}")
        out.append(PressureConstraint.from_boundary_loop(mesh, hit[0]))
    if not out:
        raise ValidationError("pressure_chamber selects no cavity")
    return out


def _unit(v):
    v = np.asarray(v, float)
    return tuple(v / np.linalg.norm(v))


def _force_sites(mesh, sites):
    return [ForceConstraint(barycentric_coords(mesh, s["position_mm"]), _unit(s.get("direction", (0.0, 1.0))))
            for s in sites]


def build_device(config: dict) -> Device:
    cfg = config
    if cfg.get("version") != CONFIG_VERSION:
        raise ValidationError(f"config version must be {CONFIG_VERSION}")
    if cfg.get("device") not in ("strip", "finger"):
        raise ValidationError("device must be 'strip' or 'finger'")
    mesh = _mesh_from(cfg["mesh"])
    m = cfg["material"]
    material = Material(m["young_modulus_pa"], m.get("poisson_ratio", 0.45), m["thickness_mm"])
    loads = np.zeros(mesh.n_dofs)
    if m.get("density_kg_per_mm3") and m.get("gravity", False):
        loads = gravity_loads(mesh, material, m["density_kg_per_mm3"])

    con = cfg.get("constraints", {})
    pressures = _chambers(mesh, con["pressure_chamber"]) if con.get("pressure_chamber") else []
    if pressures and cfg["device"] == "strip":
        raise ValidationError("the strip device has no pressure chamber")
    lengths = []
    if con.get("length_layer"):
        lay = con["length_layer"]
        pts, _ = polyline_points(lay["path_mm"], lay["points"])
        lengths.append(LengthConstraint.from_anchors(mesh, [barycentric_coords(mesh, p) for p in pts]))

    sens = cfg["sensor"]
    mode = sens.get("mode", "orientation")
    if mode not in ("orientation", "position"):
        raise ValidationError("sensor mode must be 'orientation' or 'position'")
    shape_line = sample_centerline(mesh, sens["path_mm"], sens["shape_points"])
    effectors = [PoseEffector(a, mode) for a in shape_line.anchors]
    sensor_line = sample_centerline(mesh, sens["path_mm"], sens["curvature_points"])
    layout = SensorLayout(tuple(sens["tap_arcs_mm"]), tuple(sens.get("base_resistance_ohm", ())),
                          sens.get("curvature_gain_ohm_per_rad", 5000.0), sens.get("coupling", 0.15),
                          sens.get("noise_std_ohm", 20.0))
    if layout.tap_arcs[-1] > sensor_line.arc_positions[-1] + 1e-9:
        raise ValidationError("sensor taps extend past the sensor path")

    est = cfg.get("estimation", {})
    forward = ConstraintSet(mesh, material.thickness, pressures, _force_sites(mesh, cfg["loads"]["sites"]), lengths)
    estimation = ConstraintSet(mesh, material.thickness, pressures, _force_sites(mesh, est["force_sites"]),
                               lengths, effectors, float(est.get("orientation_scale_mm", 1.0)))
    mk = cfg["markers"]
    markers = sample_centerline(mesh, mk["path_mm"], mk["count"])
    ref = np.asarray(mk.get("reference_point_mm", mk["path_mm"][0]), float)
    return Device(cfg, mesh, material, loads, forward, estimation, markers, ref, sensor_line, layout, mode,
                  tuple(est.get("force_bounds_n", (-50.0, 50.0))))


# -- load schedules -------------------------------------------------------------------

@dataclass
class Schedule:
    """Per-frame applied pressure (kPa) and force magnitudes (N) at the forward sites."""

    times: np.ndarray
    pressure_kpa: np.ndarray
    forces_n: np.ndarray  # (T, n_sites)

    def __len__(self):
        return len(self.times)


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _interp_keyframes(times, key_t, key_v, smooth):
    key_t = np.asarray(key_t, float)
    key_v = np.asarray(key_v, float).reshape(len(key_t), -1)
    if np.any(np.diff(key_t) <= 0):
        raise ValidationError("schedule times must increase strictly")
    out = np.empty((len(times), key_v.shape[1]))
    seg = np.clip(np.searchsorted(key_t, times, side="right") - 1, 0, max(len(key_t) - 2, 0))
    if len(key_t) == 1:
        return np.repeat(key_v, len(times), axis=0)
    t0, t1 = key_t[seg], key_t[seg + 1]
    u = np.clip((times - t0) / (t1 - t0), 0.0, 1.0)
    if smooth:
        u = _smoothstep(u)
    out[:] = key_v[seg] + (key_v[seg + 1] - key_v[seg]) * u[:, None]
    return out


def make_schedule(cfg: dict, n_sites: int, seed: int) -> Schedule:
    kind = cfg.get("kind", "keyframes")
    rate = float(cfg.get("rate_hz", FRAME_RATE_HZ))
    if kind == "keyframes":
        frames = cfg.get("frames", [])
        if not frames:
            return Schedule(np.zeros(0), np.zeros(0), np.zeros((0, n_sites)))
        kt = [f["t_s"] for f in frames]
        kp = [f.get("pressure_kpa", 0.0) for f in frames]
        kf = [f.get("force_n", [0.0] * n_sites) for f in frames]
        if any(len(f) != n_sites for f in kf):
            raise ValidationError(f"each keyframe needs {n_sites} force values")
        smooth = False
    elif kind == "random":
        rng = np.random.default_rng(seed)
        duration = float(cfg["duration_s"])
        hold = float(cfg.get("segment_s", 1.0))
        n_keys = int(np.floor(duration / hold)) + 1
        kt = np.arange(n_keys) * hold
        lo_p, hi_p = cfg.get("pressure_kpa", [0.0, 0.0])
        fmax = float(cfg.get("max_force_n", 1.0))
        active = int(cfg.get("active_sites", 1))
        p_rest = float(cfg.get("rest_probability", 0.3))
        kp, kf = [], []
        for i in range(n_keys):
            kp.append(rng.uniform(lo_p, hi_p))
            f = np.zeros(n_sites)
            if i > 0 and rng.random() >= p_rest and n_sites:
                sites = rng.choice(n_sites, size=min(active, n_sites), replace=False)
                f[sites] = rng.uniform(0.0, fmax, len(sites))
            kf.append(f)
        kp[0] = kp[0] if cfg.get("start_pressurized", False) else 0.0
        smooth = True
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    kt = np.asarray(kt, float)
    n = int(round((kt[-1] - kt[0]) * rate)) + 1
    times = kt[0] + np.arange(n) / rate
    p = _interp_keyframes(times, kt, kp, smooth)[:, 0]
    f = _interp_keyframes(times, kt, kf, smooth) if n_sites else np.zeros((n, 0))
    return Schedule(times, p, f)


def pressure_effort(device: Device, pressure_kpa) -> np.ndarray:
    """Pressure row effort in N/mm^2 for a reading in kPa."""
    return np.asarray(pressure_kpa, float) * KPA_TO_N_PER_MM2 * device.pressure_scale
