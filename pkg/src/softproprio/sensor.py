"""Synthetic multi-tap resistive bend sensor and resistance/shape datasets."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import trapezoid

from .errors import DegenerateSegment, ValidationError
from .geometry import Centerline, TriMesh

FRAME_RATE_HZ = 30.0


@dataclass(frozen=True)
class SensorLayout:
    """Tap positions along the sensor centerline and the resistance model constants.

    Segment ``j`` spans ``tap_arcs[j]..tap_arcs[j+1]`` and reads
    ``base + gain * int|kappa| ds + coupling * mean(other gain terms) + noise``.
    ``curvature_gain`` is in ohm per radian of accumulated bend.
    """

    tap_arcs: tuple
    base_resistance: tuple = ()
    curvature_gain: float = 5000.0
    coupling: float = 0.15
    noise_std: float = 20.0

    def __post_init__(self):
        taps = tuple(float(v) for v in self.tap_arcs)
        if len(taps) < 2 or np.any(np.diff(taps) <= 0):
            raise ValidationError("tap_arcs must hold at least two strictly increasing positions")
        base = tuple(float(v) for v in self.base_resistance) or (10_000.0,) * (len(taps) - 1)
        if len(base) != len(taps) - 1 or min(base) <= 0:
            raise ValidationError("need one positive base resistance per segment")
        if not 0.0 <= self.coupling < 1.0:
            raise ValidationError("coupling must lie in [0, 1)")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be non-negative")
        object.__setattr__(self, "tap_arcs", taps)
        object.__setattr__(self, "base_resistance", base)

    @property
    def n_segments(self) -> int:
        return len(self.tap_arcs) - 1

    def to_json(self) -> dict:
        return {"tap_arcs_mm": list(self.tap_arcs), "base_resistance_ohm": list(self.base_resistance),
                "curvature_gain_ohm_per_rad": self.curvature_gain, "coupling": self.coupling,
                "noise_std_ohm": self.noise_std}

    @classmethod
    def from_json(cls, d: dict) -> "SensorLayout":
        return cls(tuple(d["tap_arcs_mm"]), tuple(d.get("base_resistance_ohm", ())),
                   d.get("curvature_gain_ohm_per_rad", 5000.0), d.get("coupling", 0.15),
                   d.get("noise_std_ohm", 20.0))


def circumcircle_curvature(points) -> np.ndarray:
    """Signed curvature (1/mm) through consecutive triples; endpoints copy their neighbours."""
    p = np.asarray(points, float)
    if len(p) < 3:
        raise ValidationError("curvature needs at least three points")
    a, b, c = p[:-2], p[1:-1], p[2:]
    ab, bc, ac = b - a, c - b, c - a
    la, lb, lc = (np.linalg.norm(v, axis=1) for v in (ab, bc, ac))
    if np.any(la <= 1e-12) or np.any(lb <= 1e-12) or np.any(lc <= 1e-12):
        raise DegenerateSegment("coincident centerline points")
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    k = 2.0 * cross / (la * lb * lc)
    return np.concatenate([[k[0]], k, [k[-1]]])


def curvature_profile(mesh: TriMesh, q, centerline: Centerline) -> np.ndarray:
    """Curvature samples at the centerline's arc positions under configuration ``q``."""
    return circumcircle_curvature(centerline.positions(mesh, q))


def segment_bend(arcs, curvature, taps) -> np.ndarray:
    """``int |kappa| ds`` over each tap segment, linear interpolation between samples."""
    arcs = np.asarray(arcs, float)
    k = np.abs(np.asarray(curvature, float))
    if taps[0] < arcs[0] - 1e-9 or taps[-1] > arcs[-1] + 1e-9:
        raise ValidationError("curvature profile does not cover the sensor span")
    out = np.empty(len(taps) - 1)
    for j, (a, b) in enumerate(zip(taps[:-1], taps[1:])):
        s = np.concatenate([[a], arcs[(arcs > a) & (arcs < b)], [b]])
        out[j] = trapezoid(np.interp(s, arcs, k), s)
    return out


def simulate_resistance(layout: SensorLayout, arcs, curvature, rng=None) -> np.ndarray:
    """One resistance reading (ohm) per segment; ``rng`` is a seed or ``numpy.random.Generator``."""
    gain = layout.curvature_gain * segment_bend(arcs, curvature, layout.tap_arcs)
    n = layout.n_segments
    r = np.asarray(layout.base_resistance) + gain
    if n > 1 and layout.coupling:
        r += layout.coupling * (gain.sum() - gain) / (n - 1)
    if layout.noise_std:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        r += rng.normal(0.0, layout.noise_std, n)
    return r


class SensorRecording(NamedTuple):
    resistances: np.ndarray  # (T, m)
    shapes: np.ndarray  # (T, k)
    split: str = "train"
    name: str = ""


@dataclass
class Dataset:
    """Windowed samples; ``X[i]`` stacks ``window`` consecutive readings, oldest first."""

    X: np.ndarray  # (n, window, m)
    Y: np.ndarray  # (n, k)
    split: np.ndarray  # (n,) train | validation | test
    recording: np.ndarray = field(default=None)
    frame: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.X)
        self.split = np.asarray(self.split, dtype=object)
        if self.recording is None:
            self.recording = np.zeros(n, dtype=np.int64)
        if self.frame is None:
            self.frame = np.arange(n)

    def __len__(self):
        return len(self.X)

    @property
    def window(self) -> int:
        return self.X.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.Y[idx], self.split[idx], self.recording[idx], self.frame[idx])

    def subset(self, split: str) -> "Dataset":
        return self.take(np.nonzero(self.split == split)[0])


def window_stack(resistances, window: int) -> np.ndarray:
    """All length-``window`` runs of consecutive rows, shape ``(T - window + 1, window, m)``."""
    r = np.asarray(resistances, float)
    if len(r) < window:
        return np.zeros((0, window, r.shape[1]))
    return np.lib.stride_tricks.sliding_window_view(r, window, axis=0).transpose(0, 2, 1).copy()


def build_dataset(recordings: Sequence[SensorRecording], window: int = 1) -> Dataset:
    """Pair each resistance window with the shape at its last frame; windows never span recordings."""
    if window < 1:
        raise ValidationError("window must be >= 1")
    Xs, Ys, splits, recs, frames = [], [], [], [], []
    for i, rec in enumerate(recordings):
        R = np.asarray(rec.resistances, float)
        S = np.asarray(rec.shapes, float)
        if len(R) != len(S):
            raise ValidationError("resistances and shapes must have the same frame count")
        X = window_stack(R, window)
        Xs.append(X)
        Ys.append(S[window - 1:])
        splits += [rec.split] * len(X)
        recs.append(np.full(len(X), i))
        frames.append(np.arange(window - 1, len(R)))
    m = np.asarray(recordings[0].resistances).shape[1] if recordings else 0
    k = np.asarray(recordings[0].shapes).shape[1] if recordings else 0
    return Dataset(np.concatenate(Xs) if Xs else np.zeros((0, window, m)),
                   np.concatenate(Ys) if Ys else np.zeros((0, k)),
                   np.array(splits, dtype=object),
                   np.concatenate(recs) if recs else np.zeros(0, np.int64),
                   np.concatenate(frames) if frames else np.zeros(0, np.int64))


def resample_dataset(d: Dataset, bins: int = 10, seed=0) -> Dataset:
    """Histogram-equalize over target magnitude: every occupied bin is drawn equally often."""
    if bins < 2:
        raise ValidationError("bins must be >= 2")
    n = len(d)
    if n == 0:
        return d
    rng = np.random.default_rng(seed)
    mag = np.linalg.norm(d.Y, axis=1)
    lo, hi = mag.min(), mag.max()
    if hi <= lo:
        which = np.zeros(n, dtype=np.int64)
    else:
        which = np.minimum(((mag - lo) / (hi - lo) * bins).astype(np.int64), bins - 1)
    members = [np.nonzero(which == b)[0] for b in range(bins)]
    members = [m for m in members if len(m)]
    chosen_bins = rng.integers(0, len(members), n)
    idx = np.empty(n, dtype=np.int64)
    for b, m in enumerate(members):
        sel = chosen_bins == b
        idx[sel] = m[rng.integers(0, len(m), sel.sum())]
    return d.take(idx)


def write_frames_csv(path, times, resistances, shapes) -> None:
    """Frame table with header ``t, r_0..r_{m-1}, s_0..s_{k-1}``."""
    R = np.asarray(resistances, float)
    S = np.asarray(shapes, float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"r_{j}" for j in range(R.shape[1])] + [f"s_{j}" for j in range(S.shape[1])])
        for t, r, s in zip(times, R, S):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in r] + [repr(float(v)) for v in s])


def read_frames_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    r_cols = [i for i, h in enumerate(header) if h.startswith("r_")]
    s_cols = [i for i, h in enumerate(header) if h.startswith("s_")]
    return body[:, 0], body[:, r_cols], body[:, s_cols]


def save_dataset(recordings: Sequence[SensorRecording], path, layout: SensorLayout, mode: str,
                 window: int) -> None:
    """Frame CSV plus a sidecar ``.json`` manifest describing units, layout and splits."""
    path = Path(path)
    times, R, S, parts = [], [], [], []
    start = 0
    for rec in recordings:
        T = len(rec.resistances)
        times.append(np.arange(T) / FRAME_RATE_HZ)
        R.append(rec.resistances)
        S.append(rec.shapes)
        parts.append({"name": rec.name, "split": rec.split, "rows": [start, start + T]})
        start += T
    write_frames_csv(path, np.concatenate(times), np.vstack(R), np.vstack(S))
    manifest = {"layout": layout.to_json(), "mode": mode, "window": window,
                "units": {"t": "s", "r": "ohm", "s": "rad" if mode == "orientation" else "mm"},
                "recordings": parts}
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_dataset(path) -> tuple[list, dict]:
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    _, R, S = read_frames_csv(path)
    recs = [SensorRecording(R[a:b], S[a:b], p["split"], p["name"])
            for p in manifest["recordings"] for a, b in [p["rows"]]]
    return recs, manifest
