"""Command-line entry point: ``softproprio {simulate,train,estimate,calibrate}``.

Exit codes: 0 success, 1 invalid input or configuration, 2 solver failure.  Failures
print ``error: code=<CODE> message=<text>`` on standard error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .calibration import calibrate_scaling_factor, identify_young_modulus
from .errors import SoftProprioError, SolverError, ValidationError
from .pipeline import (load_recording, predict_series, reconstruct_and_score, run_forward, save_recording,
                       write_traces_csv)
from .regressor import PRESETS, load_regressor, save_regressor, train_regressor
from .scenario import CONFIG_VERSION, build_device, resolve_scenario
from .sensor import build_dataset, resample_dataset, save_dataset

log = logging.getLogger("softproprio")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors with exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: code=USAGE message={message}\n")
        raise SystemExit(EXIT_INVALID)


def _read_config(ref: str) -> tuple[dict, Path]:
    if ref.startswith("preset:"):
        return {"version": CONFIG_VERSION, "scenario": ref}, Path.cwd()
    path = Path(ref)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {ref}: {exc}") from None
    if not isinstance(data, dict) or data.get("version") != CONFIG_VERSION:
        raise ValidationError(f"config {ref} must be an object with version {CONFIG_VERSION}")
    return data, path.parent


def _path(base: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else base / p


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_simulate(args, cfg, base) -> Path:
    """Scenario config (or a wrapper with a ``scenario`` key) to a recording directory."""
    scenario = resolve_scenario(cfg.get("scenario", cfg), base)
    if args.seed is not None:
        scenario["seed"] = int(args.seed)
    device = build_device(scenario)
    rec = run_forward(device)
    return save_recording(rec, args.out, scenario, scenario.get("seed", 0))


def cmd_train(args, cfg, base) -> Path:
    """Recordings to a resampled dataset file and a trained regressor."""
    preset = cfg.get("preset", "finger")
    if preset not in PRESETS:
        raise ValidationError(f"unknown regressor preset {preset!r}")
    window = int(cfg.get("window", PRESETS[preset]["window"]))
    recordings, layout, mode = [], None, None
    for split in ("train", "validation"):
        for i, ref in enumerate(cfg.get(split, [])):
            rec, manifest = load_recording(_path(base, ref))
            recordings.append(rec.as_sensor_recording(split, f"{split}_{i}"))
            device = build_device(manifest["scenario"])
            layout, mode = device.layout, device.mode
    if not any(r.split == "train" for r in recordings):
        raise ValidationError("train config lists no training recordings")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(recordings, out / "dataset.csv", layout, mode, window)
    seed = int(cfg.get("seed", 0) if args.seed is None else args.seed)
    data = build_dataset(recordings, window)
    bins = int(cfg.get("resample_bins", 10))
    train = resample_dataset(data.subset("train"), bins, seed) if bins else data.subset("train")
    val = data.subset("validation")
    data = train if not len(val) else type(data)(
        np.concatenate([train.X, val.X]), np.concatenate([train.Y, val.Y]),
        np.concatenate([train.split, val.split]))
    params = {k: cfg[k] for k in ("learning_rate", "momentum", "batch_size") if k in cfg}
    reg = train_regressor(data, preset, int(cfg.get("epochs", 100)), seed, **params)
    save_regressor(reg, out / "regressor.json")
    _write_json(out / "training.json", {"preset": preset, "window": window, "seed": seed, "resample_bins": bins,
                                        "best_epoch": reg.best_epoch_, "loss_curve": reg.loss_curve_,
                                        "validation_curve": reg.validation_curve_})
    return out


def cmd_estimate(args, cfg, base) -> Path:
    """Recording (+ regressor) to ``metrics.json`` and ``traces.csv``."""
    if "recording" not in cfg:
        raise ValidationError("estimate config needs a 'recording' directory")
    rec, manifest = load_recording(_path(base, cfg["recording"]))
    device = build_device(manifest["scenario"])
    reg = None
    if not args.exact_shape:
        if "regressor" not in cfg:
            raise ValidationError("estimate config needs a 'regressor' file unless --exact-shape is given")
        reg = load_regressor(_path(base, cfg["regressor"]))
    report, traces = reconstruct_and_score(device, rec, reg, exact_shape=args.exact_shape)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", report.to_json())
    write_traces_csv(out / "traces.csv", traces)
    return out


def cmd_calibrate(args, cfg, base) -> Path:
    """Sweep or force-trace recordings to ``calibration.json``."""
    kind = cfg.get("kind")
    tol = float(cfg.get("relative_tolerance", 0.005))
    if kind == "young_modulus":
        rec, manifest = load_recording(_path(base, cfg["sweep"]))
        scenario = resolve_scenario(cfg["scenario"], base) if "scenario" in cfg else manifest["scenario"]
        result = identify_young_modulus(build_device(scenario), rec.pressure_kpa, rec.markers,
                                        cfg["interval_pa"], tol)
    elif kind == "scaling_factor":
        loaded = [load_recording(_path(base, r)) for r in cfg.get("traces", [])]
        if not loaded:
            raise ValidationError("scaling_factor calibration needs at least one trace")
        scenario = resolve_scenario(cfg["scenario"], base) if "scenario" in cfg else loaded[0][1]["scenario"]
        device = build_device(scenario)
        recs = [r for r, _ in loaded]
        shapes = None
        if "regressor" in cfg:
            reg = load_regressor(_path(base, cfg["regressor"]))
            shapes = [predict_series(reg, r.resistances) for r in recs]
        result = calibrate_scaling_factor(device, recs, cfg["interval"], tol, shapes)
    else:
        raise ValidationError("calibrate config 'kind' must be 'young_modulus' or 'scaling_factor'")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "calibration.json", {"kind": kind, **result.to_json()})
    return out


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "estimate": cmd_estimate, "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="softproprio", description="Soft-body proprioception toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,train,estimate,calibrate}",
                                parser_class=_Parser)
    helps = {"simulate": "run a scenario forward and write a recording",
             "train": "train a resistance-to-shape regressor from recordings",
             "estimate": "reconstruct shape and forces from a recording and score them",
             "calibrate": "identify Young's modulus or the stiffness/pressure scaling factor"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="JSON config path, or preset:<name> for simulate")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="softproprio-out", help="output directory")
        if name == "estimate":
            p.add_argument("--exact-shape", action="store_true",
                           help="use the recorded shapes instead of regressor predictions")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        sys.stderr.write("error: code=USAGE message=a subcommand is required\n")
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg, base = _read_config(args.config)
        out = COMMANDS[args.command](args, cfg, base)
    except SolverError as exc:
        sys.stderr.write(f"error: code={exc.code} message={exc}\n")
        return EXIT_SOLVER
    except (SoftProprioError, KeyError, TypeError, ValueError) as exc:
        code = getattr(exc, "code", "VALIDATION")
        msg = f"missing config key {exc}" if isinstance(exc, KeyError) else str(exc)
        sys.stderr.write(f"error: code={code} message={msg}\n")
        return EXIT_INVALID
    # wall time goes to stderr only so output files stay byte-identical across runs
    log.info("%s wrote %s in %.2f s", args.command, out, time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
