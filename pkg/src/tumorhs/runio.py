"""Run-directory layout and serialization.

Each run writes into a directory named by the content hash of its effective
configuration, so identical configs land in identical places and nothing is
ever silently overwritten with different content:

    <out>/<hash12>/
        config.echo.cfg    effective configuration (defaults filled in)
        manifest.json      version stamp, grid, snapshot count, byte offsets
        fields.bin         raw little-endian float64 blocks (n, p, c per snapshot)
        final_state.csv    last snapshot as text (coordinates, n, p, c)
        monitors.csv       per-snapshot monitor rows (t, dt, then one column each)
        summary.json       accumulated monitors plus run metadata

No timestamps are written anywhere: repeated identical invocations produce
bitwise-identical files.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .grid import Grid
from .monitors import MonitorReport
from .solver import Trajectory

__all__ = [
    "run_dir_for",
    "write_run",
    "flush_partial",
    "write_monitor_csv",
    "load_summary",
    "load_trajectory",
    "write_fields_binary",
]

FIELD_NAMES = ("n", "p", "c")


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()[:12]


def run_dir_for(out_root, config_text: str, tag: str = "") -> Path:
    name = config_hash(config_text)
    if tag:
        name = f"{name}-{tag}"
    return Path(out_root) / name


def _grid_manifest(g: Grid) -> dict:
    return {"dimension": g.dim, "lo": g.lo, "hi": g.hi, "cells": g.n, "h": g.h}


def write_fields_binary(path, traj: Trajectory) -> list:
    """Raw little-endian float64 blocks; returns the byte-offset table."""
    offsets = []
    with open(path, "wb") as fh:
        pos = 0
        for k in range(len(traj)):
            for name in FIELD_NAMES:
                block = np.ascontiguousarray(getattr(traj, name)[k], dtype="<f8")
                fh.write(block.tobytes())
                offsets.append({"snapshot": k, "field": name, "offset": pos,
                                "bytes": block.nbytes})
                pos += block.nbytes
    return offsets


def write_state_csv(path, traj: Trajectory, k: int) -> None:
    """One snapshot as text: coordinates, then n, p, c per cell."""
    g = traj.grid
    cols = [np.ravel(c) for c in g.coords]
    cols += [np.ravel(traj.n[k]), np.ravel(traj.p[k]), np.ravel(traj.c[k])]
    header = ",".join([f"x{i}" for i in range(g.dim)] + ["n", "p", "c"])
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header,
               comments="", fmt="%.17g")


def write_monitor_csv(path, report: MonitorReport) -> None:
    names = list(report.series.keys())
    K = len(report.series["t"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(names) + "\n")
        for k in range(K):
            fh.write(",".join(f"{float(report.series[n][k]):.17g}" for n in names))
            fh.write("\n")


def write_run(out_dir, config_text: str, traj: Trajectory,
              report: MonitorReport | None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.echo.cfg").write_text(config_text, encoding="utf-8")
    offsets = write_fields_binary(out_dir / "fields.bin", traj)
    write_state_csv(out_dir / "final_state.csv", traj, -1)
    manifest = {
        "version": __version__,
        "grid": _grid_manifest(traj.grid),
        "snapshots": len(traj),
        "times": [float(t) for t in traj.times],
        "fields": list(FIELD_NAMES),
        "dtype": "<f8",
        "offsets": offsets,
        "config_hash": config_hash(config_text),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    if report is not None:
        write_monitor_csv(out_dir / "monitors.csv", report)
        summary = {
            "version": __version__,
            "gamma": traj.params.gamma,
            "accumulated": {k: float(v) for k, v in report.accum.items()},
            "meta": {k: (float(v) if isinstance(v, (int, float, np.floating)) else v)
                     for k, v in report.meta.items()},
            "clipped_mass": float(traj.clipped_mass),
            "steps": int(traj.meta.get("steps", 0)),
            "runtime_s": float(traj.meta.get("runtime_s", 0.0)),
        }
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, sort_keys=True)
    return out_dir


def flush_partial(out_dir, traj: Trajectory) -> None:
    """Best-effort dump of an aborted run (snapshots recorded so far)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        write_fields_binary(out_dir / "fields.partial.bin", traj)
        with open(out_dir / "partial.json", "w", encoding="utf-8") as fh:
            json.dump({"version": __version__, "snapshots": len(traj),
                       "times": [float(t) for t in traj.times],
                       "note": "aborted run; snapshots up to the failure"}, fh)
    except OSError:
        pass


def load_summary(run_dir) -> dict:
    with open(Path(run_dir) / "summary.json", "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_trajectory(run_dir) -> Trajectory:
    """Rebuild a trajectory (fields and times) from a run directory."""
    from . import model
    run_dir = Path(run_dir)
    with open(run_dir / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    gm = manifest["grid"]
    g = Grid(dim=gm["dimension"], lo=gm["lo"], hi=gm["hi"], n=gm["cells"])
    K = manifest["snapshots"]
    raw = np.fromfile(run_dir / "fields.bin", dtype="<f8")
    per = int(np.prod(g.shape))
    blocks = raw.reshape(K, len(FIELD_NAMES), *g.shape)
    summary = {}
    if (run_dir / "summary.json").exists():
        summary = load_summary(run_dir)
    gamma = float(summary.get("gamma", 2.0))
    return Trajectory(grid=g, params=model.ModelParams(gamma=gamma),
                      times=np.asarray(manifest["times"]),
                      n=blocks[:, 0], p=blocks[:, 1], c=blocks[:, 2],
                      snap_dts=np.zeros(K), dts=np.zeros(0),
                      clipped_mass=float(summary.get("clipped_mass", 0.0)),
                      meta={"version": manifest["version"]})
