"""CSV and JSON readers/writers.

Floats are written with ``repr`` (shortest round-tripping form, at most 17
significant digits), so a profile written and read back is bit-identical.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from awjm.data import MeasurementSet, NoiseSpec
from awjm.model import Grid1D

OUTPUT_ROOT_ENV = "AWJM_OUTPUT_ROOT"


def write_columns(path, header, *columns):
    path = Path(path)
    with path.open("w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for row in zip(*columns):
            out.writerow([repr(float(v)) for v in row])
    return path


def read_columns(path, expected=None):
    """Read a numeric CSV with a one-line header; returns (header, 2D array)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if expected is not None and header != list(expected):
        raise ValueError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    return header, data.reshape(-1, len(header))


def write_profile(path, x, z):
    return write_columns(path, ["x", "z"], x, z)


def read_profile(path):
    """Return (x, z) from an ``x,z`` CSV."""
    _, data = read_columns(path, ["x", "z"])
    return data[:, 0], data[:, 1]


def write_etch(path, x, e):
    return write_columns(path, ["x", "e"], x, e)


def read_etch(path):
    _, data = read_columns(path, ["x", "e"])
    return data[:, 0], data[:, 1]


def grid_from_x(x) -> Grid1D:
    x = np.asarray(x, dtype=float)
    grid = Grid1D(float(x[0]), float(x[-1]), x.shape[0])
    if not np.allclose(x, grid.x, rtol=0, atol=1e-9 * max(1.0, abs(grid.dx))):
        raise ValueError("profile abscissae are not a uniform grid")
    return grid


def write_json(path, obj):
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_json(path):
    return json.loads(Path(path).read_text())


def write_measurement_set(directory, meas: MeasurementSet, grid: Grid1D):
    """One ``profile_<i>.csv`` per measurement plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, prof in enumerate(meas.profiles):
        name = f"profile_{i}.csv"
        write_profile(directory / name, grid.x, prof)
        files.append(name)
    manifest = {
        "grid": grid.to_dict(),
        "combine": meas.combine.value,
        "files": files,
        "seeds": [list(s) for s in meas.seeds],
        "noise": meas.noise.to_dict() if meas.noise is not None else None,
    }
    write_json(directory / "manifest.json", manifest)
    return directory / "manifest.json"


def read_measurement_set(path) -> tuple[MeasurementSet, Grid1D]:
    """Load from a manifest (or its directory)."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    manifest = read_json(path)
    profiles = []
    x0 = None
    for name in manifest["files"]:
        x, z = read_profile(path.parent / name)
        if x0 is not None and not np.array_equal(x, x0):
            raise ValueError("measurement profiles are on different grids")
        x0 = x
        profiles.append(z)
    g = manifest["grid"]
    grid = Grid1D(g["x_min"], g["x_max"], g["n"])
    noise = NoiseSpec(**manifest["noise"]) if manifest.get("noise") else None
    meas = MeasurementSet(profiles, manifest["combine"],
                          seeds=[tuple(s) for s in manifest.get("seeds", [])], noise=noise)
    return meas, grid


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "awjm-out"))


def write_snapshots(directory, grid: Grid1D, states, every: int):
    """Dump every ``every``-th time level as ``snap_<step>.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for m in range(0, len(states), every):
        written.append(write_profile(directory / f"snap_{m:07d}.csv", grid.x, states[m]))
    return written
