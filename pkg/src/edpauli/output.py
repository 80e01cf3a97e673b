"""Writing run reports to disk: CSV series, binary snapshots, summary JSON, a layout README."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import ScenarioConfig
from .scenarios import RunReport

_LAYOUT = """Output layout
=============

observables.csv
    One row per output stride, comma separated, header in the first line.
    t            time
    norm         integral of rho_x
    energy       <psi|H|psi>
    x_mean var_x mean and variance of the first coordinate (then y, z on
                 higher-dimensional grids)
    Sx Sy Sz     spin functional <(hbar/2) sigma^a>
    Lz           orbital angular momentum about z (2-D and 3-D grids only)
    continuity_l1  L1 norm of the continuity-equation residual

    gnuplot:  set datafile separator ","
              plot "observables.csv" using 1:4 with lines title columnhead

ensemble_L1.csv (only when the sampler is enabled)
    t, L1 distance between the walker histogram and rho_x, mean step
    displacement per axis (mean_dx ...), step covariance (cov_xx ...),
    and k_up_fraction when k labels are tracked.

trajectories/positions_<step>.bin + positions_<step>.json
    Walker positions, little-endian float64, shape (N, dim) in C order;
    k_<step>.bin holds int8 labels when tracked.  The sidecar records N,
    dim, dt, seed, stride, step and time.

snapshots/psi_<step>.bin + psi_<step>.json
    Raw little-endian float64, component-major (psi_+ then psi_-), each
    complex value stored as re, im.  Array shape is (2, *grid, 2) in C
    order.  The JSON sidecar records step, time, grid and layout.

summary.json
    Run status, one {value, threshold, passed} entry per check, extra
    scenario results and wall-clock timings.

Exit codes: 0 all checks passed, 2 invalid configuration, 3 numerical
failure, 4 a tolerance check failed.
"""


def _write_csv(path: Path, header: list[str], rows: list[list[float]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows([[repr(float(v)) for v in row] for row in rows])


def write_snapshot(directory: Path, step: int, t: float, psi) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"psi_{step:06d}"
    data = np.ascontiguousarray(psi.values, dtype="<c16")
    data.view("<f8").tofile(stem.with_suffix(".bin"))
    grid = psi.grid
    meta = {
        "step": step,
        "t": t,
        "dtype": "<f8",
        "shape": [2, *grid.shape, 2],
        "layout": "component-major, C order, complex interleaved (re, im)",
        "components": ["+", "-"],
        "dim": grid.dim,
        "grid": {"points": list(grid.points), "extents": list(grid.extents), "origin": list(grid.origin)},
    }
    stem.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return stem.with_suffix(".bin")


def write_trajectory(directory: Path, snap, meta: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    stem = directory / f"positions_{snap.step:06d}"
    np.ascontiguousarray(snap.positions, dtype="<f8").tofile(stem.with_suffix(".bin"))
    side = dict(meta, step=snap.step, t=snap.t, dtype="<f8", shape=list(snap.positions.shape))
    if snap.k_labels is not None:
        np.asarray(snap.k_labels, dtype="i1").tofile(directory / f"k_{snap.step:06d}.bin")
        side["k_labels"] = f"k_{snap.step:06d}.bin"
    stem.with_suffix(".json").write_text(json.dumps(side, indent=2))
    return stem.with_suffix(".bin")


def read_snapshot(path) -> tuple[np.ndarray, dict]:
    """Load a binary dump and its sidecar; returns ``(values, metadata)``."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = np.fromfile(path.with_suffix(".bin"), dtype=meta["dtype"]).reshape(meta["shape"])
    return raw[..., 0] + 1j * raw[..., 1], meta


def emit_outputs(report: RunReport, config: ScenarioConfig, directory=None) -> Path:
    """Write every requested format for ``report`` and return the output directory."""
    out = Path(directory if directory is not None else config["output"]["directory"])
    out.mkdir(parents=True, exist_ok=True)
    formats = config["output"]["formats"]
    if "csv" in formats:
        _write_csv(out / "observables.csv", report.columns, report.rows)
        if report.ensemble_rows:
            _write_csv(out / "ensemble_L1.csv", report.ensemble_columns, report.ensemble_rows)
    if "bin" in formats:
        for snap in report.snapshots:
            write_snapshot(out / "snapshots", snap.step, snap.t, snap.psi)
        for snap in report.trajectories:
            write_trajectory(out / "trajectories", snap, report.sampler_meta)
    if "json" in formats:
        summary = report.summary()
        summary["config"] = config.to_dict()
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    (out / "README.txt").write_text(_LAYOUT)
    return out
