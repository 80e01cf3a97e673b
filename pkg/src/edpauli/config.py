"""TOML scenario configuration with strict, collect-all validation."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ValidationError

SCENARIOS = ("free_packet", "larmor", "stern_gerlach", "rotation_demo", "custom")
FORMATS = ("csv", "json", "bin")

# every block and key the parser accepts, with scenario-independent defaults
_SCHEMA: dict[str, dict[str, Any]] = {
    "scenario": {"id": None, "name": ""},
    "grid": {"points": None, "extents": None},
    "params": {"m": 1.0, "hbar": 1.0, "eta": None, "beta": 1.0, "dt": 0.01},
    "gauge": {"A0": 0.0, "A": None, "B": [0.0, 0.0, 0.0], "B_gradient": 0.0, "harmonic_omega": 0.0},
    "initial": {"shape": "gaussian", "center": 0.0, "width": 1.0, "momentum": 0.0, "spinor": [1.0, 0.0]},
    "run": {"steps": 100, "kinetic": "local", "solver_tol": 1e-12},
    "sampler": {"N": 0, "seed": 0, "stride": 1, "k_labels": False},
    "output": {"directory": "edpauli_out", "formats": list(FORMATS), "stride": 1},
    "rotation": {"axis": [0.0, 1.0, 0.0], "angle": math.pi / 2, "mode": "spin"},
    "tolerances": {"norm_drift": 1e-10, "variance_rel": 1e-3, "frequency_rel": 1e-3,
                   "lobe_weight": 0.01, "ensemble_l1": 0.03, "rotation": 1e-12},
}

# scenario-specific defaults layered over the schema
_PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "free_packet": {
        "grid": {"points": [512], "extents": [24.0]},
        "params": {"dt": 0.005},
        # width doubles at t = 2 sqrt(3) sigma0^2 m / hbar
        "run": {"steps": 700},
    },
    "larmor": {
        "grid": {"points": [4], "extents": [4.0]},
        "params": {"dt": 0.01},
        "gauge": {"B": [0.0, 0.0, 1.0]},
        "initial": {"shape": "uniform", "spinor": [1.0, 1.0]},
        # two full periods at omega = beta B0 / m = 1
        "run": {"steps": 1257},
    },
    "stern_gerlach": {
        "grid": {"points": [1024], "extents": [80.0]},
        "params": {"dt": 0.01},
        "initial": {"spinor": [math.sqrt(0.3), math.sqrt(0.7)]},
        "run": {"steps": 600},
    },
    "rotation_demo": {
        "grid": {"points": [4], "extents": [4.0]},
        "initial": {"shape": "uniform", "spinor": [1.0, 0.0]},
        "run": {"steps": 0},
    },
    "custom": {},
}


@dataclass
class ScenarioConfig:
    """Validated configuration; ``blocks`` holds every block with defaults filled."""

    scenario: str
    blocks: dict[str, dict[str, Any]]
    source: str | None = None
    warnings: list[str] = field(default_factory=list)

    def __getitem__(self, block: str) -> dict[str, Any]:
        return self.blocks[block]

    @property
    def dim(self) -> int:
        return len(self.blocks["grid"]["points"])

    @property
    def spinor(self) -> np.ndarray:
        return _spinor(self.blocks["initial"]["spinor"])

    def with_overrides(self, **blocks) -> ScenarioConfig:
        """Copy with selected keys replaced, e.g. ``with_overrides(sampler={'seed': 3})``."""
        new = copy.deepcopy(self.blocks)
        for name, values in blocks.items():
            new[name].update(values)
        return ScenarioConfig(self.scenario, new, self.source, list(self.warnings))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.blocks)


def _spinor(raw) -> np.ndarray:
    """Spinor from ``[c+, c-]`` where each entry is a real or a ``[re, im]`` pair, normalised."""
    c = np.array([complex(*v) if isinstance(v, (list, tuple)) else complex(v) for v in raw])
    norm = np.linalg.norm(c)
    if norm == 0:
        raise ValueError("spinor coefficients are both zero")
    return c / norm


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _vector(v, n: int) -> bool:
    if _is_number(v):
        return True
    return isinstance(v, list) and len(v) == n and all(_is_number(x) for x in v)


def _check(cfg: dict[str, dict[str, Any]], errors: list[str]) -> None:
    scen = cfg["scenario"]["id"]
    g = cfg["grid"]
    points, extents = g["points"], g["extents"]
    dim = None
    if not (isinstance(points, list) and 1 <= len(points) <= 3 and all(isinstance(p, int) and not isinstance(p, bool) and p >= 2 for p in points)):
        errors.append("grid.points: must be a list of 1-3 integers >= 2")
    elif not (isinstance(extents, list) and len(extents) == len(points) and all(_is_number(e) and e > 0 for e in extents)):
        errors.append("grid.extents: must list one positive length per axis")
    else:
        dim = len(points)

    p = cfg["params"]
    for key in ("m", "hbar", "beta", "dt"):
        if not _is_number(p[key]):
            errors.append(f"params.{key}: must be a finite number")
    for key in ("m", "hbar", "dt"):
        if _is_number(p[key]) and p[key] <= 0:
            errors.append(f"params.{key}: must be positive, got {p[key]}")
    if p["eta"] is not None and not (_is_number(p["eta"]) and p["eta"] > 0):
        errors.append("params.eta: must be a positive number")

    ga = cfg["gauge"]
    if not _is_number(ga["A0"]):
        errors.append("gauge.A0: must be a number")
    if ga["A"] is not None and dim is not None and not (isinstance(ga["A"], list) and _vector(ga["A"], dim)):
        errors.append(f"gauge.A: must list {dim} components")
    if not (isinstance(ga["B"], list) and _vector(ga["B"], 3)):
        errors.append("gauge.B: must list 3 components")
    for key in ("B_gradient", "harmonic_omega"):
        if not _is_number(ga[key]):
            errors.append(f"gauge.{key}: must be a number")
    if scen == "stern_gerlach" and _is_number(ga["B_gradient"]) and ga["B_gradient"] == 0:
        errors.append("gauge.B_gradient: stern_gerlach needs a non-zero field gradient")
    if scen == "stern_gerlach" and dim not in (None, 1):
        errors.append("grid.points: stern_gerlach runs on a 1-D grid")

    ini = cfg["initial"]
    if ini["shape"] not in ("gaussian", "uniform"):
        errors.append("initial.shape: must be 'gaussian' or 'uniform'")
    if dim is not None:
        for key in ("center", "momentum", "width"):
            if not _vector(ini[key], dim):
                errors.append(f"initial.{key}: must be a number or {dim} numbers")
        w = ini["width"]
        if _vector(w, dim) and np.any(np.asarray(w, float) <= 0):
            errors.append("initial.width: must be positive")
    sp = ini["spinor"]
    try:
        ok = isinstance(sp, list) and len(sp) == 2 and bool(np.all(np.isfinite(_spinor(sp))))
    except (TypeError, ValueError):
        ok = False
    if not ok:
        errors.append("initial.spinor: must be two coefficients (reals or [re, im] pairs), not both zero")

    r = cfg["run"]
    if not (isinstance(r["steps"], int) and not isinstance(r["steps"], bool) and r["steps"] >= 0):
        errors.append("run.steps: must be a non-negative integer")
    if r["kinetic"] not in ("local", "spectral"):
        errors.append("run.kinetic: must be 'local' or 'spectral'")
    if not (_is_number(r["solver_tol"]) and 0 < r["solver_tol"] < 1):
        errors.append("run.solver_tol: must be in (0, 1)")

    s = cfg["sampler"]
    for key in ("N", "seed", "stride"):
        if not (isinstance(s[key], int) and not isinstance(s[key], bool) and s[key] >= 0):
            errors.append(f"sampler.{key}: must be a non-negative integer")
    if isinstance(s["stride"], int) and s["stride"] == 0:
        errors.append("sampler.stride: must be at least 1")
    if not isinstance(s["k_labels"], bool):
        errors.append("sampler.k_labels: must be true or false")

    o = cfg["output"]
    if not isinstance(o["directory"], str) or not o["directory"]:
        errors.append("output.directory: must be a non-empty string")
    if not (isinstance(o["formats"], list) and all(f in FORMATS for f in o["formats"])):
        errors.append(f"output.formats: must be a subset of {list(FORMATS)}")
    if not (isinstance(o["stride"], int) and not isinstance(o["stride"], bool) and o["stride"] >= 1):
        errors.append("output.stride: must be a positive integer")

    rot = cfg["rotation"]
    if not (isinstance(rot["axis"], list) and _vector(rot["axis"], 3) and np.linalg.norm(rot["axis"]) > 0):
        errors.append("rotation.axis: must be a non-zero 3-vector")
    if not _is_number(rot["angle"]):
        errors.append("rotation.angle: must be a number")
    if rot["mode"] not in ("spin", "full"):
        errors.append("rotation.mode: must be 'spin' or 'full'")

    for key, value in cfg["tolerances"].items():
        if not (_is_number(value) and value > 0):
            errors.append(f"tolerances.{key}: must be a positive number")


def parse_config(text: str, source: str | None = None) -> ScenarioConfig:
    """Parse and validate TOML text; raises :class:`ValidationError` listing every problem."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError([f"TOML syntax: {exc}"]) from None

    errors: list[str] = []
    for block, body in raw.items():
        if block not in _SCHEMA:
            errors.append(f"{block}: unknown block")
        elif not isinstance(body, dict):
            errors.append(f"{block}: must be a table")
        else:
            errors.extend(f"{block}.{k}: unknown key" for k in body if k not in _SCHEMA[block])

    scen = raw.get("scenario", {}).get("id") if isinstance(raw.get("scenario"), dict) else None
    if scen is None:
        errors.append("scenario.id: required")
    elif scen not in SCENARIOS:
        errors.append(f"scenario.id: must be one of {list(SCENARIOS)}, got {scen!r}")
    if scen == "custom":
        g = raw.get("grid", {}) if isinstance(raw.get("grid"), dict) else {}
        errors.extend(f"grid.{k}: required for custom scenarios" for k in ("points", "extents") if k not in g)

    cfg = copy.deepcopy(_SCHEMA)
    for block, body in _PRESETS.get(scen, {}).items():
        cfg[block].update(copy.deepcopy(body))
    for block, body in raw.items():
        if block in cfg and isinstance(body, dict):
            cfg[block].update({k: v for k, v in body.items() if k in cfg[block]})

    if scen in SCENARIOS:
        _check(cfg, errors)
    if errors:
        raise ValidationError(errors)
    return ScenarioConfig(scen, cfg, source)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ValidationError([f"cannot read {path}: {exc}"]) from None
    return parse_config(text, str(path))
