"""Scenario orchestration: build the problem from a config, run solver and sampler, check."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import curve_fit

from .config import ScenarioConfig
from .errors import NumericalError
from .grid import EdParams, GaugeField, Grid, SpinorField, integrate
from .pauli import HamiltonianSpec, continuity_residual, energy, position_moments, step
from .rotations import RotationSpec, orbital_angular_momentum, rotate_state, spin_functional, su2_rotation
from .sampler import TrajectoryEnsemble, density_estimate, l1_distance, resample_k, sample_step, step_moments

log = logging.getLogger(__name__)

AXES = "xyz"

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_TOLERANCE = 0, 2, 3, 4


@dataclass
class Check:
    value: float
    threshold: float
    passed: bool

    @classmethod
    def below(cls, value: float, threshold: float) -> Check:
        value = float(value)
        return cls(value, float(threshold), bool(np.isfinite(value) and value < threshold))

    def to_dict(self) -> dict:
        return {"value": self.value, "threshold": self.threshold, "passed": self.passed}


@dataclass
class Snapshot:
    step: int
    t: float
    psi: SpinorField


@dataclass
class EnsembleSnapshot:
    step: int
    t: float
    positions: np.ndarray
    k_labels: np.ndarray | None


@dataclass
class RunReport:
    """Time series, checks and timings of one scenario run.

    ``status`` is ``PASSED``, ``FAILED`` (a tolerance check failed) or
    ``ERROR`` (numerical failure; the report holds everything up to it).
    """

    scenario: str
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    ensemble_columns: list[str] = field(default_factory=list)
    ensemble_rows: list[list[float]] = field(default_factory=list)
    checks: dict[str, Check] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    snapshots: list[Snapshot] = field(default_factory=list)
    trajectories: list[EnsembleSnapshot] = field(default_factory=list)
    sampler_meta: dict[str, Any] = field(default_factory=dict)
    error: str | None = None

    @property
    def status(self) -> str:
        if self.error is not None:
            return "ERROR"
        return "PASSED" if all(c.passed for c in self.checks.values()) else "FAILED"

    @property
    def exit_code(self) -> int:
        return {"PASSED": EXIT_OK, "FAILED": EXIT_TOLERANCE, "ERROR": EXIT_NUMERICAL}[self.status]

    def column(self, name: str) -> np.ndarray:
        return np.array([r[self.columns.index(name)] for r in self.rows])

    def summary(self) -> dict:
        out: dict[str, Any] = {"scenario": self.scenario, "status": self.status, "exit_code": self.exit_code}
        out.update({name: c.to_dict() for name, c in self.checks.items()})
        out["checks"] = sorted(self.checks)
        out["extras"] = _jsonable(self.extras)
        out["timings"] = dict(self.timings)
        if self.error is not None:
            out["error"] = self.error
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# -- problem construction ---------------------------------------------------

@dataclass
class Problem:
    grid: Grid
    params: EdParams
    gauge: GaugeField
    hamiltonian: HamiltonianSpec
    psi0: SpinorField


def build_problem(config: ScenarioConfig) -> Problem:
    """Grid, constants, fields and initial state described by ``config``.

    ``gauge.B_gradient`` adds ``B_z = B' z`` with ``z`` the last grid axis.
    """
    g, p, ga, ini = config["grid"], config["params"], config["gauge"], config["initial"]
    grid = Grid(tuple(g["points"]), tuple(float(e) for e in g["extents"]))
    params = EdParams(m=p["m"], hbar=p["hbar"], eta=p["eta"], beta=p["beta"], dt=p["dt"])
    params.check_stability(grid)

    base = GaugeField.uniform(grid, ga["A0"], ga["A"], ga["B"])
    B = np.array(base.B)
    if ga["B_gradient"]:
        B[2] = B[2] + ga["B_gradient"] * grid.coords[-1]
    gauge = GaugeField(grid, base.A0, base.A, B)

    r2 = sum(x**2 for x in grid.coords)
    V0 = 0.5 * params.m * ga["harmonic_omega"] ** 2 * r2
    hamiltonian = HamiltonianSpec.point_particle(params, gauge, V0=V0, kinetic=config["run"]["kinetic"])

    if ini["shape"] == "uniform":
        psi0 = SpinorField.uniform(grid, config.spinor)
    else:
        psi0 = SpinorField.gaussian(grid, ini["center"], ini["width"], ini["momentum"], config.spinor, params.hbar)
    return Problem(grid, params, gauge, hamiltonian, psi0)


def _columns(dim: int) -> list[str]:
    cols = ["t", "norm", "energy", "x_mean", "var_x"]
    for a in range(1, dim):
        cols += [f"{AXES[a]}_mean", f"var_{AXES[a]}"]
    cols += ["Sx", "Sy", "Sz"]
    if dim >= 2:
        cols.append("Lz")
    cols.append("continuity_l1")
    return cols


def _observe(prob: Problem, psi: SpinorField, t: float, residual: float) -> list[float]:
    means, var = position_moments(psi)
    row = [t, psi.norm(), energy(prob.hamiltonian, psi, t), means[0], var[0]]
    for a in range(1, prob.grid.dim):
        row += [means[a], var[a]]
    row += list(spin_functional(psi, prob.params.hbar))
    if prob.grid.dim >= 2:
        row.append(orbital_angular_momentum(psi, prob.params.hbar)[2])
    row.append(residual)
    return [float(v) for v in row]


# -- scenario-specific checks ------------------------------------------------

def larmor_fit(t: np.ndarray, sigma1: np.ndarray, sigma2: np.ndarray) -> tuple[float, float, float]:
    """Least-squares fit of ``<sigma1>(t) = A cos(omega t + phi)``; returns ``(omega, A, phi)``.

    The starting frequency comes from the unwrapped angle of
    ``(<sigma1>, <sigma2>)`` so the fit never sees the expected answer.
    """
    angle = np.unwrap(np.arctan2(sigma2, sigma1))
    slope = np.polyfit(t, angle, 1)[0]
    guess = (abs(slope), float(np.hypot(sigma1[0], sigma2[0])), float(np.arctan2(-np.sign(slope) * sigma2[0], sigma1[0])))

    def model(tt, w, A, phi):
        return A * np.cos(w * tt + phi)

    (w, A, phi), _ = curve_fit(model, t, sigma1, p0=guess, xtol=1e-14, ftol=1e-14, maxfev=10000)
    if A < 0:
        A, phi = -A, phi + np.pi
    return float(abs(w)), float(A), float(phi)


def lobe_weights(psi: SpinorField, z0: float, sign: float) -> tuple[float, float]:
    """Mass on the side spin-up is pushed towards and on the opposite side of ``z0``."""
    z = psi.grid.coords[-1]
    rho = psi.density
    upper = float(integrate(psi.grid, np.where((z - z0) * sign > 0, rho, 0.0)))
    lower = float(integrate(psi.grid, np.where((z - z0) * sign <= 0, rho, 0.0)))
    return upper, lower


def _finish_checks(config: ScenarioConfig, prob: Problem, report: RunReport, psi: SpinorField, t: float) -> None:
    tol = config["tolerances"]
    if report.rows:
        norms = report.column("norm")
        report.checks["norm_drift"] = Check.below(np.max(np.abs(norms - norms[0])), tol["norm_drift"])
    scen = config.scenario

    if scen == "free_packet" and config["initial"]["shape"] == "gaussian" and len(report.rows) > 1:
        s0 = float(np.broadcast_to(config["initial"]["width"], (prob.grid.dim,))[0])
        ts, var = report.column("t"), report.column("var_x")
        p = prob.params
        exact = s0**2 + (p.hbar * ts / (2 * p.m * s0)) ** 2
        rel = np.abs(var - exact) / exact
        report.checks["variance_rel"] = Check.below(rel.max(), tol["variance_rel"])
        report.extras["width_ratio"] = float(np.sqrt(var[-1] / var[0]))

    if scen == "larmor" and len(report.rows) > 3:
        ts = report.column("t")
        s1 = 2 * report.column("Sx") / prob.params.hbar
        s2 = 2 * report.column("Sy") / prob.params.hbar
        w, A, phi = larmor_fit(ts, s1, s2)
        Bmag = float(np.linalg.norm(config["gauge"]["B"]))
        expected = abs(prob.params.beta) * Bmag / prob.params.m
        report.extras.update(omega_fit=w, omega_expected=expected, amplitude=A, phase=phi,
                             periods=float(expected * ts[-1] / (2 * np.pi)))
        rel = abs(w - expected) / expected if expected else np.inf
        report.checks["frequency_rel"] = Check.below(rel, tol["frequency_rel"])

    if scen == "stern_gerlach":
        z0 = float(np.broadcast_to(config["initial"]["center"], (prob.grid.dim,))[-1])
        sign = np.sign(prob.params.beta * config["gauge"]["B_gradient"]) or 1.0
        upper, lower = lobe_weights(psi, z0, sign)
        c = config.spinor
        expected = (abs(c[0]) ** 2, abs(c[1]) ** 2)
        report.extras.update(lobe_weights=[upper, lower], expected_weights=list(expected), t=t)
        err = max(abs(upper - expected[0]), abs(lower - expected[1]))
        report.checks["lobe_weight"] = Check.below(err, tol["lobe_weight"])


def _rotation_demo(config: ScenarioConfig, prob: Problem, report: RunReport) -> None:
    rot = config["rotation"]
    spec = RotationSpec.normalized(rot["axis"], rot["angle"])
    c = config.spinor
    U = su2_rotation(spec)
    rotated = U @ c
    psi_rot = rotate_state(prob.psi0, spec, mode=rot["mode"])
    probs = np.abs(rotated) ** 2
    report.extras.update(initial=c, rotated=rotated, probabilities=probs,
                         axis=list(spec.axis), angle=spec.angle)
    # the field version must agree node by node with the 2x2 action on the spinor
    field_err = 0.0
    if rot["mode"] == "spin":
        j = int(np.argmax(np.abs(c)))
        amp = prob.psi0.values[j] / c[j]
        field_err = float(np.max(np.abs(psi_rot.values - np.multiply.outer(rotated, amp))))
    report.checks["rotation"] = Check.below(max(field_err, abs(probs.sum() - 1)), config["tolerances"]["rotation"])


# -- the run loop ------------------------------------------------------------

def run_scenario(config: ScenarioConfig, seed: int | None = None, progress=None) -> RunReport:
    """Run ``config`` and return its report; never raises on numerical failure.

    ``seed`` overrides ``sampler.seed``.  ``progress`` is an optional
    callable receiving ``(step, steps)``.
    """
    t_start = time.perf_counter()
    prob = build_problem(config)
    dim = prob.grid.dim
    report = RunReport(config.scenario, _columns(dim))
    report.timings["setup"] = time.perf_counter() - t_start

    if config.scenario == "rotation_demo":
        _rotation_demo(config, prob, report)

    run, out, smp = config["run"], config["output"], config["sampler"]
    steps, stride = run["steps"], out["stride"]
    tol = run["solver_tol"]
    want_bin = "bin" in out["formats"]
    dt = prob.params.dt
    H = prob.hamiltonian

    ensemble = None
    if smp["N"] > 0:
        s = smp["seed"] if seed is None else seed
        ensemble = TrajectoryEnsemble.from_density(prob.grid, prob.psi0.density, smp["N"], s, smp["k_labels"])
        names = AXES[:dim]
        cov = [f"cov_{names[a]}{names[b]}" for a in range(dim) for b in range(a, dim)]
        report.ensemble_columns = (["t", "L1"] + [f"mean_d{n}" for n in names] + cov
                                   + (["k_up_fraction"] if smp["k_labels"] else []))
        report.sampler_meta = {"N": ensemble.N, "dim": dim, "dt": dt, "seed": ensemble.seed, "stride": smp["stride"]}

    def record(i: int, t: float, psi: SpinorField) -> None:
        try:
            res = continuity_residual(H, psi, dt, t, tol=tol).l1 if steps else 0.0
        except NumericalError:
            # keep the state's observables in the partial report
            report.rows.append(_observe(prob, psi, t, float("nan")))
            raise
        report.rows.append(_observe(prob, psi, t, res))
        if want_bin:
            report.snapshots.append(Snapshot(i, t, psi))

    def record_ensemble(i: int, t: float, psi: SpinorField) -> None:
        nonlocal ensemble
        mom = step_moments(ensemble)
        iu = np.triu_indices(dim)
        row = [t, l1_distance(prob.grid, density_estimate(ensemble), psi.density)]
        row += list(mom.mean) + list(mom.cov[iu])
        if smp["k_labels"]:
            ensemble = resample_k(ensemble, psi)
            row.append(float(np.mean(ensemble.k_labels == 1)))
        report.ensemble_rows.append([float(v) for v in row])
        if want_bin:
            report.trajectories.append(EnsembleSnapshot(i, t, ensemble.positions, ensemble.k_labels))

    psi, t = prob.psi0, 0.0
    t_loop = time.perf_counter()
    try:
        record(0, t, psi)
        if ensemble is not None:
            record_ensemble(0, t, psi)
        for i in range(1, steps + 1):
            if ensemble is not None:
                ensemble = sample_step(ensemble, psi, prob.gauge, prob.params)
            psi = step(H, psi, dt, t, tol=tol)
            t = i * dt
            if i % stride == 0 or i == steps:
                record(i, t, psi)
            if ensemble is not None and (i % smp["stride"] == 0 or i == steps):
                record_ensemble(i, t, psi)
            if progress is not None:
                progress(i, steps)
    except NumericalError as exc:
        report.error = str(exc)
        log.error("numerical failure at t = %.6g: %s", t, exc)
    report.timings["evolution"] = time.perf_counter() - t_loop

    if report.error is None:
        _finish_checks(config, prob, report, psi, t)
        if report.ensemble_rows:
            worst = max(r[1] for r in report.ensemble_rows)
            report.checks["ensemble_l1"] = Check.below(worst, config["tolerances"]["ensemble_l1"])
    report.timings["total"] = time.perf_counter() - t_start
    return report
