"""Maximum-entropy check of the short-step transition kernel.

On a finite lattice of displacements the relative entropy

    S[P, Q] = -sum P log(P / Q)

is maximised against a Gaussian prior ``Q ~ exp(-alpha |dx|^2 / 2)`` under
normalisation and the linear constraints ``<dx> . g = k1`` (drift) and
``<dx> . (beta A) = k2`` (gauge).  The constraint values are those of the
continuum kernel, ``<dx> = (alpha'/alpha)(g - beta A)``; the optimiser sees
only the prior, the constraint functions and these numbers.  Its optimum is
then compared with the closed-form kernel

    P ~ exp(-alpha |dx|^2 / 2 + alpha' (g - beta A) . dx)

restricted to the same lattice.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError


@dataclass
class MaxEntReport:
    lattice: np.ndarray
    prior: np.ndarray
    numeric: np.ndarray
    closed_form: np.ndarray
    multipliers: np.ndarray
    targets: np.ndarray
    expected_mean: np.ndarray
    mean: np.ndarray
    max_rel_error: float
    constraint_error: float
    duality_gap: float
    iterations: int
    converged: bool
    notes: list[str] = field(default_factory=list)

    def passed(self, rtol: float = 1e-6) -> bool:
        return self.converged and self.max_rel_error < rtol

    def summary(self) -> dict:
        return {
            "dim": int(self.lattice.shape[1]),
            "points": int(self.lattice.shape[0]),
            "multipliers": self.multipliers.tolist(),
            "max_rel_error": self.max_rel_error,
            "constraint_error": self.constraint_error,
            "duality_gap": self.duality_gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def displacement_lattice(alpha: float, mean, points: int = 41, span: float = 8.0) -> np.ndarray:
    """Square lattice of ``points`` per axis covering ``mean +- span`` prior widths."""
    mean = np.atleast_1d(np.asarray(mean, float))
    half = span / np.sqrt(alpha) + np.abs(mean)
    axes = [np.linspace(-w, w, points) for w in half]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def _independent_rows(F: np.ndarray, targets: np.ndarray, rtol: float = 1e-10):
    """Drop linearly dependent constraint columns (e.g. parallel g and A in 1-D)."""
    if F.shape[1] == 0:
        return F, targets
    u, s, vt = np.linalg.svd(F, full_matrices=False)
    keep = s > rtol * s.max() if s.size and s.max() > 0 else np.zeros(0, bool)
    # rotate onto the leading right-singular directions; constraints transform alike
    basis = vt[keep].T
    return F @ basis, targets @ basis


def solve_dual(logq: np.ndarray, F: np.ndarray, targets: np.ndarray, tol: float = 1e-13,
               maxiter: int = 100) -> tuple[np.ndarray, int, bool]:
    """Newton search for the multipliers of ``P ~ Q exp(lambda . F)``.

    Minimises the convex dual ``log sum Q exp(lambda . F) - lambda . targets``.
    """
    lam = np.zeros(F.shape[1])
    if F.shape[1] == 0:
        return lam, 0, True
    scale = np.abs(F).max()

    def dual(l):
        return logsumexp(logq + F @ l) - l @ targets

    for it in range(1, maxiter + 1):
        logp = logq + F @ lam
        p = np.exp(logp - logsumexp(logp))
        mean = p @ F
        grad = mean - targets
        if np.max(np.abs(grad)) < tol * scale:
            return lam, it, True
        centred = F - mean
        hess = centred.T @ (centred * p[:, None])
        delta = np.linalg.solve(hess, -grad)
        t, f0 = 1.0, dual(lam)
        while dual(lam + t * delta) > f0 + 1e-4 * t * (grad @ delta) and t > 1e-12:
            t *= 0.5
        lam = lam + t * delta
    return lam, maxiter, False


def maxent_oracle(alpha: float, drift_covector=None, beta_times_A=None, alpha_prime: float = 1.0,
                  points: int = 41, span: float = 8.0) -> MaxEntReport:
    """Maximise the relative entropy numerically and compare with the Gaussian kernel.

    ``drift_covector`` is the k-averaged gradient of the drift potential and
    ``beta_times_A`` the product of the gauge multiplier and vector
    potential, both per axis.  Omitting both leaves only normalisation, in
    which case the optimum is the prior itself.
    """
    if alpha <= 0 or alpha_prime <= 0:
        raise DomainError("alpha and alpha_prime must be positive")
    if not 2 <= points <= 41:
        raise DomainError("lattice must have between 2 and 41 points per axis")
    vecs = [v for v in (drift_covector, beta_times_A) if v is not None]
    dim = len(np.atleast_1d(vecs[0])) if vecs else 1
    g = np.zeros(dim) if drift_covector is None else np.atleast_1d(np.asarray(drift_covector, float))
    bA = np.zeros(dim) if beta_times_A is None else np.atleast_1d(np.asarray(beta_times_A, float))
    if g.shape != bA.shape:
        raise DomainError("drift covector and beta*A must have the same dimension")

    expected_mean = alpha_prime / alpha * (g - bA)
    X = displacement_lattice(alpha, expected_mean, points, span)

    logq = -0.5 * alpha * np.sum(X**2, axis=1)
    logq -= logsumexp(logq)

    cols, targets = [], []
    for c in (drift_covector, beta_times_A):
        if c is not None:
            c = np.atleast_1d(np.asarray(c, float))
            cols.append(X @ c)
            targets.append(expected_mean @ c)
    F = np.stack(cols, axis=1) if cols else np.zeros((len(X), 0))
    targets = np.asarray(targets, float)
    Fr, tr = _independent_rows(F, targets)

    lam, iters, converged = solve_dual(logq, Fr, tr)
    logp = logq + Fr @ lam
    logp -= logsumexp(logp)
    numeric = np.exp(logp)

    log_cf = -0.5 * alpha * np.sum(X**2, axis=1) + alpha_prime * X @ (g - bA)
    closed = np.exp(log_cf - logsumexp(log_cf))

    entropy = -np.sum(numeric * (logp - logq))
    dual_value = logsumexp(logq + Fr @ lam) - lam @ tr
    cerr = float(np.max(np.abs(numeric @ Fr - tr))) if Fr.shape[1] else 0.0
    notes = [] if converged else ["multiplier search hit the iteration limit"]
    return MaxEntReport(
        lattice=X,
        prior=np.exp(logq),
        numeric=numeric,
        closed_form=closed,
        multipliers=lam,
        targets=targets,
        expected_mean=expected_mean,
        mean=numeric @ X,
        max_rel_error=float(np.max(np.abs(numeric - closed) / closed)),
        constraint_error=cerr,
        duality_gap=float(abs(entropy - dual_value)),
        iterations=iters,
        converged=converged,
        notes=notes,
    )


def random_settings(n: int, seed: int = 0, dims=(1, 2)):
    """Randomised oracle settings with the mean displacement within two prior widths."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        dim = dims[i % len(dims)]
        alpha = 10 ** rng.uniform(0, 2)
        alpha_prime = 10 ** rng.uniform(-1, 1)
        sigma = 1 / np.sqrt(alpha)
        # pick the mean first so it stays inside the lattice comfortably
        mean = rng.uniform(-2, 2, dim) * sigma / np.sqrt(dim)
        bA = rng.normal(size=dim) * rng.uniform(0, 1) * alpha / alpha_prime * sigma
        g = mean * alpha / alpha_prime + bA
        out.append({"alpha": alpha, "alpha_prime": alpha_prime, "drift_covector": g, "beta_times_A": bA})
    return out
