"""Matrix-free Crank-Nicolson solve shared by the dynamics and geometry code."""

from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NumericalError

DEFAULT_TOL = 1e-12
DEFAULT_MAXITER = 500


def crank_nicolson(
    apply_h: Callable[[np.ndarray], np.ndarray],
    values: np.ndarray,
    dt: float,
    hbar: float,
    diag: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    maxiter: int = DEFAULT_MAXITER,
) -> np.ndarray:
    """Solve ``(1 + i dt H / 2hbar) x = (1 - i dt H / 2hbar) values``.

    ``apply_h`` maps an array shaped like ``values`` to ``H values``.
    ``diag`` is the diagonal of ``H`` in the same shape and, when given,
    drives a Jacobi preconditioner.  The true relative residual of the
    returned solution is below ``tol`` or :class:`NumericalError` is raised.
    """
    shape = values.shape
    n = values.size
    tau = 1j * dt / (2 * hbar)

    def matvec(x):
        x = x.reshape(shape)
        return (x + tau * apply_h(x)).ravel()

    A = LinearOperator((n, n), matvec=matvec, dtype=complex)
    b = (values - tau * apply_h(values)).ravel()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(values, dtype=complex)

    M = None
    if diag is not None:
        inv = (1.0 / (1.0 + tau * np.asarray(diag))).ravel()
        M = LinearOperator((n, n), matvec=lambda x: inv * x, dtype=complex)

    restart = min(n, 50)
    x = values.ravel().astype(complex)
    used = 0
    residual = np.inf
    while used < maxiter:
        cycles = max(1, (maxiter - used) // restart)
        counter = [0]

        def count(_):
            counter[0] += 1

        # rtol a notch under tol: gmres tracks the preconditioned residual
        x, _ = gmres(
            A, b, x0=x, rtol=tol * 0.1, atol=0.0, restart=restart, maxiter=cycles, M=M,
            callback=count, callback_type="pr_norm",
        )
        used += max(counter[0], 1)
        residual = np.linalg.norm(b - matvec(x)) / bnorm
        if residual < tol:
            return x.reshape(shape)
    raise NumericalError(
        f"Crank-Nicolson solve did not reach {tol:g} in {maxiter} iterations (residual {residual:.3g})",
        residual=residual,
    )
