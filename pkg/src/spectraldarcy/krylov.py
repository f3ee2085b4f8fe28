"""Matrix-free Krylov solvers: restarted GMRES and a projected CG.

GMRES (right-preconditioned, modified Gram-Schmidt Arnoldi with Givens
rotations) handles the nonsymmetric advection-diffusion systems. The
projected conjugate-gradient solver handles the symmetric positive
semidefinite pressure Schur system on the zero-mean subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "LinearOp",
    "SolveReport",
    "SolverConfig",
    "SolverError",
    "cg_semidefinite",
    "gmres",
]


class SolverError(RuntimeError):
    """An inner linear solve failed to converge; carries the report."""

    def __init__(self, message: str, report: "SolveReport"):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class SolverConfig:
    """Inner-solver settings exposed through the run configuration."""

    gmres_tol: float = 1e-12
    gmres_restart: int = 50
    gmres_maxit: int = 2000
    cg_tol: float = 1e-12
    cg_maxit: int = 2000


class LinearOp:
    """Matrix-free linear operator of a fixed dimension."""

    __slots__ = ("dim", "apply")

    def __init__(self, dim: int, apply: Callable[[np.ndarray], np.ndarray]):
        self.dim = dim
        self.apply = apply

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)


@dataclass
class SolveReport:
    iterations: int
    relative_residual: float
    converged: bool
    restarts: int = 0
    residual_history: list = field(default_factory=list)


def _norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(x))


def gmres(A, b: np.ndarray, M=None, tol: float = 1e-12, restart: int = 50,
          maxit: int = 2000, x0: np.ndarray | None = None
          ) -> tuple[np.ndarray, SolveReport]:
    """Right-preconditioned restarted GMRES for A x = b.

    Returns the iterate and a report; ``converged`` means the true
    residual satisfies ||b - A x|| <= tol * ||b||. On maxit exhaustion
    the best iterate is returned with converged=False.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if restart < 1:
        raise ValueError("restart must be >= 1")
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = _norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveReport(0, 0.0, True)

    x = np.array(x0, dtype=float, copy=True) if x0 is not None else np.zeros(n)
    history: list[float] = []
    total = 0
    cycles = 0

    while True:
        r = b - A(x)
        rnorm = _norm(r)
        if rnorm <= tol * bnorm:
            return x, SolveReport(total, rnorm / bnorm, True,
                                  max(cycles - 1, 0), history)
        if total >= maxit:
            return x, SolveReport(total, rnorm / bnorm, False,
                                  max(cycles - 1, 0), history)
        cycles += 1
        m = min(restart, maxit - total)
        V = np.empty((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[0] = r / rnorm

        k_used = 0
        for k in range(m):
            z = M(V[k]) if M is not None else V[k]
            w = A(z)
            for j in range(k + 1):  # modified Gram-Schmidt
                H[j, k] = np.dot(V[j], w)
                w = w - H[j, k] * V[j]
            hk1 = _norm(w)
            H[k + 1, k] = hk1
            breakdown = hk1 <= 1e-32
            if not breakdown:
                V[k + 1] = w / hk1
            for j in range(k):  # previously computed rotations
                tmp = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = tmp
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            history.append(abs(g[k + 1]) / bnorm)
            if abs(g[k + 1]) <= tol * bnorm or breakdown:
                break

        y = _back_substitute(H[:k_used, :k_used], g[:k_used])
        update = V[:k_used].T @ y
        x = x + (M(update) if M is not None else update)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def cg_semidefinite(S, b: np.ndarray, projector: Callable[[np.ndarray], np.ndarray],
                    tol: float = 1e-12, maxit: int = 2000, M=None,
                    x0: np.ndarray | None = None
                    ) -> tuple[np.ndarray, SolveReport]:
    """Preconditioned CG for a symmetric positive semidefinite system.

    ``projector`` removes the kernel component (the discrete mean) and
    is applied to the iterate every iteration, so the returned solution
    has zero discrete mean. The right-hand side must be consistent.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    bnorm = _norm(b)
    if bnorm == 0.0:
        return projector(np.zeros(n)), SolveReport(0, 0.0, True)

    x = projector(np.array(x0, dtype=float, copy=True)) if x0 is not None \
        else np.zeros(n)
    r = b - S(x)
    z = M(r) if M is not None else r
    p = z.copy()
    rz = float(np.dot(r, z))
    iterations = 0
    history = [_norm(r) / bnorm]

    while _norm(r) > tol * bnorm:
        if iterations >= maxit:
            r = b - S(x)
            return x, SolveReport(iterations, _norm(r) / bnorm, False,
                                  residual_history=history)
        q = S(p)
        alpha = rz / float(np.dot(p, q))
        x = projector(x + alpha * p)
        r = r - alpha * q
        z = M(r) if M is not None else r
        rz_new = float(np.dot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
        iterations += 1
        history.append(_norm(r) / bnorm)

    r = b - S(x)  # recompute: the recurrence may drift
    return x, SolveReport(iterations, _norm(r) / bnorm, True,
                          residual_history=history)
