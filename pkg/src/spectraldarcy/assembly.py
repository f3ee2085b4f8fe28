"""Discrete operators for the three sub-steps of one backward-Euler step.

The collocation mass form is diagonal, so the Darcy velocity is
eliminated pointwise and the pressure solves a symmetric positive
semidefinite Schur system on the zero-mean subspace. The heat and
concentration steps are advection-diffusion solves with Dirichlet rows
eliminated and Neumann data added weakly on the faces. All operators
are applied matrix-free from the 1-D differentiation matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .krylov import SolveReport, SolverConfig, SolverError, cg_semidefinite, gmres
from .model import ProblemSpec
from .quad import TensorGrid
from .space import (
    DofPartition,
    NodalField,
    apply_diff,
    apply_diff_transpose,
    boundary_interpolate,
)

__all__ = [
    "AdvectionDiffusionOperator",
    "DarcyOperator",
    "DarcySolveInfo",
    "eval_coefficient",
    "solve_concentration",
    "solve_darcy",
    "solve_heat",
]


def eval_coefficient(e: ex.Expr, grid: TensorGrid, t: float,
                     T: np.ndarray | None = None,
                     C: np.ndarray | None = None) -> np.ndarray:
    """Evaluate an expression at the grid nodes with the state interpolated."""
    names = ex.free_vars(e)
    env = {}
    for k in range(grid.dim):
        env[ex.VARIABLES[k]] = grid.coords[k]
    env["t"] = t
    if "T" in names:
        if T is None:
            raise ValueError("expression references T but no state was given")
        env["T"] = T
    if "C" in names:
        if C is None:
            raise ValueError("expression references C but no state was given")
        env["C"] = C
    vals = np.asarray(ex.compile_fn(e)(**env), dtype=float)
    if vals.shape != grid.shape:
        vals = np.broadcast_to(vals, grid.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"coefficient {ex.pretty(e)!r} evaluated to a "
                         "non-finite value on the grid")
    return vals


def _grad(grid: TensorGrid, scalar: np.ndarray) -> np.ndarray:
    return np.stack([apply_diff(grid, scalar, k) for k in range(grid.dim)])


def _div_transpose(grid: TensorGrid, vec: np.ndarray) -> np.ndarray:
    out = apply_diff_transpose(grid, vec[0], 0)
    for k in range(1, grid.dim):
        out += apply_diff_transpose(grid, vec[k], k)
    return out


def _stiffness_diagonal(grid: TensorGrid, wk: np.ndarray) -> np.ndarray:
    # diag of sum_c D_c^T diag(wk) D_c: along each axis line,
    # K_jj += sum_i wk[i, rest] * D[i, j]^2.
    diag = np.zeros(grid.shape)
    for axis in range(grid.dim):
        d = diff_matrix(grid, axis).matrix
        moved = np.moveaxis(wk, axis, 0)
        contrib = np.tensordot(d * d, moved, axes=(0, 0))  # [j, rest]
        diag += np.moveaxis(contrib, 0, axis)
    return diag


class DarcyOperator:
    """Pressure Schur complement for one Darcy step.

    ``reaction`` is the strictly positive diagonal 1/tau + alpha at the
    nodes; the Schur action is p -> div_w(grad p / reaction) where the
    divergence is weighted by the quadrature weights.
    """

    def __init__(self, grid: TensorGrid, reaction: np.ndarray):
        if np.any(reaction <= 0.0):
            raise ValueError("nonpositive Darcy reaction diagonal; "
                             "check alpha and the time step")
        self.grid = grid
        self.reaction = reaction
        self.weights = grid.weights_nd()
        self._w_over_r = self.weights / reaction
        self._wsum = float(self.weights.sum())

    @property
    def dim(self) -> int:
        return self.grid.num_nodes

    def schur_apply(self, p_flat: np.ndarray) -> np.ndarray:
        p = p_flat.reshape(self.grid.shape)
        gp = _grad(self.grid, p)
        return _div_transpose(self.grid, gp * self._w_over_r).ravel()

    def schur_diagonal(self) -> np.ndarray:
        return _stiffness_diagonal(self.grid, self._w_over_r).ravel()

    def mean_project(self, p_flat: np.ndarray) -> np.ndarray:
        mean = float(self.weights.ravel() @ p_flat) / self._wsum
        return p_flat - mean

    def rhs(self, g: np.ndarray) -> np.ndarray:
        return _div_transpose(self.grid, g * self._w_over_r).ravel()

    def recover_velocity(self, g: np.ndarray, p: np.ndarray) -> np.ndarray:
        return (g - _grad(self.grid, p)) / self.reaction

    def divergence_residual(self, u: np.ndarray) -> float:
        """max_q |(u, grad q)_N| over the nodal pressure basis."""
        r = _div_transpose(self.grid, u * self.weights)
        return float(np.max(np.abs(r)))


@dataclass
class DarcySolveInfo:
    report: SolveReport
    divergence_residual: float
    u_norm: float


def solve_darcy(u_prev: NodalField, theta: NodalField, psi: NodalField,
                spec: ProblemSpec, tau: float, t: float,
                solver: SolverConfig = SolverConfig(),
                p_start: NodalField | None = None,
                ) -> tuple[NodalField, NodalField, DarcySolveInfo]:
    """One Darcy step: eliminate u pointwise, solve the pressure Schur system.

    The momentum source is gamma * f evaluated with T, C frozen at the
    supplied state. Returns zero-mean pressure and the recovered velocity.
    """
    if tau <= 0.0:
        raise ValueError("time step must be positive")
    grid = u_prev.grid
    coeffs = spec.coefficients
    alpha = eval_coefficient(coeffs.alpha, grid, t, theta.data, psi.data)
    op = DarcyOperator(grid, 1.0 / tau + alpha)

    g = np.stack([
        coeffs.gamma * eval_coefficient(fc, grid, t, theta.data, psi.data)
        for fc in coeffs.f
    ])
    g += u_prev.values / tau

    b = op.mean_project(op.rhs(g))
    diag = op.schur_diagonal()
    diag[diag <= 0.0] = 1.0
    inv_diag = 1.0 / diag
    x0 = op.mean_project(p_start.data.ravel()) if p_start is not None else None
    p_flat, report = cg_semidefinite(
        op.schur_apply, b, op.mean_project,
        tol=solver.cg_tol, maxit=solver.cg_maxit,
        M=lambda r: inv_diag * r, x0=x0,
    )
    if not report.converged:
        raise SolverError(
            f"Darcy pressure solve stalled: residual "
            f"{report.relative_residual:.3e} after {report.iterations} iterations",
            report,
        )
    p = p_flat.reshape(grid.shape)
    u_vals = op.recover_velocity(g, p)
    u = NodalField(grid, u_vals)
    u_norm = float(np.sqrt(max(np.einsum(
        "c...,c...,...->", u_vals, u_vals, op.weights), 0.0)))
    info = DarcySolveInfo(report, op.divergence_residual(u_vals), u_norm)
    return u, NodalField(grid, p), info


class AdvectionDiffusionOperator:
    """Implicit advection-diffusion operator with Dirichlet elimination.

    Action on a full grid array:
        w * x / tau  +  w * (u . grad x)  +  sum_c D_c^T (w lam grad_c x)
    tested at the free (interior plus Neumann) nodes only.
    """

    def __init__(self, grid: TensorGrid, partition: DofPartition, tau: float,
                 velocity: np.ndarray, diffusivity: np.ndarray):
        self.grid = grid
        self.partition = partition
        self.tau = tau
        self.velocity = velocity
        self.diffusivity = diffusivity
        self.weights = grid.weights_nd()
        self._wlam = self.weights * diffusivity

    def apply_full(self, x: np.ndarray) -> np.ndarray:
        grid = self.grid
        gx = _grad(grid, x)
        out = self.weights * (x / self.tau)
        out += self.weights * np.einsum("c...,c...->...", self.velocity, gx)
        out += _div_transpose(grid, self._wlam * gx)
        return out

    def apply_free(self, x_free: np.ndarray) -> np.ndarray:
        full = np.zeros(self.grid.shape)
        full.ravel()[self.partition.free] = x_free
        return self.apply_full(full).ravel()[self.partition.free]

    def diagonal_free(self) -> np.ndarray:
        # reaction + diffusion rows; the advection diagonal is omitted.
        diag = self.weights / self.tau + _stiffness_diagonal(self.grid, self._wlam)
        return diag.ravel()[self.partition.free]


def _transport_solve(prev: NodalField, u: NodalField, cross_field: NodalField,
                     spec: ProblemSpec, tau: float, t: float,
                     solver: SolverConfig, *,
                     own_lam: ex.Expr, cross_lam: ex.Expr,
                     source: ex.Expr, dirichlet_data: ex.Expr,
                     own_flux: ex.Expr, cross_flux: ex.Expr,
                     coeff_T: np.ndarray, coeff_C: np.ndarray,
                     start: NodalField | None,
                     label: str) -> tuple[NodalField, SolveReport]:
    if tau <= 0.0:
        raise ValueError("time step must be positive")
    grid = prev.grid
    partition = DofPartition.build(grid, spec.boundary.dirichlet_faces,
                                   spec.boundary.neumann_faces)

    lam_own = eval_coefficient(own_lam, grid, t, coeff_T, coeff_C)
    lam_cross = eval_coefficient(cross_lam, grid, t, coeff_T, coeff_C)
    op = AdvectionDiffusionOperator(grid, partition, tau, u.values, lam_own)

    h = eval_coefficient(source, grid, t)
    rhs = op.weights * (h + prev.data / tau)
    if np.any(lam_cross):
        rhs -= _div_transpose(grid, (op.weights * lam_cross) * _grad(grid, cross_field.data))

    for face in spec.boundary.neumann_faces:
        sl = grid.face_slices(face)
        fw = grid.face_weights(face)
        flux_own = eval_coefficient(own_flux, grid, t)[sl]
        flux_cross = eval_coefficient(cross_flux, grid, t)[sl]
        rhs[sl] += fw * (lam_own[sl] * flux_own + lam_cross[sl] * flux_cross)

    dirichlet_fn = ex.compile_fn(dirichlet_data)
    bvals = boundary_interpolate(
        lambda *pts: dirichlet_fn(**dict(zip(ex.VARIABLES, pts)), t=t), partition)
    lift = np.zeros(grid.shape)
    lift.ravel()[partition.dirichlet] = bvals

    b_free = rhs.ravel()[partition.free] - op.apply_full(lift).ravel()[partition.free]
    diag = op.diagonal_free()
    inv_diag = 1.0 / diag
    x0 = start.data.ravel()[partition.free] if start is not None else None
    x_free, report = gmres(
        op.apply_free, b_free, M=lambda r: inv_diag * r,
        tol=solver.gmres_tol, restart=solver.gmres_restart,
        maxit=solver.gmres_maxit, x0=x0,
    )
    if not report.converged:
        raise SolverError(
            f"{label} solve stalled: residual {report.relative_residual:.3e} "
            f"after {report.iterations} iterations", report,
        )
    full = np.zeros(grid.shape)
    full.ravel()[partition.free] = x_free
    full.ravel()[partition.dirichlet] = bvals
    return NodalField(grid, full), report


def solve_heat(theta_prev: NodalField, u: NodalField, psi_lagged: NodalField,
               spec: ProblemSpec, tau: float, t: float,
               solver: SolverConfig = SolverConfig(),
               coeff_theta: NodalField | None = None,
               coeff_psi: NodalField | None = None,
               start: NodalField | None = None,
               ) -> tuple[NodalField, SolveReport]:
    """Heat step: implicit in theta, cross-diffusion lagged on psi.

    Coefficients are evaluated at (coeff_theta, coeff_psi), defaulting
    to (theta_prev, psi_lagged) when the caller does not iterate.
    """
    coeff_T = (coeff_theta or theta_prev).data
    coeff_C = (coeff_psi or psi_lagged).data
    return _transport_solve(
        theta_prev, u, psi_lagged, spec, tau, t, solver,
        own_lam=spec.coefficients.lam11, cross_lam=spec.coefficients.lam12,
        source=spec.h1, dirichlet_data=spec.boundary.theta_d,
        own_flux=spec.boundary.theta_flux, cross_flux=spec.boundary.psi_flux,
        coeff_T=coeff_T, coeff_C=coeff_C, start=start, label="heat",
    )


def solve_concentration(psi_prev: NodalField, u: NodalField,
                        theta_updated: NodalField,
                        spec: ProblemSpec, tau: float, t: float,
                        solver: SolverConfig = SolverConfig(),
                        coeff_psi: NodalField | None = None,
                        start: NodalField | None = None,
                        ) -> tuple[NodalField, SolveReport]:
    """Concentration step: mirrors the heat step with the updated theta.

    The cross term uses grad(theta_updated); coefficients are evaluated
    at (theta_updated, coeff_psi), defaulting coeff_psi to psi_prev.
    """
    coeff_C = (coeff_psi or psi_prev).data
    return _transport_solve(
        psi_prev, u, theta_updated, spec, tau, t, solver,
        own_lam=spec.coefficients.lam22, cross_lam=spec.coefficients.lam21,
        source=spec.h2, dirichlet_data=spec.boundary.psi_d,
        own_flux=spec.boundary.psi_flux, cross_flux=spec.boundary.theta_flux,
        coeff_T=theta_updated.data, coeff_C=coeff_C, start=start,
        label="concentration",
    )
