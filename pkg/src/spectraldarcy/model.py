"""Problem definition: domain, coefficients, boundary data, and validation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr
from .quad import FaceId, TensorGrid, all_faces
from .space import NodalField

__all__ = [
    "BoundarySpec",
    "BuoyancyFragment",
    "CoefficientSet",
    "ProblemSpec",
    "StateSnapshot",
    "StepDiagnostics",
    "ValidationReport",
    "boussinesq_f",
    "shift_state",
    "validate_coefficients",
]

_COEFF_VARS = frozenset(ex.VARIABLES)
_DATA_VARS = frozenset(("x", "y", "z", "t"))
_SPATIAL_VARS = frozenset(("x", "y", "z"))


def _check_vars(e: Expr, allowed: frozenset[str], what: str) -> None:
    bad = ex.free_vars(e) - allowed
    if bad:
        raise ValueError(f"{what} may not reference {sorted(bad)}")


@dataclass(frozen=True)
class CoefficientSet:
    """Reaction coefficient, diffusivity matrix, and buoyancy source.

    All entries may depend on x, y, z, t and the state variables T, C;
    state-dependent coefficients are frozen at the lagged iterate of the
    decoupling loop. ``gamma`` scales the momentum source gamma*f.
    """

    alpha: Expr
    lam11: Expr
    lam12: Expr
    lam21: Expr
    lam22: Expr
    gamma: float
    f: tuple[Expr, ...]

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        object.__setattr__(self, "f", tuple(self.f))
        for name in ("alpha", "lam11", "lam12", "lam21", "lam22"):
            _check_vars(getattr(self, name), _COEFF_VARS, name)
        for c, fc in enumerate(self.f):
            _check_vars(fc, _COEFF_VARS, f"f[{c}]")

    def lam(self, i: int, j: int) -> Expr:
        return getattr(self, f"lam{i}{j}")


@dataclass(frozen=True)
class BoundarySpec:
    """Partition of the box faces into Dirichlet and Neumann sets plus data.

    ``theta_d``/``psi_d`` are traces imposed on the Dirichlet faces;
    ``theta_flux``/``psi_flux`` are the prescribed normal derivatives on
    the Neumann faces.
    """

    dirichlet_faces: frozenset[FaceId]
    neumann_faces: frozenset[FaceId]
    theta_d: Expr
    psi_d: Expr
    theta_flux: Expr
    psi_flux: Expr

    def __post_init__(self):
        object.__setattr__(self, "dirichlet_faces", frozenset(self.dirichlet_faces))
        object.__setattr__(self, "neumann_faces", frozenset(self.neumann_faces))
        if not self.dirichlet_faces:
            raise ValueError("the Dirichlet face set must be nonempty")
        if self.dirichlet_faces & self.neumann_faces:
            raise ValueError("Dirichlet and Neumann face sets overlap")
        for name in ("theta_d", "psi_d", "theta_flux", "psi_flux"):
            _check_vars(getattr(self, name), _DATA_VARS, name)

    @classmethod
    def all_dirichlet(cls, dim: int, theta_d: Expr, psi_d: Expr) -> "BoundarySpec":
        return cls(frozenset(all_faces(dim)), frozenset(),
                   theta_d, psi_d, ex.ZERO, ex.ZERO)

    def validate_faces(self, dim: int) -> None:
        every = set(all_faces(dim))
        assigned = self.dirichlet_faces | self.neumann_faces
        if assigned != every:
            missing = sorted(every - assigned)
            extra = sorted(assigned - every)
            raise ValueError(
                f"face partition mismatch: missing={missing}, foreign={extra}"
            )


@dataclass(frozen=True)
class ProblemSpec:
    """Everything needed to run the solver on one configuration."""

    dim: int
    degree: int
    box: tuple[tuple[float, float], ...]
    coefficients: CoefficientSet
    boundary: BoundarySpec
    h1: Expr
    h2: Expr
    u0: tuple[Expr, ...]
    theta0: Expr
    psi0: Expr
    final_time: float

    def __post_init__(self):
        object.__setattr__(self, "box", tuple(tuple(map(float, ab)) for ab in self.box))
        object.__setattr__(self, "u0", tuple(self.u0))
        if self.dim not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if len(self.u0) != self.dim:
            raise ValueError(f"u0 must have {self.dim} components")
        if self.final_time <= 0.0:
            raise ValueError("final_time must be positive")
        self.boundary.validate_faces(self.dim)
        if len(self.coefficients.f) != self.dim:
            raise ValueError(f"f must have {self.dim} components")
        spatial = frozenset(ex.VARIABLES[: self.dim])
        for name in ("h1", "h2"):
            _check_vars(getattr(self, name), spatial | {"t"}, name)
        for c, e in enumerate(self.u0):
            _check_vars(e, spatial, f"u0[{c}]")
        _check_vars(self.theta0, spatial, "theta0")
        _check_vars(self.psi0, spatial, "psi0")

    def make_grid(self) -> TensorGrid:
        return TensorGrid(self.dim, self.degree, self.box)

    def max_initial_normal_velocity(self, n_samples: int = 200,
                                    seed: int = 0) -> float:
        """Largest |u0 . n| sampled on the boundary (no-penetration check)."""
        rng = np.random.default_rng(seed)
        fns = [ex.compile_fn(e) for e in self.u0]
        worst = 0.0
        for face in all_faces(self.dim):
            pts = {}
            for k, (a, b) in enumerate(self.box):
                if k == face.axis:
                    pts[ex.VARIABLES[k]] = np.full(n_samples, b if face.side else a)
                else:
                    pts[ex.VARIABLES[k]] = rng.uniform(a, b, n_samples)
            normal_comp = fns[face.axis](**pts)
            worst = max(worst, float(np.max(np.abs(normal_comp))))
        return worst


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step solver bookkeeping surfaced in the run log."""

    picard_iterations: int = 0
    picard_residual: float = 0.0
    picard_converged: bool = True
    gmres_iterations_heat: int = 0
    gmres_iterations_concentration: int = 0
    cg_iterations_darcy: int = 0
    divergence_residual: float = 0.0


@dataclass(frozen=True)
class StateSnapshot:
    """The discrete state (u, p, theta, psi) at one time knot."""

    time: float
    u: NodalField
    p: NodalField
    theta: NodalField
    psi: NodalField
    diagnostics: StepDiagnostics = field(default_factory=StepDiagnostics)


@dataclass(frozen=True)
class ValidationReport:
    """Sampled bounds for the coefficient hypotheses.

    ``lambda_lower``/``lambda_upper`` estimate the uniform bounds on the
    diffusivities; ``beta`` estimates the smallest eigenvalue of the
    symmetric part of the 2x2 diffusivity matrix over the sample set.
    Violations are warnings: the verification cases themselves use
    coefficient sets outside the hypotheses.
    """

    lambda_lower: float
    lambda_upper: float
    beta: float
    n_samples: int
    per_coefficient: Mapping[str, tuple[float, float]]
    warnings: tuple[str, ...]

    @property
    def coercive(self) -> bool:
        return self.beta > 0.0


_DEFAULT_RANGES = {
    "x": (-1.0, 1.0), "y": (-1.0, 1.0), "z": (-1.0, 1.0),
    "t": (0.0, 1.0), "T": (-3.0, 3.0), "C": (-3.0, 3.0),
}


def validate_coefficients(coeffs: CoefficientSet,
                          ranges: Mapping[str, tuple[float, float]] | None = None,
                          n_samples: int = 1000,
                          seed: int = 0) -> ValidationReport:
    """Sample the diffusivities and report lambda bounds and coercivity.

    Samples are drawn from a seeded stream, so enlarging ``n_samples``
    extends the same sample set; the reported beta never increases and
    the reported lambda_upper never decreases under refinement.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    bounds = dict(_DEFAULT_RANGES)
    if ranges:
        bounds.update(ranges)
    env = {
        v: rng.uniform(bounds[v][0], bounds[v][1], n_samples)
        for v in ex.VARIABLES
    }

    names = ("lam11", "lam12", "lam21", "lam22")
    samples = {}
    for name in names:
        vals = np.broadcast_to(
            np.asarray(ex.compile_fn(getattr(coeffs, name))(**env), dtype=float),
            (n_samples,),
        )
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"{name} evaluated to a non-finite value")
        samples[name] = vals

    per = {name: (float(v.min()), float(v.max())) for name, v in samples.items()}
    lam_lower = min(v[0] for v in per.values())
    lam_upper = max(v[1] for v in per.values())

    a = samples["lam11"]
    d = samples["lam22"]
    b = 0.5 * (samples["lam12"] + samples["lam21"])
    eig_min = 0.5 * (a + d) - np.sqrt(0.25 * (a - d) ** 2 + b * b)
    beta = float(eig_min.min())

    warnings = []
    for name in names:
        if per[name][0] <= 0.0:
            warnings.append(
                f"{name} is not bounded below away from zero "
                f"(sampled minimum {per[name][0]:.6g})"
            )
    if beta <= 0.0:
        warnings.append(
            f"diffusivity matrix is not uniformly coercive "
            f"(sampled beta {beta:.6g})"
        )
    return ValidationReport(lam_lower, lam_upper, beta, n_samples,
                            per, tuple(warnings))


@dataclass(frozen=True)
class BuoyancyFragment:
    """Normalized buoyancy force and its gradient bound gamma."""

    f: tuple[Expr, ...]
    gamma: float


def boussinesq_f(beta_t: float, beta_c: float, rho0: float,
                 gravity: Sequence[float]) -> BuoyancyFragment:
    """Linearized buoyancy F(T, C) = rho0 (1 - beta_t T + beta_c C) g.

    Returns f = F / gamma with gamma = rho0 |g| max(beta_t, beta_c) sqrt(2),
    an upper bound for |grad F|; for beta_t = beta_c = 0 the force is
    constant and gamma degenerates to 1 with f = F.
    """
    if rho0 <= 0.0:
        raise ValueError("rho0 must be positive")
    g = tuple(float(gc) for gc in gravity)
    gnorm = math.sqrt(sum(gc * gc for gc in g))
    gamma = rho0 * gnorm * max(beta_t, beta_c) * math.sqrt(2.0)
    factor = ex.add(
        ex.sub(ex.ONE, ex.mul(ex.Const(beta_t), ex.Var("T"))),
        ex.mul(ex.Const(beta_c), ex.Var("C")),
    )
    components = tuple(ex.mul(ex.Const(rho0 * gc), factor) for gc in g)
    if gamma <= 0.0:
        return BuoyancyFragment(components, 1.0)
    scaled = tuple(ex.mul(ex.Const(1.0 / gamma), fc) for fc in components)
    return BuoyancyFragment(scaled, gamma)


def shift_state(e: Expr, t_offset: float, c_offset: float) -> Expr:
    """Rewrite an expression of (T, C) in terms of the shifted state.

    Substitutes T -> T + t_offset and C -> C + c_offset, turning data
    given for the raw temperature and concentration into data for the
    shifted unknowns the solver evolves.
    """
    return ex.subst(e, {
        "T": ex.add(ex.Var("T"), ex.Const(t_offset)),
        "C": ex.add(ex.Var("C"), ex.Const(c_offset)),
    })
