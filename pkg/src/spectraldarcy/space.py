"""Nodal polynomial fields, Lagrange interpolation, and spectral differentiation.

Fields are stored as values on the tensor LGL grid (one array slab per
component); every bilinear form in the solver is collocation at those
nodes. Off-grid evaluation uses the barycentric Lagrange formula.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .quad import (
    FaceId,
    Lgl1D,
    TensorGrid,
    all_faces,
    discrete_inner_product,
)

__all__ = [
    "DiffMatrix",
    "DofPartition",
    "EmptyDirichletError",
    "NodalField",
    "apply_diff",
    "apply_diff_transpose",
    "bary_weights",
    "boundary_interpolate",
    "diff_matrix",
    "eval_nodal",
    "gradient",
    "h1_norm",
    "interpolate",
    "l2_norm",
    "lagrange_matrix",
    "resample",
]


class EmptyDirichletError(ValueError):
    """Boundary interpolation was requested with no Dirichlet nodes."""


class NodalField:
    """Scalar or vector field stored as values at the grid nodes.

    ``values`` has shape (ncomp, *grid.shape); each component is the
    unique degree-N polynomial matching those nodal values.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TensorGrid, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape:
            values = values[np.newaxis]
        if values.ndim != grid.dim + 1 or values.shape[1:] != grid.shape:
            raise ValueError(
                f"values of shape {values.shape} do not fit grid {grid.shape}"
            )
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid: TensorGrid, ncomp: int = 1) -> "NodalField":
        return cls(grid, np.zeros((ncomp, *grid.shape)))

    @property
    def ncomp(self) -> int:
        return self.values.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.ncomp == 1

    @property
    def data(self) -> np.ndarray:
        """The single component of a scalar field."""
        if not self.is_scalar:
            raise ValueError("field is not scalar")
        return self.values[0]

    def component(self, c: int) -> np.ndarray:
        return self.values[c]

    def copy(self) -> "NodalField":
        return NodalField(self.grid, self.values.copy())

    def __add__(self, other: "NodalField") -> "NodalField":
        return NodalField(self.grid, self.values + other.values)

    def __sub__(self, other: "NodalField") -> "NodalField":
        return NodalField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "NodalField":
        return NodalField(self.grid, self.values * a)

    __rmul__ = __mul__


@dataclass(frozen=True)
class DiffMatrix:
    """First-derivative collocation matrix along one axis (Jacobian included)."""

    axis: int
    matrix: np.ndarray


@dataclass(frozen=True)
class DofPartition:
    """Disjoint split of the grid nodes into interior, Dirichlet, and Neumann.

    Nodes shared by the closures of the Dirichlet and Neumann face sets
    are assigned to Dirichlet. ``free`` is interior plus Neumann, the
    rows actually tested in the advection-diffusion solves.
    """

    grid: TensorGrid
    interior: np.ndarray
    dirichlet: np.ndarray
    neumann: np.ndarray
    free: np.ndarray

    @classmethod
    def build(cls, grid: TensorGrid, dirichlet_faces, neumann_faces=None
              ) -> "DofPartition":
        dirichlet_faces = frozenset(dirichlet_faces)
        if neumann_faces is None:
            neumann_faces = frozenset(all_faces(grid.dim)) - dirichlet_faces
        mask_d = np.zeros(grid.shape, dtype=bool)
        for face in dirichlet_faces:
            mask_d[grid.face_slices(face)] = True
        mask_n = np.zeros(grid.shape, dtype=bool)
        for face in neumann_faces:
            mask_n[grid.face_slices(face)] = True
        mask_n &= ~mask_d  # Dirichlet wins on shared edges/corners
        mask_i = ~(mask_d | mask_n)
        dirichlet = np.nonzero(mask_d.ravel())[0]
        neumann = np.nonzero(mask_n.ravel())[0]
        interior = np.nonzero(mask_i.ravel())[0]
        free = np.sort(np.concatenate([interior, neumann]))
        for arr in (dirichlet, neumann, interior, free):
            arr.flags.writeable = False
        return cls(grid, interior, dirichlet, neumann, free)


def bary_weights(rule: Lgl1D) -> np.ndarray:
    """Barycentric weights of the LGL nodes: (-1)^j sqrt(rho_j), normalized."""
    w = np.sqrt(rule.weights)
    w[1::2] *= -1.0
    return w / np.max(np.abs(w))


def _reference_diff(rule: Lgl1D) -> np.ndarray:
    x = rule.nodes
    bw = bary_weights(rule)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    d = (bw[None, :] / bw[:, None]) / dx
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))  # rows sum to zero exactly
    return d


_DIFF_CACHE: "weakref.WeakKeyDictionary[TensorGrid, tuple]" = weakref.WeakKeyDictionary()


def diff_matrix(grid: TensorGrid, axis: int) -> DiffMatrix:
    """Differentiation matrix along ``axis`` on the physical grid."""
    mats = _DIFF_CACHE.get(grid)
    if mats is None:
        ref = _reference_diff(grid.rule)
        mats = tuple(
            DiffMatrix(k, ref / grid.jacobians[k]) for k in range(grid.dim)
        )
        _DIFF_CACHE[grid] = mats
    return mats[axis]


def apply_diff(grid: TensorGrid, arr: np.ndarray, axis: int) -> np.ndarray:
    """Derivative along one axis of a grid-shaped array."""
    d = diff_matrix(grid, axis).matrix
    out = np.tensordot(d, np.moveaxis(arr, axis, 0), axes=(1, 0))
    return np.moveaxis(out, 0, axis)

def apply_diff_transpose(grid: TensorGrid, arr: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of ``apply_diff`` (plain transpose, no weights)."""
    d = diff_matrix(grid, axis).matrix
    out = np.tensordot(d.T, np.moveaxis(arr, axis, 0), axes=(1, 0))
    return np.moveaxis(out, 0, axis)


def interpolate(f, grid: TensorGrid) -> NodalField:
    """Sample a function of the space coordinates onto the grid (I_N f)."""
    vals = np.asarray(f(*grid.coords), dtype=float)
    if vals.shape != grid.shape:
        vals = np.broadcast_to(vals, grid.shape).copy()
    return NodalField(grid, vals)


def boundary_interpolate(f, partition: DofPartition) -> np.ndarray:
    """Values of f at the Dirichlet nodes (i_N^{Gamma_D} f), flat order."""
    if partition.dirichlet.size == 0:
        raise EmptyDirichletError("the Dirichlet boundary set is empty")
    grid = partition.grid
    pts = [c.ravel()[partition.dirichlet] for c in grid.coords]
    vals = np.asarray(f(*pts), dtype=float)
    if vals.shape != partition.dirichlet.shape:
        vals = np.broadcast_to(vals, partition.dirichlet.shape).copy()
    return vals


def gradient(f: NodalField) -> NodalField:
    """Spectral gradient of a scalar field; exact on P_N."""
    grid = f.grid
    comps = [apply_diff(grid, f.data, axis) for axis in range(grid.dim)]
    return NodalField(grid, np.stack(comps))


def l2_norm(f: NodalField) -> float:
    return float(np.sqrt(max(discrete_inner_product(f, f), 0.0)))


def h1_norm(f: NodalField) -> float:
    sq = discrete_inner_product(f, f)
    for c in range(f.ncomp):
        g = gradient(NodalField(f.grid, f.values[c]))
        sq += discrete_inner_product(g, g)
    return float(np.sqrt(max(sq, 0.0)))


def lagrange_matrix(rule: Lgl1D, targets: np.ndarray) -> np.ndarray:
    """Lagrange basis values at reference points: out[p, j] = l_j(targets[p])."""
    targets = np.asarray(targets, dtype=float)
    bw = bary_weights(rule)
    diff = targets[:, None] - rule.nodes[None, :]
    exact_row, exact_col = np.nonzero(diff == 0.0)
    diff[exact_row, :] = 1.0  # avoid division by zero on node hits
    m = bw[None, :] / diff
    s = m.sum(axis=1, keepdims=True)
    s[exact_row] = 1.0
    m /= s
    m[exact_row, :] = 0.0
    m[exact_row, exact_col] = 1.0
    return m


def _reference_coords(grid: TensorGrid, points: np.ndarray) -> list[np.ndarray]:
    ref = []
    for k, (a, b) in enumerate(grid.box):
        ref.append(2.0 * (points[:, k] - a) / (b - a) - 1.0)
    return ref


def eval_nodal(f: NodalField, points: np.ndarray) -> np.ndarray:
    """Evaluate a nodal field at arbitrary physical points, shape (npts, dim).

    Returns (ncomp, npts); stable barycentric evaluation per axis.
    """
    grid = f.grid
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mats = [lagrange_matrix(grid.rule, r) for r in _reference_coords(grid, points)]
    if grid.dim == 2:
        return np.einsum("pi,pj,cij->cp", mats[0], mats[1], f.values)
    return np.einsum("pi,pj,pk,cijk->cp", mats[0], mats[1], mats[2], f.values)


def resample(f: NodalField, fine: TensorGrid) -> NodalField:
    """Re-express a nodal field on a finer grid over the same box."""
    if fine.box != f.grid.box or fine.dim != f.grid.dim:
        raise ValueError("target grid must share the box of the source grid")
    p = lagrange_matrix(f.grid.rule, fine.rule.nodes)
    out = f.values
    for axis in range(f.grid.dim):
        out = np.moveaxis(
            np.tensordot(p, np.moveaxis(out, axis + 1, 0), axes=(1, 0)),
            0, axis + 1,
        )
    return NodalField(fine, out)
