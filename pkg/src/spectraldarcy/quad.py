"""Legendre Gauss-Lobatto rules, tensor grids, and discrete inner products."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "FaceId",
    "GridMismatchError",
    "Lgl1D",
    "QuadratureError",
    "TensorGrid",
    "all_faces",
    "discrete_inner_product",
    "face_discrete_product",
    "face_from_name",
    "face_name",
    "gamma_n_product",
    "lgl_nodes_weights",
]

_AXIS_NAMES = "xyz"
_NEWTON_TOL = 1e-15
_NEWTON_MAXIT = 100


class QuadratureError(RuntimeError):
    """Newton iteration for the quadrature nodes failed to converge."""


class GridMismatchError(ValueError):
    """Operands of a discrete product live on different grids."""


@dataclass(frozen=True)
class Lgl1D:
    """One-dimensional Legendre Gauss-Lobatto rule on [-1, 1].

    Nodes are strictly increasing with endpoints -1 and 1; weights are
    positive and sum to 2. The rule integrates polynomials of degree
    up to 2*degree - 1 exactly.
    """

    degree: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.flags.writeable = False
        self.weights.flags.writeable = False


class FaceId(NamedTuple):
    """One of the 2*d faces of a box: (axis, side) with side 0=low, 1=high."""

    axis: int
    side: int


def all_faces(dim: int) -> tuple[FaceId, ...]:
    return tuple(FaceId(axis, side) for axis in range(dim) for side in (0, 1))


def face_name(face: FaceId) -> str:
    return f"{_AXIS_NAMES[face.axis]}_{'low' if face.side == 0 else 'high'}"


def face_from_name(name: str, dim: int) -> FaceId:
    try:
        axis_name, side_name = name.split("_")
        axis = _AXIS_NAMES.index(axis_name)
        side = {"low": 0, "high": 1}[side_name]
    except (ValueError, KeyError):
        raise ValueError(f"unknown face name {name!r}") from None
    if axis >= dim:
        raise ValueError(f"face {name!r} does not exist in dimension {dim}")
    return FaceId(axis, side)


def _check_face(face: FaceId, dim: int) -> None:
    if not (0 <= face.axis < dim and face.side in (0, 1)):
        raise ValueError(f"invalid face {face} for dimension {dim}")


def _legendre_and_derivatives(n: int, x: np.ndarray):
    """L_n, L'_n and L''_n at interior points |x| < 1 via the recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    one_minus = 1.0 - x * x
    dp = n * (p_prev - x * p) / one_minus
    d2p = (2.0 * x * dp - n * (n + 1) * p) / one_minus
    return p, dp, d2p


def _legendre(n: int, x: np.ndarray) -> np.ndarray:
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    return p if n >= 1 else p_prev


def lgl_nodes_weights(N: int) -> Lgl1D:
    """Compute the degree-N Legendre Gauss-Lobatto rule.

    Interior nodes are the roots of L'_N, found by a damped Newton
    iteration started from Chebyshev-Lobatto points; the weights are
    2 / (N (N+1) L_N(x)^2).
    """
    if N < 1:
        raise ValueError(f"degree must be >= 1, got {N}")
    if N == 1:
        return Lgl1D(1, np.array([-1.0, 1.0]), np.array([1.0, 1.0]))

    k = np.arange(1, N)
    x = -np.cos(np.pi * k / N)
    for _ in range(_NEWTON_MAXIT):
        _, dp, d2p = _legendre_and_derivatives(N, x)
        step = dp / d2p
        x_new = x - step
        # Damp any step that would leave the open interval.
        bad = np.abs(x_new) >= 1.0
        while np.any(bad):
            step = np.where(bad, 0.5 * step, step)
            x_new = x - step
            bad = np.abs(x_new) >= 1.0
        x = x_new
        if np.max(np.abs(step)) < _NEWTON_TOL:
            break
    else:
        raise QuadratureError(f"LGL nodes for N={N} did not converge "
                              f"within {_NEWTON_MAXIT} Newton iterations")

    x = 0.5 * (x - x[::-1])  # enforce symmetry about 0
    nodes = np.concatenate(([-1.0], x, [1.0]))
    if np.any(np.diff(nodes) <= 0.0):
        raise QuadratureError(f"LGL nodes for N={N} are not increasing")
    ln = _legendre(N, nodes)
    weights = 2.0 / (N * (N + 1) * ln * ln)
    weights = 0.5 * (weights + weights[::-1])
    return Lgl1D(N, nodes, weights)


class TensorGrid:
    """Tensor-product LGL grid on an axis-aligned box in 2 or 3 dimensions.

    Nodes along axis k are the reference nodes mapped affinely onto
    [a_k, b_k]; the per-axis weights carry the Jacobian (b_k - a_k)/2.
    1-D weights are combined on the fly, never stored as a full tensor.
    Instances are immutable after construction.
    """

    def __init__(self, dim: int, degree: int,
                 box: Sequence[tuple[float, float]] | None = None):
        if dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {dim}")
        if box is None:
            box = ((-1.0, 1.0),) * dim
        box = tuple((float(a), float(b)) for a, b in box)
        if len(box) != dim:
            raise ValueError(f"box must have {dim} axis intervals")
        for a, b in box:
            if not b > a:
                raise ValueError(f"degenerate box interval ({a}, {b})")
        self.dim = dim
        self.degree = degree
        self.box = box
        self.rule = lgl_nodes_weights(degree)
        self.jacobians = tuple(0.5 * (b - a) for a, b in box)
        self.axis_nodes = tuple(
            a + (b - a) * 0.5 * (self.rule.nodes + 1.0) for a, b in box
        )
        self.axis_weights = tuple(
            self.rule.weights * j for j in self.jacobians
        )
        self.shape = (degree + 1,) * dim
        self.num_nodes = (degree + 1) ** dim
        self._coords: tuple[np.ndarray, ...] | None = None

    @property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Meshgrid ('ij' indexing) of physical node coordinates."""
        if self._coords is None:
            self._coords = tuple(np.meshgrid(*self.axis_nodes, indexing="ij"))
        return self._coords

    def weights_nd(self) -> np.ndarray:
        """Tensor quadrature weights, assembled on the fly."""
        w = self.axis_weights[0]
        for wk in self.axis_weights[1:]:
            w = np.multiply.outer(w, wk)
        return w

    def face_slices(self, face: FaceId) -> tuple:
        """Index tuple selecting one face of a grid-shaped array."""
        _check_face(face, self.dim)
        idx: list = [slice(None)] * self.dim
        idx[face.axis] = 0 if face.side == 0 else -1
        return tuple(idx)

    def face_indices(self, face: FaceId) -> np.ndarray:
        """Flat node indices of a face, in grid order."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.face_slices(face)] = True
        return np.nonzero(mask.ravel())[0]

    def face_weights(self, face: FaceId) -> np.ndarray:
        """(d-1)-dimensional tensor weights of a face."""
        _check_face(face, self.dim)
        ws = [w for k, w in enumerate(self.axis_weights) if k != face.axis]
        w = ws[0]
        for wk in ws[1:]:
            w = np.multiply.outer(w, wk)
        return w

    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.box]))

    def __repr__(self) -> str:
        return f"TensorGrid(dim={self.dim}, degree={self.degree}, box={self.box})"


def _check_same_grid(u, v, g: TensorGrid | None) -> TensorGrid:
    grid = g if g is not None else u.grid
    if u.grid is not grid or v.grid is not grid:
        raise GridMismatchError("fields are not defined on the same grid")
    if u.values.shape != v.values.shape:
        raise GridMismatchError(
            f"component mismatch: {u.values.shape} vs {v.values.shape}"
        )
    return grid


def _contract(arr: np.ndarray, axis_weights: Iterable[np.ndarray]) -> float:
    out = arr
    for w in reversed(list(axis_weights)):
        out = out @ w
    return float(out)


def discrete_inner_product(u, v, g: TensorGrid | None = None) -> float:
    """LGL collocation product (u, v)_N; vector fields sum componentwise."""
    grid = _check_same_grid(u, v, g)
    s = np.einsum("c...,c...->...", u.values, v.values)
    return _contract(s, grid.axis_weights)


def face_discrete_product(u, v, face: FaceId, g: TensorGrid | None = None) -> float:
    """Discrete product over one face, with the face's tangential weights."""
    grid = _check_same_grid(u, v, g)
    sl = grid.face_slices(face)
    uf = u.values[(slice(None), *sl)]
    vf = v.values[(slice(None), *sl)]
    s = np.einsum("c...,c...->...", uf, vf)
    ws = [w for k, w in enumerate(grid.axis_weights) if k != face.axis]
    return _contract(s, ws)


def gamma_n_product(u, v, faces: Iterable[FaceId],
                    g: TensorGrid | None = None) -> float:
    """Sum of face products over a set of faces (the Neumann part)."""
    return sum(face_discrete_product(u, v, f, g) for f in faces)
