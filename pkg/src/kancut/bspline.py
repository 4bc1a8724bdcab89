"""Uniform B-spline grids and Cox-de Boor basis evaluation.

The scalar functions (`basis_order0`, `basis`, `evaluate_curve`) follow the
textbook recursion literally and serve as the reference for everything else.
`basis_matrix` is the batched, differentiable version used inside network
layers; it clamps out-of-range inputs so that the partition of unity always
holds and feeds the hot kernel in `kernels`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .autodiff import record_op
from .errors import ParameterError

# inputs at or above grid_max are pulled just inside the half-open domain
CLAMP_MARGIN = 1e-9


@dataclass(frozen=True)
class SplineGrid:
    """Knot vector for a uniform grid of `intervals` spans, extended by
    `degree` steps on each side. Basis count is intervals + degree."""

    degree: int
    grid_min: float
    grid_max: float
    intervals: int
    knots: np.ndarray = field(repr=False)

    @property
    def num_bases(self):
        return self.intervals + self.degree


def make_uniform_grid(grid_min, grid_max, intervals, degree):
    if not grid_max > grid_min:
        raise ParameterError(f"need grid_max > grid_min, got [{grid_min}, {grid_max}]")
    if intervals < 1:
        raise ParameterError(f"need at least 1 interval, got {intervals}")
    if degree < 0:
        raise ParameterError(f"degree must be >= 0, got {degree}")
    span = grid_max - grid_min
    idx = np.arange(-degree, intervals + degree + 1, dtype=np.float64)
    knots = grid_min + span * (idx / intervals)
    return SplineGrid(degree=degree, grid_min=float(grid_min), grid_max=float(grid_max),
                      intervals=int(intervals), knots=knots)


def basis_order0(grid, i, u):
    """Indicator of the half-open span [u_i, u_{i+1})."""
    knots = grid.knots
    if i < 0 or i > len(knots) - 2:
        raise ParameterError(f"span index {i} out of range for {len(knots)} knots")
    return 1.0 if knots[i] <= u < knots[i + 1] else 0.0


def basis(grid, i, k, u):
    """Degree-k basis value M_{i,k}(u) by direct recursion (0/0 := 0)."""
    knots = grid.knots
    if k < 0 or k > grid.degree:
        raise ParameterError(f"degree {k} outside [0, {grid.degree}]")
    if i < 0 or i + k + 1 > len(knots) - 1:
        raise ParameterError(f"basis index {i} out of range at degree {k}")
    if k == 0:
        return basis_order0(grid, i, u)
    d1 = knots[i + k] - knots[i]
    d2 = knots[i + k + 1] - knots[i + 1]
    left = (u - knots[i]) / d1 * basis(grid, i, k - 1, u) if d1 != 0.0 else 0.0
    right = (knots[i + k + 1] - u) / d2 * basis(grid, i + 1, k - 1, u) if d2 != 0.0 else 0.0
    return left + right


def evaluate_curve(grid, control_points, u):
    """c(u) = sum_i P_i M_{i,d}(u); defined for u in [grid_min, grid_max)."""
    P = np.asarray(control_points, dtype=np.float64)
    if P.shape != (grid.num_bases,):
        raise ParameterError(
            f"need {grid.num_bases} control points for this grid, got {P.shape}")
    return float(sum(P[i] * basis(grid, i, grid.degree, u) for i in range(grid.num_bases)))


def basis_matrix(grid, inputs):
    """All degree-d basis values for every entry of a [batch, n] tensor.

    Entries outside [grid_min, grid_max) are clamped to the nearest interior
    point before evaluation, so each output slice sums to 1. Differentiable
    in the inputs (clamped entries get zero gradient).
    """
    if inputs.ndim != 2:
        raise ParameterError(f"basis_matrix expects a 2-D tensor, got shape {inputs.shape}")
    batch, n = inputs.shape
    hi = grid.grid_max - CLAMP_MARGIN
    flat = inputs.data.reshape(-1)
    clamped = np.clip(flat, grid.grid_min, hi)
    B, dB = kernels.bspline_bases(clamped, grid.knots, grid.degree)
    nb = grid.num_bases
    out = B.reshape(batch, n, nb)
    inside = ((flat >= grid.grid_min) & (flat <= hi)).reshape(batch, n)
    dmat = dB.reshape(batch, n, nb)

    def back(g):
        gin = np.sum(g * dmat, axis=2)
        return (np.where(inside, gin, 0.0),)

    return record_op("basis_matrix", (inputs,), out, back)


def basis_matrix_reference(grid, values):
    """Scalar-recursion oracle for basis_matrix on a plain array (slow)."""
    values = np.asarray(values, dtype=np.float64)
    hi = grid.grid_max - CLAMP_MARGIN
    out = np.zeros(values.shape + (grid.num_bases,))
    for pos in np.ndindex(values.shape):
        u = min(max(values[pos], grid.grid_min), hi)
        for i in range(grid.num_bases):
            out[pos + (i,)] = basis(grid, i, grid.degree, u)
    return out


def default_grid():
    """The grid used when nothing is configured: [-1, 1], 5 intervals, cubic."""
    return make_uniform_grid(-1.0, 1.0, 5, 3)
