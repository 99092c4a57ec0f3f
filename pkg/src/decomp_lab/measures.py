"""Finite-support joint distributions on tensor grids.

Exact discrete populations (and quadrature discretizations of continuous
ones) are represented as dense mass tables over a tensor grid.  This module
provides the distribution algebra the importance decomposition needs:
product construction, marginalization, conditional "hybrid" swaps between
two populations, and exact expectations.

Axes are numbered 1..d throughout, matching the variable names ``x1..xd``
used by the function models.  All values are immutable after construction
and all operations are pure, so concurrent read-only use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Grid",
    "Marginal1D",
    "DiscreteJoint",
    "GridMismatchError",
    "SharedSupportError",
    "make_product_distribution",
    "make_joint_pmf",
    "gauss_hermite_marginal",
    "marginal_of",
    "hybrid_distribution",
    "expectation",
    "empirical_joint",
    "align_supports",
    "embed_on_grid",
]

# Mass tables are validated to this absolute tolerance on input, then
# renormalized exactly, so constructed joints always sum to 1 within 1e-12.
MASS_INPUT_TOL = 1e-9


class GridMismatchError(ValueError):
    """Two distributions that must share a grid do not."""


class SharedSupportError(ValueError):
    """A conditional is undefined: zero mass where the other population has mass."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Tensor grid of covariate support points.

    Parameters
    ----------
    axes : tuple of 1-D arrays
        One strictly increasing array of support points per covariate.
    """

    axes: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.axes) < 1:
            raise ValueError("a grid needs at least one axis")
        frozen = []
        for i, ax in enumerate(self.axes, start=1):
            pts = np.asarray(ax, dtype=float).reshape(-1)
            if pts.size == 0:
                raise ValueError(f"axis {i} is empty")
            if np.any(np.diff(pts) <= 0):
                raise ValueError(f"axis {i} must be strictly increasing")
            frozen.append(_as_readonly(pts))
        object.__setattr__(self, "axes", tuple(frozen))

    @property
    def dims(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(ax.size for ax in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def subgrid(self, dims: Sequence[int]) -> "Grid":
        """Grid restricted to the given 1-based axes (sorted ascending)."""
        dims = _check_dims(dims, self.dims)
        return Grid(tuple(self.axes[i - 1] for i in dims))

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays of shape ``self.shape``, one per axis."""
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def points(self) -> np.ndarray:
        """All grid points as a ``(size, dims)`` array in C order."""
        mesh = self.meshgrid()
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return self.shape == other.shape and all(
            np.array_equal(a, b) for a, b in zip(self.axes, other.axes)
        )

    def __hash__(self):
        return hash(tuple(tuple(ax) for ax in self.axes))


@dataclass(frozen=True)
class Marginal1D:
    """One-dimensional distribution with strictly positive masses summing to 1."""

    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1)
        ms = np.asarray(self.masses, dtype=float).reshape(-1)
        if pts.size == 0:
            raise ValueError("marginal must have at least one support point")
        if pts.size != ms.size:
            raise ValueError("points and masses must have equal length")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("points must be strictly increasing")
        if np.any(ms <= 0):
            raise ValueError("masses must be strictly positive")
        if abs(ms.sum() - 1.0) > MASS_INPUT_TOL:
            raise ValueError(
                f"masses must sum to 1 (got {ms.sum()!r}); normalize the input"
            )
        ms = ms / ms.sum()
        object.__setattr__(self, "points", _as_readonly(pts))
        object.__setattr__(self, "masses", _as_readonly(ms))

    @property
    def mean(self) -> float:
        return float(self.points @ self.masses)

    def moment(self, order: int) -> float:
        return float((self.points**order) @ self.masses)


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint distribution as a dense mass table over a tensor grid.

    ``weights[i1, ..., id]`` is the mass at the grid point
    ``(axes[0][i1], ..., axes[d-1][id])``.  Total mass is 1 within 1e-12.
    ``is_interior`` is True when every weight is strictly positive (the
    generalized FANOVA backend requires this).
    """

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != self.grid.shape:
            raise ValueError(
                f"weights shape {w.shape} does not match grid shape {self.grid.shape}"
            )
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if abs(total - 1.0) > MASS_INPUT_TOL:
            raise ValueError(f"total mass must be 1 (got {total!r})")
        object.__setattr__(self, "weights", _as_readonly(w / total))

    @property
    def dims(self) -> int:
        return self.grid.dims

    @property
    def is_interior(self) -> bool:
        return bool(np.all(self.weights > 0))

    def axis_marginal(self, dim: int) -> np.ndarray:
        """Masses of the 1-based axis ``dim`` marginal, as a plain array."""
        _check_dims([dim], self.dims)
        other = tuple(a for a in range(self.dims) if a != dim - 1)
        return self.weights.sum(axis=other) if other else np.array(self.weights)

    def mean(self, dim: int) -> float:
        return float(self.axis_marginal(dim) @ self.grid.axes[dim - 1])


def _check_dims(dims: Sequence[int], d: int) -> tuple[int, ...]:
    dims = tuple(int(i) for i in dims)
    if len(dims) == 0:
        raise ValueError("dims must be a non-empty subset of axes")
    if len(set(dims)) != len(dims):
        raise ValueError(f"dims contains duplicates: {dims}")
    for i in dims:
        if not 1 <= i <= d:
            raise ValueError(f"axis index {i} out of range 1..{d}")
    return tuple(sorted(dims))


def make_product_distribution(marginals: Sequence[Marginal1D]) -> DiscreteJoint:
    """Tensor product of independent one-dimensional marginals.

    The weight at a grid point is the product of the per-axis masses.
    """
    if len(marginals) == 0:
        raise ValueError("at least one marginal is required")
    for m in marginals:
        if not isinstance(m, Marginal1D):
            raise TypeError(f"expected Marginal1D, got {type(m).__name__}")
    grid = Grid(tuple(m.points for m in marginals))
    w = np.ones(())
    for m in marginals:
        w = np.multiply.outer(w, m.masses)
    return DiscreteJoint(grid, w.reshape(grid.shape))


def make_joint_pmf(grid: Grid, weights: np.ndarray) -> DiscreteJoint:
    """General (possibly dependent) joint from a full mass table.

    ``weights`` must cover every grid point, be nonnegative, and sum to 1
    within 1e-9; the result is exactly renormalized.  A joint containing a
    zero weight is valid but not interior, and is rejected later by
    backends that require strictly positive mass.
    """
    w = np.asarray(weights, dtype=float)
    if w.size != grid.size:
        raise ValueError(
            f"weight table has {w.size} entries but the grid has {grid.size} points"
        )
    return DiscreteJoint(grid, w.reshape(grid.shape))


def gauss_hermite_marginal(mean: float, sd: float, nodes: int) -> Marginal1D:
    """Gauss-Hermite discretization of N(mean, sd^2).

    Polynomial moments up to degree ``2 * nodes - 1`` are reproduced
    exactly (up to roundoff), which is what makes desk-scale verification
    on Gaussian populations exact.
    """
    if nodes < 1:
        raise ValueError("nodes must be >= 1")
    if not sd > 0:
        raise ValueError("sd must be positive")
    x, w = np.polynomial.hermite.hermgauss(int(nodes))
    points = mean + np.sqrt(2.0) * sd * x
    masses = w / np.sqrt(np.pi)
    return Marginal1D(points, masses)


def marginal_of(dist: DiscreteJoint, dims: Iterable[int]) -> DiscreteJoint:
    """Marginal joint over the 1-based axes in ``dims`` (ascending order).

    Weights are summed over the complementary axes; normalization is
    preserved.  ``dims`` covering all axes returns an identical joint.
    """
    dims = _check_dims(tuple(dims), dist.dims)
    complement = tuple(a for a in range(dist.dims) if (a + 1) not in dims)
    w = dist.weights.sum(axis=complement) if complement else np.array(dist.weights)
    return DiscreteJoint(dist.grid.subgrid(dims), w)


def _conditional_swap(
    k: DiscreteJoint, h: DiscreteJoint, swapped: tuple[int, ...]
) -> DiscreteJoint:
    """Joint with density k(x_A | x_B) * h(x_B), A = ``swapped``, B = rest."""
    if k.grid != h.grid:
        raise GridMismatchError("hybrid distributions require a shared grid")
    d = k.dims
    swap_np = tuple(i - 1 for i in swapped)
    if not swap_np:
        return h
    if len(swap_np) == d:
        return k
    kept_np = tuple(a for a in range(d) if a not in swap_np)
    k_tail = k.weights.sum(axis=swap_np, keepdims=True)
    h_tail = h.weights.sum(axis=swap_np, keepdims=True)
    bad = (h_tail > 0) & (k_tail == 0)
    if np.any(bad):
        idx = tuple(int(v) for v in np.argwhere(bad)[0])
        point = tuple(
            float(k.grid.axes[a][idx[a]]) for a in kept_np
        )
        raise SharedSupportError(
            "conditional undefined: population K has zero mass on axes "
            f"{tuple(a + 1 for a in kept_np)} at {point} where H has positive mass"
        )
    with np.errstate(invalid="ignore", divide="ignore"):
        conditional = np.where(k_tail > 0, k.weights / np.where(k_tail > 0, k_tail, 1.0), 0.0)
    return DiscreteJoint(k.grid, conditional * h_tail)


def hybrid_distribution(k: DiscreteJoint, h: DiscreteJoint, j: int) -> DiscreteJoint:
    """Partially swapped measure with density k(x_{1:j} | x_{j+1:d}) h(x_{j+1:d}).

    ``j = 0`` returns ``h`` and ``j = d`` returns ``k``, weight by weight.
    Raises SharedSupportError when the conditional is undefined, i.e. the
    shared-support assumption between the two populations is violated.
    """
    if not 0 <= j <= k.dims:
        raise ValueError(f"j must be in 0..{k.dims}, got {j}")
    return _conditional_swap(k, h, tuple(range(1, j + 1)))


def expectation(dist: DiscreteJoint, fn) -> float:
    """Exact expectation of a function model (or callable) under ``dist``."""
    from .functions import evaluate_on_grid

    values = evaluate_on_grid(fn, dist.grid)
    return float(np.sum(dist.weights * values))


def empirical_joint(samples: np.ndarray) -> DiscreteJoint:
    """Exact empirical joint of a sample matrix on its observed support.

    Per-axis supports are the deduplicated sorted observed values; masses
    are observation frequencies.  Unobserved grid combinations get zero
    mass, so the result is generally not interior.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("samples must be a non-empty (n, d) matrix")
    axes = [np.unique(x[:, a]) for a in range(x.shape[1])]
    grid = Grid(tuple(axes))
    counts = np.zeros(grid.shape)
    idx = tuple(
        np.searchsorted(axes[a], x[:, a]) for a in range(x.shape[1])
    )
    np.add.at(counts, idx, 1.0)
    return DiscreteJoint(grid, counts / x.shape[0])


def embed_on_grid(dist: DiscreteJoint, grid: Grid) -> DiscreteJoint:
    """Re-express ``dist`` on a finer grid whose axes contain its support.

    Missing points receive zero mass, so embedding never changes any
    expectation but generally loses interiority.
    """
    if grid.dims != dist.dims:
        raise GridMismatchError("target grid has a different dimension")
    index = []
    for a in range(dist.dims):
        pos = np.searchsorted(grid.axes[a], dist.grid.axes[a])
        if np.any(pos >= grid.axes[a].size) or not np.array_equal(
            grid.axes[a][np.minimum(pos, grid.axes[a].size - 1)], dist.grid.axes[a]
        ):
            raise GridMismatchError(
                f"axis {a + 1} of the target grid does not contain the support"
            )
        index.append(pos)
    w = np.zeros(grid.shape)
    w[np.ix_(*index)] = dist.weights
    return DiscreteJoint(grid, w)


def align_supports(
    h: DiscreteJoint, k: DiscreteJoint
) -> tuple[DiscreteJoint, DiscreteJoint]:
    """Embed two joints on the per-axis union of their supports.

    This gives decompositions of two populations with different quadrature
    nodes a common grid to be compared on.  The embedded joints carry zero
    mass at each other's foreign points, so they are not interior; backends
    that require strictly positive mass will reject them.
    """
    if h.dims != k.dims:
        raise GridMismatchError("populations have different dimensions")
    if h.grid == k.grid:
        return h, k
    axes = tuple(
        np.union1d(h.grid.axes[a], k.grid.axes[a]) for a in range(h.dims)
    )
    grid = Grid(axes)
    return embed_on_grid(h, grid), embed_on_grid(k, grid)
