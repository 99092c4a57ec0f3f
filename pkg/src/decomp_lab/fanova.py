"""Functional ANOVA decompositions on finite tensor grids.

Three routes to the same object family:

* ``fanova_generalized``: the measure-weighted constrained least-squares
  problem, solved jointly for all components as one saddle-point linear
  system (stationarity plus weak-annihilating constraints),
* ``fanova_recursive``: the closed recursive form valid for product
  (independent) measures, computed by exhaustive summation,
* ``fanova_uniform``: the recursive form under the uniform product
  measure on the grid, which ignores any population measure entirely.

A decomposition maps covariate subsets to component functions tabulated
on the sub-grid of the axes in the subset; the empty subset maps to a
constant.  ``verify_fanova_constraints`` checks the defining properties
numerically (mean zero, weak annihilation, pointwise reconstruction).
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from itertools import combinations
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .functions import FunctionModel, evaluate_on_grid
from .measures import DiscreteJoint, Grid, GridMismatchError, Marginal1D, make_product_distribution

__all__ = [
    "Decomposition",
    "ConstraintReport",
    "Subset",
    "default_subsets",
    "fanova_generalized",
    "fanova_recursive",
    "fanova_uniform",
    "verify_fanova_constraints",
    "component_expectation",
    "reconstruction",
]

Subset = tuple[int, ...]


def canonical_subset(subset) -> Subset:
    """Sorted tuple of distinct 1-based axis indices."""
    s = tuple(sorted(int(i) for i in subset))
    if len(set(s)) != len(s):
        raise ValueError(f"subset contains duplicates: {subset}")
    return s


def default_subsets(d: int, max_order: int | None = None) -> list[Subset]:
    """All subsets of axes 1..d up to ``max_order``, by cardinality then lex."""
    if max_order is None:
        max_order = d
    if not 0 <= max_order <= d:
        raise ValueError(f"max_order must be in 0..{d}, got {max_order}")
    out: list[Subset] = [()]
    for r in range(1, max_order + 1):
        out.extend(combinations(range(1, d + 1), r))
    return out


@dataclass(frozen=True)
class Decomposition:
    """Additive decomposition of a function into per-subset components.

    ``components[S]`` is tabulated on the sub-grid of the axes in ``S``
    (a 0-d array for the empty subset).  ``reference`` is the measure the
    components are orthogonalized against; for the uniform backend it is
    the uniform product measure on the grid.  ``residual``, when present,
    is the full-grid remainder ``f - sum of components`` reported by
    backends that do not reconstruct exactly (truncation, ALE).
    """

    grid: Grid
    components: Mapping[Subset, np.ndarray]
    backend: str
    reference: DiscreteJoint
    max_order: int
    residual: np.ndarray | None = None

    def __post_init__(self):
        frozen: dict[Subset, np.ndarray] = {}
        for subset, comp in self.components.items():
            s = canonical_subset(subset)
            expected = tuple(self.grid.shape[i - 1] for i in s)
            arr = np.asarray(comp, dtype=float).reshape(expected)
            arr = np.array(arr)
            arr.setflags(write=False)
            frozen[s] = arr
        object.__setattr__(self, "components", MappingProxyType(frozen))
        if self.residual is not None:
            r = np.array(np.asarray(self.residual, dtype=float).reshape(self.grid.shape))
            r.setflags(write=False)
            object.__setattr__(self, "residual", r)

    @property
    def subsets(self) -> list[Subset]:
        return sorted(self.components.keys(), key=lambda s: (len(s), s))

    def component(self, subset) -> np.ndarray:
        return self.components[canonical_subset(subset)]

    def component_on_grid(self, subset) -> np.ndarray:
        """Component broadcast to the full grid shape."""
        s = canonical_subset(subset)
        return _expand_to_grid(self.components[s], s, self.grid)


def _expand_to_grid(comp: np.ndarray, subset: Subset, grid: Grid) -> np.ndarray:
    shape = tuple(
        grid.shape[a] if (a + 1) in subset else 1 for a in range(grid.dims)
    )
    return np.broadcast_to(comp.reshape(shape), grid.shape)


def _expand_to_subset(comp: np.ndarray, inner: Subset, outer: Subset, grid: Grid):
    """Broadcast a component on ``inner`` axes over the ``outer`` sub-grid."""
    shape = tuple(
        grid.shape[a - 1] if a in inner else 1 for a in outer
    )
    return comp.reshape(shape)


def reconstruction(dec: Decomposition) -> np.ndarray:
    """Pointwise sum of all components on the full grid."""
    total = np.zeros(dec.grid.shape)
    for subset, comp in dec.components.items():
        total = total + _expand_to_grid(comp, subset, dec.grid)
    return total


def component_expectation(dec: Decomposition, subset, measure: DiscreteJoint) -> float:
    """Expectation of one component under a measure on the same grid.

    Subsets absent from the decomposition contribute zero (they carry no
    component by construction).
    """
    if measure.grid != dec.grid:
        raise GridMismatchError("measure and decomposition live on different grids")
    s = canonical_subset(subset)
    comp = dec.components.get(s)
    if comp is None:
        return 0.0
    return float(np.sum(measure.weights * _expand_to_grid(comp, s, dec.grid)))


# ---------------------------------------------------------------------------
# Generalized FANOVA: one saddle-point solve


def _weighted_marginal(table: np.ndarray, subset: Subset, d: int) -> np.ndarray:
    """Sum a full-grid table over the axes outside ``subset``."""
    comp = tuple(a for a in range(d) if (a + 1) not in subset)
    return table.sum(axis=comp) if comp else np.array(table)


def _letters():
    return iter(string.ascii_lowercase)


def _gram_block(k: DiscreteJoint, s: Subset, v: Subset) -> np.ndarray:
    """Matrix G[u_s, u_v] = sum of k over grid points with x_s = u_s, x_v = u_v."""
    d = k.dims
    union = sorted(set(s) | set(v))
    overlap = sorted(set(s) & set(v))
    marg = _weighted_marginal(k.weights, tuple(union), d)
    pool = _letters()
    la = {a: next(pool) for a in union}
    lb = {a: next(pool) for a in overlap}
    operands = [marg]
    subs = ["".join(la[a] for a in union)]
    for a in overlap:
        operands.append(np.eye(k.grid.shape[a - 1]))
        subs.append(la[a] + lb[a])
    out = "".join(la[a] for a in s) + "".join(
        lb[a] if a in overlap else la[a] for a in v
    )
    block = np.einsum(",".join(subs) + "->" + out, *operands)
    m_s = int(np.prod([k.grid.shape[a - 1] for a in s], dtype=int)) if s else 1
    m_v = int(np.prod([k.grid.shape[a - 1] for a in v], dtype=int)) if v else 1
    return block.reshape(m_s, m_v)


def _annihilator_block(k_marginal_s: np.ndarray, s: Subset, i: int, grid: Grid):
    """Rows of the weak-annihilating constraint for axis ``i`` of subset ``s``.

    Row ``u_{s minus i}``, column ``u_s``:  k_s(u_s) when the coordinates
    agree on s minus i, else 0.  Summing a component against these rows is
    the discrete sum over x_i of L(s) times the s-marginal mass.
    """
    rest = tuple(a for a in s if a != i)
    pool = _letters()
    la = {a: next(pool) for a in s}
    lb = {a: next(pool) for a in rest}
    operands = [k_marginal_s]
    subs = ["".join(la[a] for a in s)]
    for a in rest:
        operands.append(np.eye(grid.shape[a - 1]))
        subs.append(la[a] + lb[a])
    out = "".join(lb[a] for a in rest) + "".join(la[a] for a in s)
    block = np.einsum(",".join(subs) + "->" + out, *operands)
    m_rest = int(np.prod([grid.shape[a - 1] for a in rest], dtype=int)) if rest else 1
    m_s = int(np.prod([grid.shape[a - 1] for a in s], dtype=int))
    return block.reshape(m_rest, m_s)


def fanova_generalized(
    f: FunctionModel, k: DiscreteJoint, max_order: int | None = None
) -> Decomposition:
    """Measure-weighted FANOVA via one stationarity-plus-constraints solve.

    Components for all subsets up to ``max_order`` (default: full order)
    are obtained as the unique minimizer of the k-weighted squared
    reconstruction error subject to the weak-annihilating equalities.
    Requires every grid weight to be strictly positive.  Main effects of
    single-point axes are identically zero (forced by the constraints) and
    are excluded from the solve to avoid degeneracy.
    """
    if not k.is_interior:
        raise ValueError(
            "generalized FANOVA requires strictly positive weights "
            "(a zero-mass grid point was found)"
        )
    d = k.dims
    if max_order is None:
        max_order = d
    subsets = default_subsets(d, max_order)
    singleton_axes = {a + 1 for a in range(d) if k.grid.shape[a] == 1}
    active = [s for s in subsets if not (set(s) & singleton_axes)]
    sizes = {
        s: int(np.prod([k.grid.shape[a - 1] for a in s], dtype=int)) if s else 1
        for s in active
    }
    offsets = {}
    n_vars = 0
    for s in active:
        offsets[s] = n_vars
        n_vars += sizes[s]

    F = evaluate_on_grid(f, k.grid)
    weighted_f = k.weights * F

    A = np.zeros((n_vars, n_vars))
    b = np.zeros(n_vars)
    for si, s in enumerate(active):
        b[offsets[s] : offsets[s] + sizes[s]] = _weighted_marginal(weighted_f, s, d).reshape(-1)
        for v in active[si:]:
            block = _gram_block(k, s, v)
            A[offsets[s] : offsets[s] + sizes[s], offsets[v] : offsets[v] + sizes[v]] = block
            if v != s:
                A[offsets[v] : offsets[v] + sizes[v], offsets[s] : offsets[s] + sizes[s]] = block.T

    constraint_blocks = []
    for s in active:
        if not s:
            continue
        k_marg = _weighted_marginal(k.weights, s, d)
        for i in s:
            rows = _annihilator_block(k_marg, s, i, k.grid)
            constraint_blocks.append((s, rows))
    n_constraints = sum(rows.shape[0] for _, rows in constraint_blocks)
    C = np.zeros((n_constraints, n_vars))
    row = 0
    for s, rows in constraint_blocks:
        C[row : row + rows.shape[0], offsets[s] : offsets[s] + sizes[s]] = rows
        row += rows.shape[0]

    kkt = np.zeros((n_vars + n_constraints, n_vars + n_constraints))
    kkt[:n_vars, :n_vars] = A
    kkt[:n_vars, n_vars:] = C.T
    kkt[n_vars:, :n_vars] = C
    rhs = np.concatenate([b, np.zeros(n_constraints)])
    try:
        solution, *_ = np.linalg.lstsq(kkt, rhs, rcond=None)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - lstsq rarely fails
        raise RuntimeError(f"singular FANOVA constraint system: {exc}") from exc

    components: dict[Subset, np.ndarray] = {}
    for s in subsets:
        if s in offsets:
            shape = tuple(k.grid.shape[a - 1] for a in s)
            components[s] = solution[offsets[s] : offsets[s] + sizes[s]].reshape(shape)
        else:
            components[s] = np.zeros(tuple(k.grid.shape[a - 1] for a in s))

    return Decomposition(
        grid=k.grid,
        components=components,
        backend="fanova_generalized",
        reference=k,
        max_order=max_order,
    )


# ---------------------------------------------------------------------------
# Recursive form under independence


def _is_product_form(k: DiscreteJoint, atol: float = 1e-10) -> bool:
    outer = np.ones(())
    for a in range(1, k.dims + 1):
        outer = np.multiply.outer(outer, k.axis_marginal(a))
    return bool(np.allclose(k.weights, outer.reshape(k.grid.shape), rtol=0.0, atol=atol))


def fanova_recursive(
    f: FunctionModel, k: DiscreteJoint, max_order: int | None = None
) -> Decomposition:
    """FANOVA under an independent (product-form) measure.

    The empty component is the mean of ``f``; each further component is
    the conditional expectation given its axes minus all strictly lower
    components, with conditionals computed by exhaustive summation over
    the complementary axes.
    """
    if not _is_product_form(k):
        raise ValueError(
            "recursive FANOVA requires a product-form measure "
            "(axes must be independent)"
        )
    return _recursive_impl(f, k, max_order, backend="fanova_recursive")


def _recursive_impl(
    f: FunctionModel, k: DiscreteJoint, max_order: int | None, backend: str
) -> Decomposition:
    d = k.dims
    if max_order is None:
        max_order = d
    subsets = default_subsets(d, max_order)
    F = evaluate_on_grid(f, k.grid)
    marginals = {a: k.axis_marginal(a) for a in range(1, d + 1)}

    components: dict[Subset, np.ndarray] = {}
    for s in subsets:
        weighted = np.array(F)
        for a in range(1, d + 1):
            if a in s:
                continue
            shape = [1] * d
            shape[a - 1] = k.grid.shape[a - 1]
            weighted = weighted * marginals[a].reshape(shape)
        comp_axes = tuple(a for a in range(d) if (a + 1) not in s)
        conditional = weighted.sum(axis=comp_axes) if comp_axes else weighted
        for v, comp_v in components.items():
            if set(v) < set(s):
                conditional = conditional - _expand_to_subset(comp_v, v, s, k.grid)
        components[s] = np.asarray(conditional, dtype=float)

    return Decomposition(
        grid=k.grid,
        components=components,
        backend=backend,
        reference=k,
        max_order=max_order,
    )


def fanova_uniform(
    f: FunctionModel, grid: Grid, max_order: int | None = None
) -> Decomposition:
    """FANOVA against the uniform product measure on the grid.

    Takes no population measure, so the output is identical no matter
    which populations are being analyzed.
    """
    uniform = make_product_distribution(
        [
            Marginal1D(ax, np.full(ax.size, 1.0 / ax.size))
            for ax in grid.axes
        ]
    )
    return _recursive_impl(f, uniform, max_order, backend="fanova_uniform")


# ---------------------------------------------------------------------------
# Constraint verification


@dataclass(frozen=True)
class ConstraintReport:
    """Numerical residuals of the FANOVA defining properties.

    ``component_means[S]`` is |E_k[L(S)]| for each non-empty subset;
    ``annihilator_residuals[(S, i)]`` is the worst absolute conditional
    sum over x_i of L(S) for each axis i in S; ``reconstruction_residual``
    is the sup-norm of f minus the component sum on the grid.
    """

    component_means: dict[Subset, float]
    annihilator_residuals: dict[tuple[Subset, int], float]
    reconstruction_residual: float

    @property
    def max_mean_residual(self) -> float:
        return max(self.component_means.values(), default=0.0)

    @property
    def max_annihilator_residual(self) -> float:
        return max(self.annihilator_residuals.values(), default=0.0)

    def within(self, tol: float, *, include_reconstruction: bool = True) -> bool:
        ok = self.max_mean_residual <= tol and self.max_annihilator_residual <= tol
        if include_reconstruction:
            ok = ok and self.reconstruction_residual <= tol
        return ok

    def to_dict(self) -> dict:
        def label(s):
            return "{" + ",".join(str(i) for i in s) + "}"

        return {
            "component_means": {label(s): v for s, v in self.component_means.items()},
            "annihilator_residuals": {
                f"{label(s)}/x{i}": v for (s, i), v in self.annihilator_residuals.items()
            },
            "reconstruction_residual": self.reconstruction_residual,
        }


def verify_fanova_constraints(
    dec: Decomposition, k: DiscreteJoint, f: FunctionModel
) -> ConstraintReport:
    """Check mean-zero, weak-annihilating, and reconstruction residuals.

    The annihilating residual for (S, i) is the largest, over the other
    coordinates of S, of the absolute sum over x_i of the component times
    the conditional mass of x_i given them under ``k``.
    """
    if dec.grid != k.grid:
        raise GridMismatchError("decomposition and measure live on different grids")
    d = k.dims
    means: dict[Subset, float] = {}
    annihilators: dict[tuple[Subset, int], float] = {}
    for s, comp in dec.components.items():
        if s == ():
            continue
        means[s] = abs(component_expectation(dec, s, k))
        k_marg = _weighted_marginal(k.weights, s, d)
        for i in s:
            axis_pos = s.index(i)
            numerator = (comp * k_marg).sum(axis=axis_pos)
            denominator = k_marg.sum(axis=axis_pos)
            with np.errstate(invalid="ignore", divide="ignore"):
                resid = np.where(
                    denominator > 0, np.abs(numerator) / np.where(denominator > 0, denominator, 1.0), 0.0
                )
            annihilators[(s, i)] = float(np.max(resid))
    F = evaluate_on_grid(f, k.grid)
    recon = float(np.max(np.abs(reconstruction(dec) - F)))
    return ConstraintReport(
        component_means=means,
        annihilator_residuals=annihilators,
        reconstruction_residual=recon,
    )
