"""Misattribution diagnostics for functional decomposition backends.

The central quantity is the conditional-outcome term that remains when the
two populations share one model: a nonzero value means the backend blames
a covariate shift on the outcome model.  The other operations verify, on
concrete instances, when that value must vanish (zero expectation of the
foreign-population component under the home population; equal basis means
in the additive class; insensitivity of the backend to mean-zero measure
perturbations) and search for functions witnessing that it does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .fanova import (
    Subset,
    canonical_subset,
    component_expectation,
    default_subsets,
    fanova_generalized,
)
from .functions import FunctionModel, TabulatedModel, evaluate_on_grid, tabulated_model
from .measures import DiscreteJoint, GridMismatchError, make_joint_pmf
from .population_decomp import decompose

__all__ = [
    "misattribution_delta",
    "ExpectedZeroCheck",
    "expected_zero_check",
    "AffineClassGapReport",
    "affine_class_gap",
    "JacobianProbe",
    "directional_jacobian_probe",
    "WitnessResult",
    "witness_search",
    "DiagnosticsReport",
]

RANK_ONE_ONES = "rank_one_ones"
VIOLATED = "violated"


def misattribution_delta(
    backend: str,
    f: FunctionModel,
    h: DiscreteJoint,
    k: DiscreteJoint,
    subset,
    max_order: int | None = None,
) -> float:
    """Expectation under H of the K-component minus the H-component of f.

    This is the conditional-outcome term of the importance decomposition
    when both populations use the same model f; any nonzero value is
    misattribution.
    """
    if h.grid != k.grid:
        raise GridMismatchError("both populations must live on one grid")
    s = canonical_subset(subset)
    dec_k = decompose(backend, f, k, max_order)
    dec_h = decompose(backend, f, h, max_order)
    return component_expectation(dec_k, s, h) - component_expectation(dec_h, s, h)


@dataclass(frozen=True)
class ExpectedZeroCheck:
    """Two routes to the same misattribution value for the FANOVA backend.

    ``delta_direct`` is the two-decomposition difference; ``h_expectation``
    is the single expectation of the K-component under H, which must agree
    because the H-component has mean zero under H.
    """

    subset: Subset
    delta_direct: float
    h_expectation: float

    @property
    def discrepancy(self) -> float:
        return abs(self.delta_direct - self.h_expectation)

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "delta_direct": self.delta_direct,
            "h_expectation": self.h_expectation,
            "discrepancy": self.discrepancy,
        }


def expected_zero_check(
    f: FunctionModel,
    h: DiscreteJoint,
    k: DiscreteJoint,
    subset,
    backend: str = "fanova_generalized",
) -> ExpectedZeroCheck:
    """Compute the misattribution value directly and via the mean-zero shortcut."""
    s = canonical_subset(subset)
    if s == ():
        raise ValueError("the empty subset is outside the scope of this check")
    delta = misattribution_delta(backend, f, h, k, s)
    dec_k = decompose(backend, f, k, None)
    return ExpectedZeroCheck(
        subset=s,
        delta_direct=delta,
        h_expectation=component_expectation(dec_k, s, h),
    )


@dataclass(frozen=True)
class AffineClassGapReport:
    """Per-axis basis-mean gaps against the backend's component expectations."""

    gaps: tuple[float, ...]
    backend_values: tuple[float, ...]

    @property
    def max_discrepancy(self) -> float:
        return max(
            (abs(g - b) for g, b in zip(self.gaps, self.backend_values)), default=0.0
        )

    def to_dict(self) -> dict:
        return {
            "gaps": list(self.gaps),
            "backend_values": list(self.backend_values),
            "max_discrepancy": self.max_discrepancy,
        }


def affine_class_gap(
    a: Sequence[float],
    b: Sequence[FunctionModel],
    h: DiscreteJoint,
    k: DiscreteJoint,
    tol: float = 1e-9,
) -> AffineClassGapReport:
    """Check the additive-class identity for f(x) = sum_m a_m b_m(x_m).

    For independent populations, the expectation under H of the m-th main
    effect computed under K equals ``a_m`` times the gap in the basis means
    between the two populations.  Both sides are computed; disagreement
    beyond ``tol`` raises, since the identity is exact on finite grids.
    """
    from .fanova import _is_product_form

    if h.grid != k.grid:
        raise GridMismatchError("both populations must live on one grid")
    if not (_is_product_form(h) and _is_product_form(k)):
        raise ValueError("the additive-class identity assumes independent covariates")
    d = h.dims
    coeffs = [float(c) for c in a]
    if len(coeffs) != d or len(b) != d:
        raise ValueError(f"need exactly {d} coefficients and basis functions")
    if any(c == 0 for c in coeffs):
        raise ValueError("all coefficients must be nonzero")
    for m, bm in enumerate(b, start=1):
        if bm.arity != 1:
            raise ValueError(f"basis function {m} must be univariate")

    basis_values = [
        evaluate_on_grid(bm, h.grid.subgrid((m,)))
        for m, bm in enumerate(b, start=1)
    ]
    table = np.zeros(h.grid.shape)
    for m, values in enumerate(basis_values):
        shape = [1] * d
        shape[m] = h.grid.shape[m]
        table = table + coeffs[m] * values.reshape(shape)
    f = tabulated_model(h.grid, table)

    gaps = tuple(
        coeffs[m - 1]
        * float(
            h.axis_marginal(m) @ basis_values[m - 1]
            - k.axis_marginal(m) @ basis_values[m - 1]
        )
        for m in range(1, d + 1)
    )
    dec_k = fanova_generalized(f, k)
    backend_values = tuple(
        component_expectation(dec_k, (m,), h) for m in range(1, d + 1)
    )
    report = AffineClassGapReport(gaps=gaps, backend_values=backend_values)
    if report.max_discrepancy > tol:
        raise RuntimeError(
            "additive-class identity violated: basis-mean gaps and backend "
            f"component expectations differ by {report.max_discrepancy:.3e}"
        )
    return report


@dataclass(frozen=True)
class JacobianProbe:
    """Finite-difference sensitivity of one component to measure perturbations.

    Directions are the mean-zero basis e_i - e_n over the flattened grid
    points; a backend whose component map has identical Jacobian columns
    annihilates all of them, so the verdict is ``rank_one_ones`` exactly
    when every directional derivative is numerically zero (within ten
    times the step, covering the second-order truncation error).
    """

    subset: Subset
    step: float
    directions: np.ndarray  # (n_probes, n_points), each row sums to zero
    directional_derivative_norms: np.ndarray
    verdict: str

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "step": self.step,
            "n_directions": int(self.directions.shape[0]),
            "directional_derivative_norms": [
                float(v) for v in self.directional_derivative_norms
            ],
            "verdict": self.verdict,
        }


def directional_jacobian_probe(
    backend: str,
    f: FunctionModel,
    k: DiscreteJoint,
    subset,
    step: float = 1e-5,
) -> JacobianProbe:
    """Probe the measure-sensitivity of one component along mean-zero directions.

    Central differences: the component is recomputed at k plus and minus
    half a step along each direction, which must stay inside the open
    simplex.
    """
    if not k.is_interior:
        raise ValueError("probing requires an interior measure (all weights > 0)")
    if step <= 0:
        raise ValueError("step must be positive")
    s = canonical_subset(subset)
    flat = k.weights.reshape(-1)
    n = flat.size
    directions = np.zeros((n - 1, n))
    norms = np.empty(n - 1)
    for i in range(n - 1):
        phi = np.zeros(n)
        phi[i] = 1.0
        phi[-1] = -1.0
        directions[i] = phi
        w_plus = flat + 0.5 * step * phi
        w_minus = flat - 0.5 * step * phi
        if np.any(w_plus <= 0) or np.any(w_minus <= 0):
            raise ValueError(
                f"probe direction {i} leaves the simplex interior; reduce step"
            )
        dec_plus = decompose(backend, f, make_joint_pmf(k.grid, w_plus), None)
        dec_minus = decompose(backend, f, make_joint_pmf(k.grid, w_minus), None)
        comp_plus = dec_plus.components.get(s)
        comp_minus = dec_minus.components.get(s)
        if comp_plus is None or comp_minus is None:
            raise ValueError(f"backend {backend!r} produces no component for {s}")
        norms[i] = float(np.max(np.abs((comp_plus - comp_minus) / step)))
    verdict = RANK_ONE_ONES if np.all(norms <= 10.0 * step) else VIOLATED
    return JacobianProbe(
        subset=s,
        step=step,
        directions=directions,
        directional_derivative_norms=norms,
        verdict=verdict,
    )


@dataclass(frozen=True)
class WitnessResult:
    """Best misattribution witness found for a pair of distinct populations."""

    function: TabulatedModel
    subset: Subset
    delta_abs: float
    source: str

    def to_dict(self) -> dict:
        return {
            "subset": list(self.subset),
            "delta_abs": self.delta_abs,
            "source": self.source,
            "function_values": [float(v) for v in self.function.values.reshape(-1)],
        }


def _indicator_candidates(grid):
    for axis in range(1, grid.dims + 1):
        for value_index, value in enumerate(grid.axes[axis - 1]):
            table = np.zeros(grid.shape)
            index = [slice(None)] * grid.dims
            index[axis - 1] = value_index
            table[tuple(index)] = 1.0
            yield f"indicator(x{axis}={value})", tabulated_model(grid, table)


def witness_search(
    h: DiscreteJoint,
    k: DiscreteJoint,
    backend: str = "fanova_generalized",
    trials: int = 200,
    seed: int = 0,
) -> WitnessResult:
    """Search for a function the backend misattributes on, given h != k.

    Every run evaluates the deterministic coordinate-indicator family and
    ``trials`` tabulated functions with independent standard-normal values
    (seeded and split per trial, so results are reproducible), maximizing
    the absolute misattribution value over all non-empty subsets.
    """
    if h.grid != k.grid:
        raise GridMismatchError("both populations must live on one grid")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if np.allclose(h.weights, k.weights, rtol=0.0, atol=1e-14):
        raise ValueError(
            "populations are identical; no misattribution witness exists"
        )
    candidates = list(_indicator_candidates(h.grid))
    for child, trial in zip(
        np.random.SeedSequence(seed).spawn(trials), range(trials)
    ):
        rng = np.random.default_rng(child)
        candidates.append(
            (f"trial {trial}", tabulated_model(h.grid, rng.standard_normal(h.grid.shape)))
        )

    subsets = [s for s in default_subsets(h.dims) if s != ()]
    best: WitnessResult | None = None
    for source, f in candidates:
        dec_k = decompose(backend, f, k, None)
        dec_h = decompose(backend, f, h, None)
        for s in subsets:
            delta = component_expectation(dec_k, s, h) - component_expectation(
                dec_h, s, h
            )
            if best is None or abs(delta) > best.delta_abs:
                best = WitnessResult(
                    function=f, subset=s, delta_abs=abs(delta), source=source
                )
    assert best is not None
    return best


@dataclass(frozen=True)
class DiagnosticsReport:
    """Bundle of diagnostic outcomes for one run; absent sections stay absent."""

    misattribution: Mapping[Subset, float] | None = None
    expected_zero: tuple[ExpectedZeroCheck, ...] | None = None
    affine_gap: AffineClassGapReport | None = None
    probes: tuple[JacobianProbe, ...] | None = None
    witness: WitnessResult | None = None

    @property
    def is_empty(self) -> bool:
        return (
            self.misattribution is None
            and self.expected_zero is None
            and self.affine_gap is None
            and self.probes is None
            and self.witness is None
        )

    def to_dict(self) -> dict:
        out: dict = {}
        if self.misattribution is not None:
            out["misattribution"] = {
                "{" + ",".join(str(i) for i in s) + "}": v
                for s, v in self.misattribution.items()
            }
        if self.expected_zero is not None:
            out["expected_zero"] = [c.to_dict() for c in self.expected_zero]
        if self.affine_gap is not None:
            out["affine_gap"] = self.affine_gap.to_dict()
        if self.probes is not None:
            out["jacobian_probes"] = [p.to_dict() for p in self.probes]
        if self.witness is not None:
            out["witness"] = self.witness.to_dict()
        return out
