"""Decomposing a mean-outcome gap between two populations.

Two layers: the classical linear two-population decomposition over
regression coefficients and covariate means, and its generalization that
splits the gap into per-subset conditional-outcome terms plus sequential
covariate-distribution swap terms, over any additive functional
decomposition backend.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .ale import ale_decomposition
from .fanova import (
    Decomposition,
    Subset,
    canonical_subset,
    component_expectation,
    default_subsets,
    fanova_generalized,
    fanova_recursive,
    fanova_uniform,
)
from .functions import FunctionModel
from .measures import DiscreteJoint, GridMismatchError, _conditional_swap, expectation

__all__ = [
    "BACKENDS",
    "decompose",
    "KOBReport",
    "kob_decompose",
    "ImportanceReport",
    "importance_decompose",
    "delta_x_term",
    "verify_telescoping",
]


def _ale_backend(f: FunctionModel, measure: DiscreteJoint, max_order):
    return ale_decomposition(f, measure)


def _uniform_backend(f: FunctionModel, measure: DiscreteJoint, max_order):
    return fanova_uniform(f, measure.grid, max_order)


BACKENDS = {
    "fanova_generalized": fanova_generalized,
    "fanova_recursive": fanova_recursive,
    "fanova_uniform": _uniform_backend,
    "ale": _ale_backend,
}


def decompose(
    backend: str, f: FunctionModel, measure: DiscreteJoint, max_order: int | None = None
) -> Decomposition:
    """Run the named decomposition backend on (f, measure)."""
    try:
        fn = BACKENDS[backend]
    except KeyError:
        known = ", ".join(sorted(BACKENDS))
        raise ValueError(f"unknown backend {backend!r}; available: {known}") from None
    return fn(f, measure, max_order)


# ---------------------------------------------------------------------------
# Classical linear decomposition


@dataclass(frozen=True)
class KOBReport:
    """Per-covariate split of a mean gap under linear conditional models.

    ``yx_effects[j]`` is the part of the gap from the coefficient change on
    covariate j, evaluated at population K's mean; ``covariate_effects[j]``
    is the part from the mean shift of covariate j at population H's
    coefficient.  ``total`` is the full gap, and equals the sum of all
    terms exactly.
    """

    yx_effects: tuple[float, ...]
    covariate_effects: tuple[float, ...]
    total: float

    @property
    def yx_total(self) -> float:
        return float(sum(self.yx_effects))

    @property
    def covariate_total(self) -> float:
        return float(sum(self.covariate_effects))

    def to_dict(self) -> dict:
        return {
            "yx_effects": list(self.yx_effects),
            "covariate_effects": list(self.covariate_effects),
            "total": self.total,
        }


def kob_decompose(beta_h, beta_k, mean_h, mean_k) -> KOBReport:
    """Split mean_k . beta_k - mean_h . beta_h into coefficient and mean terms."""
    bh = np.asarray(beta_h, dtype=float).reshape(-1)
    bk = np.asarray(beta_k, dtype=float).reshape(-1)
    mh = np.asarray(mean_h, dtype=float).reshape(-1)
    mk = np.asarray(mean_k, dtype=float).reshape(-1)
    if not bh.size == bk.size == mh.size == mk.size:
        raise ValueError(
            "coefficient and mean vectors must share one dimension, got "
            f"{bh.size}, {bk.size}, {mh.size}, {mk.size}"
        )
    return KOBReport(
        yx_effects=tuple(mk * (bk - bh)),
        covariate_effects=tuple((mk - mh) * bh),
        total=float(mk @ bk - mh @ bh),
    )


# ---------------------------------------------------------------------------
# Generalized importance decomposition


@dataclass(frozen=True)
class ImportanceReport:
    """Terms of the two-population importance decomposition.

    ``yx_terms[S]`` holds the covariate distribution fixed at H and swaps
    the S-component of the conditional-outcome model from H's to K's;
    ``x_terms[j]`` swaps the distribution of covariate j (in ``swap_order``)
    from H's to K's conditional on the not-yet-swapped axes.  The terms
    telescope: their sum equals ``total`` up to ``telescoping_residual``,
    which is zero (to solver precision) for full-order backends.
    """

    backend: str
    ordering: tuple[Subset, ...]
    yx_terms: Mapping[Subset, float]
    x_terms: Mapping[int, float]
    swap_order: tuple[int, ...]
    total: float
    telescoping_residual: float

    def to_dict(self) -> dict:
        return {
            "backend": self.backend,
            "ordering": [list(s) for s in self.ordering],
            "yx_terms": {_subset_key(s): v for s, v in self.yx_terms.items()},
            "x_terms": {str(j): v for j, v in self.x_terms.items()},
            "swap_order": list(self.swap_order),
            "total": self.total,
            "telescoping_residual": self.telescoping_residual,
        }


def _subset_key(s: Subset) -> str:
    return "{" + ",".join(str(i) for i in s) + "}"


def _validate_ordering(ordering, d: int) -> tuple[Subset, ...]:
    subsets = tuple(canonical_subset(s) for s in ordering)
    expected = set(default_subsets(d))
    if len(subsets) != len(set(subsets)) or set(subsets) != expected:
        raise ValueError(
            f"ordering must enumerate all {2**d} subsets of axes 1..{d} exactly once"
        )
    return subsets


def importance_decompose(
    f_h: FunctionModel,
    f_k: FunctionModel,
    h: DiscreteJoint,
    k: DiscreteJoint,
    backend: str,
    ordering: Iterable[Iterable[int]] | None = None,
    max_order: int | None = None,
    swap_order: Sequence[int] | None = None,
) -> ImportanceReport:
    """Decompose E_K[f_k] - E_H[f_h] into conditional-outcome and covariate terms.

    Each ``yx`` term is a two-term difference of component expectations
    under H, so it does not depend on its position in ``ordering``.  The
    covariate swaps do depend on ``swap_order`` (default: axis index
    ascending) when the populations are dependent.  Subsets the backend
    does not produce (truncation, ALE's pair term) contribute zero and
    surface in the telescoping residual instead.
    """
    if h.grid != k.grid:
        raise GridMismatchError("both populations must live on one grid")
    d = h.dims
    ordering = (
        tuple(default_subsets(d)) if ordering is None else _validate_ordering(ordering, d)
    )
    if swap_order is None:
        swap_order = tuple(range(1, d + 1))
    else:
        swap_order = tuple(int(j) for j in swap_order)
        if sorted(swap_order) != list(range(1, d + 1)):
            raise ValueError(f"swap_order must be a permutation of 1..{d}")

    dec_k = decompose(backend, f_k, k, max_order)
    dec_h = decompose(backend, f_h, h, max_order)
    yx_terms = {
        s: component_expectation(dec_k, s, h) - component_expectation(dec_h, s, h)
        for s in ordering
    }

    x_terms: dict[int, float] = {}
    previous = expectation(h, f_k)
    for depth in range(1, d + 1):
        swapped = tuple(sorted(swap_order[:depth]))
        current = expectation(_conditional_swap(k, h, swapped), f_k)
        x_terms[swap_order[depth - 1]] = current - previous
        previous = current

    total = expectation(k, f_k) - expectation(h, f_h)
    residual = abs(sum(yx_terms.values()) + sum(x_terms.values()) - total)
    return ImportanceReport(
        backend=backend,
        ordering=ordering,
        yx_terms=yx_terms,
        x_terms=x_terms,
        swap_order=swap_order,
        total=total,
        telescoping_residual=residual,
    )


def delta_x_term(
    f_k: FunctionModel, h: DiscreteJoint, k: DiscreteJoint, j: int
) -> float:
    """Single covariate-swap term for axis ``j`` under ascending swap order."""
    if not 1 <= j <= h.dims:
        raise ValueError(f"j must be in 1..{h.dims}, got {j}")
    after = _conditional_swap(k, h, tuple(range(1, j + 1)))
    before = _conditional_swap(k, h, tuple(range(1, j)))
    return expectation(after, f_k) - expectation(before, f_k)


def verify_telescoping(report: ImportanceReport, tol: float) -> bool:
    """True when the decomposition terms sum back to the total within tol."""
    return report.telescoping_residual <= tol
