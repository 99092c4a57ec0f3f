import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decomp_lab.measures import (
    Grid,
    GridMismatchError,
    Marginal1D,
    SharedSupportError,
    align_supports,
    embed_on_grid,
    empirical_joint,
    expectation,
    gauss_hermite_marginal,
    hybrid_distribution,
    make_joint_pmf,
    make_product_distribution,
    marginal_of,
)
from decomp_lab.functions import parse_expression


def bern(p):
    return Marginal1D([0.0, 1.0], [1.0 - p, p])


def unif(points):
    points = np.asarray(points, dtype=float)
    return Marginal1D(points, np.full(points.size, 1.0 / points.size))


GRID_2X2 = Grid((np.array([0.0, 1.0]), np.array([0.0, 1.0])))
DEP_WEIGHTS = np.array([0.4, 0.1, 0.1, 0.4])


class TestGrid:
    def test_axis_must_increase(self):
        with pytest.raises(ValueError, match="increasing"):
            Grid((np.array([0.0, 0.0]),))

    def test_empty_axis_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            Grid((np.array([]),))

    def test_points_enumeration(self):
        pts = GRID_2X2.points()
        assert pts.shape == (4, 2)
        assert pts.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]


class TestProductDistribution:
    def test_bernoulli_product_masses(self):
        joint = make_product_distribution([bern(0.3), bern(0.7)])
        assert joint.weights[0, 0] == pytest.approx(0.21, abs=1e-15)
        assert joint.weights[1, 1] == pytest.approx(0.21, abs=1e-15)

    def test_single_marginal_identity(self):
        joint = make_product_distribution([Marginal1D([0.0], [1.0])])
        assert joint.weights.shape == (1,)
        assert joint.weights[0] == 1.0

    def test_population_h_means_are_zero(self):
        joint = make_product_distribution([unif([-1, 1]), unif([-1, 1])])
        assert joint.weights.shape == (2, 2)
        assert np.all(joint.weights == 0.25)
        assert joint.mean(1) == pytest.approx(0.0, abs=1e-15)
        assert joint.mean(2) == pytest.approx(0.0, abs=1e-15)

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            make_product_distribution([])

    def test_non_normalized_marginal_rejected(self):
        with pytest.raises(ValueError, match="sum to 1"):
            Marginal1D([0.0, 1.0], [0.5, 0.6])

    @given(
        st.lists(
            st.floats(min_value=0.05, max_value=1.0),
            min_size=2,
            max_size=4,
        ),
        st.lists(
            st.floats(min_value=0.05, max_value=1.0),
            min_size=2,
            max_size=4,
        ),
    )
    @settings(max_examples=50, deadline=None)
    def test_marginal_consistency(self, raw_a, raw_b):
        a = np.asarray(raw_a) / np.sum(raw_a)
        b = np.asarray(raw_b) / np.sum(raw_b)
        ma = Marginal1D(np.arange(len(a), dtype=float), a)
        mb = Marginal1D(np.arange(len(b), dtype=float), b)
        joint = make_product_distribution([ma, mb])
        assert abs(joint.weights.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(
            marginal_of(joint, [1]).weights, ma.masses, atol=1e-15
        )
        np.testing.assert_allclose(
            marginal_of(joint, [2]).weights, mb.masses, atol=1e-15
        )


class TestJointPmf:
    def test_dependent_joint_accepted(self):
        joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
        assert joint.is_interior
        assert abs(joint.weights.sum() - 1.0) <= 1e-12

    def test_uniform_3x3(self):
        grid = Grid((np.arange(3.0), np.arange(3.0)))
        joint = make_joint_pmf(grid, np.full(9, 1.0 / 9.0))
        assert np.all(joint.weights == 1.0 / 9.0)

    def test_zero_weight_marks_not_interior(self):
        joint = make_joint_pmf(GRID_2X2, np.array([0.0, 0.5, 0.25, 0.25]))
        assert not joint.is_interior

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError, match="nonnegative"):
            make_joint_pmf(GRID_2X2, np.array([-0.1, 0.5, 0.3, 0.3]))

    def test_missing_point_rejected(self):
        with pytest.raises(ValueError, match="entries"):
            make_joint_pmf(GRID_2X2, np.array([0.5, 0.5]))

    def test_bad_total_mass_rejected(self):
        with pytest.raises(ValueError, match="total mass"):
            make_joint_pmf(GRID_2X2, np.array([0.5, 0.5, 0.5, 0.5]))


class TestGaussHermite:
    def test_standard_normal_moments(self):
        m = gauss_hermite_marginal(0.0, 1.0, 21)
        assert abs(m.mean) <= 1e-12
        assert abs(m.moment(2) - 1.0) <= 1e-10

    def test_population_h_first_moment(self):
        m = gauss_hermite_marginal(1.0, 1.0, 21)
        assert abs(m.mean - 1.0) <= 1e-12

    def test_mean_against_numeric_integration(self):
        # independent oracle: trapezoid integration of x * N(x; 0.5, 1) density
        x = np.linspace(-10.0, 11.0, 200001)
        density = np.exp(-0.5 * (x - 0.5) ** 2) / np.sqrt(2 * np.pi)
        oracle = np.trapezoid(x * density, x)
        m = gauss_hermite_marginal(0.5, 1.0, 21)
        assert abs(m.mean - oracle) <= 1e-9

    def test_moment_exactness_up_to_degree(self):
        # degree 2n-1 exactness for n nodes; check a high even moment of N(0,1)
        m = gauss_hermite_marginal(0.0, 1.0, 8)
        # E[X^10] = 9!! = 945 for the standard normal
        assert abs(m.moment(10) - 945.0) <= 1e-10 * 945.0

    def test_invalid_arguments(self):
        with pytest.raises(ValueError, match="nodes"):
            gauss_hermite_marginal(0.0, 1.0, 0)
        with pytest.raises(ValueError, match="sd"):
            gauss_hermite_marginal(0.0, 0.0, 5)


class TestMarginalOf:
    def test_product_recovers_input_marginal(self):
        ma, mb = bern(0.3), bern(0.7)
        joint = make_product_distribution([ma, mb])
        np.testing.assert_allclose(
            marginal_of(joint, [1]).weights, ma.masses, atol=1e-15
        )

    def test_dependent_row_sum(self):
        joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
        # hand row-sum oracle: 0.4 + 0.1 per row
        np.testing.assert_allclose(
            marginal_of(joint, [1]).weights, [0.5, 0.5], atol=1e-15
        )

    def test_all_axes_is_identity(self):
        joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
        np.testing.assert_array_equal(
            marginal_of(joint, [1, 2]).weights, joint.weights
        )

    def test_empty_and_out_of_range_rejected(self):
        joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
        with pytest.raises(ValueError, match="non-empty"):
            marginal_of(joint, [])
        with pytest.raises(ValueError, match="out of range"):
            marginal_of(joint, [3])


class TestHybrid:
    def setup_method(self):
        self.h = make_product_distribution([unif([-1, 1]), unif([-1, 1])])
        self.k = make_product_distribution(
            [Marginal1D([-1.0, 1.0], [0.25, 0.75]), Marginal1D([-1.0, 1.0], [0.6, 0.4])]
        )

    def test_endpoints(self):
        assert hybrid_distribution(self.k, self.h, 0) is self.h
        assert hybrid_distribution(self.k, self.h, 2) is self.k

    def test_product_swap_is_marginal_product(self):
        hybrid = hybrid_distribution(self.k, self.h, 1)
        expected = np.multiply.outer(
            self.k.axis_marginal(1), self.h.axis_marginal(2)
        )
        np.testing.assert_allclose(hybrid.weights, expected, atol=1e-15)

    def test_chain_consistency(self):
        fn = parse_expression("x1 + 2*x2", 2)
        values = [
            expectation(hybrid_distribution(self.k, self.h, j), fn) for j in (0, 1, 2)
        ]
        assert values[0] == pytest.approx(expectation(self.h, fn), abs=1e-14)
        assert values[-1] == pytest.approx(expectation(self.k, fn), abs=1e-14)

    def test_grid_mismatch_rejected(self):
        other = make_product_distribution([unif([0, 1]), unif([-1, 1])])
        with pytest.raises(GridMismatchError):
            hybrid_distribution(other, self.h, 1)

    def test_undefined_conditional_rejected(self):
        k = make_joint_pmf(GRID_2X2, np.array([0.5, 0.0, 0.5, 0.0]))
        h = make_product_distribution([unif([0, 1]), unif([0, 1])])
        with pytest.raises(SharedSupportError, match="zero mass"):
            hybrid_distribution(k, h, 1)

    def test_j_out_of_range(self):
        with pytest.raises(ValueError, match="0..2"):
            hybrid_distribution(self.k, self.h, 3)


class TestExpectation:
    def test_bernoulli_mean(self):
        joint = make_product_distribution([bern(0.3)])
        assert expectation(joint, parse_expression("x1", 1)) == pytest.approx(0.3)

    def test_population_k_mean_shift(self):
        # population with axis-1 mean 2 and axis-2 mean 0
        k = make_product_distribution([unif([1, 3]), unif([-1, 1])])
        assert expectation(k, parse_expression("x1 + x2", 2)) == pytest.approx(
            2.0, abs=1e-14
        )

    def test_dependent_joint_hand_sum(self):
        joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
        # 0*0.4 + 1*0.1 + 1*0.1 + 2*0.4 = 1.0
        assert expectation(joint, parse_expression("x1 + x2", 2)) == pytest.approx(
            1.0, abs=1e-14
        )

    def test_evaluation_failure_reports_point(self):
        joint = make_product_distribution([unif([-1, 1])])
        with pytest.raises(ValueError, match=r"-1\.0"):
            expectation(joint, parse_expression("log(x1)", 1))


class TestEmpiricalAndAlignment:
    def test_empirical_full_factorial(self):
        samples = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
        joint = empirical_joint(samples)
        assert np.all(joint.weights == 0.25)

    def test_empirical_counts_frequencies(self):
        samples = np.array([[0.0], [0.0], [1.0]])
        joint = empirical_joint(samples)
        np.testing.assert_allclose(joint.weights, [2 / 3, 1 / 3])

    def test_embed_preserves_expectations(self):
        small = make_product_distribution([unif([0, 1]), unif([0, 1])])
        target = Grid((np.array([-1.0, 0.0, 1.0]), np.array([0.0, 1.0])))
        embedded = embed_on_grid(small, target)
        fn = parse_expression("x1*x2 + x2", 2)
        assert expectation(embedded, fn) == pytest.approx(
            expectation(small, fn), abs=1e-14
        )
        assert not embedded.is_interior

    def test_embed_rejects_non_superset(self):
        small = make_product_distribution([unif([0, 1])])
        with pytest.raises(GridMismatchError):
            embed_on_grid(small, Grid((np.array([0.0, 2.0]),)))

    def test_align_supports_builds_union(self):
        a = make_product_distribution([unif([0, 1])])
        b = make_product_distribution([unif([1, 2])])
        a2, b2 = align_supports(a, b)
        assert a2.grid == b2.grid
        np.testing.assert_array_equal(a2.grid.axes[0], [0.0, 1.0, 2.0])
        np.testing.assert_allclose(a2.weights, [0.5, 0.5, 0.0])
        np.testing.assert_allclose(b2.weights, [0.0, 0.5, 0.5])


@given(
    st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=4, max_size=4)
)
@settings(max_examples=50, deadline=None)
def test_joint_normalization_invariant(raw):
    w = np.asarray(raw) / np.sum(raw)
    joint = make_joint_pmf(GRID_2X2, w)
    assert abs(joint.weights.sum() - 1.0) <= 1e-12


def test_weights_are_immutable():
    joint = make_joint_pmf(GRID_2X2, DEP_WEIGHTS)
    with pytest.raises(ValueError):
        joint.weights[0, 0] = 0.9
