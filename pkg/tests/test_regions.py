"""Linear optimization oracles, their derivatives and region geometry."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra.numpy import arrays

from spoplus.regions import (
    FeasibleRegion,
    NonDifferentiableError,
    RegionError,
    RegionKind,
    Status,
    barrier_min_coordinate,
    dual_optimal_value,
    entropy_min_coordinate,
    entropy_valid_range,
    geometry_constants,
    kkt_residual,
    optimal_values,
    oracle_jacobian,
    oracle_solve,
    oracle_vjp_batch,
    primal_reference_solve,
    project_orthogonal,
    solve_batch,
    vertices,
)

# frozen with 30-digit mpmath solves of the level-set oracles
ENTROPY_3_W = (0.193117150800409011, 0.403441424599795494, 0.403441424599795494)
ENTROPY_2_W1 = 0.199709902553977195
BARRIER_2_W1 = 0.0669872981077806766  # (1 - sqrt(3/4)) / 2
XI_L1_2 = 0.169520847198537226

REGIONS = [
    FeasibleRegion.unit_simplex(4),
    FeasibleRegion.box([-1.0, 0.0, 2.0, -0.5], [1.0, 0.5, 3.0, 0.5]),
    FeasibleRegion.l1_ball(4, 1.5),
    FeasibleRegion.entropy_simplex(4, -1.2),
    FeasibleRegion.entropy_simplex(4, -0.4),
    FeasibleRegion.log_barrier_simplex(4),
]
REGION_IDS = ["unit_simplex", "box", "l1_ball", "entropy_tight", "entropy_loose", "log_barrier"]

costs4 = arrays(np.float64, 4, elements=st.floats(-50, 50, allow_nan=False, width=64))


def well_separated(c, rel=1e-6):
    """No near-ties between entries (the oracles treat near-constant inputs as constant)."""
    if np.any((c != 0) & (np.abs(c) < 1e-300)):
        return False  # subnormal entries can round to zero under scaling
    gaps = np.diff(np.sort(c))
    return gaps.size == 0 or bool(gaps.min() > rel * max(1.0, np.abs(c).max()))


def feasible_points(region, rng, n=100):
    """Random points of a region: vertex mixtures, or chords between boundary points."""
    if not region.is_level_set:
        V = vertices(region)
        lam = rng.dirichlet(np.ones(len(V)), size=n)
        return lam @ V
    A = solve_batch(region, rng.standard_normal((n, region.dim))).w
    B = solve_batch(region, rng.standard_normal((n, region.dim))).w
    t = rng.uniform(size=(n, 1))
    return t * A + (1 - t) * B


class TestPolyhedralExamples:
    def test_unit_simplex_picks_cheapest_vertex(self):
        sol = oracle_solve(FeasibleRegion.unit_simplex(3), [3.0, 1.0, 2.0])
        np.testing.assert_array_equal(sol.w, [0.0, 1.0, 0.0])
        assert sol.objective == 1.0
        assert sol.status is Status.EXACT

    def test_simplex_tie_takes_lowest_index(self):
        sol = oracle_solve(FeasibleRegion.unit_simplex(3), [2.0, 1.0, 1.0])
        np.testing.assert_array_equal(sol.w, [0.0, 1.0, 0.0])
        assert sol.status is Status.DEGENERATE_TIE_BROKEN

    def test_l1_ball_moves_against_largest_entry(self):
        sol = oracle_solve(FeasibleRegion.l1_ball(2, 1.0), [9.0, 0.0])
        np.testing.assert_array_equal(sol.w, [-1.0, 0.0])
        assert sol.objective == -9.0

    def test_l1_ball_tie_on_magnitude(self):
        sol = oracle_solve(FeasibleRegion.l1_ball(3, 2.0), [1.0, -1.0, 0.5])
        np.testing.assert_array_equal(sol.w, [-2.0, 0.0, 0.0])
        assert sol.status is Status.DEGENERATE_TIE_BROKEN

    def test_box_takes_opposite_bounds(self):
        region = FeasibleRegion.box([-1.0, 0.0, 2.0], [1.0, 4.0, 3.0])
        np.testing.assert_array_equal(oracle_solve(region, [1.0, -2.0, 0.5]).w, [-1.0, 4.0, 2.0])

    def test_box_zero_cost_uses_lower_bound(self):
        region = FeasibleRegion.box([-1.0, 0.0], [1.0, 4.0])
        sol = oracle_solve(region, [0.0, 1.0])
        np.testing.assert_array_equal(sol.w, [-1.0, 0.0])
        assert sol.status is Status.DEGENERATE_TIE_BROKEN


class TestLevelSetExamples:
    def test_entropy_three_dims_frozen(self):
        region = FeasibleRegion.entropy_simplex(3, -1.05)
        sol = oracle_solve(region, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(sol.w, ENTROPY_3_W, rtol=0, atol=1e-12)
        assert sol.status is Status.CONVERGED
        assert sol.residual <= 1e-12

    def test_entropy_two_dims_frozen(self):
        sol = oracle_solve(FeasibleRegion.entropy_simplex(2, -0.5), [1.0, 0.0])
        assert sol.w[0] == pytest.approx(ENTROPY_2_W1, abs=1e-12)

    def test_barrier_two_dims_closed_form(self):
        sol = oracle_solve(FeasibleRegion.log_barrier_simplex(2), [1.0, 0.0])
        assert FeasibleRegion.log_barrier_simplex(2).level_r == pytest.approx(4 * math.log(2))
        assert sol.w[0] == pytest.approx(BARRIER_2_W1, abs=1e-12)

    @pytest.mark.parametrize("region", [FeasibleRegion.entropy_simplex(5, -1.0),
                                        FeasibleRegion.log_barrier_simplex(5)], ids=["entropy", "barrier"])
    def test_constant_cost_gives_uniform_point(self, region):
        """With no preferred direction, the center of the simplex is optimal."""
        sol = oracle_solve(region, [2.5] * 5)
        np.testing.assert_allclose(sol.w, 0.2, atol=1e-15)
        assert sol.objective == pytest.approx(2.5)

    def test_entropy_matches_reference_solvers(self, rng):
        region = FeasibleRegion.entropy_simplex(4, -1.0)
        for _ in range(5):
            c = rng.standard_normal(4)
            sol = oracle_solve(region, c)
            assert sol.objective == pytest.approx(dual_optimal_value(region, c), abs=1e-9)
            assert c @ primal_reference_solve(region, c) == pytest.approx(sol.objective, abs=1e-6)

    def test_heavy_tailed_cost_still_accurate(self):
        region = FeasibleRegion.entropy_simplex(50, -3.9)
        c = np.exp(np.linspace(-2.0, 9.0, 50))
        sol = oracle_solve(region, c)
        assert sol.residual <= 1e-9
        assert kkt_residual(region, c, sol) <= 1e-9


class TestOracleInvariants:
    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    def test_feasible_and_optimal_against_sampled_points(self, region, rng):
        C = rng.standard_normal((200, region.dim)) * 3.0
        sol = solve_batch(region, C)
        z = np.einsum("ij,ij->i", C, sol.w)
        for c, w, zc in zip(C[:20], sol.w[:20], z[:20]):
            assert region.contains(w, tol=1e-9)
            others = feasible_points(region, rng)
            assert np.all(others @ c >= zc - 1e-9)

    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    @given(c=costs4, scale=st.floats(1e-3, 1e3))
    def test_scale_invariance(self, region, c, scale):
        assume(well_separated(c))
        w1 = solve_batch(region, c[None]).w[0]
        w2 = solve_batch(region, (scale * c)[None]).w[0]
        np.testing.assert_allclose(w1, w2, atol=1e-7)

    @pytest.mark.parametrize("region", [r for r in REGIONS if r.on_simplex],
                             ids=[i for r, i in zip(REGIONS, REGION_IDS) if r.on_simplex])
    @given(c=costs4, shift=st.floats(-100, 100))
    def test_simplex_regions_ignore_constant_shifts(self, region, c, shift):
        assume(well_separated(c) and well_separated(c + shift))
        w1 = solve_batch(region, c[None]).w[0]
        w2 = solve_batch(region, (c + shift)[None]).w[0]
        np.testing.assert_allclose(w1, w2, atol=1e-7)

    @pytest.mark.parametrize("region", [r for r in REGIONS if r.is_level_set],
                             ids=[i for r, i in zip(REGIONS, REGION_IDS) if r.is_level_set])
    @given(c=costs4)
    def test_level_constraint_active(self, region, c):
        # with tied minimal entries a loose entropy set can contain the whole tied face
        assume(well_separated(c))
        sol = oracle_solve(region, c)
        assert abs(region.level_value(sol.w) - region.level_r) <= 1e-9
        assert sol.multiplier_u > 0
        if np.all(sol.w >= np.finfo(float).tiny):
            assert kkt_residual(region, c, sol) <= 1e-9

    @given(c=costs4)
    def test_optimal_value_is_min_over_vertices(self, c):
        for region in REGIONS[:3]:
            assert optimal_values(region, c[None])[0] == pytest.approx(float(np.min(vertices(region) @ c)),
                                                                        abs=1e-12)

    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    def test_batch_agrees_with_single_calls(self, region, rng):
        C = rng.standard_normal((10, region.dim))
        W = solve_batch(region, C).w
        for c, w in zip(C, W):
            np.testing.assert_array_equal(oracle_solve(region, c).w, w)

    def test_level_oracle_is_lipschitz_in_direction(self, rng):
        region = FeasibleRegion.entropy_simplex(4, -1.2)
        L = geometry_constants(region).L_smooth
        for _ in range(50):
            c = rng.standard_normal(4)
            c2 = c + 1e-4 * rng.standard_normal(4)
            u1 = project_orthogonal(c) / np.linalg.norm(project_orthogonal(c))
            u2 = project_orthogonal(c2) / np.linalg.norm(project_orthogonal(c2))
            dw = np.linalg.norm(oracle_solve(region, c).w - oracle_solve(region, c2).w)
            # a generous multiple of the Lipschitz constant of the direction map
            assert dw <= 4.0 * L * np.linalg.norm(u1 - u2) + 1e-12


class TestOrthogonalProjection:
    def test_examples(self):
        np.testing.assert_allclose(project_orthogonal([1.0, 2.0, 3.0]), [-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(project_orthogonal([4.0, 4.0]), [0.0, 0.0])

    @given(c=costs4)
    def test_idempotent_and_sum_zero(self, c):
        p = project_orthogonal(c)
        assert abs(p.sum()) <= 1e-9
        np.testing.assert_allclose(project_orthogonal(p), p, atol=1e-12)


class TestJacobian:
    region = FeasibleRegion.entropy_simplex(3, -1.05)

    def test_annihilates_ones(self):
        J = oracle_jacobian(self.region, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(J @ np.ones(3), 0.0, atol=1e-13)
        np.testing.assert_allclose(np.ones(3) @ J, 0.0, atol=1e-13)
        np.testing.assert_allclose(J, J.T, atol=1e-14)

    def test_finite_differences(self, rng):
        for c in [np.array([1.0, 0.0, 0.0]), *rng.standard_normal((5, 3))]:
            J = oracle_jacobian(self.region, c)
            h = 1e-5
            fd = np.empty((3, 3))
            for k in range(3):
                e = np.zeros(3)
                e[k] = h
                fd[:, k] = (oracle_solve(self.region, c + e).w - oracle_solve(self.region, c - e).w) / (2 * h)
            np.testing.assert_allclose(J, fd, atol=1e-5 * max(1.0, np.abs(J).max()))

    def test_vjp_matches_dense_jacobian(self, rng):
        C = rng.standard_normal((6, 3))
        G = rng.standard_normal((6, 3))
        out, W = oracle_vjp_batch(self.region, C, G)
        for c, g, o, w in zip(C, G, out, W):
            np.testing.assert_allclose(o, oracle_jacobian(self.region, c).T @ g, atol=1e-13)
            np.testing.assert_array_equal(w, oracle_solve(self.region, c).w)

    def test_constant_cost_is_nondifferentiable(self):
        with pytest.raises(NonDifferentiableError):
            oracle_jacobian(self.region, [2.0, 2.0, 2.0])

    def test_only_entropy_has_a_jacobian(self):
        with pytest.raises(RegionError):
            oracle_jacobian(FeasibleRegion.unit_simplex(3), [1.0, 2.0, 3.0])


class TestGeometry:
    def test_l1_ball_two_dims(self):
        g = geometry_constants(FeasibleRegion.l1_ball(2, 1.0))
        assert g.diameter == 2.0
        assert g.width == pytest.approx(math.sqrt(2.0))
        assert g.xi == pytest.approx(XI_L1_2, rel=1e-14)

    def test_unit_simplex_has_zero_width(self):
        g = geometry_constants(FeasibleRegion.unit_simplex(5))
        assert g.diameter == pytest.approx(math.sqrt(2.0))
        assert g.width == 0.0 and g.xi == 0.0
        assert g.mu is None

    def test_box(self):
        g = geometry_constants(FeasibleRegion.box([0.0, 0.0], [3.0, 4.0]))
        assert g.diameter == 5.0 and g.width == 3.0

    def test_entropy_constants(self):
        g = geometry_constants(FeasibleRegion.entropy_simplex(3, -1.05))
        assert g.mu == 1.0
        assert g.f_min == pytest.approx(-math.log(3))
        assert g.t_min == pytest.approx(ENTROPY_3_W[0], abs=1e-14)
        assert g.L_smooth == pytest.approx(1.0 / ENTROPY_3_W[0], rel=1e-12)

    def test_entropy_touching_boundary_has_infinite_smoothness(self):
        g = geometry_constants(FeasibleRegion.entropy_simplex(3, -0.5))
        assert g.t_min == 0.0 and math.isinf(g.L_smooth)
        with pytest.raises(RegionError):
            g.require_level()

    def test_barrier_min_coordinate_two_dims(self):
        assert barrier_min_coordinate(2, 4 * math.log(2)) == pytest.approx(BARRIER_2_W1, abs=1e-14)

    def test_valid_range(self):
        lo, hi = entropy_valid_range(50)
        assert lo == pytest.approx(-math.log(50)) and hi == pytest.approx(-math.log(49))

    @given(d=st.integers(2, 60), frac=st.floats(0.01, 0.99))
    def test_min_coordinate_lies_on_level_set(self, d, frac):
        lo, hi = entropy_valid_range(d)
        r = lo + frac * (hi - lo)
        t = entropy_min_coordinate(d, r)
        rest = (1 - t) / (d - 1)
        assert 0 < t < 1 / d
        assert t * math.log(t) + (1 - t) * math.log(rest) == pytest.approx(r, abs=1e-9)

    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    def test_constants_are_consistent(self, region):
        g = geometry_constants(region)
        assert g.diameter >= g.width >= 0
        assert 0 <= g.xi <= 1
        if g.mu is not None:
            assert g.L_smooth >= g.mu > 0

    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    def test_diameter_bounds_sampled_pairs(self, region, rng):
        P = feasible_points(region, rng, 200)
        Q = feasible_points(region, rng, 200)
        assert np.linalg.norm(P - Q, axis=1).max() <= geometry_constants(region).diameter + 1e-12


class TestValidation:
    def test_entropy_threshold_range(self):
        with pytest.raises(RegionError):
            FeasibleRegion.entropy_simplex(3, -2.0)
        with pytest.raises(RegionError):
            FeasibleRegion.entropy_simplex(3, 0.0)

    def test_barrier_threshold_range(self):
        with pytest.raises(RegionError):
            FeasibleRegion.log_barrier_simplex(3, 3 * math.log(3))

    def test_bad_box_and_ball(self):
        with pytest.raises(RegionError):
            FeasibleRegion.box([1.0, 0.0], [0.0, 1.0])
        with pytest.raises(RegionError):
            FeasibleRegion.l1_ball(2, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(RegionError):
            oracle_solve(FeasibleRegion.unit_simplex(3), [1.0, 2.0])

    def test_nonfinite_cost(self):
        with pytest.raises(RegionError):
            oracle_solve(FeasibleRegion.l1_ball(2), [math.nan, 0.0])
        with pytest.raises(RegionError):
            solve_batch(FeasibleRegion.entropy_simplex(2, -0.5), [[math.inf, 0.0]])

    @pytest.mark.parametrize("region", REGIONS, ids=REGION_IDS)
    def test_config_round_trip(self, region):
        assert FeasibleRegion.from_config(region.to_config()) == region

    def test_kind_from_string(self):
        assert FeasibleRegion("unit_simplex", 2).kind is RegionKind.UNIT_SIMPLEX


def test_loose_entropy_tie_returns_face_center():
    region = FeasibleRegion.entropy_simplex(4, -0.4)
    sol = oracle_solve(region, [1.0, 0.0, 0.0, 0.0])
    np.testing.assert_allclose(sol.w, [0.0, 1 / 3, 1 / 3, 1 / 3], atol=1e-15)
    assert sol.status is Status.DEGENERATE_TIE_BROKEN
    assert region.contains(sol.w)
