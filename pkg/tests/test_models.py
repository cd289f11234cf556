"""Model-layer tests: flux values against hand calculations, integrated
diffusion against independent quadrature, critical points against a
polynomial-root oracle, and parameter validation."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from mrfv.errors import ConfigError
from mrfv.models import (
    ClarifierParams,
    TrafficParams,
    build_clarifier,
    build_linear_advection,
    build_traffic,
    check_gamma_alignment,
    gamma_left,
    interface_gammas,
    max_diffusion_derivative,
    max_flux_derivative,
)


@pytest.fixture(scope="module")
def clar():
    return build_clarifier(ClarifierParams())


@pytest.fixture(scope="module")
def clar_diff():
    return build_clarifier(
        ClarifierParams(v_inf=6.75e-6, u_f=0.086, q_l=-1e-5, q_r=2.5e-6, sigma_0=1.0)
    )


@pytest.fixture(scope="module")
def traffic():
    return build_traffic()


# ---------------------------------------------------------------------------
# flux values

class TestClarifierFlux:
    def test_batch_flux_hand_value(self, clar):
        # v_inf u (1-u)^2 at u=1/3: (27/4)(1/3)(4/9) = 1
        assert float(clar.flux((1.0, 0.0), 1.0 / 3.0)) == pytest.approx(1.0, abs=1e-14)

    def test_batch_flux_vanishes_at_extremes(self, clar):
        assert float(clar.flux((1.0, 0.0), 0.0)) == 0.0
        assert float(clar.flux((1.0, 0.0), 1.0)) == 0.0

    def test_composite_outside_vessel(self, clar):
        # x=-2: gamma=(0,-1), f = -(u - 0.8); u=0.5 -> 0.3
        g = gamma_left(clar, -2.0)
        assert g == (0.0, -1.0)
        assert float(clar.flux(g, 0.5)) == pytest.approx(0.3, abs=1e-14)

    def test_composite_inside_vessel(self, clar):
        # x=0.5: gamma=(1,0.6), f = 0.6(u-0.8) + (27/4)u(1-u)^2
        # u=0.5 -> -0.18 + 0.84375 = 0.66375
        g = gamma_left(clar, 0.5)
        assert g == (1.0, 0.6)
        assert float(clar.flux(g, 0.5)) == pytest.approx(0.66375, abs=1e-14)

    def test_flux_du_matches_finite_difference(self, clar):
        rng = np.random.default_rng(7)
        u = rng.uniform(0.02, 0.98, 200)
        h = 1e-7
        for g in clar.gamma_branches:
            fd = (np.asarray(clar.flux(g, u + h)) - np.asarray(clar.flux(g, u - h))) / (2 * h)
            assert np.max(np.abs(np.asarray(clar.flux_du(g, u)) - fd)) < 1e-5


class TestTrafficFlux:
    def test_critical_density(self, traffic):
        p = traffic.params
        assert p.u_c == pytest.approx(220.0 * math.exp(-7.0 / math.e), rel=1e-15)

    def test_free_flow_below_critical(self, traffic):
        # below u_c cars move at the local speed limit
        p = traffic.params
        assert float(traffic.flux((70.0,), 10.0)) == pytest.approx(700.0, abs=1e-10)
        assert float(traffic.flux((25.0,), p.u_c)) == pytest.approx(25.0 * p.u_c, rel=1e-13)

    def test_congested_logarithmic_branch(self, traffic):
        p = traffic.params
        u = 100.0
        expect = 70.0 * u * p.c_log * math.log(p.u_max / u)
        assert float(traffic.flux((70.0,), u)) == pytest.approx(expect, rel=1e-13)

    def test_vanishes_at_jam_density(self, traffic):
        assert float(traffic.flux((70.0,), 220.0)) == 0.0

    def test_flux_du_matches_finite_difference(self, traffic):
        p = traffic.params
        rng = np.random.default_rng(11)
        # avoid the kink at u_c where one-sided derivatives differ
        u = np.concatenate([rng.uniform(0.5, p.u_c - 0.5, 100), rng.uniform(p.u_c + 0.5, 219.0, 100)])
        h = 1e-6
        for g in traffic.gamma_branches:
            fd = (np.asarray(traffic.flux(g, u + h)) - np.asarray(traffic.flux(g, u - h))) / (2 * h)
            assert np.max(np.abs(np.asarray(traffic.flux_du(g, u)) - fd)) < 1e-4


# ---------------------------------------------------------------------------
# critical points and derivative bounds

class TestCriticalPoints:
    def test_clarifier_against_polynomial_roots(self, clar):
        # d/du [q u + v u(1-u)^2] = q + v(3u^2 - 4u + 1); roots from np.roots
        v = 27.0 / 4.0
        for q in (0.6, -1.0):
            expect = sorted(
                r.real
                for r in np.roots([3.0 * v, -4.0 * v, v + q])
                if abs(r.imag) < 1e-12 and 0.0 < r.real < 1.0
            )
            got = clar.flux_critical_points((1.0, q))
            assert len(got) == len(expect)
            for g_, e_ in zip(sorted(got), expect):
                assert g_ == pytest.approx(e_, abs=1e-12)

    def test_no_critical_points_outside_vessel(self, clar):
        assert clar.flux_critical_points((0.0, -1.0)) == ()
        assert clar.flux_critical_points((0.0, 0.6)) == ()

    def test_traffic_maximum(self, traffic):
        # u ln(u_max/u) peaks at u_max/e regardless of the speed limit
        (c,) = traffic.flux_critical_points((70.0,))
        assert c == pytest.approx(220.0 / math.e, rel=1e-14)
        du = 0.05
        f0 = float(traffic.flux((70.0,), c))
        assert f0 > float(traffic.flux((70.0,), c - du))
        assert f0 > float(traffic.flux((70.0,), c + du))


class TestDerivativeBounds:
    def test_clarifier_flux_bound(self, clar):
        # sup |f_u| is attained at u=0 on the (1, 0.6) branch:
        # 0.6 + 27/4 = 7.35, inflated by the 1 percent safety factor
        assert max_flux_derivative(clar) == pytest.approx(7.35 * 1.01, rel=1e-6)

    def test_traffic_flux_bound(self, traffic):
        assert max_flux_derivative(traffic) == pytest.approx(70.0 * 1.01, rel=1e-6)

    def test_bound_dominates_samples(self, clar, traffic):
        rng = np.random.default_rng(3)
        for m in (clar, traffic):
            mf = max_flux_derivative(m)
            u = rng.uniform(0.0, m.u_max, 5000)
            for g in m.gamma_branches:
                assert np.max(np.abs(np.asarray(m.flux_du(g, u)))) <= mf

    def test_traffic_diffusion_bound(self, traffic):
        # a(u) is largest just above u_c where the braking distance still
        # exceeds l_min: v0 C (v(u_c)^2/(2 a_decel) - tau v0 C)
        p = traffic.params
        v0c = p.v_max_free * p.c_log
        vc = v0c * math.log(p.u_max / p.u_c)
        expect = v0c * (vc * vc / (2.0 * p.a_decel) - p.tau * v0c)
        got = max_diffusion_derivative(traffic)
        assert got == pytest.approx(expect, rel=1e-6)
        assert got <= expect  # sup is a one-sided limit, samples sit below it

    def test_nondiffusive_clarifier_bound_is_zero(self, clar):
        assert max_diffusion_derivative(clar) == 0.0


# ---------------------------------------------------------------------------
# integrated diffusion

class TestClarifierDiffusion:
    def test_closed_form_matches_quadrature(self, clar_diff):
        p = clar_diff.params
        scale = p.v_inf * p.sigma_0 * p.beta / (p.delta_rho * p.gravity * p.u_c**p.beta)

        def a_ref(s):
            return scale * s ** (p.beta - 1.0) * (1.0 - s) ** p.c_exp

        for u in (0.15, 0.2, 0.5, 0.7, 0.9, 1.0):
            ref, _ = quad(a_ref, p.u_c, u, epsabs=1e-18, epsrel=1e-13)
            assert float(clar_diff.diffusion_A(u)) == pytest.approx(ref, abs=1e-12)

    def test_degenerate_below_gel_point(self, clar_diff):
        p = clar_diff.params
        u = np.linspace(0.0, p.u_c, 50)
        assert np.all(np.asarray(clar_diff.diffusion_A(u)) == 0.0)
        assert np.all(np.asarray(clar_diff.diffusion_a(u)) == 0.0)

    def test_monotone(self, clar_diff):
        u = np.linspace(0.0, 1.0, 10001)
        A = np.asarray(clar_diff.diffusion_A(u))
        assert np.all(np.diff(A) >= 0.0)

    def test_coefficient_matches_derivative_of_A(self, clar_diff):
        u = np.linspace(0.11, 0.99, 500)
        h = 1e-7
        fd = (np.asarray(clar_diff.diffusion_A(u + h)) - np.asarray(clar_diff.diffusion_A(u - h))) / (2 * h)
        assert np.max(np.abs(fd - np.asarray(clar_diff.diffusion_a(u)))) < 1e-9

    def test_nondiffusive_variant_is_identically_zero(self, clar):
        u = np.linspace(0.0, 1.0, 101)
        assert np.all(np.asarray(clar.diffusion_A(u)) == 0.0)


class TestTrafficDiffusion:
    def test_table_nodes_match_quadrature(self, traffic):
        p = traffic.params
        v0c = p.v_max_free * p.c_log

        def a_ref(s):
            if s <= p.u_c or s > p.u_max:
                return 0.0
            v = v0c * math.log(p.u_max / s)
            return v0c * (max(v * v / (2.0 * p.a_decel), p.l_min) - p.tau * v0c)

        for u in (20.0, 29.331700592230494, 50.0, 110.0, 220.0):
            ref, _ = quad(a_ref, p.u_c, u, points=list(traffic.diffusion_breaks), limit=200)
            # evaluate at the nearest table node so interpolation is exact
            node = round(u / 220.0 * 4096) * 220.0 / 4096
            ref_node, _ = quad(a_ref, p.u_c, node, points=list(traffic.diffusion_breaks), limit=200)
            assert float(traffic.diffusion_A(node)) == pytest.approx(ref_node, abs=1e-8)

    def test_degenerate_below_critical(self, traffic):
        p = traffic.params
        u = np.linspace(0.0, p.u_c - 1e-9, 40)
        assert np.all(np.asarray(traffic.diffusion_a(u)) == 0.0)

    def test_monotone(self, traffic):
        u = np.linspace(0.0, 220.0, 10001)
        A = np.asarray(traffic.diffusion_A(u))
        assert np.all(np.diff(A) >= 0.0)

    def test_braking_distance_switch_location(self, traffic):
        # second kink where v(u)^2 / (2 a_decel) = l_min
        p = traffic.params
        v0c = p.v_max_free * p.c_log
        u_star = p.u_max * math.exp(-math.sqrt(2.0 * p.a_decel * p.l_min) / v0c)
        assert traffic.diffusion_breaks == pytest.approx((p.u_c, u_star), rel=1e-12)


# ---------------------------------------------------------------------------
# gamma geometry

class TestGammaGeometry:
    def test_left_limits_at_breaks(self, clar):
        # interfaces placed exactly on a jump take the value from the left
        assert gamma_left(clar, -1.0) == (0.0, -1.0)
        assert gamma_left(clar, 0.0) == (1.0, -1.0)
        assert gamma_left(clar, 1.0) == (1.0, 0.6)
        assert gamma_left(clar, 2.0) == (0.0, 0.6)

    def test_traffic_left_limits(self, traffic):
        assert gamma_left(traffic, 0.0) == (70.0,)
        assert gamma_left(traffic, 0.5) == (25.0,)
        assert gamma_left(traffic, 1.25) == (25.0,)
        assert gamma_left(traffic, 1.3) == (70.0,)

    def test_interface_arrays(self, clar):
        xs = np.array([-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5])
        g1, g2 = interface_gammas(clar, xs)
        assert g1.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0]
        assert g2.tolist() == [-1.0, -1.0, -1.0, -1.0, 0.6, 0.6, 0.6]

    def test_alignment_accepts_matching_grids(self, clar, traffic):
        check_gamma_alignment(clar, levels=9, n0=1)
        check_gamma_alignment(traffic, levels=10, n0=1)
        check_gamma_alignment(traffic, levels=4, n0=4)

    def test_alignment_rejects_mismatched_grid(self, traffic):
        # two cells over a 10-mile road put interfaces at -5, 0, 5 only
        with pytest.raises(ConfigError):
            check_gamma_alignment(traffic, levels=1, n0=1)


# ---------------------------------------------------------------------------
# initial data

def test_traffic_initial_convoy(traffic):
    x = np.array([-3.0, -2.0, -1.5, -1.0, 0.0])
    u0 = np.asarray(traffic.initial(x))
    assert u0.tolist() == [0.0, 100.0, 100.0, 100.0, 0.0]
    assert traffic.initial_jumps == (-2.0, -1.0)


def test_clarifier_initial_states(clar):
    assert np.all(np.asarray(clar.initial(np.linspace(-2, 2, 9))) == 0.0)
    m = build_clarifier(ClarifierParams(v_inf=6.75e-6, u_f=0.086, q_l=-1e-5,
                                        q_r=2.5e-6, sigma_0=1.0, u_init=0.1))
    x = np.array([-1.5, -1.0, 0.0, 1.0, 1.5])
    assert np.asarray(m.initial(x)).tolist() == [0.0, 0.1, 0.1, 0.1, 0.0]
    assert m.initial_jumps == (-1.0, 1.0)


def test_linear_advection_helper():
    m = build_linear_advection(speed=1.0)
    u = np.linspace(0, 1, 11)
    assert np.allclose(np.asarray(m.flux((0.0, 1.0), u)), u)
    assert max_flux_derivative(m) == pytest.approx(1.01, rel=1e-12)
    assert max_diffusion_derivative(m) == 0.0


# ---------------------------------------------------------------------------
# validation

class TestValidation:
    def test_traffic_negative_diffusion_rejected(self):
        with pytest.raises(ConfigError, match="negative"):
            build_traffic(TrafficParams(l_min=0.01))

    def test_traffic_segment_outside_road(self):
        with pytest.raises(ConfigError):
            build_traffic(TrafficParams(segment=(4.0, 6.0)))

    def test_clarifier_feed_level_outside_vessel(self):
        with pytest.raises(ConfigError):
            build_clarifier(ClarifierParams(x_l=0.5))

    def test_clarifier_wrong_flow_signs(self):
        with pytest.raises(ConfigError):
            build_clarifier(ClarifierParams(q_l=0.5))

    def test_diffusive_clarifier_requires_integer_exponents(self):
        with pytest.raises(ConfigError, match="integer"):
            build_clarifier(ClarifierParams(sigma_0=1.0, beta=5.5))

    def test_diffusive_clarifier_requires_unit_u_max(self):
        with pytest.raises(ConfigError):
            build_clarifier(ClarifierParams(sigma_0=1.0, u_max=0.9))
