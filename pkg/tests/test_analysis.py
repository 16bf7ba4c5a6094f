"""Envelope functions, asymptotic classification, bounds and convexity checks."""
import math

import numpy as np
import pytest

from conftest import constant
from radplan.analysis import (
    check_bounds, check_convexity, classify, envelope_profiles, limit_identity, m_function, p_bar, p_under,
)
from radplan.errors import UnsupportedDimensionError
from radplan.nonlinearity import NonlinearityPair
from radplan.radial_solver import GridConfig, RadialProblem, picard_solve


def exp_decay(r):
    return np.exp(-np.asarray(r, dtype=float))


class TestEnvelopes:
    def test_model_p_bar_spot_value(self, model_problem):
        # r^4/(4 (N+2) |sigma|^4) + alpha r^2/(N |sigma|^2) at r = 1
        assert p_bar(model_problem, 1.0) == pytest.approx(7.0 / 60.0, rel=1e-12)

    def test_model_p_under_spot_value(self, model_problem):
        assert p_under(model_problem, 1.0) == pytest.approx(1.0 / 180.0, rel=1e-12)

    def test_zero_radius(self, model_problem):
        assert p_bar(model_problem, 0.0) == 0.0 and p_under(model_problem, 0.0) == 0.0

    def test_negative_radius(self, model_problem):
        with pytest.raises(ValueError):
            p_bar(model_problem, -1.0)

    def test_constant_coefficients(self):
        prob = RadialProblem(4, constant(1.0), constant(2.0), NonlinearityPair.model_log(), 1.0)
        # (a + b) r^2 / (2N)
        assert p_bar(prob, 3.0) == pytest.approx(3.0 * 9.0 / 8.0, rel=1e-12)

    def test_m_function_branches(self):
        prob1 = RadialProblem(3, constant(2.0), constant(5.0), NonlinearityPair.model_log(), 1.0)
        assert m_function(prob1, 0.3) == pytest.approx(2.0)  # a h(1), g(1) = 0
        probe = RadialProblem(3, constant(2.0), constant(5.0), NonlinearityPair.model_log(), math.e)
        assert m_function(probe, 0.3) == pytest.approx(7.0 * math.e)  # h(e) = g(e) = e
        prob2 = RadialProblem(3, constant(2.0), constant(5.0), NonlinearityPair.model_log(), 2.0)
        assert m_function(prob2, 0.3) == pytest.approx(7.0 * min(2.0, 2.0 * math.log(2.0)))

    def test_profiles_ordered(self, model_problem, model_grid):
        lo, hi = envelope_profiles(model_problem, model_grid.grid)
        assert np.all(lo <= hi + 1e-15)
        assert lo[0] == 0.0 and hi[0] == 0.0


class TestClassify:
    def test_model_is_large(self, model_problem):
        rep = classify(model_problem)
        assert rep.classification == "Large"
        assert math.isinf(rep.p_under_estimate)

    def test_integrable_coefficients_are_bounded(self):
        prob = RadialProblem(3, exp_decay, exp_decay, NonlinearityPair.model_log(), 2.0)
        rep = classify(prob)
        assert rep.classification == "Bounded"
        # (1/(N-2)) int_0^inf r (a + b) dr = 2
        assert rep.p_bar_estimate == pytest.approx(2.0, rel=1e-9)

    def test_single_exponential_limit(self):
        prob = RadialProblem(3, exp_decay, constant(0.0), NonlinearityPair.model_log(), 2.0)
        rep = classify(prob)
        assert rep.classification == "Bounded"
        assert rep.p_bar_estimate == pytest.approx(1.0, rel=1e-9)

    def test_borderline_is_inconclusive(self):
        # a = (1+r)^-2 gives P_bar ~ log r: neither settled nor growing tenfold per decade
        prob = RadialProblem(3, lambda r: (1.0 + np.asarray(r)) ** -2, constant(0.0),
                             NonlinearityPair.model_log(), 1.0)
        assert classify(prob).classification == "Inconclusive"

    @pytest.mark.parametrize("probes", [(10.0, 100.0, 1000.0), (10.0, 20.0, 30.0, 40.0), (100.0, 10.0, 1e3, 1e4)])
    def test_bad_schedules(self, model_problem, probes):
        with pytest.raises(ValueError):
            classify(model_problem, probes)

    def test_report_serialises(self, model_problem):
        d = classify(model_problem).as_dict()
        assert d["classification"] == "Large" and len(d["probe_radii"]) == 4


class TestLimitIdentity:
    def test_exponential(self):
        prob = RadialProblem(3, exp_decay, constant(0.0), NonlinearityPair.model_log(), 1.0)
        li = limit_identity(prob)
        assert li.tail_converged and not li.inconclusive
        assert li.lhs == pytest.approx(1.0, abs=1e-9)
        assert li.rhs == pytest.approx(1.0, abs=1e-12)

    def test_algebraic_decay_in_four_dimensions(self):
        # (1/2) int_0^inf r (1+r)^-4 dr = 1/12
        prob = RadialProblem(4, lambda r: (1.0 + np.asarray(r)) ** -4, constant(0.0),
                             NonlinearityPair.model_log(), 1.0)
        li = limit_identity(prob)
        assert li.rhs == pytest.approx(1.0 / 12.0, rel=1e-10)
        assert li.lhs == pytest.approx(1.0 / 12.0, rel=1e-6)

    def test_both_sides_diverge(self, model_problem):
        li = limit_identity(model_problem)
        assert math.isinf(li.lhs) and math.isinf(li.rhs)
        assert li.relative_gap == 0.0

    @pytest.mark.parametrize("N", [1, 2])
    def test_low_dimension_rejected(self, N):
        prob = RadialProblem(N, exp_decay, constant(0.0), NonlinearityPair.model_log(), 1.0)
        with pytest.raises(UnsupportedDimensionError):
            limit_identity(prob)


class TestBounds:
    def test_model_bounds_hold(self, model_problem, model_solution):
        rep = check_bounds(model_problem, model_solution)
        assert rep.all_hold, rep.margins
        assert math.isfinite(rep.c1) and rep.c1 >= model_solution.u[-1]

    def test_upper_envelope_against_closed_form(self, model_problem, model_solution):
        rep = check_bounds(model_problem, model_solution)
        r = model_solution.grid
        pb = r**4 / 180.0 + r**2 / 9.0
        expected = np.exp(np.exp(pb) - 1.0)
        # the grid profile of P_bar carries an O(dr^2) ~ 1e-8 discretisation error
        np.testing.assert_allclose(rep.upper_envelope, expected, rtol=1e-7)

    def test_lower_envelope_against_closed_form(self, model_problem, model_solution):
        rep = check_bounds(model_problem, model_solution)
        r = model_solution.grid
        np.testing.assert_allclose(rep.lower_envelope, 1.0 + r**4 / 180.0, atol=1e-8)

    def test_violation_is_reported(self, model_problem, model_solution):
        fake = type(model_solution)(model_solution.grid, model_solution.u * 0.5 + 0.5,
                                    model_solution.du, 1, True, "fake")
        rep = check_bounds(model_problem, fake)
        assert not rep.lower_envelope_holds and rep.worst_margin < 0

    def test_upper_envelope_infinite_when_h_infinity_reached(self, cubic_problem):
        sol = picard_solve(cubic_problem, GridConfig(r_max=1.5, n_points=1501))
        rep = check_bounds(cubic_problem, sol)
        # P_bar(r) = r^2/3 exceeds H(inf) ~ 0.4553 once r > 1.1687
        inside = sol.grid < 1.16
        assert np.all(np.isfinite(rep.upper_envelope[inside]))
        assert np.all(np.isinf(rep.upper_envelope[sol.grid > 1.17]))
        assert rep.upper_envelope_holds and rep.lower_envelope_holds


class TestConvexity:
    @pytest.mark.parametrize("u0", [1.0, math.e, 3.0])
    def test_constant_coefficients(self, u0):
        prob = RadialProblem(3, constant(1.0), constant(1.0), NonlinearityPair.model_log(), u0)
        rep = check_convexity(prob, picard_solve(prob, GridConfig(r_max=1.0, n_points=4001)))
        assert rep.applicable and rep.convex
        assert rep.origin_error <= 1e-6

    def test_model(self, model_problem, model_solution):
        rep = check_convexity(model_problem, model_solution)
        assert rep.applicable and rep.convex and rep.origin_error <= 1e-6

    def test_decreasing_coefficient_not_applicable(self):
        prob = RadialProblem(3, exp_decay, constant(0.0), NonlinearityPair.model_log(), 2.0)
        rep = check_convexity(prob, picard_solve(prob, GridConfig(r_max=2.0, n_points=401)))
        assert not rep.applicable
