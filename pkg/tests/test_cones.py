#!/usr/bin/env python3
"""
Test Suite for exponential cones and comparison certificates

This module tests cone evaluation and fitting, single comparison checks,
the randomized certification scan and the almost-Lipschitz estimate.
"""

import unittest
import math
from pathlib import Path
import sys

import numpy as np

# Add the src directory to the path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.btow.bias import OddsFunction, bias_for
from src.btow.cones import (CecReport, CecScanner, ConeSpec, cec_check, cec_scan, cone_eval, cone_field,
                            cone_profile, discrete_boundary, fit_cone, lipschitz_check, parse_slack_rule)
from src.btow.error_handler import ValidationError
from src.btow.harmonic import ValueField, solve_value
from src.btow.metric_space import ball_index, build_grid_domain, build_interval


class TestCones(unittest.TestCase):
    """Test cases for cone evaluation and fitting."""

    def test_profiles(self):
        """Test both signs of the cone for positive, negative and zero β."""
        r = np.array([0.0, 0.5, 1.0])
        np.testing.assert_allclose(cone_profile(1.0, 1, r), 1 - np.exp(-r))
        np.testing.assert_allclose(cone_profile(1.0, -1, r), 1 - np.exp(r))
        np.testing.assert_allclose(cone_profile(-2.0, 1, r), np.exp(2 * r) - 1)
        np.testing.assert_allclose(cone_profile(0.0, -1, r), -r)
        # ι=+ increases and ι=− decreases in r whatever the sign of β
        for beta in (-3.0, 0.0, 3.0):
            self.assertTrue(np.all(np.diff(cone_profile(beta, 1, r)) > 0))
            self.assertTrue(np.all(np.diff(cone_profile(beta, -1, r)) < 0))

    def test_cone_spec(self):
        """Test evaluation, shifting and parameter checks."""
        cone = ConeSpec(center=0, iota=1, A=2.0, B=1.0, beta=1.0)
        self.assertAlmostEqual(cone(0.0), 1.0)
        self.assertAlmostEqual(cone_eval(cone, 1.0), 1.0 + 2.0 * (1 - math.exp(-1)))
        self.assertAlmostEqual(cone.shifted(0.0)(0.0), 0.0)
        with self.assertRaises(ValidationError):
            ConeSpec(center=0, iota=0, A=1.0, B=0.0, beta=1.0)
        with self.assertRaises(ValidationError):
            ConeSpec(center=0, iota=1, A=-1.0, B=0.0, beta=1.0)
        with self.assertRaises(ValidationError):
            cone_eval(cone, -0.1)

    def test_fit_through_two_points(self):
        """Test that the fitted cone passes through both points."""
        cone = fit_cone(1.5, 1, 0.2, 0.3, 0.9, 0.8, center=3)
        self.assertAlmostEqual(cone(0.2), 0.3)
        self.assertAlmostEqual(cone(0.9), 0.8)
        self.assertEqual(cone.center, 3)
        flat = fit_cone(1.5, -1, 0.2, 0.5, 0.9, 0.5)
        self.assertEqual(flat.A, 0.0)

    def test_fit_wrong_sign(self):
        """Test that points needing a negative slope suggest the other sign."""
        with self.assertRaises(ValidationError) as ctx:
            fit_cone(1.0, 1, 0.0, 1.0, 1.0, 0.0)
        self.assertIn("try iota=-", str(ctx.exception))
        with self.assertRaises(ValidationError):
            fit_cone(1.0, 1, 0.5, 1.0, 0.5, 0.0)

    def test_slack_rules(self):
        """Test parsing of the slack rules."""
        self.assertEqual(parse_slack_rule("scaled:8"), ("scaled", 8.0))
        self.assertEqual(parse_slack_rule("abs:0.01"), ("abs", 0.01))
        self.assertEqual(parse_slack_rule("scaled"), ("scaled", 8.0))
        with self.assertRaises(ValidationError):
            parse_slack_rule("relative:1")
        with self.assertRaises(ValidationError):
            parse_slack_rule("abs:x")


class TestComparison(unittest.TestCase):
    """Test cases for single checks and the randomized scan."""

    def setUp(self):
        """Set up test fixtures."""
        self.beta = 1.0
        self.eps = 1 / 32
        self.space = build_interval(32, 1.0)
        self.bias = bias_for(OddsFunction.exponential(self.beta), self.eps)
        self.u = solve_value(self.space, self.bias)[0]
        # on the exact grid the value is itself the cone centred at x = 0
        self.exact = ConeSpec(center=0, iota=1, A=1 / (1 - math.exp(-self.beta)), B=0.0, beta=self.beta)

    def test_cone_field_matches_solution(self):
        """Test the solved field against the cone centred at the left endpoint."""
        np.testing.assert_allclose(cone_field(self.space, self.exact), self.u.values, atol=1e-8)

    def test_discrete_boundary(self):
        """Test that the discrete boundary is the ball-neighbourhood outside V."""
        balls = ball_index(self.space, self.eps)
        rim = discrete_boundary(self.space, balls, np.arange(10, 15))
        np.testing.assert_array_equal(rim, [9, 15])
        rim = discrete_boundary(self.space, balls, np.array([10, 11, 13]), center=12)
        np.testing.assert_array_equal(rim, [9, 12, 14])

    def test_check_passes_and_counts_hypothesis(self):
        """Test a passing check, and a cone below the rim that is only counted."""
        interior = self.space.interior
        report = cec_check(self.space, self.u, interior, self.exact, "above", slack=1e-8)
        self.assertTrue(report.passed)
        self.assertEqual(report.hypothesis_not_met, 0)
        low = cec_check(self.space, self.u, interior, self.exact.shifted(-0.1), "above", slack=0.0)
        self.assertTrue(low.passed)
        self.assertEqual(low.hypothesis_not_met, 1)
        below = cec_check(self.space, self.u, interior, self.exact, "below", slack=1e-8)
        self.assertTrue(below.passed)

    def test_check_finds_bump(self):
        """Test that a bump above the cone fails with a witness at the bump."""
        values = self.u.values.copy()
        values[16] += 0.2
        bumped = ValueField(values, bias=self.bias)
        report = cec_check(self.space, bumped, self.space.interior, self.exact, "above", slack=0.01)
        self.assertFalse(report.passed)
        self.assertEqual(report.witnesses[0]["vertex"], 16)
        self.assertAlmostEqual(report.worst_violation, 0.2, places=6)

    def test_subdomain_touching_boundary(self):
        """Test that V may not contain boundary vertices."""
        with self.assertRaises(ValidationError) as ctx:
            cec_check(self.space, self.u, [0, 1, 2], self.exact)
        self.assertEqual(ctx.exception.context["vertex"], 0)

    def test_scan_certifies_solution(self):
        """Test that 500 seeded trials pass from both sides on the solved field."""
        for side in ("above", "below"):
            with self.subTest(side=side):
                report = cec_scan(self.space, self.u, side, n_trials=500, rng_seed=0)
                self.assertTrue(report.passed, report.witnesses[:1])
                self.assertGreater(report.coverage, 0.5)
                self.assertLessEqual(report.hypothesis_not_met, report.checked)

    def test_scan_reproducible(self):
        """Test that a scan is a function of the seed."""
        first = cec_scan(self.space, self.u, "above", n_trials=50, rng_seed=7)
        second = cec_scan(self.space, self.u, "above", n_trials=50, rng_seed=7)
        self.assertEqual(first.to_dict(), second.to_dict())

    def test_scan_detects_bump(self):
        """Test that the scan fails with a witness on a bump-perturbed field."""
        space = build_interval(128, 1.0)
        bias = bias_for(OddsFunction.exponential(self.beta), 1 / 128)
        values = cone_field(space, self.exact)
        values[64] += 2.0
        bumped = ValueField(values, bias=bias)
        report = cec_scan(space, bumped, "above", n_trials=500, rng_seed=0)
        self.assertFalse(report.passed)
        self.assertGreater(len(report.witnesses), 0)
        self.assertIn("trial", report.witnesses[0])
        self.assertEqual(report.witnesses[0]["vertex"], 64)

    def test_report_merge(self):
        """Test folding reports keeps the worst excess and the fail verdict."""
        total = CecReport(side="above")
        total.merge(CecReport(side="above", worst_violation=0.1, worst_excess=-0.1, checked=1))
        total.merge(CecReport(side="above", verdict="fail", worst_violation=0.3, worst_excess=0.2, checked=1,
                              witnesses=[{"excess": 0.2}]))
        self.assertEqual(total.checked, 2)
        self.assertFalse(total.passed)
        self.assertAlmostEqual(total.worst_excess, 0.2)
        self.assertIsNone(CecReport(side="below").to_dict()["worst_excess"])

    def test_almost_lipschitz(self):
        """Test the scaled difference ratio of the solved field stays bounded."""
        ratio = lipschitz_check(self.space, self.u, self.eps)
        self.assertGreater(ratio, 0.0)
        self.assertLess(ratio, 2.0)


class TestComparisonOnGrid(unittest.TestCase):
    """Test cases for certification on a two-dimensional lattice."""

    def setUp(self):
        """Set up test fixtures."""
        self.beta = 1.0
        self.eps = 1 / 32
        self.space = build_grid_domain(33, 33, 1 / 32, boundary_values=lambda xy: xy[:, 0])
        self.bias = bias_for(OddsFunction.exponential(self.beta), self.eps)
        self.u = solve_value(self.space, self.bias)[0]
        self.middle = int(self.space.lattice.index_grid()[16, 16])
        # ten times the scaled slack at the middle of the unperturbed field
        slack = CecScanner(self.space, self.u, self.beta).slack_for(self.middle, parse_slack_rule("scaled:8"))
        values = self.u.values.copy()
        values[self.middle] += 10 * slack
        self.bumped = ValueField(values, bias=self.bias)

    def test_scan_certifies_solution(self):
        """Test the seeded scan passes from both sides on the solved grid field."""
        for side in ("above", "below"):
            with self.subTest(side=side):
                report = cec_scan(self.space, self.u, side, n_trials=300, rng_seed=0)
                self.assertTrue(report.passed, report.witnesses[:1])
                self.assertLess(report.worst_excess, 0.0)

    def test_flat_cone_over_bump(self):
        """Test a nearly flat cone over a ball around the middle: the solution passes, the bump fails."""
        balls = ball_index(self.space, self.eps)
        anchor = int(self.space.lattice.index_grid()[16, 17])
        interior = self.space.interior
        subdomain = interior[self.space.distances_from(self.middle)[interior] <= 0.25]
        r = self.space.distances_from(anchor)
        for value_field, passes in ((self.u, True), (self.bumped, False)):
            with self.subTest(passes=passes):
                u = value_field.values
                tested = subdomain[subdomain != anchor]
                rim = discrete_boundary(self.space, balls, tested, anchor)
                cone = ConeSpec(center=anchor, iota=1, A=1e-3, B=0.0, beta=self.beta)
                offsets = u[rim] - cone.A * cone_profile(self.beta, 1, r[rim])
                cone = cone.shifted(float(np.max(offsets)))
                slack = CecScanner(self.space, value_field, self.beta).slack_for(
                    anchor, parse_slack_rule("scaled:8"))
                report = cec_check(self.space, value_field, subdomain, cone, "above", slack, balls=balls)
                self.assertEqual(report.hypothesis_not_met, 0)
                self.assertEqual(report.passed, passes)
                if not passes:
                    self.assertEqual(report.witnesses[0]["vertex"], self.middle)

    def test_scan_detects_bump(self):
        """Test the scan fails on the bumped grid field with a witness at the bump."""
        report = cec_scan(self.space, self.bumped, "above", n_trials=500, rng_seed=0)
        self.assertFalse(report.passed)
        self.assertGreater(report.worst_excess, 0.0)
        self.assertEqual(report.witnesses[0]["vertex"], self.middle)


if __name__ == "__main__":
    unittest.main()
