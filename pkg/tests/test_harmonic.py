#!/usr/bin/env python3
"""
Test Suite for the dynamic-programming solvers

This module tests the ordinary, favored and running-payoff value
iterations against closed-form solutions and structural properties.
"""

import unittest
import tempfile
import shutil
import math
from pathlib import Path
import sys

import numpy as np

# Add the src directory to the path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.btow.analysis import annulus_cone
from src.btow.bias import GameBias, OddsFunction, bias_for
from src.btow.config import SolverConfig
from src.btow.error_handler import ConvergenceError, ValidationError
from src.btow.harmonic import (FieldTag, ValueField, ValueSolver, dpp_residual, dpp_step,
                               favored_lower_step, favored_upper_step, load_field, local_variation,
                               save_field, solve_favored_lower, solve_favored_upper,
                               solve_running_payoff, solve_value, termination_values)
from src.btow.metric_space import (ball_index, build_annulus, build_grid_domain, build_interval,
                                   build_spiral)


def exponential_profile(beta: float, x: np.ndarray) -> np.ndarray:
    """(1 − e^{−βx}) / (1 − e^{−β}) on [0, 1]."""
    return np.expm1(-beta * x) / np.expm1(-beta)


class TestValueIteration(unittest.TestCase):
    """Test cases for the ordinary game."""

    def test_exact_interval_oracle(self):
        """Test that the grid value equals the exponential profile when vertices are ε apart."""
        for eps in (1 / 8, 1 / 16, 1 / 32):
            for beta in (0.5, 1.0, 2.0):
                with self.subTest(eps=eps, beta=beta):
                    space = build_interval(int(round(1 / eps)), 1.0)
                    lower, upper, report = solve_value(space, bias_for(OddsFunction.exponential(beta), eps))
                    expected = exponential_profile(beta, space.coords[:, 0])
                    np.testing.assert_allclose(lower.values, expected, rtol=0, atol=1e-8)
                    self.assertLessEqual(report.gap, 1e-8)
                    self.assertTrue(report.certified)
                    self.assertIs(lower.tag, FieldTag.U_LOWER)
                    self.assertIs(upper.tag, FieldTag.U_UPPER)

    def test_two_sided_gap_on_shipped_spaces(self):
        """Test from-below and from-above iterations meet on the interval, grid, annulus and spiral."""
        cone = lambda r: annulus_cone(1.0, 0.25, 0.5, r)  # noqa: E731
        cases = [
            ("interval", build_interval(32, 1.0), 1 / 8),
            ("grid", build_grid_domain(8, 6, 1.0, boundary_values=lambda xy: xy[:, 0] / 7.0), 1.0),
            ("annulus-path", build_annulus(0.25, 0.5, 1 / 16, metric="path", radial_values=cone), 1 / 8),
            ("annulus-round", build_annulus(0.25, 0.5, 1 / 16, metric="euclidean", radial_values=cone), 1 / 8),
            ("spiral", build_spiral(2), 1.0),
        ]
        for name, space, eps in cases:
            with self.subTest(space=name):
                bias = bias_for(OddsFunction.exponential(1.0), eps)
                lower, upper, report = solve_value(space, bias)
                M = space.boundary_data().M
                self.assertTrue(report.certified)
                self.assertLessEqual(report.gap, 1e-8 * M)
                np.testing.assert_allclose(lower.values, upper.values, atol=1e-8 * M)
                lower.check_against(space)

    def test_delta_relation(self):
        """Test ρ·δ⁺ = δ⁻ at interior vertices of a solved 2D field."""
        space = build_grid_domain(8, 8, 1.0, neighborhood=8, boundary_values=lambda xy: np.sin(xy[:, 0] + xy[:, 1]))
        bias = bias_for(OddsFunction.exponential(-0.7), 2.0)
        solver = ValueSolver(space, bias)
        u, _, _ = solver.solve_value()
        delta_plus, delta_minus = local_variation(space, solver.balls, u.values)
        interior = space.interior
        M = space.boundary_data().M
        worst = np.max(np.abs(bias.rho * delta_plus[interior] - delta_minus[interior]))
        self.assertLessEqual(worst, 1e-6 * M)
        self.assertLess(u.report.dpp_residual, 1e-9)

    def test_single_sided_modes_agree(self):
        """Test that from-below and from-above single solves give the same value."""
        space = build_interval(16, 1.0)
        bias = bias_for(OddsFunction.exponential(1.0), 1 / 16)
        below = solve_value(space, bias, SolverConfig(init="from_below"))[0]
        above = solve_value(space, bias, SolverConfig(init="from_above"))[0]
        np.testing.assert_allclose(below.values, above.values, atol=1e-7)
        self.assertEqual(below.report.init, "from_below")
        self.assertIsNone(below.report.gap)

    def test_custom_start(self):
        """Test a custom starting field, and rejection of one with the wrong length."""
        space = build_interval(8, 1.0)
        bias = bias_for(OddsFunction.exponential(1.0), 0.125)
        start = [0.5] * 9
        u = solve_value(space, bias, SolverConfig(init=start))[0]
        np.testing.assert_allclose(u.values, exponential_profile(1.0, space.coords[:, 0]), atol=1e-8)
        with self.assertRaises(ValidationError):
            solve_value(space, bias, SolverConfig(init=[0.5] * 3))

    def test_mesh_and_sweep_limits(self):
        """Test rejection of ε below the mesh ratio and the sweep cap."""
        space = build_interval(8, 1.0)
        bias = bias_for(OddsFunction.exponential(1.0), 0.25)
        with self.assertRaises(ValidationError) as ctx:
            ValueSolver(space, bias, SolverConfig(min_mesh_ratio=4.0))
        self.assertIn("ε too small for mesh", str(ctx.exception))
        with self.assertRaises(ConvergenceError) as ctx:
            solve_value(space, bias, SolverConfig(max_sweeps=3))
        self.assertEqual(ctx.exception.sweeps, 3)

    def test_unbiased_is_linear(self):
        """Test that θ = 0 gives the linear profile on an exact interval."""
        space = build_interval(8, 1.0)
        u = solve_value(space, GameBias.unbiased(0.125))[0]
        np.testing.assert_allclose(u.values, space.coords[:, 0], atol=1e-8)

    def test_certain_toss_reaches_maximum(self):
        """Test that θ = 1 gives the largest boundary value reachable from every vertex."""
        space = build_interval(8, 1.0)
        lower, upper, report = solve_value(space, GameBias.from_theta(0.125, 1.0))
        expected = np.ones(space.n)
        expected[0] = 0.0
        np.testing.assert_allclose(lower.values, expected, atol=1e-12)
        np.testing.assert_allclose(upper.values, expected, atol=1e-12)
        self.assertTrue(report.certified)
        self.assertLessEqual(report.sweeps, 10)


class TestOperators(unittest.TestCase):
    """Test cases for the one-sweep operators."""

    def setUp(self):
        """Set up test fixtures."""
        self.space = build_grid_domain(6, 5, 1.0, boundary_values=lambda xy: np.cos(xy[:, 0]) + xy[:, 1] / 4)
        self.bias = bias_for(OddsFunction.exponential(0.8), 1.0)
        self.balls = ball_index(self.space, 1.0)
        self.balls2 = ball_index(self.space, 2.0)
        self.rng = np.random.default_rng(17)

    def random_pair(self):
        """Two fields u ≤ w that agree with F on Y."""
        low = self.rng.uniform(-2.0, 2.0, self.space.n)
        high = low + self.rng.uniform(0.0, 1.0, self.space.n)
        for values in (low, high):
            values[self.space.boundary] = self.space.boundary_values
        return low, high

    def test_operators_are_monotone(self):
        """Test that u ≤ w implies T u ≤ T w for the ordinary and both favored operators."""
        term_min, term_max = termination_values(self.space, self.balls2)
        operators = {
            "dpp": lambda x: dpp_step(self.space, self.balls, self.bias, x),
            "lower": lambda x: favored_lower_step(self.space, self.balls, self.balls2, self.bias, x, term_min),
            "upper": lambda x: favored_upper_step(self.space, self.balls, self.balls2, self.bias, x, term_max),
        }
        for name, step in operators.items():
            with self.subTest(operator=name):
                for _ in range(25):
                    u, w = self.random_pair()
                    self.assertTrue(np.all(step(u) <= step(w) + 1e-12))

    def test_boundary_is_absorbing(self):
        """Test that every operator leaves F on Y untouched."""
        u, _ = self.random_pair()
        term_min, term_max = termination_values(self.space, self.balls2)
        for new in (dpp_step(self.space, self.balls, self.bias, u.copy()),
                    favored_lower_step(self.space, self.balls, self.balls2, self.bias, u.copy(), term_min),
                    favored_upper_step(self.space, self.balls, self.balls2, self.bias, u.copy(), term_max)):
            np.testing.assert_array_equal(new[self.space.boundary], self.space.boundary_values)


class TestFavoredGames(unittest.TestCase):
    """Test cases for the II-favored and I-favored games."""

    def test_sandwich_on_interval(self):
        """Test v ≤ u ≤ w for exponential and linear-θ odds."""
        space = build_interval(32, 1.0)
        for odds in (OddsFunction.exponential(1.5), OddsFunction.linear_theta(1.5)):
            with self.subTest(odds=odds.family.value):
                bias = bias_for(odds, 1 / 16)
                u = solve_value(space, bias)[0]
                v = solve_favored_lower(space, bias)
                w = solve_favored_upper(space, bias)
                self.assertIs(v.tag, FieldTag.V_FAVORED)
                self.assertIs(w.tag, FieldTag.W_FAVORED)
                self.assertTrue(np.all(v.values <= u.values + 1e-6))
                self.assertTrue(np.all(u.values <= w.values + 1e-6))
                v.check_against(space)
                w.check_against(space)

    def test_sandwich_on_grid(self):
        """Test v ≤ u ≤ w on a 2D lattice for exponential and linear-θ odds."""
        space = build_grid_domain(7, 7, 1.0, boundary_values=lambda xy: np.abs(xy[:, 0] - 3) / 3)
        for odds in (OddsFunction.exponential(0.5), OddsFunction.linear_theta(0.5)):
            with self.subTest(odds=odds.family.value):
                bias = bias_for(odds, 1.0)
                u = solve_value(space, bias)[0]
                v = solve_favored_lower(space, bias)
                w = solve_favored_upper(space, bias)
                self.assertTrue(np.all(v.values <= u.values + 1e-6))
                self.assertTrue(np.all(u.values <= w.values + 1e-6))

    def test_sandwich_on_annulus(self):
        """Test v ≤ u ≤ w on the path-metric annulus with linear-θ odds."""
        space = build_annulus(0.25, 0.5, 1 / 16, metric="path",
                              radial_values=lambda r: annulus_cone(1.0, 0.25, 0.5, r))
        bias = bias_for(OddsFunction.linear_theta(1.0), 1 / 8)
        u = solve_value(space, bias)[0]
        v = solve_favored_lower(space, bias)
        w = solve_favored_upper(space, bias)
        M = space.boundary_data().M
        self.assertTrue(np.all(v.values <= u.values + 1e-6 * M))
        self.assertTrue(np.all(u.values <= w.values + 1e-6 * M))


class TestRunningPayoff(unittest.TestCase):
    """Test cases for the running-payoff game."""

    def test_constant_payoff_on_interval(self):
        """Test f ≡ 1, F = 0, θ = 0: u = x(1−x) + h·min(x, 1−x) on an exact grid."""
        space = build_interval(16, 1.0, left_value=0.0, right_value=0.0)
        h = 1 / 16
        u = solve_running_payoff(space, GameBias.unbiased(h), np.ones(space.n))
        x = space.coords[:, 0]
        expected = x * (1 - x) + h * np.minimum(x, 1 - x)
        np.testing.assert_allclose(u.values, expected, atol=1e-6)
        self.assertIs(u.tag, FieldTag.RUNNING)
        self.assertEqual(u.report.init, "from_below")
        self.assertLess(u.report.dpp_residual, 1e-9)

    def test_negative_payoff_solved_from_above(self):
        """Test that f ≤ 0 mirrors the f ≥ 0 solution and iterates from above."""
        space = build_interval(16, 1.0, left_value=0.0, right_value=0.0)
        h = 1 / 16
        u = solve_running_payoff(space, GameBias.unbiased(h), -np.ones(space.n))
        x = space.coords[:, 0]
        np.testing.assert_allclose(u.values, -(x * (1 - x) + h * np.minimum(x, 1 - x)), atol=1e-6)
        self.assertEqual(u.report.init, "from_above")

    def test_payoff_length_checked(self):
        """Test that a running payoff of the wrong length is rejected."""
        space = build_interval(8, 1.0)
        with self.assertRaises(ValidationError):
            solve_running_payoff(space, GameBias.unbiased(0.125), np.ones(3))


class TestValueFields(unittest.TestCase):
    """Test cases for value fields and field files."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_non_finite_rejected(self):
        """Test that NaN values are rejected with the vertex named."""
        with self.assertRaises(ValidationError) as ctx:
            ValueField(np.array([0.0, math.nan, 1.0]))
        self.assertEqual(ctx.exception.context["vertex"], 1)

    def test_boundary_mismatch_names_vertex(self):
        """Test that a field disagreeing with F on Y is rejected."""
        space = build_interval(4, 1.0)
        with self.assertRaises(ValidationError) as ctx:
            ValueField(np.array([0.0, 0.2, 0.5, 0.7, 0.9])).check_against(space)
        self.assertEqual(ctx.exception.context["vertex"], 4)
        with self.assertRaises(ValidationError):
            ValueField(np.zeros(3)).check_against(space)

    def test_field_file(self):
        """Test saving and loading a solved field with its bias and report."""
        space = build_interval(8, 1.0)
        bias = bias_for(OddsFunction.exponential(1.0), 0.125)
        u = solve_value(space, bias)[0]
        path = Path(self.temp_dir) / "u.json"
        save_field(u, path, extra={"note": "test"})
        loaded = load_field(path, space)
        np.testing.assert_allclose(loaded.values, u.values)
        self.assertEqual(loaded.bias, bias)
        self.assertEqual(loaded.tag, FieldTag.U_LOWER)
        self.assertEqual(loaded.report.sweeps, u.report.sweeps)
        with self.assertRaises(ValidationError):
            load_field(path, build_interval(4, 1.0))

    def test_dpp_residual_detects_perturbation(self):
        """Test that a perturbed field has a visible DPP defect."""
        space = build_interval(8, 1.0)
        bias = bias_for(OddsFunction.exponential(1.0), 0.125)
        u = solve_value(space, bias)[0].values.copy()
        self.assertLess(dpp_residual(space, bias, u), 1e-9)
        u[4] += 0.1
        self.assertGreater(dpp_residual(space, bias, u), 0.01)


if __name__ == "__main__":
    unittest.main()
