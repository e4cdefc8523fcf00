#!/usr/bin/env python3
"""
Test Suite for discretized spaces

This module tests space construction and validation, path distances,
ε-balls, the step-count distance and space files.
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

from src.btow.error_handler import SpaceError, ValidationError
from src.btow.metric_space import (DiscretizedSpace, ball_index, build_annulus, build_grid_domain,
                                   build_interval, build_lshape, build_spiral, check_metric, d_eps,
                                   d_eps_values, lattice_radius, load_space, save_space, spiral_mask)


class TestSpaceConstruction(unittest.TestCase):
    """Test cases for building and validating spaces."""

    def test_interval_layout(self):
        """Test the interval generator: endpoints are the boundary with F = 0 and 1."""
        space = build_interval(8, 1.0)
        self.assertEqual(space.n, 9)
        np.testing.assert_array_equal(space.boundary, [0, 8])
        np.testing.assert_allclose(space.boundary_values, [0.0, 1.0])
        self.assertAlmostEqual(space.mesh_width, 0.125)
        self.assertAlmostEqual(space.dist(0, 8), 1.0)
        self.assertAlmostEqual(space.diameter(), 1.0)
        np.testing.assert_array_equal(space.interior, np.arange(1, 8))

    def test_interval_examples(self):
        """Test small intervals: vertex positions, distances and mesh width."""
        space = build_interval(2, 1.0)
        np.testing.assert_allclose(space.coords[:, 0], [0.0, 0.5, 1.0])
        self.assertAlmostEqual(space.dist(0, 2), 1.0)
        self.assertAlmostEqual(build_interval(10, 1.0).dist(3, 7), 0.4)
        self.assertAlmostEqual(build_interval(4, 2.0).mesh_width, 0.5)

    def test_grid_distances(self):
        """Test Manhattan distances and detours around a blocked centre."""
        space = build_grid_domain(3, 3, 1.0)
        grid = space.lattice.index_grid()
        self.assertAlmostEqual(space.dist(int(grid[0, 0]), int(grid[2, 2])), 4.0)

        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        blocked = build_grid_domain(3, 3, 1.0, obstacle_mask=mask, boundary_select=[(0, 0)])
        grid = blocked.lattice.index_grid()
        self.assertAlmostEqual(blocked.dist(int(grid[1, 0]), int(grid[1, 2])), 4.0)

    def test_strip_matches_interval(self):
        """Test that a 1×k strip has the distances of the interval with the same spacing."""
        strip = build_grid_domain(5, 1, 0.25, boundary_select=[(0, 0), (0, 4)])
        interval = build_interval(4, 1.0)
        np.testing.assert_allclose(strip.distance_matrix(), interval.distance_matrix())

    def test_disconnected_graph_rejected(self):
        """Test that a disconnected graph is rejected with its components listed."""
        edges = [[0, 1], [2, 3]]
        with self.assertRaises(SpaceError) as ctx:
            DiscretizedSpace(4, edges, [1.0, 1.0], [0])
        self.assertIn("disconnected", str(ctx.exception))
        self.assertEqual(ctx.exception.context["components"], 2)

    def test_invalid_inputs_rejected(self):
        """Test rejection of bad lengths, empty or full boundaries and self-loops."""
        with self.assertRaises(SpaceError):
            DiscretizedSpace(3, [[0, 1], [1, 2]], [1.0, 0.0], [0])
        with self.assertRaises(SpaceError):
            DiscretizedSpace(3, [[0, 1], [1, 2]], [1.0, 1.0], [])
        with self.assertRaises(SpaceError):
            DiscretizedSpace(3, [[0, 1], [1, 2]], [1.0, 1.0], [0, 1, 2])
        with self.assertRaises(SpaceError):
            DiscretizedSpace(3, [[0, 0], [1, 2]], [1.0, 1.0], [0])
        with self.assertRaises(SpaceError):
            build_interval(1, 1.0)

    def test_duplicate_edges_keep_shortest(self):
        """Test that repeated edges collapse to the shortest copy."""
        space = DiscretizedSpace(3, [[0, 1], [1, 0], [1, 2]], [2.0, 0.5, 1.0], [0, 2])
        self.assertEqual(len(space.edges), 2)
        self.assertAlmostEqual(space.dist(0, 2), 1.5)

    def test_boundary_sorted_with_values(self):
        """Test that boundary vertices are sorted and keep their values."""
        space = DiscretizedSpace(3, [[0, 1], [1, 2]], [1.0, 1.0], [2, 0], boundary_values=[5.0, -1.0])
        np.testing.assert_array_equal(space.boundary, [0, 2])
        np.testing.assert_allclose(space.boundary_values, [-1.0, 5.0])
        self.assertEqual(space.boundary_value_of(2), 5.0)
        with self.assertRaises(ValidationError):
            space.boundary_value_of(1)

    def test_boundary_data(self):
        """Test the Lipschitz constant and oscillation of boundary data."""
        space = build_interval(4, 2.0, left_value=1.0, right_value=3.0)
        data = space.boundary_data()
        self.assertAlmostEqual(data.M, 2.0)
        self.assertAlmostEqual(data.lip, 1.0)
        self.assertTrue(data.exact)

    def test_with_boundary_values(self):
        """Test relabelling the boundary keeps the graph and original space."""
        space = build_interval(4, 1.0)
        relabelled = space.with_boundary_values([2.0, 2.0])
        np.testing.assert_allclose(relabelled.boundary_values, [2.0, 2.0])
        np.testing.assert_allclose(space.boundary_values, [0.0, 1.0])
        self.assertEqual(relabelled.boundary_data().M, 0.0)

    def test_metric_axioms(self):
        """Test that path distances satisfy the triangle inequality."""
        space = build_grid_domain(6, 5, 1.0, neighborhood=8)
        self.assertLessEqual(check_metric(space), 1e-12)


class TestLatticeGenerators(unittest.TestCase):
    """Test cases for the lattice generators."""

    def test_grid_outer_boundary(self):
        """Test a plain grid: the outer ring is the boundary."""
        space = build_grid_domain(5, 4, 0.5)
        self.assertEqual(space.n, 20)
        self.assertEqual(len(space.boundary), 14)
        self.assertAlmostEqual(space.mesh_width, 0.5)

    def test_grid_obstacle_boundary(self):
        """Test obstacles: cells next to them join the boundary."""
        mask = np.zeros((7, 7), dtype=bool)
        mask[3, 3] = True
        space = build_grid_domain(7, 7, 1.0, obstacle_mask=mask, boundary_select="obstacle")
        self.assertEqual(space.n, 48)
        self.assertEqual(len(space.boundary), 4)

    def test_lattice_radius(self):
        """Test the round, L1 and octile lattice norms."""
        offsets = np.array([[3.0, 4.0]])
        self.assertAlmostEqual(lattice_radius(offsets, "euclidean")[0], 5.0)
        self.assertAlmostEqual(lattice_radius(offsets, "path", 4)[0], 7.0)
        self.assertAlmostEqual(lattice_radius(offsets, "path", 8)[0], 4.0 + 3.0 * (math.sqrt(2) - 1))

    def test_path_annulus_distances(self):
        """Test that the L1 annulus has lattice distances equal to the radius difference."""
        space = build_annulus(2.0, 5.0, 1.0, metric="path", radial_values=lambda r: r)
        radius = lattice_radius(space.coords, "path", 4)
        self.assertAlmostEqual(radius.min(), 2.0)
        self.assertAlmostEqual(radius.max(), 5.0)
        ids = {tuple(np.rint(c).astype(int)): v for v, c in enumerate(space.coords)}
        inner, outer = ids[(2, 0)], ids[(5, 0)]
        self.assertAlmostEqual(space.dist(inner, outer), 3.0)
        self.assertTrue(space.is_boundary[inner] and space.is_boundary[outer])
        self.assertFalse(space.is_boundary[ids[(3, 0)]])
        # boundary values follow the radius
        np.testing.assert_allclose(space.boundary_values, radius[space.boundary])

    def test_lshape(self):
        """Test the L-shape: one quadrant removed, F is the scaled x coordinate."""
        space = build_lshape(4, 0.25)
        self.assertEqual(space.n, 25 - 4)
        self.assertAlmostEqual(space.boundary_values.min(), 0.0)
        self.assertAlmostEqual(space.boundary_values.max(), 1.0)
        with self.assertRaises(SpaceError):
            build_lshape(5, 0.25)

    def test_spiral_is_single_corridor(self):
        """Test that the spiral walls force long paths between neighbouring corridors."""
        mask = spiral_mask(2)
        self.assertEqual(mask.shape, (9, 9))
        space = build_spiral(2)
        centre = space.boundary[np.argmin(space.boundary_values)]
        self.assertEqual(space.boundary_value_of(int(centre)), 0.0)
        # a cell two columns left of the centre is close in the plane but not in the path metric
        grid = space.lattice.index_grid()
        left = int(grid[4, 2])
        self.assertGreaterEqual(left, 0)
        self.assertGreater(space.dist(int(centre), left), 2.0)


class TestBallsAndSteps(unittest.TestCase):
    """Test cases for ε-balls and the step-count distance."""

    def setUp(self):
        """Set up test fixtures."""
        self.space = build_interval(8, 1.0)

    def test_closed_ball_on_grid_multiple(self):
        """Test closed balls when ε is a multiple of the grid unit."""
        balls = ball_index(self.space, 0.25)
        self.assertTrue(balls.closed)
        np.testing.assert_array_equal(balls.ball(4), [2, 3, 4, 5, 6])
        np.testing.assert_array_equal(balls.ball(0), [0, 1, 2])

    def test_open_ball(self):
        """Test open balls exclude points at distance exactly ε."""
        balls = ball_index(self.space, 0.25, closed=False)
        np.testing.assert_array_equal(balls.ball(4), [3, 4, 5])

    def test_off_grid_radius_is_open(self):
        """Test the automatic rule picks strict balls when ε is not a grid multiple."""
        balls = ball_index(build_interval(10, 1.0), 0.25)
        self.assertFalse(balls.closed)
        np.testing.assert_array_equal(balls.ball(5), [3, 4, 5, 6, 7])
        minimal = ball_index(build_interval(10, 1.0), 0.11)
        np.testing.assert_array_equal(minimal.ball(5), [4, 5, 6])

    def test_ball_symmetry_and_centre(self):
        """Test that y ∈ B(x) iff x ∈ B(y) and every ball holds its centre."""
        space = build_grid_domain(6, 6, 1.0, neighborhood=8)
        balls = ball_index(space, 2.0)
        for x in range(space.n):
            self.assertTrue(balls.contains(x, x))
            for y in balls.ball(x):
                self.assertTrue(balls.contains(int(y), x))

    def test_eps_below_mesh_rejected(self):
        """Test that ε not exceeding the mesh width is rejected."""
        with self.assertRaises(ValidationError):
            ball_index(self.space, 0.1)
        with self.assertRaises(ValidationError):
            ball_index(self.space, 0.125, closed=False)

    def test_eps_equal_to_mesh(self):
        """Test ε = h gives the closed nearest-neighbour ball under the automatic rule only."""
        balls = ball_index(self.space, 0.125)
        self.assertTrue(balls.closed)
        np.testing.assert_array_equal(balls.ball(4), [3, 4, 5])
        with self.assertRaises(ValidationError):
            ball_index(self.space, 0.125, closed=False)

    def test_ball_reductions(self):
        """Test sup, inf and lowest-index tie breaking."""
        balls = ball_index(self.space, 0.25)
        values = np.array([0, 1, 1, 0, 0, 0, 2, 2, 0], dtype=float)
        self.assertEqual(balls.sup(values)[4], 2.0)
        self.assertEqual(balls.inf(values)[1], 0.0)
        self.assertEqual(balls.argsup(values)[1], 1)
        self.assertEqual(balls.arginf(values)[4], 3)

    def test_d_eps(self):
        """Test both step-count rules against the path distance."""
        self.assertEqual(d_eps(self.space, 3, 3, 0.25), 0.0)
        self.assertAlmostEqual(d_eps(self.space, 0, 2, 0.25, closed=True), 0.25)
        self.assertAlmostEqual(d_eps(self.space, 0, 2, 0.25, closed=False), 0.5)
        self.assertAlmostEqual(d_eps(self.space, 0, 3, 0.25, closed=True), 0.5)
        self.assertAlmostEqual(d_eps(self.space, 0, 3, 0.25, closed=False), 0.5)
        self.assertAlmostEqual(float(d_eps_values(np.array([0.35]), 0.1)[0]), 0.4)
        self.assertAlmostEqual(float(d_eps_values(np.array([0.05]), 0.1)[0]), 0.1)
        distances = np.array([0.0, 0.1, 0.3, 1.0])
        steps = d_eps_values(distances, 0.25, closed=False)
        np.testing.assert_allclose(steps, [0.0, 0.25, 0.5, 1.25])
        # d ≤ d_ε ≤ d + ε
        self.assertTrue(np.all(steps >= distances))
        self.assertTrue(np.all(steps <= distances + 0.25 + 1e-12))


class TestSpaceFiles(unittest.TestCase):
    """Test cases for space files."""

    def setUp(self):
        """Set up test fixtures."""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures."""
        shutil.rmtree(self.temp_dir)

    def test_save_and_load(self):
        """Test that a saved lattice space loads with the same structure."""
        space = build_lshape(6, 0.5)
        path = Path(self.temp_dir) / "space.json"
        save_space(space, path)
        loaded = load_space(path)
        self.assertEqual(loaded.n, space.n)
        np.testing.assert_array_equal(loaded.boundary, space.boundary)
        np.testing.assert_allclose(loaded.boundary_values, space.boundary_values)
        np.testing.assert_allclose(loaded.coords, space.coords)
        self.assertEqual(loaded.lattice.shape, space.lattice.shape)
        self.assertAlmostEqual(loaded.unit, space.unit)

    def test_malformed_file(self):
        """Test that a malformed or missing file raises SpaceError."""
        path = Path(self.temp_dir) / "bad.json"
        path.write_text('{"vertices": [{"id": 0}, {"id": 2}], "edges": [], "boundary": []}')
        with self.assertRaises(SpaceError):
            load_space(path)
        with self.assertRaises(SpaceError):
            load_space(Path(self.temp_dir) / "missing.json")


if __name__ == "__main__":
    unittest.main()
