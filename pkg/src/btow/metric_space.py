#!/usr/bin/env python3
"""
Discretized length spaces

This module handles finite weighted graphs standing in for compact length
spaces: shortest-path distances, boundary data, step-count distances and
ε-ball adjacency, plus generators for the interval, lattice domains, annuli,
an L-shaped domain and a spiral corridor, and the JSON space file format.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union, Any

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, dijkstra, shortest_path

from .error_handler import SpaceError, ValidationError
from .utils import FORMAT_VERSION, read_json_safe, write_json_safe


FULL_TABLE_LIMIT = 5000
EXACT_LIP_LIMIT = 2000
OPEN_BALL_TOL = 1e-12
CLOSED_BALL_RTOL = 1e-9
MULTIPLE_RTOL = 1e-9

BoundaryFn = Callable[[np.ndarray], np.ndarray]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatticeInfo:
    """Square-lattice layout of a space: cell (row, col) of every vertex."""

    shape: Tuple[int, int]
    spacing: float
    cells: np.ndarray

    def index_grid(self) -> np.ndarray:
        """Return an (ny, nx) array of vertex ids, -1 where no vertex exists."""
        grid = np.full(self.shape, -1, dtype=np.int64)
        grid[self.cells[:, 0], self.cells[:, 1]] = np.arange(len(self.cells))
        return grid


@dataclass(frozen=True)
class BoundaryData:
    """Boundary values F on Y with their Lipschitz constant and oscillation."""

    values: np.ndarray
    lip: float
    M: float
    exact: bool = True


class DiscretizedSpace:
    """A connected weighted graph with path-metric distances and a boundary set Y."""

    def __init__(self, n_vertices: int, edges: np.ndarray, lengths: np.ndarray,
                 boundary: Sequence[int], boundary_values: Optional[Sequence[float]] = None,
                 coords: Optional[np.ndarray] = None, lattice: Optional[LatticeInfo] = None,
                 unit: Optional[float] = None, name: str = "custom",
                 params: Optional[Dict[str, Any]] = None):
        """
        Build and validate a space.

        Args:
            n_vertices: Number of vertices N
            edges: (E, 2) array of vertex pairs
            lengths: (E,) positive edge lengths
            boundary: Vertex ids of Y
            boundary_values: F on Y, aligned with boundary (zeros if omitted)
            coords: Optional (N, d) Euclidean positions
            lattice: Optional square-lattice layout
            unit: Grid step used to decide the ball rule (defaults to mesh width)
            name: Generator name recorded in artifacts
            params: Generator parameters recorded in artifacts
        """
        self.logger = logging.getLogger(__name__)
        self.n = int(n_vertices)
        if self.n < 2:
            raise SpaceError(f"a space needs at least 2 vertices, got {self.n}")

        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        lengths = np.asarray(lengths, dtype=float).reshape(-1)
        if len(edges) != len(lengths):
            raise SpaceError(f"{len(edges)} edges but {len(lengths)} lengths")
        if len(edges) == 0:
            raise SpaceError("a space needs at least one edge")
        if edges.min() < 0 or edges.max() >= self.n:
            raise SpaceError(f"edge endpoint out of range 0..{self.n - 1}")
        loops = np.nonzero(edges[:, 0] == edges[:, 1])[0]
        if len(loops):
            raise SpaceError(f"self-loop at vertex {int(edges[loops[0], 0])}")
        bad = np.nonzero(~(lengths > 0) | ~np.isfinite(lengths))[0]
        if len(bad):
            raise SpaceError(f"edge {edges[bad[0]].tolist()} has non-positive length {lengths[bad[0]]}")
        self.edges, self.lengths = _dedupe_edges(edges, lengths)

        boundary = np.asarray(boundary, dtype=np.int64).reshape(-1)
        if len(boundary) == 0:
            raise SpaceError("boundary set Y is empty")
        if len(np.unique(boundary)) != len(boundary):
            raise SpaceError("boundary set Y lists a vertex twice")
        if boundary.min() < 0 or boundary.max() >= self.n:
            raise SpaceError(f"boundary vertex out of range 0..{self.n - 1}")
        if len(boundary) >= self.n:
            raise SpaceError("boundary set Y must be a strict subset of the vertices")
        order = np.argsort(boundary)
        self.boundary = boundary[order]
        if boundary_values is None:
            values = np.zeros(len(boundary))
        else:
            values = np.asarray(boundary_values, dtype=float).reshape(-1)
            if len(values) != len(boundary):
                raise SpaceError(f"{len(boundary)} boundary vertices but {len(values)} values")
            if not np.all(np.isfinite(values)):
                raise SpaceError("boundary values must be finite")
        self.boundary_values = values[order]

        self.is_boundary = np.zeros(self.n, dtype=bool)
        self.is_boundary[self.boundary] = True
        self.interior = np.nonzero(~self.is_boundary)[0]

        self.coords = None if coords is None else np.asarray(coords, dtype=float).reshape(self.n, -1)
        self.lattice = lattice
        self.mesh_width = float(self.lengths.max())
        self.unit = float(unit) if unit is not None else self.mesh_width
        self.name = name
        self.params = dict(params or {})

        for arr in (self.edges, self.lengths, self.boundary, self.boundary_values,
                    self.is_boundary, self.interior):
            arr.setflags(write=False)

        self.graph = csr_matrix(
            (np.concatenate([self.lengths, self.lengths]),
             (np.concatenate([self.edges[:, 0], self.edges[:, 1]]),
              np.concatenate([self.edges[:, 1], self.edges[:, 0]]))),
            shape=(self.n, self.n))
        self._check_connected()

        self._table: Optional[np.ndarray] = None
        self._rows: Dict[int, np.ndarray] = {}
        self._boundary_distance: Optional[np.ndarray] = None
        self._boundary_data: Dict[bool, BoundaryData] = {}

    def _check_connected(self) -> None:
        """Reject graphs whose vertices fall into more than one component."""
        n_components, labels = connected_components(self.graph, directed=False)
        if n_components == 1:
            return
        parts = []
        for label in range(min(n_components, 5)):
            members = np.nonzero(labels == label)[0]
            where = f"vertex {int(members[0])}"
            if self.lattice is not None:
                row, col = self.lattice.cells[members[0]]
                where += f" (cell {int(row)},{int(col)})"
            parts.append(f"component {label}: {len(members)} vertices starting at {where}")
        raise SpaceError(f"space is disconnected into {n_components} components: " + "; ".join(parts),
                         context={"components": n_components})

    @property
    def field_template(self) -> np.ndarray:
        """A field that is F on Y and NaN elsewhere."""
        values = np.full(self.n, np.nan)
        values[self.boundary] = self.boundary_values
        return values

    def dist(self, x: int, y: int) -> float:
        """Path-metric distance between two vertices."""
        return float(self.distances_from(x)[y])

    def distances_from(self, x: int) -> np.ndarray:
        """Distances from vertex x to every vertex."""
        x = int(x)
        if not 0 <= x < self.n:
            raise ValidationError(f"vertex {x} out of range 0..{self.n - 1}")
        if self._table is not None:
            return self._table[x]
        if self.n <= FULL_TABLE_LIMIT:
            return self.distance_matrix()[x]
        row = self._rows.get(x)
        if row is None:
            row = dijkstra(self.graph, directed=False, indices=x)
            row.setflags(write=False)
            self._rows[x] = row
        return row

    def distance_matrix(self) -> np.ndarray:
        """All-pairs distances (only for spaces with at most 5000 vertices)."""
        if self._table is None:
            if self.n > FULL_TABLE_LIMIT:
                raise SpaceError(f"all-pairs table refused for {self.n} vertices (limit {FULL_TABLE_LIMIT})")
            self.logger.debug(f"Computing all-pairs distances for {self.n} vertices")
            table = shortest_path(self.graph, method="D", directed=False)
            table.setflags(write=False)
            self._table = table
        return self._table

    def distances_between(self, sources: Sequence[int]) -> np.ndarray:
        """Distance rows for several sources, shape (len(sources), N)."""
        sources = np.asarray(sources, dtype=np.int64).reshape(-1)
        if self.n <= FULL_TABLE_LIMIT:
            return self.distance_matrix()[sources]
        return np.vstack([self.distances_from(s) for s in sources]) if len(sources) else np.zeros((0, self.n))

    def boundary_distance(self) -> np.ndarray:
        """Distance from every vertex to the nearest boundary vertex."""
        if self._boundary_distance is None:
            dist = dijkstra(self.graph, directed=False, indices=self.boundary, min_only=True)
            dist.setflags(write=False)
            self._boundary_distance = dist
        return self._boundary_distance

    def diameter(self) -> float:
        """Largest distance between two vertices (an upper bound above 5000 vertices)."""
        if self.n <= FULL_TABLE_LIMIT:
            return float(self.distance_matrix().max())
        return float(min(2 * self.distances_from(0).max(), self.lengths.sum()))

    def boundary_data(self, exact: bool = False) -> BoundaryData:
        """
        Lipschitz constant and oscillation of F on Y.

        Args:
            exact: Force the exact pairwise maximum even for large Y

        Returns:
            BoundaryData: values, lip, M
        """
        use_exact = exact or len(self.boundary) <= EXACT_LIP_LIMIT
        cached = self._boundary_data.get(use_exact)
        if cached is not None:
            return cached

        values = self.boundary_values
        osc = float(values.max() - values.min())
        if use_exact:
            sources = self.boundary
        else:
            rng = np.random.default_rng(0)
            sources = np.sort(rng.choice(self.boundary, size=EXACT_LIP_LIMIT, replace=False))
        lip = 0.0
        for start in range(0, len(sources), 256):
            chunk = sources[start:start + 256]
            rows = self.distances_between(chunk)[:, self.boundary]
            diffs = np.abs(values[np.searchsorted(self.boundary, chunk)][:, None] - values[None, :])
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(rows > 0, diffs / rows, 0.0)
            lip = max(lip, float(ratios.max()))
        data = BoundaryData(values=values, lip=lip, M=osc, exact=use_exact)
        self._boundary_data[use_exact] = data
        return data

    def with_boundary_values(self, values: Union[Sequence[float], BoundaryFn]) -> 'DiscretizedSpace':
        """
        Copy of this space with new boundary data, sharing the distance caches.

        Args:
            values: F aligned with self.boundary, or a function of boundary coords

        Returns:
            DiscretizedSpace: the re-labelled space
        """
        if callable(values):
            if self.coords is None:
                raise SpaceError("boundary function needs vertex coordinates")
            values = values(self.coords[self.boundary])
        clone = DiscretizedSpace.__new__(DiscretizedSpace)
        clone.__dict__.update(self.__dict__)
        new_values = np.asarray(values, dtype=float).reshape(-1)
        if len(new_values) != len(self.boundary):
            raise SpaceError(f"{len(self.boundary)} boundary vertices but {len(new_values)} values")
        new_values.setflags(write=False)
        clone.boundary_values = new_values
        clone._boundary_data = {}
        return clone

    def boundary_value_of(self, vertex: int) -> float:
        """F at a boundary vertex."""
        pos = np.searchsorted(self.boundary, vertex)
        if pos >= len(self.boundary) or self.boundary[pos] != vertex:
            raise ValidationError(f"vertex {vertex} is not a boundary vertex")
        return float(self.boundary_values[pos])

    def is_step_multiple(self, eps: float) -> bool:
        """True when ε is a whole number of grid units."""
        ratio = eps / self.unit
        nearest = round(ratio)
        return nearest >= 1 and abs(ratio - nearest) <= MULTIPLE_RTOL * max(1.0, ratio)

    def closed_balls_for(self, eps: float, rule: str = "auto") -> bool:
        """Resolve a ball rule name to the closed/open choice for this ε."""
        if rule == "closed":
            return True
        if rule == "open":
            return False
        if rule != "auto":
            raise ValidationError(f"unknown ball rule {rule!r}")
        return self.is_step_multiple(eps)

    def describe(self) -> Dict[str, Any]:
        """Short summary used in logs and artifacts."""
        return {
            "name": self.name,
            "params": self.params,
            "vertices": self.n,
            "edges": int(len(self.edges)),
            "boundary": int(len(self.boundary)),
            "mesh_width": self.mesh_width,
        }


def _dedupe_edges(edges: np.ndarray, lengths: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Normalize edge orientation and keep the shortest copy of repeated edges."""
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    order = np.lexsort((lengths, hi, lo))
    lo, hi, lengths = lo[order], hi[order], lengths[order]
    keep = np.ones(len(lo), dtype=bool)
    keep[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
    return np.column_stack([lo[keep], hi[keep]]), lengths[keep]


# ---------------------------------------------------------------------------
# Step-count distance and ε-balls
# ---------------------------------------------------------------------------

def d_eps(space: DiscretizedSpace, x: int, y: int, eps: float, closed: bool = False) -> float:
    """
    ε times the least number of steps needed to go from x to y.

    Open balls (steps shorter than ε) give ε + ε⌊d/ε⌋; closed balls give ε⌈d/ε⌉.

    Args:
        space: The space
        x, y: Vertices
        eps: Step radius
        closed: Whether steps of length exactly ε are allowed

    Returns:
        float: The step-count distance (0 when x == y)
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if x == y:
        return 0.0
    return float(d_eps_values(np.asarray([space.dist(x, y)]), eps, closed)[0])


def d_eps_values(distances: np.ndarray, eps: float, closed: bool = False) -> np.ndarray:
    """Vectorized d_eps for an array of path distances."""
    distances = np.asarray(distances, dtype=float)
    ratio = distances / eps
    if closed:
        steps = np.maximum(np.ceil(ratio - MULTIPLE_RTOL), 1.0)
    else:
        steps = 1.0 + np.floor(ratio + MULTIPLE_RTOL)
    return np.where(distances > 0, eps * steps, 0.0)


@dataclass(frozen=True)
class BallIndex:
    """ε-balls of every vertex in compressed row form (ball(x) = indices[indptr[x]:indptr[x+1]])."""

    radius: float
    closed: bool
    indptr: np.ndarray
    indices: np.ndarray

    def ball(self, x: int) -> np.ndarray:
        """Vertices of the ball around x, sorted by id."""
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    def sizes(self) -> np.ndarray:
        """Number of vertices in each ball."""
        return np.diff(self.indptr)

    def contains(self, x: int, y: int) -> bool:
        """Whether y lies in the ball around x."""
        members = self.ball(x)
        pos = np.searchsorted(members, y)
        return bool(pos < len(members) and members[pos] == y)

    def sup(self, values: np.ndarray) -> np.ndarray:
        """Maximum of values over every ball."""
        return np.maximum.reduceat(values[self.indices], self.indptr[:-1])

    def inf(self, values: np.ndarray) -> np.ndarray:
        """Minimum of values over every ball."""
        return np.minimum.reduceat(values[self.indices], self.indptr[:-1])

    def argsup(self, values: np.ndarray) -> np.ndarray:
        """Lowest-index maximizer of values over every ball."""
        return self._arg(values, np.maximum)

    def arginf(self, values: np.ndarray) -> np.ndarray:
        """Lowest-index minimizer of values over every ball."""
        return self._arg(values, np.minimum)

    def _arg(self, values: np.ndarray, reducer) -> np.ndarray:
        gathered = values[self.indices]
        best = reducer.reduceat(gathered, self.indptr[:-1])
        hit = gathered == np.repeat(best, self.sizes())
        # indices are sorted inside each ball, so the first hit is the lowest id
        positions = np.where(hit, np.arange(len(gathered)), len(gathered))
        first = np.minimum.reduceat(positions, self.indptr[:-1])
        return self.indices[first]


def ball_index(space: DiscretizedSpace, eps: float, closed: Optional[bool] = None) -> BallIndex:
    """
    Index the ε-balls of every vertex.

    Open balls keep dist < ε − 1e-12; closed balls keep dist ≤ ε(1 + 1e-9).
    With closed=None the rule is closed exactly when ε is a whole number of
    grid units, otherwise open. This departs from the strict ball
    dist(x, ·) < ε: on a lattice with ε = k·h the strict ball would shrink the
    effective step to (k−1)·h, so the closed ball keeps the step equal to ε.

    Mesh rule: open balls need ε > h. Closed balls accept ε = h (the
    exact-spacing interval, whose value is the exponential profile) and
    reject ε < h. Pass closed=False to get the strict ball and the
    "ε ≤ h raises" rule back.

    Args:
        space: The space
        eps: Ball radius
        closed: Ball rule, or None for the automatic choice

    Returns:
        BallIndex: symmetric balls that contain their centres
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if closed is None:
        closed = space.is_step_multiple(eps)
    h = space.mesh_width
    if closed:
        if eps < h * (1 - CLOSED_BALL_RTOL):
            raise ValidationError(f"ε must exceed mesh width: eps={eps} < h={h}",
                                  context={"eps": eps, "h": h})
        threshold = eps * (1 + CLOSED_BALL_RTOL)
    else:
        if eps <= h + OPEN_BALL_TOL:
            raise ValidationError(f"ε must exceed mesh width: eps={eps} <= h={h}",
                                  context={"eps": eps, "h": h})
        threshold = eps - OPEN_BALL_TOL

    counts = np.zeros(space.n, dtype=np.int64)
    parts: List[np.ndarray] = []
    chunk = max(1, 2_000_000 // space.n)
    for start in range(0, space.n, chunk):
        sources = np.arange(start, min(start + chunk, space.n))
        if space.n <= FULL_TABLE_LIMIT:
            rows = space.distance_matrix()[sources]
        else:
            rows = dijkstra(space.graph, directed=False, indices=sources, limit=threshold * (1 + 1e-6))
        mask = rows <= threshold if closed else rows < threshold
        row_ids, col_ids = np.nonzero(mask)
        counts[sources] = np.bincount(row_ids, minlength=len(sources))
        parts.append(col_ids)
    indptr = np.concatenate([[0], np.cumsum(counts)])
    indices = np.concatenate(parts).astype(np.int64)
    indptr.setflags(write=False)
    indices.setflags(write=False)
    logger.debug(f"Indexed {'closed' if closed else 'open'} balls of radius {eps}: "
                 f"mean size {counts.mean():.1f}")
    return BallIndex(radius=float(eps), closed=bool(closed), indptr=indptr, indices=indices)


def check_metric(space: DiscretizedSpace, n_samples: int = 10_000, seed: int = 0) -> float:
    """
    Check the metric axioms; exhaustive up to 200 vertices, sampled triples otherwise.

    Returns:
        float: Worst triangle-inequality excess (<= 0 up to roundoff for a metric)
    """
    if space.n <= 200:
        table = space.distance_matrix()
        if not np.allclose(table, table.T, rtol=0, atol=1e-12):
            raise SpaceError("distance table is not symmetric")
        off = ~np.eye(space.n, dtype=bool)
        if np.any(np.diag(table) != 0) or np.any(table[off] <= 0):
            raise SpaceError("distance is not zero exactly on the diagonal")
        worst = -np.inf
        for j in range(space.n):
            worst = max(worst, float(np.max(table - (table[:, j:j + 1] + table[j:j + 1, :]))))
        return worst
    rng = np.random.default_rng(seed)
    triples = rng.integers(0, space.n, size=(n_samples, 3))
    worst = -np.inf
    for x, y, z in triples:
        dx = space.distances_from(x)
        dy = space.distances_from(y)
        if abs(dx[y] - dy[x]) > 1e-12:
            raise SpaceError(f"distance between {x} and {y} is not symmetric")
        worst = max(worst, float(dx[z] - (dx[y] + dy[z])))
    return worst


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def build_interval(n_cells: int, length: float, left_value: float = 0.0,
                   right_value: float = 1.0) -> DiscretizedSpace:
    """
    Path graph on [0, L] with n_cells equal edges and Y = both endpoints.

    Args:
        n_cells: Number of edges (at least 2)
        length: Interval length L
        left_value, right_value: F at the endpoints

    Returns:
        DiscretizedSpace: the interval
    """
    if int(n_cells) != n_cells or n_cells < 2:
        raise SpaceError(f"n_cells must be an integer >= 2, got {n_cells}")
    if not length > 0:
        raise SpaceError(f"length must be positive, got {length}")
    n_cells = int(n_cells)
    h = length / n_cells
    ids = np.arange(n_cells)
    edges = np.column_stack([ids, ids + 1])
    coords = (np.arange(n_cells + 1) * h).reshape(-1, 1)
    coords[-1, 0] = length
    cells = np.column_stack([np.zeros(n_cells + 1, dtype=np.int64), np.arange(n_cells + 1)])
    return DiscretizedSpace(
        n_cells + 1, edges, np.full(n_cells, h), [0, n_cells],
        boundary_values=[left_value, right_value], coords=coords,
        lattice=LatticeInfo(shape=(1, n_cells + 1), spacing=h, cells=cells),
        unit=h, name="interval", params={"n_cells": n_cells, "length": length})


def _lattice_edges(grid: np.ndarray, spacing: float, neighborhood: int) -> Tuple[np.ndarray, np.ndarray]:
    """Edges between present cells of an index grid."""
    pairs = [(grid[:, :-1], grid[:, 1:], spacing), (grid[:-1, :], grid[1:, :], spacing)]
    if neighborhood == 8:
        diagonal = math.sqrt(2.0) * spacing
        pairs += [(grid[:-1, :-1], grid[1:, 1:], diagonal), (grid[:-1, 1:], grid[1:, :-1], diagonal)]
    edge_parts, length_parts = [], []
    for a, b, length in pairs:
        present = (a >= 0) & (b >= 0)
        edge_parts.append(np.column_stack([a[present], b[present]]))
        length_parts.append(np.full(int(present.sum()), length))
    return np.vstack(edge_parts), np.concatenate(length_parts)


def _lattice_space(open_mask: np.ndarray, spacing: float, boundary_mask: np.ndarray,
                   neighborhood: int, origin: Tuple[float, float] = (0.0, 0.0),
                   boundary_values: Optional[BoundaryFn] = None, name: str = "grid",
                   params: Optional[Dict[str, Any]] = None) -> DiscretizedSpace:
    """Assemble a lattice space from cell masks (row index is y, column index is x)."""
    if neighborhood not in (4, 8):
        raise SpaceError(f"neighborhood must be 4 or 8, got {neighborhood}")
    if not spacing > 0:
        raise SpaceError(f"spacing must be positive, got {spacing}")
    if not open_mask.any():
        raise SpaceError("no non-obstacle cell left")
    cells = np.argwhere(open_mask)
    grid = np.full(open_mask.shape, -1, dtype=np.int64)
    grid[cells[:, 0], cells[:, 1]] = np.arange(len(cells))
    edges, lengths = _lattice_edges(grid, spacing, neighborhood)
    coords = np.column_stack([origin[0] + cells[:, 1] * spacing, origin[1] + cells[:, 0] * spacing])
    boundary = grid[boundary_mask & open_mask]
    boundary = np.sort(boundary[boundary >= 0])
    if len(boundary) == 0:
        raise SpaceError("boundary selection is empty")
    values = None if boundary_values is None else np.asarray(boundary_values(coords[boundary]), dtype=float)
    if len(edges) == 0:
        raise SpaceError("lattice has no edges")
    return DiscretizedSpace(
        len(cells), edges, lengths, boundary, boundary_values=values, coords=coords,
        lattice=LatticeInfo(shape=tuple(open_mask.shape), spacing=spacing, cells=cells),
        unit=spacing, name=name, params=params)


def _rim_masks(open_mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Cells on the array edge, and cells with a missing 4-neighbour inside the array."""
    outer = np.zeros_like(open_mask)
    outer[0, :] = outer[-1, :] = True
    outer[:, 0] = outer[:, -1] = True
    blocked = ~open_mask
    near_obstacle = np.zeros_like(open_mask)
    near_obstacle[1:, :] |= blocked[:-1, :]
    near_obstacle[:-1, :] |= blocked[1:, :]
    near_obstacle[:, 1:] |= blocked[:, :-1]
    near_obstacle[:, :-1] |= blocked[:, 1:]
    return outer, near_obstacle


def build_grid_domain(nx: int, ny: int, spacing: float, obstacle_mask: Optional[np.ndarray] = None,
                      boundary_select: Union[str, Sequence[Tuple[int, int]]] = "outer",
                      neighborhood: int = 4,
                      boundary_values: Optional[BoundaryFn] = None) -> DiscretizedSpace:
    """
    Lattice domain over the non-obstacle cells of an nx-by-ny grid.

    Args:
        nx, ny: Grid size in columns and rows
        spacing: Lattice spacing
        obstacle_mask: (ny, nx) boolean array, True for blocked cells
        boundary_select: "outer", "obstacle", "outer+obstacle" or a list of (row, col) cells
        neighborhood: 4 or 8 (diagonals of length √2·spacing)
        boundary_values: Optional function from boundary coords (x, y) to F

    Returns:
        DiscretizedSpace: the lattice domain
    """
    if nx < 1 or ny < 1:
        raise SpaceError(f"grid must have positive size, got {nx}x{ny}")
    if obstacle_mask is None:
        open_mask = np.ones((ny, nx), dtype=bool)
    else:
        obstacle_mask = np.asarray(obstacle_mask, dtype=bool)
        if obstacle_mask.shape != (ny, nx):
            raise SpaceError(f"obstacle mask shape {obstacle_mask.shape} != ({ny}, {nx})")
        open_mask = ~obstacle_mask

    outer, near_obstacle = _rim_masks(open_mask)
    if isinstance(boundary_select, str):
        rules = {"outer": outer, "obstacle": near_obstacle, "outer+obstacle": outer | near_obstacle}
        if boundary_select not in rules:
            raise SpaceError(f"unknown boundary rule {boundary_select!r}")
        boundary_mask = rules[boundary_select]
    else:
        boundary_mask = np.zeros((ny, nx), dtype=bool)
        for row, col in boundary_select:
            if not (0 <= row < ny and 0 <= col < nx) or not open_mask[row, col]:
                raise SpaceError(f"boundary cell ({row}, {col}) is outside the domain")
            boundary_mask[row, col] = True
    return _lattice_space(open_mask, spacing, boundary_mask, neighborhood,
                          boundary_values=boundary_values, name="grid",
                          params={"nx": nx, "ny": ny, "spacing": spacing, "neighborhood": neighborhood})


def lattice_radius(offsets: np.ndarray, metric: str, neighborhood: int = 4) -> np.ndarray:
    """
    Distance of lattice offsets (dx, dy) from the origin.

    "euclidean" is the round norm; "path" is the lattice's own length metric
    (L1 for 4 neighbours, octile for 8).
    """
    ax, ay = np.abs(offsets[:, 0]), np.abs(offsets[:, 1])
    if metric == "euclidean":
        return np.hypot(ax, ay)
    if metric == "path":
        if neighborhood == 4:
            return ax + ay
        return np.maximum(ax, ay) + (math.sqrt(2.0) - 1.0) * np.minimum(ax, ay)
    raise SpaceError(f"metric must be 'euclidean' or 'path', got {metric!r}")


def build_annulus(inner: float, outer: float, spacing: float, metric: str = "euclidean",
                  neighborhood: int = 4,
                  radial_values: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> DiscretizedSpace:
    """
    Lattice annulus around the origin with both rims as boundary.

    Args:
        inner, outer: Radii (0 <= inner < outer)
        spacing: Lattice spacing
        metric: "euclidean" (round annulus) or "path" (annulus of the lattice metric)
        neighborhood: 4 or 8
        radial_values: F as a function of the radius (same metric); zeros if omitted

    Returns:
        DiscretizedSpace: coordinates are relative to the centre
    """
    if not 0 <= inner < outer:
        raise SpaceError(f"annulus radii must satisfy 0 <= inner < outer, got {inner}, {outer}")
    half = int(math.ceil(outer / spacing - MULTIPLE_RTOL)) + 1
    axis = np.arange(-half, half + 1)
    cols, rows = np.meshgrid(axis, axis)
    offsets = np.column_stack([cols.ravel(), rows.ravel()]) * spacing
    radius = lattice_radius(offsets, metric, neighborhood).reshape(cols.shape)
    slack = MULTIPLE_RTOL * outer
    open_mask = (radius >= inner - slack) & (radius <= outer + slack)
    _, near_obstacle = _rim_masks(open_mask)

    def values(coords: np.ndarray) -> np.ndarray:
        r = lattice_radius(coords, metric, neighborhood)
        return radial_values(r) if radial_values is not None else np.zeros(len(coords))

    return _lattice_space(open_mask, spacing, near_obstacle, neighborhood,
                          origin=(-half * spacing, -half * spacing), boundary_values=values,
                          name="annulus",
                          params={"inner": inner, "outer": outer, "spacing": spacing,
                                  "metric": metric, "neighborhood": neighborhood})


def build_lshape(n: int, spacing: float, neighborhood: int = 4,
                 boundary_values: Optional[BoundaryFn] = None) -> DiscretizedSpace:
    """
    L-shaped domain: an (n+1)-by-(n+1) lattice with its upper-right quadrant removed.

    Boundary is the outer rim plus the re-entrant rim; F defaults to the x coordinate
    scaled to [0, 1].
    """
    if n < 4 or n % 2:
        raise SpaceError(f"L-shape size must be an even integer >= 4, got {n}")
    size = n + 1
    open_mask = np.ones((size, size), dtype=bool)
    open_mask[n // 2 + 1:, n // 2 + 1:] = False
    outer, near_obstacle = _rim_masks(open_mask)
    if boundary_values is None:
        extent = n * spacing

        def boundary_values(coords: np.ndarray) -> np.ndarray:
            return coords[:, 0] / extent

    return _lattice_space(open_mask, spacing, outer | near_obstacle, neighborhood,
                          boundary_values=boundary_values, name="lshape",
                          params={"n": n, "spacing": spacing, "neighborhood": neighborhood})


def spiral_mask(turns: int) -> np.ndarray:
    """
    Open cells of a square spiral corridor with `turns` windings.

    Walls sit on odd square rings around the centre and corridors on even rings.
    The corridor on ring 2k is cut next to its entry, and its exit gap is one
    full winding further along, so the corridor forms a single spiral path.
    """
    if turns < 1:
        raise SpaceError(f"turns must be at least 1, got {turns}")
    size = 4 * turns + 1
    c = 2 * turns
    rows, cols = np.indices((size, size))
    ring = np.maximum(np.abs(rows - c), np.abs(cols - c))
    open_mask = ring % 2 == 0
    for k in range(turns):
        # exit gap through wall ring 2k+1, on its top side
        open_mask[c - (2 * k + 1), c + 2 * k] = True
        if k >= 1:
            open_mask[c - 2 * k, c + 2 * k - 1] = False
    return open_mask


def build_spiral(turns: int, spacing: float = 1.0, neighborhood: int = 4) -> DiscretizedSpace:
    """
    Spiral corridor; Y is the centre cell (F=0) and the outer rim (F=1).

    Cells on either side of a wall are close in the plane but far apart in
    the path metric.
    """
    open_mask = spiral_mask(turns)
    size = open_mask.shape[0]
    c = size // 2
    outer, _ = _rim_masks(open_mask)
    boundary_mask = outer.copy()
    boundary_mask[c, c] = True
    centre = np.array([c * spacing, c * spacing])

    def values(coords: np.ndarray) -> np.ndarray:
        return np.where(np.all(np.isclose(coords, centre), axis=1), 0.0, 1.0)

    return _lattice_space(open_mask, spacing, boundary_mask, neighborhood,
                          boundary_values=values, name="spiral",
                          params={"turns": turns, "spacing": spacing, "neighborhood": neighborhood})


# ---------------------------------------------------------------------------
# Space files
# ---------------------------------------------------------------------------

def space_to_dict(space: DiscretizedSpace) -> Dict[str, Any]:
    """Serialize a space into the JSON space format."""
    vertices = []
    for v in range(space.n):
        entry: Dict[str, Any] = {"id": v}
        if space.coords is not None:
            entry["coords"] = [float(c) for c in space.coords[v]]
        vertices.append(entry)
    data: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "name": space.name,
        "params": space.params,
        "unit": space.unit,
        "vertices": vertices,
        "edges": [[int(a), int(b), float(length)] for (a, b), length in zip(space.edges, space.lengths)],
        "boundary": [{"id": int(y), "F": float(f)} for y, f in zip(space.boundary, space.boundary_values)],
    }
    if space.lattice is not None:
        data["lattice"] = {
            "shape": [int(s) for s in space.lattice.shape],
            "spacing": space.lattice.spacing,
            "cells": space.lattice.cells.tolist(),
        }
    return data


def space_from_dict(data: Dict[str, Any]) -> DiscretizedSpace:
    """Parse the JSON space format."""
    try:
        vertices = data["vertices"]
        ids = [int(v["id"]) for v in vertices]
        if sorted(ids) != list(range(len(ids))):
            raise SpaceError("vertex ids must be 0..N-1")
        coords = None
        if vertices and all("coords" in v for v in vertices):
            coords = np.zeros((len(ids), len(vertices[0]["coords"])))
            for v in vertices:
                coords[int(v["id"])] = v["coords"]
        edge_rows = data["edges"]
        edges = np.array([[int(e[0]), int(e[1])] for e in edge_rows], dtype=np.int64)
        lengths = np.array([float(e[2]) for e in edge_rows])
        boundary = [int(b["id"]) for b in data["boundary"]]
        values = [float(b["F"]) for b in data["boundary"]]
        lattice = None
        if "lattice" in data:
            lat = data["lattice"]
            lattice = LatticeInfo(shape=tuple(lat["shape"]), spacing=float(lat["spacing"]),
                                  cells=np.asarray(lat["cells"], dtype=np.int64).reshape(-1, 2))
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise SpaceError(f"malformed space description: {e}")
    return DiscretizedSpace(len(ids), edges, lengths, boundary, boundary_values=values,
                            coords=coords, lattice=lattice, unit=data.get("unit"),
                            name=data.get("name", "file"), params=data.get("params"))


def save_space(space: DiscretizedSpace, path: Union[str, Path]) -> None:
    """Write a space file."""
    if not write_json_safe(Path(path), space_to_dict(space), logger):
        raise SpaceError(f"could not write space file {path}")


def load_space(path: Union[str, Path]) -> DiscretizedSpace:
    """Read a space file."""
    data = read_json_safe(Path(path), None, logger)
    if not isinstance(data, dict):
        raise SpaceError(f"could not read space file {path}")
    return space_from_dict(data)
