#!/usr/bin/env python3
"""
Convergence and verification experiments

This module handles dyadic ε-refinement studies, the sandwich and bound
checks against the favored games, and finite-difference residuals of the
biased infinity Laplacian on lattice spaces.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from .bias import GameBias, OddsFunction, bias_for, comparison_conditions, log_shape
from .config import SolverConfig
from .error_handler import PropertyCheckError, ValidationError
from .harmonic import ValueField, ValueSolver
from .metric_space import (DiscretizedSpace, build_annulus, build_interval, build_lshape,
                           d_eps_values, lattice_radius)


MAX_WITNESSES = 20
logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Space families
# ---------------------------------------------------------------------------

@dataclass
class SpaceFamily:
    """A space for every ε, with an optional exact solution of the limit equation."""

    name: str
    build: Callable[[float], DiscretizedSpace]
    oracle: Optional[Callable[[DiscretizedSpace], np.ndarray]] = None
    exact: bool = False
    params: Dict[str, Any] = field(default_factory=dict)
    # vertices where one ε-step in any lattice direction stays where u^ε is smooth
    smooth_region: Optional[Callable[[DiscretizedSpace, float], np.ndarray]] = None


def interval_profile(beta: float, x: np.ndarray, length: float = 1.0) -> np.ndarray:
    """(1−e^{−βx})/(1−e^{−βL}): the cone with value 0 at 0 and 1 at L (linear when β = 0)."""
    x = np.asarray(x, dtype=float)
    if beta == 0:
        return x / length
    return np.expm1(-beta * x) / np.expm1(-beta * length)


def interval_family(beta: float, k: int = 1, cells: Optional[int] = None,
                    length: float = 1.0) -> SpaceFamily:
    """
    [0, L] with F(0)=0, F(L)=1.

    Args:
        beta: β of the oracle cone
        k: Grid cells per ε (k = 1 is the exact-spacing family)
        cells: Use one fixed grid of this many cells for every ε instead
        length: Interval length
    """
    def build(eps: float) -> DiscretizedSpace:
        n = cells if cells is not None else int(round(k * length / eps))
        return build_interval(n, length, 0.0, 1.0)

    def oracle(space: DiscretizedSpace) -> np.ndarray:
        return interval_profile(beta, space.coords[:, 0], length)

    return SpaceFamily("interval", build, oracle, exact=(cells is None and k == 1),
                       params={"beta": beta, "k": k, "cells": cells, "length": length})


def annulus_cone(beta: float, inner: float, outer: float, r: np.ndarray) -> np.ndarray:
    """Radial cone centered at the annulus center with value 0 on the inner rim and 1 on the outer."""
    return interval_profile(beta, np.asarray(r, dtype=float) - inner, outer - inner)


def annulus_family(beta: float, k: int = 2, inner: float = 0.25, outer: float = 0.5,
                   metric: str = "path", neighborhood: int = 4) -> SpaceFamily:
    """
    Lattice annulus with spacing ε/k and boundary data from a radial cone.

    With metric="path" on a 4-neighbour lattice the annulus is an L1 diamond
    and the cone is radial in the lattice's own metric.
    """
    def cone(r: np.ndarray) -> np.ndarray:
        return annulus_cone(beta, inner, outer, r)

    def build(eps: float) -> DiscretizedSpace:
        return build_annulus(inner, outer, eps / k, metric=metric, neighborhood=neighborhood,
                             radial_values=cone)

    def oracle(space: DiscretizedSpace) -> np.ndarray:
        return cone(lattice_radius(space.coords, metric, neighborhood))

    def quadrant_interior(space: DiscretizedSpace, eps: float) -> np.ndarray:
        # the path radius is linear along ε-steps that do not cross an axis
        return np.all(np.abs(space.coords) >= eps * (1 - 1e-9), axis=1)

    return SpaceFamily("annulus", build, oracle, exact=False,
                       params={"beta": beta, "k": k, "inner": inner, "outer": outer,
                               "metric": metric, "neighborhood": neighborhood},
                       smooth_region=quadrant_interior if (metric, neighborhood) == ("path", 4) else None)


def lshape_family(k: int = 4, extent: float = 1.0) -> SpaceFamily:
    """L-shaped domain of side `extent` with spacing ε/k and F = x/extent; no oracle."""
    def build(eps: float) -> DiscretizedSpace:
        n = int(round(k * extent / eps))
        n += n % 2
        return build_lshape(n, extent / n)

    return SpaceFamily("lshape", build, None, exact=False, params={"k": k, "extent": extent})


# ---------------------------------------------------------------------------
# Dyadic convergence
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceTable:
    """One row per refinement level."""

    family: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    reference: str = "oracle"
    witnesses: List[Dict[str, Any]] = field(default_factory=list)

    def column(self, name: str) -> List[Any]:
        return [row.get(name) for row in self.rows]

    @property
    def header(self) -> List[str]:
        keys: List[str] = []
        for row in self.rows:
            keys.extend(k for k in row if k not in keys)
        return keys

    def as_rows(self) -> List[List[Any]]:
        header = self.header
        return [[row.get(k) for k in header] for row in self.rows]

    def error_constant(self, safety: float = 1.25) -> Optional[float]:
        """K = safety·err_u/ε at the coarsest level, for the bound err_u ≤ K·ε."""
        if not self.rows:
            return None
        first = self.rows[0]
        return safety * first["err_u"] / first["eps"]

    def linear_bound_holds(self, safety: float = 1.25) -> List[bool]:
        """Per level: err_u ≤ K·ε with K from error_constant."""
        K = self.error_constant(safety)
        if K is None:
            return []
        return [row["err_u"] <= K * row["eps"] * (1 + 1e-9) for row in self.rows]


def _vertex_keys(space: DiscretizedSpace, unit: float) -> Dict[tuple, int]:
    keys = np.rint(space.coords / unit).astype(np.int64)
    return {tuple(key): v for v, key in enumerate(keys)}


def common_vertices(coarse: DiscretizedSpace, fine: DiscretizedSpace) -> np.ndarray:
    """For every coarse vertex, the fine vertex at the same position (nested grids)."""
    if coarse is fine:
        return np.arange(coarse.n)
    if coarse.coords is None or fine.coords is None:
        if coarse.n == fine.n:
            return np.arange(coarse.n)
        raise ValidationError("cross-level comparison needs vertex coordinates")
    unit = min(coarse.unit, fine.unit)
    fine_keys = _vertex_keys(fine, unit)
    scaled = coarse.coords / unit
    keys = np.rint(scaled).astype(np.int64)
    off = np.max(np.abs(scaled - keys), axis=1)
    if np.any(off > 1e-6):
        raise ValidationError(f"grids are not nested: coarse vertex {int(np.argmax(off))} is off the fine lattice")
    try:
        return np.array([fine_keys[tuple(key)] for key in keys], dtype=np.int64)
    except KeyError as e:
        raise ValidationError(f"grids are not nested: no fine vertex at {e}")


class ConvergenceStudy:
    """Solves u, v and w along ε = ε₀/2ᵏ and compares the levels."""

    def __init__(self, family: SpaceFamily, odds: OddsFunction,
                 config: Optional[SolverConfig] = None, monotone_slack: Optional[float] = None,
                 bounds: bool = False):
        """
        Args:
            family: Space generator per ε
            odds: Odds family
            config: Solver settings
            monotone_slack: Allowed dyadic monotonicity violation (default 100·tol)
            bounds: Also run the bound suite on every level
        """
        self.family = family
        self.odds = odds
        self.config = config or SolverConfig()
        self.monotone_slack = monotone_slack if monotone_slack is not None else 100 * self.config.tol
        self.bounds = bounds
        self.logger = logging.getLogger(__name__)
        self.shape = log_shape(odds)

    def run(self, eps0: float, depth: int, favored: bool = True, strict: bool = True) -> ConvergenceTable:
        """
        Solve every level and build the table.

        Args:
            eps0: Coarsest ε
            depth: Number of levels (at least 2)
            favored: Also solve the favored games
            strict: Raise PropertyCheckError on monotonicity violations

        Returns:
            ConvergenceTable: errors, favored gaps and monotonicity flags per level
        """
        if depth < 2:
            raise ValidationError(f"depth must be at least 2, got {depth}")
        if not eps0 > 0:
            raise ValidationError(f"eps0 must be positive, got {eps0}")

        table = ConvergenceTable(family=self.family.name,
                                 reference="oracle" if self.family.oracle else "finest")
        levels = []
        coarse_space = None
        for level in range(depth):
            eps = eps0 / 2 ** level
            space = self.family.build(eps)
            if not self.family.exact and space.unit > eps / 4 * (1 + 1e-9):
                self.logger.warning(f"level {level}: grid unit {space.unit} exceeds eps/4 = {eps / 4}")
            bias = bias_for(self.odds, eps)
            solver = ValueSolver(space, bias, self.config)
            u, _, report = solver.solve_value()
            v = solver.solve_favored_lower() if favored else None
            w = solver.solve_favored_upper() if favored else None
            if coarse_space is None:
                coarse_space = space
            levels.append({"eps": eps, "space": space, "bias": bias, "u": u, "v": v, "w": w,
                           "report": report, "common": common_vertices(coarse_space, space)})
            self.logger.info(f"Level {level}: eps={eps}, {space.n} vertices, {report.sweeps} sweeps")

        finest = levels[-1]
        for level, data in enumerate(levels):
            space, u, v, w = data["space"], data["u"], data["v"], data["w"]
            row: Dict[str, Any] = {
                "level": level,
                "eps": data["eps"],
                "h": space.mesh_width,
                "vertices": space.n,
                "sweeps": data["report"].sweeps,
                "gap": data["report"].gap,
            }
            if self.family.oracle is not None:
                row["err_u"] = float(np.max(np.abs(u.values - self.family.oracle(space))))
            else:
                ref = finest["u"].values[finest["common"]]
                row["err_u"] = float(np.max(np.abs(u.values[data["common"]] - ref)))
            if favored:
                row["v_gap"] = float(np.max(np.abs(v.values - u.values)))
                row["w_gap"] = float(np.max(np.abs(w.values - u.values)))
                row.update(self._monotone_flags(levels, level, table))
            if self.bounds:
                checks = bound_check(space, data["bias"], u, v, w)
                for name, result in checks.items():
                    row[f"{name}_slack"] = result.worst_slack
            table.rows.append(row)

        if strict and table.witnesses:
            raise PropertyCheckError(
                f"dyadic monotonicity violated at {len(table.witnesses)} vertices "
                f"(first: level {table.witnesses[0]['level']}, vertex {table.witnesses[0]['vertex']})",
                witnesses=table.witnesses)
        return table

    def _monotone_flags(self, levels: List[Dict[str, Any]], level: int,
                        table: ConvergenceTable) -> Dict[str, Optional[bool]]:
        """Compare v and w with the previous level on the coarsest vertices."""
        if level == 0:
            return {"v_monotone": None, "w_monotone": None}
        prev, cur = levels[level - 1], levels[level]
        v_prev = prev["v"].values[prev["common"]]
        v_cur = cur["v"].values[cur["common"]]
        w_prev = prev["w"].values[prev["common"]]
        w_cur = cur["w"].values[cur["common"]]
        flags: Dict[str, Optional[bool]] = {}
        # v^{2ε} ≤ v^ε for log-concave odds, w^ε ≤ w^{2ε} for log-convex odds
        for name, drop, expected in (("v", v_prev - v_cur, self.shape.is_concave),
                                     ("w", w_cur - w_prev, self.shape.is_convex)):
            worst = int(np.argmax(drop))
            ok = bool(drop[worst] <= self.monotone_slack)
            flags[f"{name}_monotone"] = ok
            if expected and not ok and len(table.witnesses) < MAX_WITNESSES:
                table.witnesses.append({"field": name, "level": level, "vertex": int(worst),
                                        "violation": float(drop[worst])})
        return flags


def dyadic_convergence(family: SpaceFamily, odds: OddsFunction, eps0: float = 0.25,
                       depth: int = 4, config: Optional[SolverConfig] = None,
                       monotone_slack: Optional[float] = None, bounds: bool = False,
                       strict: bool = True) -> ConvergenceTable:
    """Run a dyadic refinement study; see ConvergenceStudy.run."""
    return ConvergenceStudy(family, odds, config, monotone_slack, bounds).run(eps0, depth, strict=strict)


# ---------------------------------------------------------------------------
# Sandwich and bounds
# ---------------------------------------------------------------------------

@dataclass
class SandwichReport:
    """Worst excursions of a candidate outside [v, w]."""

    passed: bool
    below_v: float
    above_w: float
    witnesses: List[Dict[str, Any]] = field(default_factory=list)


def sandwich_check(space: DiscretizedSpace, odds: OddsFunction, eps: float,
                   candidate: ValueField, config: Optional[SolverConfig] = None,
                   slack: Optional[float] = None) -> SandwichReport:
    """
    Check v^ε − slack ≤ candidate ≤ w^ε + slack at every vertex.

    Args:
        space: The space
        odds: Odds family (normally the exponential one)
        eps: Step radius
        candidate: Field agreeing with F on Y
        config: Solver settings
        slack: Allowed excursion (default 100·tol)
    """
    config = config or SolverConfig()
    candidate.check_against(space, atol=1e-9)
    slack = 100 * config.tol if slack is None else slack
    bias = bias_for(odds, eps)
    lower_ok, upper_ok = comparison_conditions(bias, odds.beta)
    if not (lower_ok and upper_ok):
        logger.warning(f"toss probability p={bias.p:.6g} is not the exponential one at eps={eps}; "
                       f"the sandwich may legitimately fail")
    solver = ValueSolver(space, bias, config)
    v = solver.solve_favored_lower().values
    w = solver.solve_favored_upper().values
    u = candidate.values
    below = v - u
    above = u - w
    witnesses = []
    for name, excess in (("below_v", below), ("above_w", above)):
        for vertex in np.nonzero(excess > slack)[0][:MAX_WITNESSES]:
            witnesses.append({"side": name, "vertex": int(vertex), "excess": float(excess[vertex])})
    report = SandwichReport(passed=not witnesses, below_v=float(below.max()),
                            above_w=float(above.max()), witnesses=witnesses)
    logger.info(f"Sandwich check: {'pass' if report.passed else 'fail'} "
                f"(below v by {report.below_v:.3e}, above w by {report.above_w:.3e})")
    return report


@dataclass
class BoundResult:
    """Worst slack (right side minus left side) of one bound over all tested pairs."""

    name: str
    pairs: int
    worst_slack: Optional[float]
    witnesses: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.witnesses


def bound_check(space: DiscretizedSpace, bias: GameBias, u: ValueField,
                v: Optional[ValueField] = None, w: Optional[ValueField] = None,
                beta: Optional[float] = None, closed: Optional[bool] = None,
                atol: float = 1e-9) -> Dict[str, BoundResult]:
    """
    Check the favored-game and value bounds over every (x, y ∈ Y) pair.

    vbound: v(x) ≥ F(y) − (2ε + d_eps(x, y))·Lip.
    ubound: u(x) ≤ F(y) + ρ̃^{D/ε}·ε·Lip when d_eps(x, y) = ε, with ρ̃ = max(ρ, 1/ρ)
            and D the largest d_eps between vertices.
    wbound: w(x) ≤ F(y) + √η·(Lip + e^{4|β|√η}·sup F) for η = d_eps(x, y) ∈ [ε, 1),
            only when sup_Y F ≥ 0.

    Returns:
        Dict[str, BoundResult]: keyed by "vbound", "ubound", "wbound"
    """
    eps = bias.eps
    if closed is None:
        closed = space.is_step_multiple(eps)
    data = space.boundary_data(exact=True)
    lip, F = data.lip, space.boundary_values
    tol = atol * (1.0 + float(np.max(np.abs(F))))
    if beta is None:
        beta = math.log(bias.rho) / eps if 0 < bias.rho < math.inf else 0.0
    steps = d_eps_values(space.distances_between(space.boundary), eps, closed).T  # (N, |Y|)
    D = float(d_eps_values(np.array([space.diameter()]), eps, closed)[0])

    results: Dict[str, BoundResult] = {}

    def record(name: str, slack: np.ndarray, mask: np.ndarray) -> None:
        pairs = int(mask.sum())
        if pairs == 0:
            results[name] = BoundResult(name, 0, None)
            return
        masked = np.where(mask, slack, np.inf)
        worst = float(masked.min())
        bad = np.argwhere(masked < -tol)[:MAX_WITNESSES]
        witnesses = [{"x": int(x), "y": int(space.boundary[j]), "slack": float(masked[x, j])}
                     for x, j in bad]
        results[name] = BoundResult(name, pairs, worst, witnesses)

    all_pairs = np.ones_like(steps, dtype=bool)
    if v is not None:
        slack = v.values[:, None] - F[None, :] + (2 * eps + steps) * lip
        record("vbound", slack, all_pairs)

    rho = max(bias.rho, 1.0 / bias.rho) if bias.rho > 0 else math.inf
    growth = rho ** (D / eps) if rho < math.inf else math.inf
    one_step = np.isclose(steps, eps, rtol=1e-9, atol=0)
    slack = F[None, :] + growth * eps * lip - u.values[:, None]
    record("ubound", slack, one_step)

    if w is not None and F.max() >= 0:
        eta = steps
        in_range = (eta >= eps * (1 - 1e-9)) & (eta < 1.0)
        root = np.sqrt(eta)
        slack = F[None, :] + root * (lip + np.exp(4 * abs(beta) * root) * F.max()) - w.values[:, None]
        record("wbound", slack, in_range)

    for result in results.values():
        logger.info(f"{result.name}: {result.pairs} pairs, worst slack {result.worst_slack}")
    return results


# ---------------------------------------------------------------------------
# Residual of the limit equation
# ---------------------------------------------------------------------------

RESIDUAL_NORMS = ("euclidean", "path")


@dataclass
class ResidualField:
    """Central-difference residual Φu = ∂²_ν u + β·∇u·ν at interior lattice points."""

    vertices: np.ndarray
    values: np.ndarray
    grad_norm: np.ndarray
    masked: np.ndarray
    spacing: float
    threshold: float
    norm: str = "euclidean"

    @property
    def max_abs(self) -> float:
        """Largest |Φu| over unmasked points (0 when all are masked)."""
        kept = np.abs(self.values[~self.masked])
        return float(kept.max()) if len(kept) else 0.0

    def as_rows(self) -> List[List[Any]]:
        return [[int(v), float(phi), float(g), bool(m)]
                for v, phi, g, m in zip(self.vertices, self.values, self.grad_norm, self.masked)]


def residual(space: DiscretizedSpace, values: np.ndarray, beta: float,
             grad_threshold: Optional[float] = None, stride: int = 1, norm: str = "euclidean",
             region: Optional[np.ndarray] = None) -> ResidualField:
    """
    Evaluate the biased infinity Laplacian residual by central differences.

    With norm="euclidean" ν is ∇u/|∇u| and the residual is ν·D²u·ν + β|∇u|.
    With norm="path" ν ranges over the unit vectors of the lattice metric
    (the axes for 4 neighbours, also the diagonals for 8), the one maximizing
    ∇u·ν is taken, and every derivative is a difference along that lattice
    line. This is the operator the lattice game approximates; the round one
    does not vanish on lattice-metric cones.

    Args:
        space: Lattice space (interval or square lattice with coordinates)
        values: Field per vertex
        beta: β of the equation
        grad_threshold: Mask points with gradient below this (default 1e-6·M/diam)
        stride: Difference step in lattice cells
        norm: "euclidean" or "path"
        region: Boolean mask per vertex; points outside it are skipped

    Returns:
        ResidualField: residual at every non-boundary point whose stencil is present
    """
    if space.lattice is None or space.coords is None:
        raise ValidationError("residual needs a lattice space with coordinates")
    if stride < 1:
        raise ValidationError(f"stride must be at least 1, got {stride}")
    if norm not in RESIDUAL_NORMS:
        raise ValidationError(f"norm must be one of {RESIDUAL_NORMS}, got {norm!r}")
    u = np.asarray(values, dtype=float).reshape(-1)
    if len(u) != space.n:
        raise ValidationError(f"field has {len(u)} values but the space has {space.n} vertices")
    if region is not None:
        region = np.asarray(region, dtype=bool).reshape(-1)
        if len(region) != space.n:
            raise ValidationError(f"region has {len(region)} entries but the space has {space.n} vertices")
    grid = space.lattice.index_grid()
    ny, nx = grid.shape
    one_dimensional = ny == 1
    if nx < 2 * stride + 1 or (not one_dimensional and ny < 2 * stride + 1):
        raise ValidationError(f"lattice {ny}x{nx} too small for central differences with stride {stride}")
    if grad_threshold is None:
        grad_threshold = 1e-6 * (u.max() - u.min()) / max(space.diameter(), 1e-300)
    s = stride
    hs = space.lattice.spacing * s
    present = grid >= 0
    padded = np.where(present, u[np.maximum(grid, 0)], np.nan)

    def shifted(dr: int, dc: int) -> np.ndarray:
        out = np.full(padded.shape, np.nan)
        rows = slice(max(0, -dr), ny - max(0, dr))
        cols = slice(max(0, -dc), nx - max(0, dc))
        rows_src = slice(max(0, dr), ny - max(0, -dr))
        cols_src = slice(max(0, dc), nx - max(0, -dc))
        out[rows, cols] = padded[rows_src, cols_src]
        return out

    if one_dimensional:
        east, west = shifted(0, s), shifted(0, -s)
        grad = np.abs(east - west) / (2 * hs)
        second = (east - 2 * padded + west) / hs ** 2
        complete = np.isfinite(grad) & np.isfinite(second)
    elif norm == "path":
        neighborhood = int(space.params.get("neighborhood", 4))
        steps = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if neighborhood == 8 else [])
        slopes, curvatures = [], []
        for dr, dc in steps:
            # metric length of the stencil arm, so ν is a unit vector of the lattice metric
            arm = hs * float(lattice_radius(np.array([[dc, dr]], dtype=float), "path", neighborhood)[0])
            ahead, behind = shifted(s * dr, s * dc), shifted(-s * dr, -s * dc)
            slopes.append(np.abs(ahead - behind) / (2 * arm))
            curvatures.append((ahead - 2 * padded + behind) / arm ** 2)
        slopes, curvatures = np.stack(slopes), np.stack(curvatures)
        complete = np.all(np.isfinite(slopes) & np.isfinite(curvatures), axis=0)
        best = np.argmax(np.where(np.isfinite(slopes), slopes, -np.inf), axis=0)
        grad = np.take_along_axis(slopes, best[None], axis=0)[0]
        second = np.take_along_axis(curvatures, best[None], axis=0)[0]
    else:
        east, west = shifted(0, s), shifted(0, -s)
        north, south = shifted(s, 0), shifted(-s, 0)
        ux = (east - west) / (2 * hs)
        uy = (north - south) / (2 * hs)
        uxx = (east - 2 * padded + west) / hs ** 2
        uyy = (north - 2 * padded + south) / hs ** 2
        uxy = (shifted(s, s) - shifted(s, -s) - shifted(-s, s) + shifted(-s, -s)) / (4 * hs ** 2)
        grad = np.hypot(ux, uy)
        with np.errstate(divide="ignore", invalid="ignore"):
            nx_, ny_ = ux / grad, uy / grad
        second = nx_ ** 2 * uxx + 2 * nx_ * ny_ * uxy + ny_ ** 2 * uyy
        complete = np.isfinite(grad) & np.isfinite(uxx) & np.isfinite(uyy) & np.isfinite(uxy)
    phi = second + beta * grad

    keep = np.zeros(space.n, dtype=bool)
    keep[space.interior] = True
    if region is not None:
        keep &= region
    cell_ok = present & keep[np.maximum(grid, 0)] & complete
    masked_grid = grad < grad_threshold
    phi = np.where(masked_grid, 0.0, phi)
    cell_ok &= np.isfinite(phi) | masked_grid

    rows, cols = np.nonzero(cell_ok)
    vertices = grid[rows, cols]
    order = np.argsort(vertices)
    rows, cols, vertices = rows[order], cols[order], vertices[order]
    result = ResidualField(vertices=vertices, values=phi[rows, cols], grad_norm=grad[rows, cols],
                           masked=masked_grid[rows, cols], spacing=hs, threshold=float(grad_threshold),
                           norm=norm)
    logger.info(f"Residual ({norm}) on {len(vertices)} points ({int(result.masked.sum())} masked): "
                f"max |Φu| = {result.max_abs:.3e}")
    return result


def residual_study(family: SpaceFamily, odds: OddsFunction, beta: float, eps0: float = 0.125,
                   depth: int = 3, config: Optional[SolverConfig] = None, norm: Optional[str] = None,
                   min_decrease: float = 0.25, strict: bool = True) -> ConvergenceTable:
    """
    Residual of the solved u^ε along ε = ε₀/2ᵏ.

    Differences are taken with a stride of ε/h cells, so each stencil arm is
    one game step, and in the family's own metric. Each row records max |Φu|
    and its ratio to the previous level; a ratio above 1 − min_decrease is a
    witness.

    Args:
        family: Space generator per ε; ε must be a whole number of lattice cells
        odds: Odds family
        beta: β of the limit equation
        eps0: Coarsest ε
        depth: Number of levels (at least 2)
        config: Solver settings
        norm: Residual norm (default: the family's metric)
        min_decrease: Required relative drop of max |Φu| per level
        strict: Raise PropertyCheckError when a level falls short

    Returns:
        ConvergenceTable: level, eps, stride, points, max_phi and ratio per row
    """
    if depth < 2:
        raise ValidationError(f"depth must be at least 2, got {depth}")
    if not eps0 > 0:
        raise ValidationError(f"eps0 must be positive, got {eps0}")
    if not 0 < min_decrease < 1:
        raise ValidationError(f"min_decrease must lie in (0, 1), got {min_decrease}")
    norm = norm or family.params.get("metric", "euclidean")
    config = config or SolverConfig()
    table = ConvergenceTable(family=family.name, reference="previous level")
    previous = None
    for level in range(depth):
        eps = eps0 / 2 ** level
        space = family.build(eps)
        if space.lattice is None:
            raise ValidationError(f"family {family.name!r} does not build lattice spaces")
        stride = int(round(eps / space.lattice.spacing))
        if stride < 1 or not math.isclose(stride * space.lattice.spacing, eps, rel_tol=1e-9):
            raise ValidationError(f"eps={eps} is not a whole number of lattice cells "
                                  f"(spacing {space.lattice.spacing})")
        u, _, report = ValueSolver(space, bias_for(odds, eps), config).solve_value()
        region = family.smooth_region(space, eps) if family.smooth_region is not None else None
        result = residual(space, u.values, beta, stride=stride, norm=norm, region=region)
        if not len(result.vertices):
            raise ValidationError(f"no residual points at eps={eps}; the space is too small")
        current = result.max_abs
        ratio = current / previous if previous else None
        table.rows.append({"level": level, "eps": eps, "h": space.lattice.spacing, "stride": stride,
                           "points": int(len(result.vertices)), "sweeps": report.sweeps,
                           "max_phi": current, "ratio": ratio})
        if ratio is not None and ratio > 1 - min_decrease:
            table.witnesses.append({"level": level, "eps": eps, "max_phi": current, "ratio": ratio})
        note = f"ratio {ratio:.3f}" if ratio is not None else "first level"
        logger.info(f"Residual level {level}: eps={eps}, max |Φu| = {current:.3e} ({note})")
        previous = current

    if strict and table.witnesses:
        first = table.witnesses[0]
        raise PropertyCheckError(
            f"residual did not shrink by {min_decrease:.0%} at level {first['level']} "
            f"(ratio {first['ratio']:.3f})", witnesses=table.witnesses)
    return table
