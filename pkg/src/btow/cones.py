#!/usr/bin/env python3
"""
Exponential cones and comparison certificates

This module handles β-exponential cones, two-point cone fitting, and the
randomized comparison-with-cones (CEC) certification of value fields.
"""

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .error_handler import ValidationError
from .harmonic import ValueField
from .metric_space import BallIndex, DiscretizedSpace, ball_index, d_eps_values


FIT_RTOL = 1e-10
HYPOTHESIS_RTOL = 1e-12
DEFAULT_SLACK_CONSTANT = 8.0
MAX_WITNESSES = 20

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConeSpec:
    """A β-exponential cone with center x₀, sign ι, slope A ≥ 0 and offset B."""

    center: int
    iota: int
    A: float
    B: float
    beta: float

    def __post_init__(self):
        if self.iota not in (1, -1):
            raise ValidationError(f"cone sign must be +1 or -1, got {self.iota}")
        if not self.A >= 0:
            raise ValidationError(f"cone slope A must be nonnegative, got {self.A}")

    def __call__(self, r):
        return cone_eval(self, r)

    def shifted(self, B: float) -> 'ConeSpec':
        return ConeSpec(self.center, self.iota, self.A, float(B), self.beta)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def cone_profile(beta: float, iota: int, r) -> np.ndarray:
    """
    Cone with A = 1, B = 0 as a function of distance.

    ι=+ gives sgn(β)(1−e^{−βr}), ι=− gives sgn(β)(1−e^{βr}); at β = 0 the
    linear limits r and −r are used.
    """
    r = np.asarray(r, dtype=float)
    if beta == 0:
        return iota * r
    sign = math.copysign(1.0, beta)
    return sign * -np.expm1(-iota * beta * r)


def cone_eval(cone: ConeSpec, r):
    """Value of the cone at distance r ≥ 0 from its center."""
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValidationError(f"cone distance must be nonnegative, got {float(np.min(r_arr))}")
    values = cone.A * cone_profile(cone.beta, cone.iota, r_arr) + cone.B
    return float(values) if np.ndim(values) == 0 else values


def cone_field(space: DiscretizedSpace, cone: ConeSpec) -> np.ndarray:
    """The cone evaluated at every vertex of a space."""
    return cone_eval(cone, space.distances_from(cone.center))


def fit_cone(beta: float, iota: int, r1: float, val1: float, r2: float, val2: float,
             center: int = 0) -> ConeSpec:
    """
    Fit the cone of sign ι through two (distance, value) points.

    Args:
        beta: Drift coefficient β
        iota: +1 or −1
        r1, val1: First point
        r2, val2: Second point (r2 ≠ r1)
        center: Vertex recorded as the cone's center

    Returns:
        ConeSpec: the unique cone through both points

    Raises:
        ValidationError: if the points need A < 0 (the opposite sign fits them)
    """
    if r1 < 0 or r2 < 0:
        raise ValidationError(f"cone distances must be nonnegative, got {r1}, {r2}")
    if r1 == r2:
        raise ValidationError(f"cone fit needs distinct distances, got {r1} twice")
    g1, g2 = cone_profile(beta, iota, [r1, r2])
    A = (val2 - val1) / (g2 - g1)
    scale = max(abs(val1), abs(val2), 1.0)
    if A < 0:
        if abs(val2 - val1) <= FIT_RTOL * scale:
            A = 0.0
        else:
            other = "-" if iota == 1 else "+"
            raise ValidationError(
                f"points ({r1}, {val1}) and ({r2}, {val2}) need a negative slope; "
                f"try iota={other}", context={"A": A})
    B = val1 - A * g1
    return ConeSpec(center=int(center), iota=int(iota), A=float(A), B=float(B), beta=float(beta))


# ---------------------------------------------------------------------------
# Comparison with cones
# ---------------------------------------------------------------------------

@dataclass
class CecReport:
    """Aggregated outcome of one or more comparison checks."""

    side: str
    verdict: str = "pass"
    worst_violation: float = -math.inf
    worst_excess: float = -math.inf
    checked: int = 0
    hypothesis_not_met: int = 0
    coverage: float = 0.0
    witnesses: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def merge(self, other: 'CecReport') -> None:
        """Fold another report into this one."""
        self.checked += other.checked
        self.hypothesis_not_met += other.hypothesis_not_met
        self.worst_violation = max(self.worst_violation, other.worst_violation)
        self.worst_excess = max(self.worst_excess, other.worst_excess)
        if not other.passed:
            self.verdict = "fail"
        self.witnesses.extend(other.witnesses)
        self.witnesses.sort(key=lambda w: -w["excess"])
        del self.witnesses[MAX_WITNESSES:]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key in ("worst_violation", "worst_excess"):
            if math.isinf(data[key]):
                data[key] = None
        return data


def _ball_union(balls: BallIndex, vertices: np.ndarray) -> np.ndarray:
    """All vertices lying in the ball of some vertex of the set."""
    starts = balls.indptr[vertices]
    counts = balls.sizes()[vertices]
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return np.unique(balls.indices[np.repeat(starts, counts) + offsets])


def discrete_boundary(space: DiscretizedSpace, balls: BallIndex, subdomain: np.ndarray,
                      center: Optional[int] = None) -> np.ndarray:
    """
    Vertices outside the subdomain with a ball-neighbour in it, plus the
    center when the center lies in the subdomain.
    """
    inside = np.zeros(space.n, dtype=bool)
    inside[subdomain] = True
    reached = _ball_union(balls, subdomain)
    outside = reached[~inside[reached]]
    if center is not None and inside[center]:
        outside = np.union1d(outside, [center])
    return outside


def _subdomain(space: DiscretizedSpace, subdomain: Sequence[int]) -> np.ndarray:
    vertices = np.unique(np.asarray(subdomain, dtype=np.int64).reshape(-1))
    if len(vertices) == 0:
        raise ValidationError("subdomain V is empty")
    if vertices.min() < 0 or vertices.max() >= space.n:
        raise ValidationError(f"subdomain vertex out of range 0..{space.n - 1}")
    touching = vertices[space.is_boundary[vertices]]
    if len(touching):
        raise ValidationError(f"subdomain V touches Y at vertex {int(touching[0])}",
                              context={"vertex": int(touching[0])})
    return vertices


def cec_check(space: DiscretizedSpace, value_field: ValueField, subdomain: Sequence[int],
              cone: ConeSpec, side: str = "above", slack: float = 0.0,
              balls: Optional[BallIndex] = None, eps: Optional[float] = None) -> CecReport:
    """
    Check comparison with one cone on one subdomain.

    For side="above": if u ≤ cone on the discrete boundary of V∖{x₀}, verify
    u ≤ cone + slack on V. side="below" mirrors the inequalities. A failed
    boundary hypothesis is counted, not treated as a violation.

    Args:
        space: The space
        value_field: Field u
        subdomain: Interior vertex set V
        cone: Comparison cone
        side: "above" or "below"
        slack: Allowed excess on V
        balls: ε-ball index defining the discrete boundary
        eps: Radius for the ball index when balls is omitted (defaults to the field's ε)

    Returns:
        CecReport: the verdict for this (V, cone) pair
    """
    if side not in ("above", "below"):
        raise ValidationError(f"side must be 'above' or 'below', got {side!r}")
    if slack < 0:
        raise ValidationError(f"slack must be nonnegative, got {slack}")
    vertices = _subdomain(space, subdomain)
    if balls is None:
        if eps is None:
            if value_field.bias is None:
                raise ValidationError("cec_check needs balls, eps or a field with a bias")
            eps = value_field.bias.eps
        balls = ball_index(space, eps)

    u = value_field.values
    sign = 1.0 if side == "above" else -1.0
    tested = vertices[vertices != cone.center]
    report = CecReport(side=side, checked=1)
    if len(tested) == 0:
        return report
    rim = discrete_boundary(space, balls, tested, cone.center if cone.center in vertices else None)
    cone_values = cone_field(space, cone)
    excess_on = sign * (u - cone_values)

    scale = 1.0 + float(np.max(np.abs(u)))
    if len(rim) and np.max(excess_on[rim]) > HYPOTHESIS_RTOL * scale:
        report.hypothesis_not_met = 1
        return report

    inside = excess_on[vertices]
    worst = int(np.argmax(inside))
    report.worst_violation = float(inside[worst])
    report.worst_excess = report.worst_violation - slack
    if report.worst_excess > 0:
        report.verdict = "fail"
        report.witnesses.append({
            "cone": cone.to_dict(),
            "subdomain_size": int(len(vertices)),
            "subdomain_min": int(vertices.min()),
            "vertex": int(vertices[worst]),
            "violation": report.worst_violation,
            "slack": float(slack),
            "excess": report.worst_excess,
        })
    return report


def parse_slack_rule(rule: str) -> Tuple[str, float]:
    """Parse "scaled:<c>" (c·ε·M/s) or "abs:<value>"."""
    kind, _, number = rule.partition(":")
    try:
        value = float(number) if number else DEFAULT_SLACK_CONSTANT
    except ValueError:
        raise ValidationError(f"slack rule {rule!r} has a non-numeric value")
    if kind not in ("scaled", "abs") or value < 0:
        raise ValidationError(f"slack rule must be scaled:<c> or abs:<v> with a nonnegative number, got {rule!r}")
    return kind, value


class CecScanner:
    """Randomized comparison-with-cones certification of a value field."""

    def __init__(self, space: DiscretizedSpace, value_field: ValueField, beta: float,
                 eps: Optional[float] = None, balls: Optional[BallIndex] = None):
        """
        Args:
            space: The space
            value_field: Field to certify
            beta: β of the comparison cones
            eps: Step radius (defaults to the field's ε)
            balls: Prebuilt ε-ball index
        """
        self.space = space
        self.field = value_field
        self.beta = float(beta)
        self.logger = logging.getLogger(__name__)
        if eps is None:
            if value_field.bias is None:
                raise ValidationError("cec_scan needs eps or a field with a bias")
            eps = value_field.bias.eps
        self.eps = float(eps)
        self.balls = balls if balls is not None else ball_index(space, self.eps)
        self.M = value_field.oscillation
        self.diameter = space.diameter()
        self.boundary_distance = space.boundary_distance()

    def slack_for(self, center: int, rule: Tuple[str, float]) -> float:
        kind, value = rule
        if kind == "abs":
            return value
        s = max(float(self.boundary_distance[center]), self.eps)
        return value * self.eps * self.M / s

    def _sample(self, rng: np.random.Generator, side: str) -> Optional[Tuple[np.ndarray, ConeSpec]]:
        """Draw a ball-shaped subdomain and a cone meeting the boundary hypothesis with equality."""
        space, u = self.space, self.field.values
        anchor = int(rng.choice(space.interior))
        radius = rng.uniform(self.eps, max(self.eps, 0.5 * self.diameter))
        subdomain = space.interior[space.distances_from(anchor)[space.interior] <= radius]
        center = int(rng.integers(space.n))
        iota = 1 if rng.random() < 0.5 else -1
        tested = subdomain[subdomain != center]
        if len(tested) == 0:
            return None
        rim = discrete_boundary(space, self.balls, tested, center if center in subdomain else None)
        if len(rim) == 0:
            return None
        r = space.distances_from(center)

        cone = None
        if rng.random() < 0.5 and len(rim) >= 2:
            a, b = rng.choice(rim, size=2, replace=False)
            if r[a] != r[b]:
                for sign in (iota, -iota):
                    try:
                        cone = fit_cone(self.beta, sign, r[a], u[a], r[b], u[b], center=center)
                        break
                    except ValidationError:
                        continue
        if cone is None:
            A = max(self.M, 1e-300) * 10.0 ** rng.uniform(-3.0, 3.0)
            cone = ConeSpec(center=center, iota=iota, A=float(A), B=0.0, beta=self.beta)

        shape = cone.A * cone_profile(self.beta, cone.iota, r[rim])
        offsets = u[rim] - shape
        B = float(np.max(offsets)) if side == "above" else float(np.min(offsets))
        return subdomain, cone.shifted(B)

    def scan(self, side: str = "above", n_trials: int = 500, seed: int = 0,
             slack_rule: str = "scaled:8") -> CecReport:
        """
        Run n_trials seeded comparison checks and aggregate them.

        Returns:
            CecReport: verdict, worst violation, witnesses and vertex coverage
        """
        if n_trials < 1:
            raise ValidationError(f"n_trials must be at least 1, got {n_trials}")
        rule = parse_slack_rule(slack_rule)
        self.logger.info(f"CEC scan ({side}): {n_trials} trials, slack rule {slack_rule}")
        total = CecReport(side=side)
        covered = np.zeros(self.space.n, dtype=bool)
        for trial in range(n_trials):
            rng = np.random.default_rng(np.random.SeedSequence([seed, trial]))
            sample = self._sample(rng, side)
            if sample is None:
                continue
            subdomain, cone = sample
            slack = self.slack_for(cone.center, rule)
            report = cec_check(self.space, self.field, subdomain, cone, side, slack, balls=self.balls)
            if report.witnesses:
                for witness in report.witnesses:
                    witness["trial"] = trial
            if not report.hypothesis_not_met:
                covered[subdomain] = True
            total.merge(report)
        total.coverage = float(covered[self.space.interior].mean())
        self.logger.info(f"CEC scan ({side}): {total.verdict}, worst excess {total.worst_excess:.3e}, "
                         f"coverage {total.coverage:.2f}")
        return total


def cec_scan(space: DiscretizedSpace, value_field: ValueField, side: str = "above",
             n_trials: int = 500, rng_seed: int = 0, slack_rule: str = "scaled:8",
             beta: Optional[float] = None, eps: Optional[float] = None) -> CecReport:
    """
    Randomized CEC certification; β defaults to log ρ / ε of the field's bias.
    """
    if beta is None:
        bias = value_field.bias
        if bias is None:
            raise ValidationError("cec_scan needs beta or a field with a bias")
        beta = math.log(bias.rho) / bias.eps
    return CecScanner(space, value_field, beta, eps).scan(side, n_trials, rng_seed, slack_rule)


def lipschitz_check(space: DiscretizedSpace, value_field: ValueField, eps: float,
                    closed: Optional[bool] = None, max_rows: int = 2000, seed: int = 0) -> float:
    """
    Worst ratio |u(x₁) − u(x₂)| / (d_eps(x₁, x₂)·M/s) over interior pairs.

    s is the larger of the two distances to Y. Exhaustive when there are at
    most max_rows interior vertices, otherwise over a seeded sample of rows.
    """
    u = value_field.values
    M = value_field.oscillation
    if M == 0:
        return 0.0
    if closed is None:
        closed = space.is_step_multiple(eps)
    interior = space.interior
    rows = interior
    if len(rows) > max_rows:
        rows = np.sort(np.random.default_rng(seed).choice(interior, size=max_rows, replace=False))
    s = space.boundary_distance()
    worst = 0.0
    for start in range(0, len(rows), 256):
        chunk = rows[start:start + 256]
        dist = space.distances_between(chunk)[:, interior]
        steps = d_eps_values(dist, eps, closed)
        scale = np.maximum(s[chunk][:, None], s[interior][None, :])
        diff = np.abs(u[chunk][:, None] - u[interior][None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(steps > 0, diff * scale / (steps * M), 0.0)
        worst = max(worst, float(np.max(ratio)))
    return worst
