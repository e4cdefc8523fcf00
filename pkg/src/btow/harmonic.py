#!/usr/bin/env python3
"""
Dynamic-programming solvers

This module handles the discrete operators of the ordinary, II-favored,
I-favored and running-payoff games and the Jacobi fixed-point iterations
that turn them into value fields.
"""

import logging
from functools import partial
from dataclasses import dataclass, asdict, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

import numpy as np

from .bias import GameBias
from .config import SolverConfig
from .error_handler import ConsistencyError, ConvergenceError, ValidationError
from .metric_space import BallIndex, DiscretizedSpace, ball_index
from .utils import FORMAT_VERSION, read_json_safe, write_json_safe


PROGRESS_EVERY = 1000
STALL_FACTOR = 1e-3
MONOTONE_RTOL = 1e-12

logger = logging.getLogger(__name__)


class FieldTag(Enum):
    """Which quantity a value field holds."""
    U_LOWER = "u_lower"
    U_UPPER = "u_upper"
    V_FAVORED = "v_favored"
    W_FAVORED = "w_favored"
    RUNNING = "running_payoff"
    ORACLE = "oracle"
    CUSTOM = "custom"


@dataclass
class SolveReport:
    """Outcome of a fixed-point solve."""

    sweeps: int
    residual: float
    gap: Optional[float] = None
    certified: bool = True
    stalled: bool = False
    dpp_residual: Optional[float] = None
    init: str = "two_sided"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class ValueField:
    """A real value per vertex, tagged with the game it solves."""

    values: np.ndarray
    tag: FieldTag = FieldTag.CUSTOM
    bias: Optional[GameBias] = None
    report: Optional[SolveReport] = field(default=None, compare=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        bad = np.nonzero(~np.isfinite(self.values))[0]
        if len(bad):
            raise ValidationError(f"field is not finite at vertex {int(bad[0])}",
                                  context={"vertex": int(bad[0])})

    def __len__(self) -> int:
        return len(self.values)

    @property
    def oscillation(self) -> float:
        return float(self.values.max() - self.values.min())

    def check_against(self, space: DiscretizedSpace, atol: float = 1e-12) -> None:
        """
        Require one value per vertex and agreement with F on Y.

        Raises:
            ValidationError: naming the first offending vertex
        """
        if len(self.values) != space.n:
            raise ValidationError(f"field has {len(self.values)} values but the space has {space.n} vertices")
        diff = np.abs(self.values[space.boundary] - space.boundary_values)
        scale = 1.0 + float(np.max(np.abs(space.boundary_values)))
        worst = int(np.argmax(diff))
        if diff[worst] > atol * scale:
            vertex = int(space.boundary[worst])
            raise ValidationError(
                f"field disagrees with F at boundary vertex {vertex}: "
                f"{self.values[vertex]} != {space.boundary_values[worst]}",
                context={"vertex": vertex})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "tag": self.tag.value,
            "bias": None if self.bias is None else self.bias.to_dict(),
            "field": self.values.tolist(),
            "report": None if self.report is None else self.report.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ValueField':
        try:
            bias = data.get("bias")
            report = data.get("report")
            return cls(
                values=np.asarray(data["field"], dtype=float),
                tag=FieldTag(data.get("tag", "custom")),
                bias=None if bias is None else GameBias(**bias),
                report=None if report is None else SolveReport(**report),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"malformed field description: {e}")


def save_field(value_field: ValueField, path: Union[str, Path],
               extra: Optional[Dict[str, Any]] = None) -> None:
    """Write a field file; extra keys (e.g. the run config) are merged in."""
    data = value_field.to_dict()
    data.update(extra or {})
    if not write_json_safe(Path(path), data, logger):
        raise ValidationError(f"could not write field file {path}")


def load_field(path: Union[str, Path], space: Optional[DiscretizedSpace] = None) -> ValueField:
    """Read a field file, checking it against a space when one is given."""
    data = read_json_safe(Path(path), None, logger)
    if not isinstance(data, dict):
        raise ValidationError(f"could not read field file {path}")
    value_field = ValueField.from_dict(data)
    if space is not None:
        value_field.check_against(space, atol=1e-9)
    return value_field


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

def _keep_boundary(space: DiscretizedSpace, new: np.ndarray, old: np.ndarray) -> np.ndarray:
    new[space.boundary] = old[space.boundary]
    return new


def dpp_step(space: DiscretizedSpace, balls: BallIndex, bias: GameBias,
             values: np.ndarray) -> np.ndarray:
    """
    One Jacobi sweep of u ↦ p·sup_B u + (1−p)·inf_B u; Y is absorbing.

    Args:
        space: The space
        balls: ε-ball index
        bias: Toss parameters
        values: Current field (agrees with F on Y)

    Returns:
        np.ndarray: the updated field
    """
    new = bias.p * balls.sup(values) + (1.0 - bias.p) * balls.inf(values)
    return _keep_boundary(space, new, values)


def running_payoff_step(space: DiscretizedSpace, balls: BallIndex, bias: GameBias,
                        values: np.ndarray, f: np.ndarray) -> np.ndarray:
    """dpp_step plus the per-step reward ε²·f on interior vertices."""
    new = bias.p * balls.sup(values) + (1.0 - bias.p) * balls.inf(values) + bias.eps ** 2 * f
    return _keep_boundary(space, new, values)


def termination_values(space: DiscretizedSpace, balls2: BallIndex) -> Tuple[np.ndarray, np.ndarray]:
    """
    min and max of F over Y ∩ B_{2ε}(z) for every z.

    Returns:
        (term_min, term_max): +inf / −inf where the intersection is empty
    """
    high = np.full(space.n, np.inf)
    low = np.full(space.n, -np.inf)
    high[space.boundary] = space.boundary_values
    low[space.boundary] = space.boundary_values
    return balls2.inf(high), balls2.sup(low)


def favored_lower_step(space: DiscretizedSpace, balls: BallIndex, balls2: BallIndex,
                       bias: GameBias, values: np.ndarray, term_min: np.ndarray) -> np.ndarray:
    """
    One sweep of the II-favored operator.

    Player I proposes z ∈ B_ε(x). On a toss won by I, II keeps z or stops the
    game in Y ∩ B_{2ε}(z); on a toss won by II, II moves anywhere in B_{2ε}(z).
    """
    accepted = np.minimum(values, term_min)
    proposal = bias.p * accepted + (1.0 - bias.p) * balls2.inf(values)
    return _keep_boundary(space, balls.sup(proposal), values)


def favored_upper_step(space: DiscretizedSpace, balls: BallIndex, balls2: BallIndex,
                       bias: GameBias, values: np.ndarray, term_max: np.ndarray) -> np.ndarray:
    """One sweep of the I-favored operator (roles of the players mirrored)."""
    accepted = np.maximum(values, term_max)
    proposal = bias.p * balls2.sup(values) + (1.0 - bias.p) * accepted
    return _keep_boundary(space, balls.inf(proposal), values)


def local_variation(space: DiscretizedSpace, balls: BallIndex,
                    values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    In-ball increase and decrease of a field.

    Returns:
        (delta_plus, delta_minus): sup_B u − u and u − inf_B u per vertex
    """
    values = np.asarray(values, dtype=float)
    if len(values) != space.n:
        raise ValidationError(f"field has {len(values)} values but the space has {space.n} vertices")
    return balls.sup(values) - values, values - balls.inf(values)


def dpp_residual(space: DiscretizedSpace, bias: GameBias, values: np.ndarray,
                 balls: Optional[BallIndex] = None, f: Optional[np.ndarray] = None) -> float:
    """Sup-norm defect |T u − u| of the (running-payoff) DPP over interior vertices."""
    values = np.asarray(values, dtype=float)
    if balls is None:
        balls = ball_index(space, bias.eps)
    if f is None:
        new = dpp_step(space, balls, bias, values)
    else:
        new = running_payoff_step(space, balls, bias, values, f)
    return float(np.max(np.abs(new - values)))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

Step = Callable[[np.ndarray], np.ndarray]


class ValueSolver:
    """Jacobi value iteration for the ordinary, favored and running-payoff games."""

    def __init__(self, space: DiscretizedSpace, bias: GameBias,
                 config: Optional[SolverConfig] = None, balls: Optional[BallIndex] = None):
        """
        Prepare the ε-balls for one (space, bias) pair.

        Args:
            space: The space
            bias: Toss parameters; bias.eps is the step radius
            config: Solver settings (defaults if omitted)
            balls: A prebuilt ε-ball index to reuse
        """
        self.space = space
        self.bias = bias
        self.config = config or SolverConfig()
        self.logger = logging.getLogger(__name__)

        errors = self.config.validate()
        if errors:
            raise ValidationError("invalid solver settings: " + "; ".join(errors))

        eps, h = bias.eps, space.mesh_width
        if eps < self.config.min_mesh_ratio * h * (1 - 1e-9):
            raise ValidationError(
                f"ε too small for mesh: eps={eps} < {self.config.min_mesh_ratio}·h (h={h})",
                context={"eps": eps, "h": h})
        closed = space.closed_balls_for(eps, self.config.ball_rule)
        self.balls = balls if balls is not None else ball_index(space, eps, closed)
        self._balls2: Optional[BallIndex] = None

        lonely = space.interior[self.balls.sizes()[space.interior] <= 1]
        if len(lonely):
            raise ValidationError(f"ε too small for mesh: ball of vertex {int(lonely[0])} is a single point",
                                  context={"vertex": int(lonely[0]), "eps": eps})

        values = space.boundary_values
        self.f_min = float(values.min())
        self.f_max = float(values.max())
        self.scale = 1.0 + float(np.max(np.abs(values)))

    @property
    def balls2(self) -> BallIndex:
        """The 2ε-ball index, built on first use with the same ball rule."""
        if self._balls2 is None:
            self._balls2 = ball_index(self.space, 2 * self.bias.eps, self.balls.closed)
        return self._balls2

    def _start(self, level: float) -> np.ndarray:
        values = self.space.field_template
        values[np.isnan(values)] = level
        return values

    def _custom_start(self) -> np.ndarray:
        values = np.array(self.config.init, dtype=float)
        if values.shape != (self.space.n,) or not np.all(np.isfinite(values)):
            raise ValidationError(f"custom init must hold {self.space.n} finite values")
        values[self.space.boundary] = self.space.boundary_values
        return values

    def _iterate(self, step: Step, start: np.ndarray, direction: int, label: str,
                 scale: float) -> Tuple[np.ndarray, int, float]:
        """
        Iterate one monotone sequence until the sweep change drops below tol.

        direction is +1 (nondecreasing), −1 (nonincreasing) or 0 (unchecked).
        """
        tol = self.config.tol
        values = start
        residual = np.inf
        for sweep in range(1, self.config.max_sweeps + 1):
            new = step(values)
            change = new - values
            self._check_direction(change, direction, label, sweep, scale)
            residual = float(np.max(np.abs(change)))
            values = new
            if sweep % PROGRESS_EVERY == 0:
                self.logger.debug(f"{label}: sweep {sweep}, residual {residual:.3e}")
            if residual <= tol:
                return values, sweep, residual
        raise ConvergenceError(
            f"{label} iteration did not reach tol={tol} in {self.config.max_sweeps} sweeps "
            f"(last residual {residual:.3e})", residual=residual, sweeps=self.config.max_sweeps)

    def _check_direction(self, change: np.ndarray, direction: int, label: str,
                         sweep: int, scale: float) -> None:
        if not self.config.check_monotone or direction == 0:
            return
        slack = MONOTONE_RTOL * scale
        wrong = change * direction < -slack
        if np.any(wrong):
            vertex = int(np.argmax(wrong))
            raise ConsistencyError(
                f"{label} sweep {sweep} moved vertex {vertex} the wrong way by {abs(change[vertex]):.3e}",
                context={"vertex": vertex, "sweep": sweep})

    def _two_sided(self, step: Step, label: str) -> Tuple[np.ndarray, np.ndarray, SolveReport]:
        """
        Iterate from min_Y F and max_Y F together.

        Stops once both sweep changes and the gap are within tol, or when both
        sequences have stalled; a stalled run keeps its gap in the report.
        """
        tol = self.config.tol
        lower = self._start(self.f_min)
        upper = self._start(self.f_max)
        residual = np.inf
        gap = float(np.max(upper - lower))
        for sweep in range(1, self.config.max_sweeps + 1):
            new_lower, new_upper = step(lower), step(upper)
            self._check_direction(new_lower - lower, 1, f"{label} (from below)", sweep, self.scale)
            self._check_direction(new_upper - upper, -1, f"{label} (from above)", sweep, self.scale)
            res_lower = float(np.max(np.abs(new_lower - lower)))
            res_upper = float(np.max(np.abs(new_upper - upper)))
            residual = max(res_lower, res_upper)
            lower, upper = new_lower, new_upper
            gap = float(np.max(np.abs(upper - lower)))
            if sweep % PROGRESS_EVERY == 0:
                self.logger.debug(f"{label}: sweep {sweep}, residual {residual:.3e}, gap {gap:.3e}")
            if residual <= tol and gap <= tol:
                return lower, upper, SolveReport(sweeps=sweep, residual=residual, gap=gap)
            if residual <= tol * STALL_FACTOR:
                certified = gap <= 10 * tol
                if not certified:
                    self.logger.warning(f"{label}: iterations stalled with gap {gap:.3e}; "
                                        f"fixed point not certified unique")
                return lower, upper, SolveReport(sweeps=sweep, residual=residual, gap=gap,
                                                 certified=certified, stalled=True)
        raise ConvergenceError(
            f"{label} iteration did not reach tol={tol} in {self.config.max_sweeps} sweeps "
            f"(last residual {residual:.3e}, gap {gap:.3e})",
            residual=residual, sweeps=self.config.max_sweeps, context={"gap": gap})

    def _single_sided(self, step: Step, label: str, init: str,
                      scale: float) -> Tuple[np.ndarray, SolveReport]:
        if isinstance(init, str) and init == "from_above":
            start, direction = self._start(self.f_max), -1
        elif isinstance(init, str):
            start, direction = self._start(self.f_min), 1
        else:
            start, direction = self._custom_start(), 0
        values, sweeps, residual = self._iterate(step, start, direction, label, scale)
        mode = init if isinstance(init, str) else "custom"
        return values, SolveReport(sweeps=sweeps, residual=residual, init=mode)

    def _run(self, step: Step, label: str) -> Tuple[np.ndarray, np.ndarray, SolveReport]:
        init = self.config.init
        if isinstance(init, str) and init == "two_sided":
            return self._two_sided(step, label)
        values, report = self._single_sided(step, label, init, self.scale)
        return values, values, report

    def solve_value(self) -> Tuple[ValueField, ValueField, SolveReport]:
        """
        Solve the ordinary game.

        Returns:
            (lower, upper, report): from-below and from-above fields with their
            gap; the lower field is the reported game value
        """
        self.logger.info(f"Solving game value: {self.space.n} vertices, eps={self.bias.eps}, "
                         f"theta={self.bias.theta:.6g}")
        step = partial(dpp_step, self.space, self.balls, self.bias)
        lower, upper, report = self._run(step, "value")
        report.dpp_residual = dpp_residual(self.space, self.bias, lower, self.balls)
        self.logger.info(f"Game value solved in {report.sweeps} sweeps (gap {report.gap})")
        return (ValueField(lower, FieldTag.U_LOWER, self.bias, report),
                ValueField(upper, FieldTag.U_UPPER, self.bias, report),
                report)

    def solve_favored_lower(self) -> ValueField:
        """Solve the II-favored game; the value is the from-below field."""
        self.logger.info(f"Solving II-favored game: eps={self.bias.eps}")
        term_min, _ = termination_values(self.space, self.balls2)
        step = partial(favored_lower_step, self.space, self.balls, self.balls2, self.bias,
                       term_min=term_min)
        lower, _, report = self._run(step, "favored lower")
        self.logger.info(f"II-favored game solved in {report.sweeps} sweeps")
        return ValueField(lower, FieldTag.V_FAVORED, self.bias, report)

    def solve_favored_upper(self) -> ValueField:
        """Solve the I-favored game; the value is the from-above field."""
        self.logger.info(f"Solving I-favored game: eps={self.bias.eps}")
        _, term_max = termination_values(self.space, self.balls2)
        step = partial(favored_upper_step, self.space, self.balls, self.balls2, self.bias,
                       term_max=term_max)
        _, upper, report = self._run(step, "favored upper")
        self.logger.info(f"I-favored game solved in {report.sweeps} sweeps")
        return ValueField(upper, FieldTag.W_FAVORED, self.bias, report)

    def solve_running_payoff(self, f: np.ndarray) -> ValueField:
        """
        Solve the game with running payoff ε²·f(x) per step.

        Iterates from below when f ≥ 0 and from above when f ≤ 0; a sign-changing
        f is solved from below after a warning.
        """
        f = np.asarray(f, dtype=float).reshape(-1)
        if len(f) != self.space.n or not np.all(np.isfinite(f)):
            raise ValidationError(f"running payoff must hold {self.space.n} finite values")
        f = f.copy()
        f[self.space.boundary] = 0.0
        inner = f[self.space.interior]
        if inner.min() >= 0:
            init = "from_below"
        elif inner.max() <= 0:
            init = "from_above"
        else:
            self.logger.warning("Running payoff changes sign; value existence is not guaranteed")
            init = "from_below"
        if not isinstance(self.config.init, str):
            init = self.config.init
        mode = init if isinstance(init, str) else "custom"
        self.logger.info(f"Solving running-payoff game: eps={self.bias.eps}, init={mode}")

        # the accumulated reward is at most ε²·|f|·E[τ]; scale the monotonicity check by a generous bound
        reward = float(np.max(np.abs(f))) * self.space.diameter() ** 2
        step = partial(running_payoff_step, self.space, self.balls, self.bias, f=f)
        values, report = self._single_sided(step, "running payoff", init, self.scale + reward)
        report.dpp_residual = dpp_residual(self.space, self.bias, values, self.balls, f)
        return ValueField(values, FieldTag.RUNNING, self.bias, report)


def solve_value(space: DiscretizedSpace, bias: GameBias,
                config: Optional[SolverConfig] = None) -> Tuple[ValueField, ValueField, SolveReport]:
    """Two-sided (or single-sided, per config.init) solve of the ordinary game."""
    return ValueSolver(space, bias, config).solve_value()


def solve_favored_lower(space: DiscretizedSpace, bias: GameBias,
                        config: Optional[SolverConfig] = None) -> ValueField:
    """Value v of the II-favored game."""
    return ValueSolver(space, bias, config).solve_favored_lower()


def solve_favored_upper(space: DiscretizedSpace, bias: GameBias,
                        config: Optional[SolverConfig] = None) -> ValueField:
    """Value w of the I-favored game."""
    return ValueSolver(space, bias, config).solve_favored_upper()


def solve_running_payoff(space: DiscretizedSpace, bias: GameBias, f: np.ndarray,
                         config: Optional[SolverConfig] = None) -> ValueField:
    """Value of the game with running payoff ε²·f."""
    return ValueSolver(space, bias, config).solve_running_payoff(f)
