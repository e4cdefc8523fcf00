#!/usr/bin/env python3
"""
Odds and bias arithmetic

This module handles odds families ρ(ε), their conversion to the bias θ(ε)
and player I's toss-win probability p, and the distinguished odds e^{βε}.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .error_handler import BiasError
from .utils import read_csv_rows, read_json_safe


logger = logging.getLogger(__name__)


class OddsFamily(Enum):
    """Supported families of odds functions."""
    EXPONENTIAL = "exp"
    LINEAR_THETA = "linear"
    CONSTANT_THETA = "const"
    CUSTOM = "table"


class LogShape(Enum):
    """Curvature class of ε ↦ log ρ(ε)."""
    CONCAVE = "concave"
    CONVEX = "convex"
    LINEAR = "linear"
    UNKNOWN = "unknown"

    @property
    def is_concave(self) -> bool:
        return self in (LogShape.CONCAVE, LogShape.LINEAR)

    @property
    def is_convex(self) -> bool:
        return self in (LogShape.CONVEX, LogShape.LINEAR)


def rho_from_theta(theta: float) -> float:
    """Odds (1+θ)/(1−θ); infinite at θ = 1."""
    if not -1.0 <= theta <= 1.0:
        raise BiasError(f"theta must lie in [-1, 1], got {theta}")
    if theta == 1.0:
        return math.inf
    return (1.0 + theta) / (1.0 - theta)


def theta_from_rho(rho: float) -> float:
    """Bias (ρ−1)/(ρ+1); θ = 1 for infinite odds."""
    if not rho >= 0:
        raise BiasError(f"odds must be nonnegative, got {rho}")
    if math.isinf(rho):
        return 1.0
    return (rho - 1.0) / (rho + 1.0)


def theta0(beta: float, eps: float) -> float:
    """The bias tanh(βε/2) belonging to the odds e^{βε}."""
    return math.tanh(beta * eps / 2.0)


def theta_linear(beta: float, eps: float) -> float:
    """The first-order bias βε/2."""
    return beta * eps / 2.0


@dataclass(frozen=True)
class GameBias:
    """Toss parameters of one ε-game: bias θ, odds ρ and win probability p."""

    eps: float
    theta: float
    rho: float
    p: float

    @classmethod
    def from_theta(cls, eps: float, theta: float) -> 'GameBias':
        """Build from the bias θ ∈ [−1, 1]."""
        if not eps > 0:
            raise BiasError(f"eps must be positive, got {eps}")
        rho = rho_from_theta(theta)
        return cls(eps=float(eps), theta=float(theta), rho=rho, p=(1.0 + theta) / 2.0)

    @classmethod
    def from_rho(cls, eps: float, rho: float) -> 'GameBias':
        """Build from the odds ρ ∈ [0, ∞]."""
        if not eps > 0:
            raise BiasError(f"eps must be positive, got {eps}")
        theta = theta_from_rho(rho)
        return cls(eps=float(eps), theta=theta, rho=float(rho), p=(1.0 + theta) / 2.0)

    @classmethod
    def unbiased(cls, eps: float) -> 'GameBias':
        return cls.from_theta(eps, 0.0)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "theta": self.theta, "rho": self.rho, "p": self.p}


@dataclass(frozen=True)
class OddsFunction:
    """
    An odds function ε ↦ ρ(ε).

    Exponential(β): ρ = e^{βε}. LinearTheta(β): θ = βε/2.
    ConstantTheta(θ̄): θ ≡ θ̄. Custom: tabulated samples, monotone cubic in log ρ.
    """

    family: OddsFamily
    beta: float = 0.0
    theta_bar: float = 0.0
    table_eps: Tuple[float, ...] = ()
    table_rho: Tuple[float, ...] = ()
    _interp: Optional[PchipInterpolator] = field(default=None, compare=False, repr=False)

    @classmethod
    def exponential(cls, beta: float) -> 'OddsFunction':
        return cls(OddsFamily.EXPONENTIAL, beta=float(beta))

    @classmethod
    def linear_theta(cls, beta: float) -> 'OddsFunction':
        return cls(OddsFamily.LINEAR_THETA, beta=float(beta))

    @classmethod
    def constant_theta(cls, theta_bar: float) -> 'OddsFunction':
        if not -1.0 < theta_bar < 1.0:
            raise BiasError(f"constant theta must lie in (-1, 1), got {theta_bar}")
        return cls(OddsFamily.CONSTANT_THETA, theta_bar=float(theta_bar))

    @classmethod
    def from_table(cls, eps: Sequence[float], rho: Sequence[float]) -> 'OddsFunction':
        """Tabulated odds; samples need not be sorted but ε values must be distinct."""
        eps_arr = np.asarray(eps, dtype=float)
        rho_arr = np.asarray(rho, dtype=float)
        if eps_arr.shape != rho_arr.shape or len(eps_arr) < 2:
            raise BiasError("odds table needs at least two (eps, rho) samples of equal length")
        if np.any(eps_arr < 0) or np.any(rho_arr <= 0) or not np.all(np.isfinite(rho_arr)):
            raise BiasError("odds table needs eps >= 0 and finite rho > 0")
        order = np.argsort(eps_arr)
        eps_arr, rho_arr = eps_arr[order], rho_arr[order]
        if np.any(np.diff(eps_arr) <= 0):
            raise BiasError("odds table has repeated eps values")
        interp = PchipInterpolator(eps_arr, np.log(rho_arr), extrapolate=False)
        # beta estimated from the table slope at its smallest ε
        slope = float(interp.derivative()(eps_arr[0]))
        return cls(OddsFamily.CUSTOM, beta=slope, table_eps=tuple(eps_arr.tolist()),
                   table_rho=tuple(rho_arr.tolist()), _interp=interp)

    @classmethod
    def load_table(cls, path: Union[str, Path]) -> 'OddsFunction':
        """Read a CSV (columns eps, rho) or JSON ({"eps": [...], "rho": [...]}) odds table."""
        path = Path(path)
        if not path.exists():
            raise BiasError(f"odds table {path} does not exist")
        if path.suffix.lower() == ".json":
            data = read_json_safe(path, None, logger)
            if not isinstance(data, dict) or "eps" not in data or "rho" not in data:
                raise BiasError(f"odds table {path} must hold 'eps' and 'rho' lists")
            return cls.from_table(data["eps"], data["rho"])
        try:
            rows = read_csv_rows(path)
            return cls.from_table([float(r["eps"]) for r in rows], [float(r["rho"]) for r in rows])
        except (KeyError, ValueError) as e:
            raise BiasError(f"odds table {path} is malformed: {e}")

    @classmethod
    def from_name(cls, name: str, beta: float = 0.0, theta: float = 0.0) -> 'OddsFunction':
        """Parse the command-line odds names exp | linear | const | table:<path>."""
        if name == "exp":
            return cls.exponential(beta)
        if name == "linear":
            return cls.linear_theta(beta)
        if name == "const":
            return cls.constant_theta(theta)
        if name.startswith("table:"):
            return cls.load_table(name[len("table:"):])
        raise BiasError(f"unknown odds family {name!r}")

    def rho(self, eps: float) -> float:
        """Odds ρ(ε)."""
        if self.family is OddsFamily.EXPONENTIAL:
            return math.exp(self.beta * eps)
        if self.family is OddsFamily.CUSTOM:
            value = float(self._interp(eps))
            if math.isnan(value):
                raise BiasError(f"odds table covers eps in [{self.table_eps[0]}, {self.table_eps[-1]}], "
                                f"not {eps}", context={"eps": eps})
            return math.exp(value)
        return rho_from_theta(self.theta(eps))

    def theta(self, eps: float) -> float:
        """Bias θ(ε)."""
        if self.family is OddsFamily.EXPONENTIAL:
            return theta0(self.beta, eps)
        if self.family is OddsFamily.LINEAR_THETA:
            return theta_linear(self.beta, eps)
        if self.family is OddsFamily.CONSTANT_THETA:
            return self.theta_bar
        return theta_from_rho(self.rho(eps))

    def log_rho(self, eps: float) -> float:
        if self.family is OddsFamily.EXPONENTIAL:
            return self.beta * eps
        return math.log(self.rho(eps))

    def max_eps(self) -> float:
        """Largest ε at which the family is defined."""
        if self.family is OddsFamily.LINEAR_THETA and self.beta != 0:
            return 2.0 / abs(self.beta)
        if self.family is OddsFamily.CUSTOM:
            return self.table_eps[-1]
        return math.inf

    def describe(self) -> dict:
        data = {"family": self.family.value, "beta": self.beta}
        if self.family is OddsFamily.CONSTANT_THETA:
            data["theta"] = self.theta_bar
        if self.family is OddsFamily.CUSTOM:
            data["table_eps"] = list(self.table_eps)
            data["table_rho"] = list(self.table_rho)
        return data


def bias_for(odds: OddsFunction, eps: float) -> GameBias:
    """
    Game bias of an odds family at step ε.

    Args:
        odds: The odds function
        eps: Step radius

    Returns:
        GameBias: consistent (θ, ρ, p)
    """
    if not eps > 0:
        raise BiasError(f"eps must be positive, got {eps}")
    theta = odds.theta(eps)
    if not -1.0 < theta < 1.0:
        raise BiasError(f"bias theta({eps}) = {theta} must lie in (-1, 1)", context={"eps": eps})
    if odds.family is OddsFamily.EXPONENTIAL:
        return GameBias(eps=float(eps), theta=theta, rho=odds.rho(eps), p=(1.0 + theta) / 2.0)
    return GameBias.from_theta(eps, theta)


def log_shape(odds: OddsFunction, n_points: int = 32, eps_max: Optional[float] = None) -> LogShape:
    """
    Curvature class of log ρ, from second differences on a dyadic ε grid.

    Args:
        odds: The odds function
        n_points: Number of grid points (a power of two is customary)
        eps_max: Largest ε sampled (defaults to 1, or inside the family's domain)

    Returns:
        LogShape: concave, convex, linear or unknown
    """
    if odds.family in (OddsFamily.EXPONENTIAL, OddsFamily.CONSTANT_THETA):
        return LogShape.LINEAR
    if odds.family is OddsFamily.LINEAR_THETA and odds.beta == 0:
        return LogShape.LINEAR

    if odds.family is OddsFamily.CUSTOM:
        lo, hi = odds.table_eps[0], odds.table_eps[-1]
    else:
        lo, hi = 0.0, min(1.0, 0.95 * odds.max_eps())
    if eps_max is not None:
        hi = min(hi, eps_max)
    grid = lo + (hi - lo) * np.arange(1, n_points + 1) / n_points
    values = np.array([odds.log_rho(e) for e in grid])
    second = values[2:] - 2 * values[1:-1] + values[:-2]
    scale = max(1.0, float(np.max(np.abs(values))))
    tol = 1e-12 * scale
    if np.all(np.abs(second) <= tol):
        return LogShape.LINEAR
    if np.all(second >= -tol):
        return LogShape.CONVEX
    if np.all(second <= tol):
        return LogShape.CONCAVE
    return LogShape.UNKNOWN


def round_odds(odds: OddsFunction, eps: float) -> float:
    """Odds ρ(ε)² of winning a round that ends once one player leads by two tosses."""
    return odds.rho(eps) ** 2


def dyadic_defect(odds: OddsFunction, eps: float) -> float:
    """Relative mismatch |ρ(ε)² − ρ(2ε)| / ρ(2ε); zero for exponential odds."""
    doubled = odds.rho(2 * eps)
    return abs(odds.rho(eps) ** 2 - doubled) / doubled


def comparison_conditions(bias: GameBias, beta: float) -> Tuple[bool, bool]:
    """
    Whether the toss probability supports the favored-game comparisons with cones.

    Returns:
        (lower_ok, upper_ok): p ≥ 1/(1+e^{−βε}) lets the II-favored value sit below
        solutions; p ≤ 1/(1+e^{−βε}) lets the I-favored value sit above them.
    """
    threshold = 1.0 / (1.0 + math.exp(-beta * bias.eps))
    slack = 1e-12
    return bias.p >= threshold - slack, bias.p <= threshold + slack
