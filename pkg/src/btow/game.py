#!/usr/bin/env python3
"""
Monte-Carlo playouts

This module handles playing the ε-game with pluggable strategies, estimating
its value from seeded independent playouts, and measuring game duration.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .bias import GameBias, OddsFunction, bias_for
from .error_handler import SimulationError, ValidationError
from .harmonic import ValueField
from .metric_space import BallIndex, DiscretizedSpace, ball_index


TOSS_BLOCK = 256
MAX_TRACE_ROWS = 100_000

logger = logging.getLogger(__name__)


class StrategyKind(Enum):
    """Built-in strategy families."""
    PULL = "pull"
    GREEDY_MAX = "greedy-max"
    GREEDY_MIN = "greedy-min"
    STAY = "stay"
    RANDOM = "random"
    CUSTOM = "custom"


Chooser = Callable[[int, np.ndarray, np.random.Generator], int]


@dataclass
class Strategy:
    """
    How a player picks the next vertex inside the ε-ball of the token.

    Greedy and pull strategies break ties by the lowest vertex index.
    """

    kind: StrategyKind
    target: Optional[int] = None
    values: Optional[np.ndarray] = None
    chooser: Optional[Chooser] = None
    name: str = ""

    def __post_init__(self):
        if not self.name:
            self.name = self.kind.value if self.target is None else f"{self.kind.value}:{self.target}"

    @classmethod
    def pull_toward(cls, target: int) -> 'Strategy':
        return cls(StrategyKind.PULL, target=int(target))

    @classmethod
    def greedy_max(cls, values) -> 'Strategy':
        return cls(StrategyKind.GREEDY_MAX, values=_field_values(values))

    @classmethod
    def greedy_min(cls, values) -> 'Strategy':
        return cls(StrategyKind.GREEDY_MIN, values=_field_values(values))

    @classmethod
    def stay(cls) -> 'Strategy':
        return cls(StrategyKind.STAY)

    @classmethod
    def random_uniform(cls) -> 'Strategy':
        return cls(StrategyKind.RANDOM)

    @classmethod
    def custom(cls, chooser: Chooser, name: str = "custom") -> 'Strategy':
        """A strategy given by chooser(position, ball, rng) -> next vertex."""
        return cls(StrategyKind.CUSTOM, chooser=chooser, name=name)

    def compile(self, space: DiscretizedSpace, balls: BallIndex) -> Optional[np.ndarray]:
        """
        Precompute the next vertex for every position.

        Returns:
            Optional[np.ndarray]: a policy array, or None for strategies that decide per step
        """
        if self.kind is StrategyKind.PULL:
            if not 0 <= self.target < space.n:
                raise ValidationError(f"pull target {self.target} out of range 0..{space.n - 1}")
            return balls.arginf(space.distances_from(self.target))
        if self.kind in (StrategyKind.GREEDY_MAX, StrategyKind.GREEDY_MIN):
            if len(self.values) != space.n:
                raise ValidationError(f"strategy {self.name} field has {len(self.values)} values, "
                                      f"space has {space.n} vertices")
            if self.kind is StrategyKind.GREEDY_MAX:
                return balls.argsup(self.values)
            return balls.arginf(self.values)
        if self.kind is StrategyKind.STAY:
            return np.arange(space.n)
        return None


def _field_values(values) -> np.ndarray:
    if isinstance(values, ValueField):
        return values.values
    return np.asarray(values, dtype=float).reshape(-1)


def parse_strategy(spec: str, space: DiscretizedSpace,
                   field_loader: Optional[Callable[[str], ValueField]] = None) -> Strategy:
    """
    Parse the strategy mini-language.

    pull:<vertex> | greedy-max:<field-file> | greedy-min:<field-file> | random | stay
    """
    kind, _, arg = spec.partition(":")
    if kind == "random" and not arg:
        return Strategy.random_uniform()
    if kind == "stay" and not arg:
        return Strategy.stay()
    if kind == "pull" and arg:
        try:
            target = int(arg)
        except ValueError:
            raise ValidationError(f"pull strategy needs a vertex id, got {arg!r}")
        if not 0 <= target < space.n:
            raise ValidationError(f"pull target {target} out of range 0..{space.n - 1}")
        return Strategy.pull_toward(target)
    if kind in ("greedy-max", "greedy-min") and arg:
        if field_loader is None:
            raise ValidationError(f"strategy {spec!r} needs a field file loader")
        values = field_loader(arg)
        strategy = Strategy.greedy_max(values) if kind == "greedy-max" else Strategy.greedy_min(values)
        strategy.name = spec
        return strategy
    raise ValidationError(f"unknown strategy {spec!r}; use pull:<vertex>, greedy-max:<file>, "
                          f"greedy-min:<file>, random or stay")


@dataclass
class Playout:
    """One game: positions, toss outcomes, duration and payoff."""

    start: int
    tau: int
    capped: bool
    final: int
    payoff: Optional[float]
    wins_I: int
    trajectory: Optional[List[int]] = None
    tosses: Optional[List[bool]] = None


@dataclass
class SimReport:
    """Aggregate of independent playouts; capped playouts count only toward τ."""

    n: int
    start: int
    mean_payoff: Optional[float]
    payoff_stderr: Optional[float]
    mean_tau: float
    tau_stderr: float
    capped: int
    tosses: int
    wins_I: int
    max_steps: int
    trace: List[Dict[str, Any]] = field(default_factory=list, repr=False)

    @property
    def win_rate(self) -> float:
        """Empirical frequency of tosses won by player I."""
        return self.wins_I / self.tosses if self.tosses else math.nan

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("trace")
        return data


def _rng_for(seed: int, index: int) -> np.random.Generator:
    """Counter-based generator keyed by (master seed, playout index)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def default_max_steps(space: DiscretizedSpace, bias: GameBias) -> int:
    """100·⌈(diam/ε)²⌉·(1 + |β|·diam) with β = log ρ / ε."""
    diam = space.diameter()
    beta = 0.0
    if 0 < bias.rho < math.inf:
        beta = abs(math.log(bias.rho)) / bias.eps
    return int(100 * math.ceil((diam / bias.eps) ** 2) * (1.0 + beta * diam))


class GameEngine:
    """Plays the ε-game on one space with fixed strategies."""

    def __init__(self, space: DiscretizedSpace, bias: GameBias, strategy_I: Strategy,
                 strategy_II: Strategy, balls: Optional[BallIndex] = None,
                 running_payoff: Optional[np.ndarray] = None, check_moves: bool = True):
        """
        Args:
            space: The space
            bias: Toss parameters; P(I wins a toss) = bias.p
            strategy_I, strategy_II: The players' strategies
            balls: ε-ball index (built from bias.eps if omitted)
            running_payoff: Optional f per vertex; each step adds ε²·f(position)
            check_moves: Verify every move stays in the mover's ball
        """
        self.space = space
        self.bias = bias
        self.logger = logging.getLogger(__name__)
        self.balls = balls if balls is not None else ball_index(space, bias.eps)
        self.strategies = (strategy_I, strategy_II)
        self.policies = (strategy_I.compile(space, self.balls), strategy_II.compile(space, self.balls))
        self.running_payoff = None if running_payoff is None else np.asarray(running_payoff, dtype=float)
        self.check_moves = check_moves

    def _choose(self, player: int, x: int, rng: np.random.Generator) -> int:
        policy = self.policies[player]
        if policy is not None:
            nxt = int(policy[x])
        else:
            strategy = self.strategies[player]
            ball = self.balls.ball(x)
            if strategy.kind is StrategyKind.RANDOM:
                nxt = int(ball[rng.integers(len(ball))])
            else:
                nxt = int(strategy.chooser(x, ball, rng))
        if self.check_moves and not self.balls.contains(x, nxt):
            who = "I" if player == 0 else "II"
            raise SimulationError(
                f"strategy {self.strategies[player].name} of player {who} moved from {x} to {nxt}, "
                f"outside its ball", context={"vertex": x, "move": nxt})
        return nxt

    def play(self, start: int, seed: int = 0, max_steps: Optional[int] = None,
             index: int = 0, record: bool = True) -> Playout:
        """
        Play one game from start until the token enters Y or max_steps is reached.

        Args:
            start: Interior start vertex
            seed: Master seed
            max_steps: Step cap (default rule if omitted)
            index: Playout index; (seed, index) keys the random stream
            record: Keep the trajectory and toss outcomes

        Returns:
            Playout: deterministic given (seed, index)
        """
        space = self.space
        if not 0 <= start < space.n:
            raise ValidationError(f"start vertex {start} out of range 0..{space.n - 1}",
                                  context={"vertex": start})
        if space.is_boundary[start]:
            raise ValidationError(f"start vertex {start} lies in Y", context={"vertex": start})
        if max_steps is None:
            max_steps = default_max_steps(space, self.bias)
        if max_steps < 1:
            raise ValidationError(f"max_steps must be at least 1, got {max_steps}")

        rng = _rng_for(seed, index)
        p = self.bias.p
        x = int(start)
        trajectory = [x] if record else None
        tosses: Optional[List[bool]] = [] if record else None
        reward = 0.0
        wins = 0
        block = np.empty(0, dtype=bool)
        pos = 0
        step = 0
        is_boundary = space.is_boundary
        while step < max_steps:
            if pos == len(block):
                block = rng.random(TOSS_BLOCK) < p
                pos = 0
            won_by_I = bool(block[pos])
            pos += 1
            if self.running_payoff is not None:
                reward += self.running_payoff[x]
            x = self._choose(0 if won_by_I else 1, x, rng)
            step += 1
            wins += won_by_I
            if record:
                trajectory.append(x)
                tosses.append(won_by_I)
            if is_boundary[x]:
                payoff = space.boundary_value_of(x) + self.bias.eps ** 2 * reward
                return Playout(start, step, False, x, payoff, wins, trajectory, tosses)
        return Playout(start, step, True, x, None, wins, trajectory, tosses)

    def run(self, start: int, indices: Sequence[int], seed: int, max_steps: int) -> List[Playout]:
        return [self.play(start, seed, max_steps, index=i, record=False) for i in indices]


def _play_chunk(args) -> List[Playout]:
    engine, start, indices, seed, max_steps = args
    return engine.run(start, indices, seed, max_steps)


def play(space: DiscretizedSpace, balls: BallIndex, bias: GameBias, strategy_I: Strategy,
         strategy_II: Strategy, start: int, rng_seed: int = 0,
         max_steps: Optional[int] = None) -> Playout:
    """Play one recorded game."""
    return GameEngine(space, bias, strategy_I, strategy_II, balls).play(start, rng_seed, max_steps)


def estimate_value(space: DiscretizedSpace, bias: GameBias, strategy_I: Strategy,
                   strategy_II: Strategy, start: int, n_samples: int = 10_000, seed: int = 0,
                   max_steps: Optional[int] = None, workers: int = 1,
                   balls: Optional[BallIndex] = None, running_payoff: Optional[np.ndarray] = None,
                   trace: bool = False) -> SimReport:
    """
    Estimate the payoff of a strategy pair from independent seeded playouts.

    Args:
        space: The space
        bias: Toss parameters
        strategy_I, strategy_II: Strategies
        start: Interior start vertex
        n_samples: Number of playouts
        seed: Master seed; playout i uses the stream keyed by (seed, i)
        max_steps: Step cap per playout (default rule if omitted)
        workers: Worker processes; results do not depend on this
        balls: Prebuilt ε-ball index
        running_payoff: Optional running payoff f
        trace: Keep one summary row per playout

    Returns:
        SimReport: means and standard errors

    Raises:
        SimulationError: when every playout hits the step cap
    """
    if n_samples < 1:
        raise ValidationError(f"n_samples must be at least 1, got {n_samples}")
    engine = GameEngine(space, bias, strategy_I, strategy_II, balls, running_payoff)
    if max_steps is None:
        max_steps = default_max_steps(space, bias)
    logger.info(f"Estimating value from vertex {start}: {n_samples} playouts, "
                f"{strategy_I.name} vs {strategy_II.name}, max_steps={max_steps}")

    if workers > 1 and n_samples >= 2 * workers:
        chunks = np.array_split(np.arange(n_samples), workers)
        jobs = [(engine, start, chunk.tolist(), seed, max_steps) for chunk in chunks]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            playouts = [p for part in pool.map(_play_chunk, jobs) for p in part]
    else:
        playouts = engine.run(start, range(n_samples), seed, max_steps)

    taus = np.array([p.tau for p in playouts], dtype=float)
    payoffs = np.array([p.payoff for p in playouts if not p.capped], dtype=float)
    capped = n_samples - len(payoffs)
    if len(payoffs) == 0:
        raise SimulationError("game not terminating under these strategies: every playout "
                              f"reached max_steps={max_steps}", context={"max_steps": max_steps})
    if capped:
        logger.warning(f"{capped} of {n_samples} playouts reached max_steps={max_steps}")

    report = SimReport(
        n=n_samples,
        start=int(start),
        mean_payoff=float(np.mean(payoffs)),
        payoff_stderr=_stderr(payoffs),
        mean_tau=float(np.mean(taus)),
        tau_stderr=_stderr(taus),
        capped=capped,
        tosses=int(taus.sum()),
        wins_I=int(sum(p.wins_I for p in playouts)),
        max_steps=int(max_steps),
    )
    if trace:
        report.trace = [{"index": i, "start": p.start, "tau": p.tau, "capped": p.capped,
                         "final": p.final, "payoff": p.payoff}
                        for i, p in enumerate(playouts[:MAX_TRACE_ROWS])]
    logger.info(f"Mean payoff {report.mean_payoff:.6f} ± {report.payoff_stderr:.2e}, "
                f"mean duration {report.mean_tau:.1f}")
    return report


def _stderr(samples: np.ndarray) -> float:
    if len(samples) < 2:
        return 0.0
    return float(np.std(samples, ddof=1) / math.sqrt(len(samples)))


@dataclass
class DurationTable:
    """Mean game duration per ε with the fitted log-log slope against 1/ε."""

    rows: List[Dict[str, float]]
    slope: float


def duration_stats(build_space: Callable[[float], DiscretizedSpace], odds: OddsFunction,
                   strategies: Callable[[DiscretizedSpace], Tuple[Strategy, Strategy]],
                   eps_list: Sequence[float], n_samples: int = 2000, seed: int = 0,
                   start: Optional[Callable[[DiscretizedSpace], int]] = None,
                   workers: int = 1) -> DurationTable:
    """
    Mean duration of the game as ε shrinks.

    Args:
        build_space: Space for a given ε (re-discretized per level)
        odds: Odds family giving the bias at each ε
        strategies: Strategy pair for a given space
        eps_list: Strictly decreasing step radii
        n_samples: Playouts per level
        seed: Master seed
        start: Start vertex for a given space (default: interior vertex nearest the middle)
        workers: Worker processes

    Returns:
        DurationTable: rows (eps, mean_tau, tau_stderr, capped) and the slope of
        log mean τ against log(1/ε)
    """
    eps_arr = np.asarray(eps_list, dtype=float)
    if len(eps_arr) < 2 or np.any(np.diff(eps_arr) >= 0):
        raise ValidationError(f"eps_list must be strictly decreasing with at least two entries, got {list(eps_list)}")
    rows = []
    for level, eps in enumerate(eps_arr):
        space = build_space(float(eps))
        bias = bias_for(odds, float(eps))
        s1, s2 = strategies(space)
        x0 = start(space) if start is not None else middle_vertex(space)
        report = estimate_value(space, bias, s1, s2, x0, n_samples, seed + level, workers=workers)
        rows.append({"eps": float(eps), "mean_tau": report.mean_tau,
                     "tau_stderr": report.tau_stderr, "capped": report.capped})
    slope = float(np.polyfit(np.log(1.0 / eps_arr), np.log([r["mean_tau"] for r in rows]), 1)[0])
    logger.info(f"Duration slope {slope:.3f} over eps {eps_arr.tolist()}")
    return DurationTable(rows=rows, slope=slope)


def middle_vertex(space: DiscretizedSpace) -> int:
    """Interior vertex closest to the mean of the coordinates (or the median id)."""
    interior = space.interior
    if space.coords is None:
        return int(interior[len(interior) // 2])
    centre = space.coords.mean(axis=0)
    offsets = np.linalg.norm(space.coords[interior] - centre, axis=1)
    return int(interior[int(np.argmin(offsets))])


@dataclass
class MartingaleReport:
    """Mean of u(X_k) along optimal play, stopped at Y."""

    u_start: float
    means: List[float]
    stderrs: List[float]
    z_final: float


def martingale_check(space: DiscretizedSpace, bias: GameBias, value_field: ValueField,
                     start: int, n_steps: int = 50, n_samples: int = 20_000,
                     seed: int = 0) -> MartingaleReport:
    """
    Play GreedyMax(u) against GreedyMin(u) and track the mean of u(X_{k∧τ}).

    For a DPP solution the stopped process is a martingale, so every mean
    stays within sampling error of u(start).
    """
    if n_samples < 2:
        raise ValidationError(f"martingale_check needs at least two samples for a standard error, got {n_samples}")
    if n_steps < 1:
        raise ValidationError(f"n_steps must be at least 1, got {n_steps}")
    u = value_field.values
    engine = GameEngine(space, bias, Strategy.greedy_max(u), Strategy.greedy_min(u), check_moves=False)
    samples = np.empty((n_samples, n_steps + 1))
    for i in range(n_samples):
        playout = engine.play(start, seed, max_steps=n_steps, index=i, record=True)
        path = np.asarray(playout.trajectory)
        values = np.full(n_steps + 1, u[path[-1]])
        values[:len(path)] = u[path]
        samples[i] = values
    means = samples.mean(axis=0)
    stderrs = samples.std(axis=0, ddof=1) / math.sqrt(n_samples)
    u0 = float(u[start])
    final_err = stderrs[-1]
    z = 0.0 if final_err == 0 else float((means[-1] - u0) / final_err)
    logger.info(f"Martingale check from {start}: final mean {means[-1]:.6f} vs u={u0:.6f} (z={z:.2f})")
    return MartingaleReport(u_start=u0, means=means.tolist(), stderrs=stderrs.tolist(), z_final=z)
