#!/usr/bin/env python3
"""
Configuration management for the biased tug-of-war toolkit

This module handles loading, validating and saving the settings used by the
solvers, the playout engine and the command-line runner.
"""

import json
from pathlib import Path
from typing import Dict, List, Optional, Any, Union
from dataclasses import dataclass, asdict, field

from .utils import resolve_threads


INIT_MODES = ("two_sided", "from_below", "from_above")
BALL_RULES = ("auto", "open", "closed")
ODDS_FAMILIES = ("exp", "linear", "const")
FAMILIES = ("interval", "grid", "annulus", "lshape", "spiral")
COMMANDS = ("solve", "simulate", "cec-check", "converge", "residual", "gen-space")


@dataclass
class SolverConfig:
    """Settings for the fixed-point solvers."""

    tol: float = 1e-10
    max_sweeps: int = 1_000_000
    # "two_sided", "from_below", "from_above" or a custom starting field
    init: Union[str, List[float]] = "two_sided"
    min_mesh_ratio: float = 1.0
    ball_rule: str = "auto"
    check_monotone: bool = True

    def validate(self) -> List[str]:
        """
        Validate the solver settings and return any errors.

        Returns:
            List[str]: List of validation errors (empty if valid)
        """
        errors = []
        if not self.tol > 0:
            errors.append(f"tol must be positive, got {self.tol}")
        if self.max_sweeps < 1:
            errors.append(f"max_sweeps must be at least 1, got {self.max_sweeps}")
        if isinstance(self.init, str) and self.init not in INIT_MODES:
            errors.append(f"init must be one of {INIT_MODES} or a field, got {self.init!r}")
        if not self.min_mesh_ratio >= 1.0:
            errors.append(f"min_mesh_ratio must be >= 1, got {self.min_mesh_ratio}")
        if self.ball_rule not in BALL_RULES:
            errors.append(f"ball_rule must be one of {BALL_RULES}, got {self.ball_rule!r}")
        return errors


@dataclass
class SimulationConfig:
    """Settings for Monte-Carlo playouts."""

    n_samples: int = 10_000
    seed: int = 0
    max_steps: Optional[int] = None
    workers: int = 1
    trace: bool = False

    def validate(self) -> List[str]:
        """Validate the simulation settings and return any errors."""
        errors = []
        if self.n_samples < 1:
            errors.append(f"n_samples must be at least 1, got {self.n_samples}")
        if self.seed < 0:
            errors.append(f"seed must be nonnegative, got {self.seed}")
        if self.max_steps is not None and self.max_steps < 1:
            errors.append(f"max_steps must be at least 1, got {self.max_steps}")
        if self.workers < 1:
            errors.append(f"workers must be at least 1, got {self.workers}")
        return errors


@dataclass
class RunConfig:
    """Resolved parameters of one command-line run."""

    command: str = "solve"

    # Space source: a JSON space file or a built-in generator
    space: Optional[str] = None
    family: str = "interval"
    cells: int = 64
    length: float = 1.0
    nx: int = 16
    ny: int = 16
    spacing: float = 1.0
    inner: float = 3.0
    outer: float = 8.0
    metric: str = "euclidean"
    neighborhood: int = 4
    turns: int = 3

    # Bias
    beta: float = 1.0
    odds: str = "exp"
    theta: float = 0.0
    eps: float = 0.125

    # Solver
    favored: Optional[str] = None
    running_payoff: Optional[str] = None
    tol: float = 1e-10
    max_sweeps: int = 1_000_000
    min_mesh_ratio: float = 1.0
    ball_rule: str = "auto"

    # Simulation
    s1: str = "random"
    s2: str = "random"
    start: Optional[int] = None
    n_samples: int = 10_000
    seed: int = 0
    max_steps: Optional[int] = None
    trace: Optional[str] = None

    # CEC check
    field_file: Optional[str] = None
    side: str = "above"
    trials: int = 500
    slack: str = "scaled:8"

    # Convergence experiments
    eps0: float = 0.25
    depth: int = 4
    refine: int = 0
    bounds: bool = False

    # Residual
    grad_threshold: Optional[float] = None
    norm: str = "euclidean"
    stride: int = 1
    dyadic: bool = False

    # Output
    out: Optional[str] = None
    out_format: str = "json"
    output_dir: str = "results"
    threads: Optional[int] = None

    # Logging settings
    log_file: Optional[str] = None
    log_level: str = "INFO"

    # Extra generator parameters, kept verbatim in artifacts
    extra: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        """Normalize values given in loose form."""
        self.log_level = self.log_level.upper()
        if self.extra is None:
            self.extra = {}

    @classmethod
    def load_from_file(cls, config_path: str) -> 'RunConfig':
        """
        Load configuration from a JSON file.

        Args:
            config_path: Path to the configuration file

        Returns:
            RunConfig: Loaded configuration object (defaults if the file is missing)
        """
        config_file = Path(config_path)

        if not config_file.exists():
            return cls()

        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                config_data = json.load(f)

            # Unknown keys surface as TypeError from the dataclass constructor
            return cls(**config_data)

        except (json.JSONDecodeError, TypeError) as e:
            raise ValueError(f"Invalid configuration file {config_path}: {e}")

    def save_to_file(self, config_path: str) -> None:
        """
        Save configuration to a JSON file.

        Args:
            config_path: Path where to save the configuration file
        """
        config_file = Path(config_path)
        config_file.parent.mkdir(parents=True, exist_ok=True)

        with open(config_file, 'w', encoding='utf-8') as f:
            json.dump(asdict(self), f, indent=2, ensure_ascii=False)

    def to_dict(self) -> Dict[str, Any]:
        """Return the resolved configuration as a plain dictionary."""
        return asdict(self)

    def solver_config(self) -> SolverConfig:
        """Build the solver settings for this run."""
        return SolverConfig(
            tol=self.tol,
            max_sweeps=self.max_sweeps,
            min_mesh_ratio=self.min_mesh_ratio,
            ball_rule=self.ball_rule,
        )

    def simulation_config(self) -> SimulationConfig:
        """Build the simulation settings for this run."""
        return SimulationConfig(
            n_samples=self.n_samples,
            seed=self.seed,
            max_steps=self.max_steps,
            workers=resolve_threads(self.threads),
            trace=self.trace is not None,
        )

    def validate(self) -> List[str]:
        """
        Validate the configuration and return any errors.

        Returns:
            List[str]: List of validation errors (empty if valid)
        """
        errors = []

        if self.command not in COMMANDS:
            errors.append(f"command must be one of {COMMANDS}, got {self.command!r}")

        if self.space is None and self.family not in FAMILIES:
            errors.append(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.cells < 2:
            errors.append(f"cells must be at least 2, got {self.cells}")
        for name in ("length", "spacing", "eps", "eps0"):
            if not getattr(self, name) > 0:
                errors.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.nx < 1 or self.ny < 1:
            errors.append(f"nx and ny must be positive, got {self.nx}x{self.ny}")
        if not 0 <= self.inner < self.outer:
            errors.append(f"annulus radii must satisfy 0 <= inner < outer, got {self.inner}, {self.outer}")
        if self.metric not in ("euclidean", "path"):
            errors.append(f"metric must be 'euclidean' or 'path', got {self.metric!r}")
        if self.neighborhood not in (4, 8):
            errors.append(f"neighborhood must be 4 or 8, got {self.neighborhood}")
        if self.turns < 1:
            errors.append(f"turns must be at least 1, got {self.turns}")

        if not (self.odds in ODDS_FAMILIES or self.odds.startswith("table:")):
            errors.append(f"odds must be one of {ODDS_FAMILIES} or table:<path>, got {self.odds!r}")
        if self.odds == "const" and not -1 < self.theta < 1:
            errors.append(f"theta must lie in (-1, 1), got {self.theta}")
        if self.odds == "linear" and not abs(self.beta * self.eps) / 2 < 1:
            errors.append(f"linear odds need |beta*eps|/2 < 1, got beta={self.beta}, eps={self.eps}")

        if self.favored not in (None, "lower", "upper"):
            errors.append(f"favored must be 'lower' or 'upper', got {self.favored!r}")
        if self.side not in ("above", "below"):
            errors.append(f"side must be 'above' or 'below', got {self.side!r}")
        if self.trials < 1:
            errors.append(f"trials must be at least 1, got {self.trials}")
        if self.depth < 2:
            errors.append(f"depth must be at least 2, got {self.depth}")
        if self.refine < 0:
            errors.append(f"refine must be nonnegative, got {self.refine}")
        if self.grad_threshold is not None and self.grad_threshold < 0:
            errors.append(f"grad_threshold must be nonnegative, got {self.grad_threshold}")
        if self.norm not in ("euclidean", "path"):
            errors.append(f"norm must be 'euclidean' or 'path', got {self.norm!r}")
        if self.stride < 1:
            errors.append(f"stride must be at least 1, got {self.stride}")
        if self.out_format not in ("json", "csv"):
            errors.append(f"out_format must be 'json' or 'csv', got {self.out_format!r}")
        if self.threads is not None and self.threads < 1:
            errors.append(f"threads must be at least 1, got {self.threads}")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            errors.append(f"log_level must be DEBUG, INFO, WARNING or ERROR, got {self.log_level!r}")

        errors.extend(self.solver_config().validate())
        errors.extend(self.simulation_config().validate())
        return errors
