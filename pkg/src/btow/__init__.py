#!/usr/bin/env python3
"""
Biased Tug-of-War Toolkit

This package solves, simulates and checks the β-biased ε-tug-of-war game on
discretized length spaces.

Main Components:
- metric_space: Weighted graphs with a boundary, path metric and ε-ball indexes
- bias: Odds functions ε ↦ ρ(ε) and the toss parameters they induce
- harmonic: Value iteration for the ordinary, favored and running-payoff games
- cones: Exponential cones and comparison-with-cones certification
- game: Seeded Monte-Carlo playouts and strategies
- analysis: Dyadic convergence, sandwich and bound checks, PDE residual
- cli: Command-line runner
- config: Configuration management
- utils: Common utility functions

Usage:
    # Solve the game value on the unit interval
    python -m src.btow.cli solve --family interval --cells 64 --beta 1 --eps 0.125

    # Estimate it by playouts
    python -m src.btow.cli simulate --family interval --s1 pull:64 --s2 pull:0 --n 20000

    # Dyadic refinement table
    python -m src.btow.cli converge --family interval --eps0 0.25 --depth 4 --out csv
"""

__version__ = "1.0.0"
__author__ = "SrGnis"
__email__ = "srgnis@srgnis.xyz"

from .config import RunConfig, SolverConfig, SimulationConfig
from .metric_space import DiscretizedSpace, BallIndex, ball_index, load_space, save_space
from .bias import GameBias, OddsFunction, bias_for
from .harmonic import ValueField, ValueSolver, solve_value, solve_favored_lower, solve_favored_upper
from .cones import ConeSpec, cec_check, cec_scan
from .game import Strategy, estimate_value
from .analysis import dyadic_convergence, sandwich_check, bound_check, residual, residual_study

__all__ = [
    "RunConfig",
    "SolverConfig",
    "SimulationConfig",
    "DiscretizedSpace",
    "BallIndex",
    "ball_index",
    "load_space",
    "save_space",
    "GameBias",
    "OddsFunction",
    "bias_for",
    "ValueField",
    "ValueSolver",
    "solve_value",
    "solve_favored_lower",
    "solve_favored_upper",
    "ConeSpec",
    "cec_check",
    "cec_scan",
    "Strategy",
    "estimate_value",
    "dyadic_convergence",
    "sandwich_check",
    "bound_check",
    "residual",
    "residual_study",
]
