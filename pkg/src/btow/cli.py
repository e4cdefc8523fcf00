#!/usr/bin/env python3
"""
Command-line runner for the biased tug-of-war toolkit

This script exposes the solvers and experiments as subcommands:
1. solve      - value field of the ordinary, favored or running-payoff game
2. simulate   - Monte-Carlo playouts with chosen strategies
3. cec-check  - randomized comparison-with-cones certification of a field
4. converge   - dyadic ε-refinement table
5. residual   - finite-difference residual of the limit equation
6. gen-space  - write a generated space file
"""

import sys
import argparse
import logging
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Set

import numpy as np

from .analysis import (SpaceFamily, annulus_cone, annulus_family, dyadic_convergence, interval_family,
                       lshape_family, residual, residual_study)
from .bias import OddsFunction, bias_for
from .cones import cec_scan
from .config import RunConfig
from .error_handler import (EXIT_OK, EXIT_VALIDATION, ConfigurationError, ErrorHandler,
                            PropertyCheckError, ValidationError)
from .game import estimate_value, middle_vertex, parse_strategy
from .harmonic import ValueField, ValueSolver, load_field, save_field
from .metric_space import (DiscretizedSpace, build_annulus, build_grid_domain, build_interval,
                           build_lshape, build_spiral, load_space, save_space)
from .utils import (FORMAT_VERSION, add_common_arguments, ensure_directories, read_json_safe,
                    setup_logging_from_config, to_jsonable, write_csv_safe, write_json_safe)


FILE_SCHEMAS = """
file formats:
  space JSON   {"format_version": 1, "name", "params", "unit",
                "vertices": [{"id", "coords"?}], "edges": [[a, b, length]],
                "boundary": [{"id", "F"}], "lattice"?: {"shape", "spacing", "cells"}}
  field JSON   {"format_version": 1, "tag", "bias", "field": [...], "report": {...}, "config": {...}}
  payoff JSON  a list of f values per vertex, or {"f": [...]}
  odds table   CSV with columns eps,rho or JSON {"eps": [...], "rho": [...]} (--odds table:<path>)

CSV tables start with a "# format_version=1" line:
  solve      vertex,value
  converge   level,eps,h,vertices,sweeps,gap,err_u,v_gap,w_gap,v_monotone,w_monotone[,vbound_slack,ubound_slack,wbound_slack]
  residual   vertex,phi,grad_norm,masked
             --dyadic: level,eps,h,stride,points,sweeps,max_phi,ratio
  simulate   --trace rows: index,start,tau,capped,final,payoff

exit codes: 0 ok, 1 invalid input, 2 solver did not converge, 3 property check failed,
            4 internal invariant broken, 5 playouts failed (non-terminating game, illegal move)
"""


class Runner:
    """Runs one resolved configuration and writes its artifacts."""

    def __init__(self, config: RunConfig, explicit: Optional[Set[str]] = None):
        """
        Initialize the runner with configuration.

        Args:
            config: Resolved configuration
            explicit: Names of the settings given as command-line flags
        """
        self.config = config
        self.explicit = set(explicit or ())
        self.logger = logging.getLogger(__name__)

    # -- inputs ---------------------------------------------------------------

    def build_space(self) -> DiscretizedSpace:
        """Load the space file or build the configured generator."""
        c = self.config
        if c.space:
            if not Path(c.space).exists():
                raise ConfigurationError(f"space file {c.space} does not exist")
            return load_space(c.space)
        if c.family == "interval":
            return build_interval(c.cells, c.length)
        if c.family == "grid":
            extent = max(c.nx - 1, 1) * c.spacing
            return build_grid_domain(c.nx, c.ny, c.spacing,
                                     boundary_values=lambda xy: xy[:, 0] / extent)
        if c.family == "annulus":
            return build_annulus(c.inner, c.outer, c.spacing, c.metric, c.neighborhood,
                                 radial_values=lambda r: annulus_cone(c.beta, c.inner, c.outer, r))
        if c.family == "lshape":
            return build_lshape(c.cells, c.length / c.cells, c.neighborhood)
        if c.family == "spiral":
            return build_spiral(c.turns, c.spacing, c.neighborhood)
        raise ConfigurationError(f"unknown family {c.family!r}")

    def odds(self) -> OddsFunction:
        return OddsFunction.from_name(self.config.odds, beta=self.config.beta, theta=self.config.theta)

    def output_path(self, suffix: Optional[str] = None) -> Path:
        """Artifact path: --out-file, else <output_dir>/<command>.<format>."""
        if self.config.out:
            return Path(self.config.out)
        suffix = suffix or self.config.out_format
        return Path(self.config.output_dir) / f"{self.config.command}.{suffix}"

    def _load_field(self, path: Optional[str], space: DiscretizedSpace) -> ValueField:
        if not path:
            raise ConfigurationError(f"{self.config.command} needs --field")
        if not Path(path).exists():
            raise ConfigurationError(f"field file {path} does not exist")
        return load_field(path, space)

    def _write_json(self, data: Dict[str, Any], path: Optional[Path] = None) -> Path:
        path = path or self.output_path("json")
        payload = {"format_version": FORMAT_VERSION, "command": self.config.command,
                   "config": self.config.to_dict()}
        payload.update(data)
        if not write_json_safe(path, to_jsonable(payload), self.logger):
            raise ConfigurationError(f"could not write {path}")
        self.logger.info(f"Wrote {path}")
        return path

    def _write_csv(self, header: List[str], rows: List[List[Any]], path: Optional[Path] = None) -> Path:
        path = path or self.output_path("csv")
        if not write_csv_safe(path, header, to_jsonable(rows), self.logger):
            raise ConfigurationError(f"could not write {path}")
        self.logger.info(f"Wrote {path}")
        return path

    # -- commands -------------------------------------------------------------

    def run(self) -> int:
        """
        Dispatch the configured command.

        Returns:
            int: exit code (errors are raised and mapped by the caller)
        """
        handlers = {
            "solve": self.solve,
            "simulate": self.simulate,
            "cec-check": self.cec_check,
            "converge": self.converge,
            "residual": self.residual,
            "gen-space": self.gen_space,
        }
        ensure_directories([self.config.output_dir], self.logger)
        self.logger.info(f"Running {self.config.command}")
        handlers[self.config.command]()
        return EXIT_OK

    def solve(self) -> None:
        c = self.config
        space = self.build_space()
        bias = bias_for(self.odds(), c.eps)
        solver = ValueSolver(space, bias, c.solver_config())
        if c.favored == "lower":
            result = solver.solve_favored_lower()
        elif c.favored == "upper":
            result = solver.solve_favored_upper()
        elif c.running_payoff:
            result = solver.solve_running_payoff(self._load_payoff(c.running_payoff, space))
        else:
            result, _, _ = solver.solve_value()
        report = result.report

        if c.out_format == "csv":
            self._write_csv(["vertex", "value"], [[v, x] for v, x in enumerate(result.values)])
        else:
            path = self.output_path("json")
            save_field(result, path, extra=to_jsonable({"config": c.to_dict(), "space": space.describe(),
                                                         "command": c.command}))
            self.logger.info(f"Wrote {path}")

        if report is not None and report.gap is not None and not report.certified:
            raise PropertyCheckError(
                f"from-below and from-above solutions differ by {report.gap:.3e} > 10·tol",
                witnesses=[{"gap": report.gap, "sweeps": report.sweeps}])

    def _load_payoff(self, path: str, space: DiscretizedSpace) -> np.ndarray:
        data = read_json_safe(Path(path), None, self.logger)
        if isinstance(data, dict):
            data = data.get("f")
        if not isinstance(data, list) or len(data) != space.n:
            raise ConfigurationError(f"running payoff {path} must list {space.n} values")
        return np.asarray(data, dtype=float)

    def simulate(self) -> None:
        c = self.config
        space = self.build_space()
        bias = bias_for(self.odds(), c.eps)
        start = c.start if c.start is not None else middle_vertex(space)
        if not 0 <= start < space.n or space.is_boundary[start]:
            raise ValidationError(f"start vertex {start} must be an interior vertex in 0..{space.n - 1}",
                                  context={"vertex": start})
        loader = lambda path: self._load_field(path, space)  # noqa: E731
        s1 = parse_strategy(c.s1, space, loader)
        s2 = parse_strategy(c.s2, space, loader)
        sim = c.simulation_config()
        report = estimate_value(space, bias, s1, s2, start, sim.n_samples, sim.seed,
                                sim.max_steps, sim.workers, trace=sim.trace)
        self._write_json({"space": space.describe(), "bias": bias.to_dict(),
                          "report": report.to_dict(), "win_rate": report.win_rate})
        if c.trace:
            header = ["index", "start", "tau", "capped", "final", "payoff"]
            self._write_csv(header, [[row[k] for k in header] for row in report.trace], Path(c.trace))

    def cec_check(self) -> None:
        c = self.config
        space = self.build_space()
        value_field = self._load_field(c.field_file, space)
        # the field's own bias wins unless --eps or --beta was given
        stored = value_field.bias is not None
        eps = value_field.bias.eps if stored and "eps" not in self.explicit else c.eps
        beta = None if stored and "beta" not in self.explicit else c.beta
        self.logger.info(f"Scanning at eps={eps}, beta={'from field' if beta is None else beta}")
        report = cec_scan(space, value_field, c.side, c.trials, c.seed, c.slack, beta=beta, eps=eps)
        self._write_json({"space": space.describe(), "eps": eps, "report": report.to_dict()})
        if not report.passed:
            raise PropertyCheckError(f"comparison with cones from {c.side} failed "
                                     f"(worst excess {report.worst_excess:.3e})",
                                     witnesses=report.witnesses)

    def space_family(self) -> SpaceFamily:
        """The refinement family for converge and residual --dyadic."""
        c = self.config
        # the radial-cone oracle is exact only in the lattice's path metric
        family_builders = {
            "interval": lambda: interval_family(c.beta, k=2 ** c.refine, length=c.length),
            "annulus": lambda: annulus_family(c.beta, k=2 ** max(c.refine, 1), metric="path",
                                              neighborhood=c.neighborhood),
            "lshape": lambda: lshape_family(k=2 ** max(c.refine, 2)),
        }
        if c.family not in family_builders:
            raise ConfigurationError(f"{c.command} supports families {sorted(family_builders)}, "
                                     f"got {c.family!r}")
        return family_builders[c.family]()

    def converge(self) -> None:
        c = self.config
        table = dyadic_convergence(self.space_family(), self.odds(), c.eps0, c.depth,
                                   c.solver_config(), bounds=c.bounds, strict=False)
        if c.out_format == "csv":
            self._write_csv(table.header, table.as_rows())
        else:
            self._write_json({"family": table.family, "reference": table.reference,
                              "rows": table.rows, "witnesses": table.witnesses,
                              "error_constant": table.error_constant(),
                              "linear_bound": table.linear_bound_holds()})
        if table.witnesses:
            raise PropertyCheckError("dyadic monotonicity violated", witnesses=table.witnesses)

    def residual(self) -> None:
        c = self.config
        if c.dyadic:
            self.residual_table()
            return
        space = self.build_space()
        if c.field_file:
            values = self._load_field(c.field_file, space).values
        else:
            values = ValueSolver(space, bias_for(self.odds(), c.eps), c.solver_config()).solve_value()[0].values
        result = residual(space, values, c.beta, c.grad_threshold, stride=c.stride, norm=c.norm)
        if c.out_format == "csv":
            self._write_csv(["vertex", "phi", "grad_norm", "masked"], result.as_rows())
        else:
            self._write_json({"space": space.describe(), "norm": result.norm, "max_abs": result.max_abs,
                              "spacing": result.spacing, "threshold": result.threshold,
                              "rows": result.as_rows()})

    def residual_table(self) -> None:
        """max |Φu| per dyadic level with ε-scale differences; fails unless it keeps shrinking."""
        c = self.config
        norm = c.norm if "norm" in self.explicit else None
        table = residual_study(self.space_family(), self.odds(), c.beta, c.eps0, c.depth,
                               c.solver_config(), norm=norm, strict=False)
        if c.out_format == "csv":
            self._write_csv(table.header, table.as_rows())
        else:
            self._write_json({"family": table.family, "rows": table.rows, "witnesses": table.witnesses})
        if table.witnesses:
            raise PropertyCheckError("residual did not shrink under refinement", witnesses=table.witnesses)

    def gen_space(self) -> None:
        space = self.build_space()
        path = self.output_path("json")
        save_space(space, path)
        self.logger.info(f"Wrote {path}: {space.describe()}")


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------

def _common_parser() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    add_common_arguments(parent)
    space = parent.add_argument_group("space")
    space.add_argument("--space", help="Space JSON file (overrides --family)")
    space.add_argument("--family", help="Generator: interval, grid, annulus, lshape, spiral")
    space.add_argument("--cells", type=int, help="Interval cells / L-shape size")
    space.add_argument("--length", type=float, help="Interval length / L-shape extent")
    space.add_argument("--nx", type=int, help="Grid columns")
    space.add_argument("--ny", type=int, help="Grid rows")
    space.add_argument("--spacing", type=float, help="Lattice spacing")
    space.add_argument("--inner", type=float, help="Annulus inner radius")
    space.add_argument("--outer", type=float, help="Annulus outer radius")
    space.add_argument("--metric", choices=["euclidean", "path"], help="Annulus shape")
    space.add_argument("--neighborhood", type=int, choices=[4, 8], help="Lattice neighbourhood")
    space.add_argument("--turns", type=int, help="Spiral windings")

    bias = parent.add_argument_group("bias")
    bias.add_argument("--beta", type=float, help="Drift coefficient β")
    bias.add_argument("--odds", help="exp | linear | const | table:<path>")
    bias.add_argument("--theta", type=float, help="Bias of the const odds family")
    bias.add_argument("--eps", type=float, help="Step radius ε")

    solver = parent.add_argument_group("solver")
    solver.add_argument("--tol", type=float, help="Sup-norm fixed-point tolerance")
    solver.add_argument("--max-sweeps", dest="max_sweeps", type=int, help="Iteration cap")
    solver.add_argument("--min-mesh-ratio", dest="min_mesh_ratio", type=float, help="Require ε >= ratio·h")
    solver.add_argument("--ball-rule", dest="ball_rule", choices=["auto", "open", "closed"],
                        help="Closed balls when ε is a grid multiple (auto), or forced")

    output = parent.add_argument_group("output")
    output.add_argument("--out", dest="out_format", choices=["json", "csv"], help="Artifact format")
    output.add_argument("--out-file", dest="out", help="Artifact path (default <output-dir>/<command>.<format>)")
    output.add_argument("--output-dir", dest="output_dir", help="Artifact directory")
    output.add_argument("--seed", type=int, help="Master seed for all randomness")
    output.add_argument("--threads", type=int, help="Worker cap (fallback: BTOW_THREADS, then core count)")
    output.add_argument("--log-file", dest="log_file", help="Also log to this file")
    return parent


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per operation."""
    parser = argparse.ArgumentParser(
        description="Solve and simulate the biased ε-tug-of-war on discretized length spaces",
        epilog=FILE_SCHEMAS, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    parent = _common_parser()
    kwargs = {"parents": [parent], "epilog": FILE_SCHEMAS,
              "formatter_class": argparse.RawDescriptionHelpFormatter}

    solve = sub.add_parser("solve", help="Solve a value field", **kwargs)
    solve.add_argument("--favored", choices=["lower", "upper"], help="Solve the II- (lower) or I-favored (upper) game")
    solve.add_argument("--running-payoff", dest="running_payoff", help="JSON file with f per vertex")

    simulate = sub.add_parser("simulate", help="Estimate a game value by playouts", **kwargs)
    simulate.add_argument("--s1", help="Player I strategy: pull:<v>, greedy-max:<file>, greedy-min:<file>, random, stay")
    simulate.add_argument("--s2", help="Player II strategy (same syntax)")
    simulate.add_argument("--start", type=int, help="Start vertex (default: middle interior vertex)")
    simulate.add_argument("--n", dest="n_samples", type=int, help="Number of playouts")
    simulate.add_argument("--max-steps", dest="max_steps", type=int, help="Step cap per playout")
    simulate.add_argument("--trace", help="Write per-playout CSV rows to this path")

    cec = sub.add_parser("cec-check", help="Certify comparison with exponential cones", **kwargs)
    cec.add_argument("--field", dest="field_file", help="Field JSON file")
    cec.add_argument("--side", choices=["above", "below"], help="Compare from above or below")
    cec.add_argument("--trials", type=int, help="Number of sampled (subdomain, cone) pairs")
    cec.add_argument("--slack", help="scaled:<c> (c·ε·M/s) or abs:<value>")

    converge = sub.add_parser("converge", help="Dyadic refinement table", **kwargs)
    converge.add_argument("--eps0", type=float, help="Coarsest ε")
    converge.add_argument("--depth", type=int, help="Number of levels")
    converge.add_argument("--refine", type=int, help="Grid cells per ε = 2^refine")
    converge.add_argument("--bounds", action="store_true", default=None, help="Append bound-check columns")

    res = sub.add_parser("residual", help="Finite-difference residual on a lattice", **kwargs)
    res.add_argument("--field", dest="field_file", help="Field JSON file (solved on the fly if omitted)")
    res.add_argument("--grad-threshold", dest="grad_threshold", type=float, help="Mask points with smaller |∇u|")
    res.add_argument("--norm", choices=["euclidean", "path"], help="Direction set for ν (path: lattice metric)")
    res.add_argument("--stride", type=int, help="Difference step in lattice cells")
    res.add_argument("--dyadic", action="store_true", default=None,
                     help="Residual table along ε = eps0/2^k with stride ε/h (uses --family, --eps0, --depth)")
    res.add_argument("--eps0", type=float, help="Coarsest ε")
    res.add_argument("--depth", type=int, help="Number of levels")

    sub.add_parser("gen-space", help="Write a generated space file", **kwargs)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Defaults from the config file, overridden by every flag given on the command line."""
    try:
        config = RunConfig.load_from_file(args.config)
    except ValueError as e:
        raise ConfigurationError(str(e))
    names = {f.name for f in fields(RunConfig)}
    for key, value in vars(args).items():
        if key in names and value is not None:
            setattr(config, key, value)
    config.command = args.command
    config.log_level = config.log_level.upper()
    return config


def run(config: RunConfig, explicit: Optional[Set[str]] = None) -> int:
    """
    Validate and run a configuration.

    Returns:
        int: 0 ok, 1 validation error, 2 non-convergence, 3 property failure,
        4 internal invariant broken, 5 playout failure
    """
    logger = logging.getLogger(__name__)
    handler = ErrorHandler(config)
    errors = config.validate()
    if errors:
        logger.error("Configuration validation failed:")
        for error in errors:
            logger.error(f"  - {error}")
        return EXIT_VALIDATION
    try:
        return Runner(config, explicit).run()
    except Exception as e:
        return handler.handle_error(e, {"command": config.command})


def main(argv: Optional[List[str]] = None) -> int:
    """Main function to handle command line arguments and run the toolkit."""
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
    except ConfigurationError as e:
        logging.getLogger(__name__).error(f"Configuration error: {e}")
        return EXIT_VALIDATION
    setup_logging_from_config(config)
    explicit = {key for key, value in vars(args).items() if value is not None}
    return run(config, explicit)


if __name__ == "__main__":
    sys.exit(main())
