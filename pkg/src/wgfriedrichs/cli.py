"""Command-line driver: run a convergence study and write it as CSV."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .friedrichs import check_admissibility
from .mesh import MeshError, load_mesh, square_grid
from .study import (
    ConvergenceError,
    centroid_values,
    manufactured_cdr_layer,
    manufactured_cdr_smooth,
    manufactured_maxwell,
    manufactured_transport,
    run_convergence,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_INPUT = 0, 1, 2, 3
DEFAULT_EPSILON = 1e-8

PROBLEMS = {
    "cdr-smooth": manufactured_cdr_smooth,
    "cdr-layer": manufactured_cdr_layer,
    "maxwell2d": lambda: manufactured_maxwell(),
    "transport": lambda: manufactured_transport(),
}
CDR = ("cdr-smooth", "cdr-layer")


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str
    degree: int = 1
    levels: tuple = (1, 4)          # inclusive
    epsilon: float | None = None    # convection-diffusion problems only
    mu: float | None = None
    mesh: str = "square"            # square | polygonal | file:<path>
    out: str | None = None          # None writes the table to stdout
    dump_solution: bool = False

    @property
    def level_range(self):
        return range(self.levels[0], self.levels[1] + 1)

    @property
    def mesh_file(self):
        return self.mesh[5:] if self.mesh.startswith("file:") else None


def build_problem(config):
    make = PROBLEMS[config.problem]
    if config.problem in CDR:
        eps = DEFAULT_EPSILON if config.epsilon is None else config.epsilon
        problem = make(eps)
    else:
        problem = make()
    if config.mu is not None:
        problem = problem.with_mu(config.mu)
    return problem


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser():
    p = _Parser(prog="wgfriedrichs", description=__doc__)
    p.add_argument("--problem", required=True, choices=sorted(PROBLEMS))
    p.add_argument("--degree", type=int, default=1, help="polynomial degree k >= 0")
    p.add_argument("--levels", default="1:4", help="inclusive level range a:b (a >= 1)")
    p.add_argument("--epsilon", type=float, help="diffusion parameter (cdr problems)")
    p.add_argument("--mu", type=float, help="stabilization parameter override")
    p.add_argument("--mesh", default="square", help="square, polygonal or file:<path>")
    p.add_argument("--out", help="CSV output path (default: stdout)")
    p.add_argument("--dump-solution", action="store_true",
                   help="also write centroid values of the finest solution")
    return p


def _parse_levels(text):
    try:
        a, b = (int(t) for t in text.split(":"))
    except ValueError:
        raise UsageError(f"--levels must look like a:b, got {text!r}") from None
    if a < 1 or b < a:
        raise UsageError(f"--levels needs 1 <= a <= b, got {text!r}")
    return a, b


def parse_args(argv):
    """Validate a command line into a RunConfig; raises UsageError."""
    ns = _parser().parse_args(argv)
    if ns.degree < 0:
        raise UsageError(f"--degree must be >= 0, got {ns.degree}")
    if ns.epsilon is not None:
        if ns.problem not in CDR:
            raise UsageError(f"epsilon is not a {ns.problem} parameter")
        if not ns.epsilon > 0:
            raise UsageError(f"--epsilon must be positive, got {ns.epsilon}")
    if ns.mesh not in ("square", "polygonal") and not (ns.mesh.startswith("file:")
                                                      and len(ns.mesh) > 5):
        raise UsageError(f"--mesh must be square, polygonal or file:<path>, got {ns.mesh!r}")
    if ns.dump_solution and ns.out is None:
        raise UsageError("--dump-solution needs --out")
    config = RunConfig(ns.problem, ns.degree, _parse_levels(ns.levels), ns.epsilon, ns.mu,
                       ns.mesh, ns.out, ns.dump_solution)
    if config.mu is not None:
        if not config.mu > 0:
            raise UsageError(f"--mu must be positive, got {config.mu}")
        try:
            problem = build_problem(config)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        report = check_admissibility(problem.system, square_grid(1))
        if not report.passed:
            raise UsageError("; ".join(report.failures))
    return config


def solution_path(out):
    p = Path(out)
    return p.with_name(p.stem + "_solution.csv")


def write_solution(path, mesh, k, m, u_h):
    vals = centroid_values(mesh, k, m, u_h)
    data = np.column_stack([mesh.centroids, vals])
    header = ",".join(["x", "y"] + [f"comp{i}" for i in range(m)])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")


def run(config):
    """Run the study described by ``config``; returns a process exit status."""
    problem = build_problem(config)
    family, levels = config.mesh, config.level_range
    if config.mesh_file is not None:
        try:
            mesh = load_mesh(config.mesh_file)
        except MeshError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        # a file holds a single mesh; it is reported under the first level
        family, levels = (lambda level: mesh), [config.levels[0]]

    finest = {}

    def keep(level, mesh, u_h):
        finest["last"] = (mesh, u_h)

    status = EXIT_OK
    try:
        table = run_convergence(problem, config.degree, levels, family,
                                on_solution=keep if config.dump_solution else None)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        table, status = exc.table, EXIT_FAILURE
    text = table.to_csv()
    if config.out is None:
        sys.stdout.write(text)
    else:
        Path(config.out).write_text(text)
    if config.dump_solution and "last" in finest:
        mesh, u_h = finest["last"]
        write_solution(solution_path(config.out), mesh, config.degree, problem.system.m, u_h)
    return status


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    try:
        config = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        _parser().print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(config)
    except Exception as exc:  # any module error becomes a diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
