"""Weak Galerkin solver for symmetric positive (Friedrichs) systems in 2D."""
from .assembly import WeakVector, solve, solve_monolithic
from .friedrichs import (
    FriedrichsSystem,
    check_admissibility,
    conv_diff_system,
    maxwell2d,
    transport_reaction,
)
from .mesh import load_mesh, polygonal_grid, square_grid
from .study import (
    l2_error,
    manufactured_cdr_layer,
    manufactured_cdr_smooth,
    manufactured_maxwell,
    manufactured_transport,
    run_convergence,
    triple_error,
)

__all__ = [
    "FriedrichsSystem", "WeakVector", "check_admissibility", "conv_diff_system",
    "l2_error", "load_mesh", "manufactured_cdr_layer", "manufactured_cdr_smooth",
    "manufactured_maxwell", "manufactured_transport", "maxwell2d", "polygonal_grid",
    "run_convergence", "solve", "solve_monolithic", "square_grid", "transport_reaction",
    "triple_error",
]
