from .capacity import (InfeasibleQuery, LpInstance, LpSolution, build_lp, export_lp, extract_randomized_policy,
                       feasibility_point, is_feasible, max_violation, min_cost, path_decomposition, region_boundary, solve)
from .simplex import LpError, LpResult, simplex

__all__ = [
    "InfeasibleQuery", "LpError", "LpInstance", "LpResult", "LpSolution", "build_lp", "export_lp",
    "extract_randomized_policy", "feasibility_point", "is_feasible", "max_violation", "min_cost", "path_decomposition",
    "region_boundary", "simplex", "solve",
]
