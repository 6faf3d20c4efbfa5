"""Lifted finite-horizon control: costs, the MCP kernel and the two solution concepts."""
from .costs import CostModel, build_cost, raw_running_cost
from .game import (ControlProblem, GameSolution, baseline_rollout, build_equilibrium_mcp, build_optimum_kkt,
                   condensed_qp_solve, coupling_blocks, solve_equilibrium, solve_optimum)
from .mcp import AffineMCP, MCPResult, fb_residual, solve_lcp, solve_mcp

__all__ = [
    "AffineMCP", "ControlProblem", "CostModel", "GameSolution", "MCPResult", "baseline_rollout", "build_cost",
    "build_equilibrium_mcp", "build_optimum_kkt", "condensed_qp_solve", "coupling_blocks", "fb_residual",
    "raw_running_cost", "solve_equilibrium", "solve_lcp", "solve_mcp", "solve_optimum",
]
