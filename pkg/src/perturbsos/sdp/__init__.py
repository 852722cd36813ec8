from .kernels import get_backend, set_backend
from .problem import SdpProblem, from_data, to_standard_form
from .sdpa import read_sdpa, write_sdpa
from .solver import SdpSolution, SolverOptions, Status, solve, solve_with_restarts

__all__ = [
    "SdpProblem", "SdpSolution", "SolverOptions", "Status",
    "from_data", "get_backend", "read_sdpa", "set_backend", "solve",
    "solve_with_restarts", "to_standard_form", "write_sdpa",
]
