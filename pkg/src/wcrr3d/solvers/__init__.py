from .condat import condat_tv_reconstruct, grad3, grad3_adjoint, project_dual, tv_norm
from .fista import FistaResult, fista_minimize
from .minres import MinresResult, minres_solve
from .nmapg import (Objective, SolverConfig, SolverError, SolverResult, SolverState,
                    nmapg_minimize, write_trace_csv)
from .power import power_iteration_norm

__all__ = [
    "Objective", "SolverConfig", "SolverError", "SolverResult", "SolverState",
    "nmapg_minimize", "write_trace_csv", "minres_solve", "MinresResult",
    "power_iteration_norm", "fista_minimize", "FistaResult",
    "condat_tv_reconstruct", "grad3", "grad3_adjoint", "project_dual", "tv_norm",
]
