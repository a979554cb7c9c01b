from .expr import (AffineMatrixExpr, VarRef, as_expr, atom, bmat, block_diag,
                   const, hermitian, rect_var, scalar_var, scaled, sym_var)
from .problem import Constraint, LmiProblem, LmiSolution, SolveOptions, solve
from .psd import check_psd, min_eig, schur_psd_check, smat, svec, svec_dim

__all__ = [
    "AffineMatrixExpr", "VarRef", "as_expr", "atom", "bmat", "block_diag",
    "const", "hermitian", "rect_var", "scalar_var", "scaled", "sym_var",
    "Constraint", "LmiProblem", "LmiSolution", "SolveOptions", "solve",
    "check_psd", "min_eig", "schur_psd_check", "smat", "svec", "svec_dim",
]
