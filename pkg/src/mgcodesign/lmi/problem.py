"""LMI problem container, conic canonicalization and solver bridge.

Matrix-variable LMIs are canonicalized through the isometric svec into
the standard conic form  min q'x  s.t.  Ax + s = b,  s in K  (zero,
nonnegative and PSD-triangle cones) and handed to Clarabel.  Every
returned solution is independently re-verified against the original
constraints with :func:`mgcodesign.lmi.psd.check_psd`; a solution that
does not meet ``feas_tol`` is never reported as feasible.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .expr import AffineMatrixExpr, Term, VarRef, as_expr
from .psd import min_eig, svec, triu_indices_colmajor

_SQRT2 = np.sqrt(2.0)

# VarRef.uid -> id(problem); a variable may appear in at most one problem
_OWNERS: dict[int, int] = {}


@dataclass
class Constraint:
    expr: AffineMatrixExpr
    sense: str            # "psd" | "pd" | "eq"
    margin: float = 0.0   # pd only: realized as expr - margin*I >= 0
    name: str = ""

    def shifted(self) -> AffineMatrixExpr:
        if self.sense == "pd":
            return self.expr - AffineMatrixExpr.constant(
                self.margin * np.eye(self.expr.shape[0]))
        return self.expr


@dataclass
class SolveOptions:
    feas_tol: float = 1e-8
    max_iter: int = 200
    verbosity: int = 0
    # extra accuracy knob for the backend; residuals are always re-checked
    backend_tol: float | None = None
    # symmetric per-block congruence equilibration (D M D >= 0 <=> M >= 0);
    # the backend can only scale a PSD cone uniformly, so badly scaled
    # constraint matrices need this to converge
    equilibrate: bool = True


@dataclass
class LmiSolution:
    status: str                       # optimal | feasible | infeasible | numerical-failure
    values: dict[VarRef, object] = field(default_factory=dict)
    worst_psd_violation: float = float("nan")
    worst_eq_violation: float = float("nan")
    objective: float | None = None
    note: str = ""
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")

    def value(self, var: VarRef):
        return self.values[var]


class LmiProblem:
    """Feasibility / linear-objective problem over PSD, PD and equality constraints."""

    def __init__(self, name: str = "lmi"):
        self.name = name
        self.constraints: list[Constraint] = []
        self.objective: list[tuple[VarRef, np.ndarray]] | None = None
        self._vars: dict[int, VarRef] = {}

    # -- construction ---------------------------------------------------
    def _claim(self, e: AffineMatrixExpr):
        for v in e.variables():
            owner = _OWNERS.get(v.uid)
            if owner is not None and owner != id(self):
                raise ValueError(f"variable {v.name!r} already belongs to another problem")
            _OWNERS[v.uid] = id(self)
            self._vars[v.uid] = v

    def _add(self, expr, sense: str, margin: float, name: str):
        expr = as_expr(expr)
        if sense in ("psd", "pd"):
            if expr.shape[0] != expr.shape[1]:
                raise ValueError(f"{sense} constraint must be square, got {expr.shape}")
            if expr.shape[0] > 1 and not expr.is_symmetric():
                raise ValueError(f"constraint {name or len(self.constraints)} is not "
                                 "structurally symmetric")
        if sense == "pd" and margin <= 0:
            raise ValueError("pd constraints need a positive margin")
        self._claim(expr)
        self.constraints.append(Constraint(expr, sense, margin, name))

    def add_psd(self, expr, name: str = ""):
        """expr >= 0 (positive semidefinite)."""
        self._add(expr, "psd", 0.0, name)

    def add_pd(self, expr, margin: float = 1e-6, name: str = ""):
        """expr > 0, realized as expr - margin*I >= 0 with recorded margin."""
        self._add(expr, "pd", margin, name)

    def add_eq(self, expr, name: str = ""):
        """expr == 0 entrywise (each entry scalar-affine)."""
        self._add(expr, "eq", 0.0, name)

    def minimize(self, terms):
        """Linear objective: list of (var, coefficient) inner-product terms."""
        obj = []
        for v, coef in terms:
            coef = np.atleast_2d(np.asarray(coef, dtype=float))
            if coef.shape != v.shape:
                raise ValueError(f"objective coefficient shape {coef.shape} does not "
                                 f"match variable {v.name!r} {v.shape}")
            self._claim(AffineMatrixExpr.variable(v))
            obj.append((v, coef))
        self.objective = obj

    def variables(self) -> list[VarRef]:
        return list(self._vars.values())

    # -- canonicalization -------------------------------------------------
    def _layout(self):
        offsets: dict[int, int] = {}
        off = 0
        for v in self._vars.values():
            offsets[v.uid] = off
            off += v.n_params
        return offsets, off

    @staticmethod
    def _term_columns(t: Term):
        """Yield (local_param_index, dense m x n coefficient matrix) for a term."""
        L, R = t.left, t.right
        for k, entries in enumerate(t.var.param_entries()):
            C = None
            for (i, j, w) in entries:
                if t.transposed:
                    i, j = j, i
                add = w * np.outer(L[:, i], R[j, :])
                C = add if C is None else C + add
            yield k, C

    def canonicalize(self, equilibrate: bool = True):
        """Build (P, q, A, b, cones) in the backend's standard conic form."""
        import clarabel

        offsets, nx = self._layout()
        q = np.zeros(nx)
        if self.objective:
            for v, coef in self.objective:
                base = offsets[v.uid]
                for k, entries in enumerate(v.param_entries()):
                    q[base + k] = sum(w * coef[i, j] for i, j, w in entries)

        rows_eq: list[tuple[np.ndarray, float]] = []     # (dense row, rhs)
        rows_nn: list[tuple[np.ndarray, float]] = []
        psd_blocks: list[tuple[sp.coo_matrix, np.ndarray, int]] = []

        def linear_rows(expr: AffineMatrixExpr):
            """Entrywise linear map of a small expression as dense rows."""
            m, n = expr.shape
            G = np.zeros((m * n, nx))
            for t in expr.terms:
                base = offsets[t.var.uid]
                for k, C in self._term_columns(t):
                    G[:, base + k] += C.ravel()
            return G, expr.const.ravel()

        # variable box bounds -> nonnegative rows
        for v in self._vars.values():
            if v.kind != "scalar":
                continue
            base = offsets[v.uid]
            if v.lower is not None:
                row = np.zeros(nx); row[base] = 1.0
                rows_nn.append((row, -float(v.lower)))     # x - lower >= 0
            if v.upper is not None:
                row = np.zeros(nx); row[base] = -1.0
                rows_nn.append((row, float(v.upper)))      # upper - x >= 0

        for con in self.constraints:
            expr = con.shifted()
            m = expr.shape[0]
            if con.sense == "eq":
                G, h = linear_rows(expr)
                for r in range(G.shape[0]):
                    rows_eq.append((G[r], h[r]))
            elif m == 1:
                G, h = linear_rows(expr)
                rows_nn.append((G[0], h[0]))
            else:
                sd = m * (m + 1) // 2
                tri_r, tri_c = triu_indices_colmajor(m)
                scale = np.where(tri_r == tri_c, 1.0, _SQRT2)
                cols: dict[int, np.ndarray] = {}
                for t in expr.terms:
                    base = offsets[t.var.uid]
                    for k, C in self._term_columns(t):
                        key = base + k
                        if key in cols:
                            cols[key] = cols[key] + C
                        else:
                            cols[key] = C
                const_sym = 0.5 * (expr.const + expr.const.T)
                if equilibrate:
                    row_mag = np.abs(const_sym).max(axis=1, initial=0.0)
                    for C in cols.values():
                        row_mag = np.maximum(row_mag, np.abs(C).max(axis=1))
                    d = 1.0 / np.sqrt(np.maximum(row_mag, 1e-10))
                else:
                    d = np.ones(m)
                data, ri, ci = [], [], []
                for key, C in cols.items():
                    Cs = 0.5 * (C + C.T) * np.outer(d, d)
                    col = Cs[tri_r, tri_c] * scale
                    nz = np.nonzero(col)[0]
                    ri.extend(nz.tolist())
                    ci.extend([key] * len(nz))
                    data.extend(col[nz].tolist())
                G = sp.coo_matrix((data, (ri, ci)), shape=(sd, nx))
                h = svec(const_sym * np.outer(d, d), sym_tol=np.inf)
                psd_blocks.append((G, h, m))

        A_parts, b_parts, cones = [], [], []
        if rows_eq:
            A_parts.append(sp.csr_matrix(np.array([r for r, _ in rows_eq])))
            b_parts.append(np.array([-h for _, h in rows_eq]))
            cones.append(clarabel.ZeroConeT(len(rows_eq)))
        if rows_nn:
            A_parts.append(sp.csr_matrix(-np.array([r for r, _ in rows_nn])))
            b_parts.append(np.array([h for _, h in rows_nn]))
            cones.append(clarabel.NonnegativeConeT(len(rows_nn)))
        for G, h, m in psd_blocks:
            A_parts.append((-G).tocsr())
            b_parts.append(h)
            cones.append(clarabel.PSDTriangleConeT(m))
        A = sp.vstack(A_parts).tocsc() if A_parts else sp.csc_matrix((0, nx))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        P = sp.csc_matrix((nx, nx))
        return P, q, A, b, cones

    def dump_conic(self) -> str:
        """Plain-text listing of the canonical conic data (debug aid)."""
        P, q, A, b, cones = self.canonicalize()
        buf = io.StringIO()
        print(f"problem {self.name}: {A.shape[1]} params, {A.shape[0]} conic rows", file=buf)
        print("cones:", ", ".join(type(c).__name__ + repr(c).split("(")[-1].rstrip(")")
                                  for c in cones), file=buf)
        print("q =", np.array2string(q, max_line_width=100000), file=buf)
        print("b =", np.array2string(b, max_line_width=100000), file=buf)
        Ad = A.toarray()
        for r in range(Ad.shape[0]):
            print(f"A[{r}] =", np.array2string(Ad[r], max_line_width=100000), file=buf)
        return buf.getvalue()


def _verify(problem: LmiProblem, values: dict, feas_tol: float):
    """Worst constraint violations, scale-relative for PSD blocks.

    A violation is -lambda_min of the (shifted) constraint value divided by
    max(1, largest entry magnitude); equality residuals are absolute.
    """
    worst_psd = 0.0
    worst_eq = 0.0
    for con in problem.constraints:
        expr = con.shifted()
        val = expr.evaluate(values)
        if con.sense == "eq":
            if not val.size:
                continue
            scale = float(np.abs(expr.const).max()) if expr.const.size else 0.0
            for t in expr.terms:
                tv = AffineMatrixExpr(expr.shape, [t],
                                      np.zeros(expr.shape)).evaluate(values)
                scale = max(scale, float(np.abs(tv).max()))
            worst_eq = max(worst_eq, float(np.abs(val).max()) / max(1.0, scale))
        else:
            scale = max(1.0, float(np.abs(val).max())) if val.size else 1.0
            worst_psd = max(worst_psd, max(0.0, -min_eig(val)) / scale)
    return worst_psd, worst_eq


def solve(problem: LmiProblem, options: SolveOptions | None = None) -> LmiSolution:
    """Canonicalize and solve; deterministic for fixed inputs and options."""
    import clarabel

    options = options or SolveOptions()
    if not problem.constraints:
        raise ValueError("problem has no constraints")

    P, q, A, b, cones = problem.canonicalize(equilibrate=options.equilibrate)
    settings = clarabel.DefaultSettings()
    settings.verbose = options.verbosity > 1
    settings.max_iter = options.max_iter
    # decomposition hurts accuracy on the small dense blocks, but large
    # sparse cones need it to keep the NT scaling block from going dense
    max_cone = max((c.__class__.__name__ == "PSDTriangleConeT" and
                    int(repr(c).split("(")[-1].rstrip(")")) or 0)
                   for c in cones) if cones else 0
    settings.chordal_decomposition_enable = max_cone > 120
    tol = options.backend_tol if options.backend_tol is not None \
        else max(options.feas_tol * 1e-1, 1e-12)
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)

    offsets, _ = problem._layout()
    x = np.asarray(sol.x)
    values = {v: v.unpack(x[offsets[v.uid]: offsets[v.uid] + v.n_params])
              for v in problem._vars.values()}

    if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
        return LmiSolution("infeasible", values,
                           note=f"backend reported {status} (primal infeasibility certificate)")
    if status in ("DualInfeasible", "AlmostDualInfeasible"):
        return LmiSolution("numerical-failure", values,
                           note=f"backend reported {status}; objective likely unbounded")

    stalled = status not in ("Solved", "AlmostSolved")
    worst_psd, worst_eq = _verify(problem, values, options.feas_tol)
    obj = float(sol.obj_val) if problem.objective else None
    if worst_psd > options.feas_tol or worst_eq > options.feas_tol:
        return LmiSolution(
            "numerical-failure", values, worst_psd, worst_eq, obj,
            note=(f"backend status {status}, residuals exceed feas_tol: "
                  f"psd {worst_psd:.3e}, eq {worst_eq:.3e}"),
            iterations=int(sol.iterations))
    if stalled:
        # the terminal iterate independently satisfies every constraint;
        # accept it as feasible even though the objective may be suboptimal
        return LmiSolution(
            "feasible", values, worst_psd, worst_eq, obj,
            note=f"accepted stalled iterate (backend {status}; objective "
                 "possibly suboptimal)",
            iterations=int(sol.iterations))
    return LmiSolution(
        "optimal" if problem.objective else "feasible",
        values, worst_psd, worst_eq, obj,
        note="" if status == "Solved" else "backend reported AlmostSolved",
        iterations=int(sol.iterations))
