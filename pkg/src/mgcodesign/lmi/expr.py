"""Affine matrix expressions over scalar and matrix decision variables.

An expression is a sum of terms ``L @ X @ R`` (optionally with ``X.T``)
plus a constant matrix, affine in every variable.  This is the modeling
surface every LMI in the toolkit is written against; canonicalization to
the conic backend lives in :mod:`mgcodesign.lmi.problem`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

_uid_counter = itertools.count()


@dataclass(frozen=True, eq=False)
class VarRef:
    """Handle for one decision variable (scalar, symmetric or masked rectangular)."""

    name: str
    kind: str                      # "scalar" | "sym" | "rect"
    shape: tuple[int, int]
    mask: np.ndarray | None = None  # rect only: True marks a free entry
    lower: float | None = None      # scalar box bounds
    upper: float | None = None
    uid: int = field(default_factory=lambda: next(_uid_counter))

    def __post_init__(self):
        r, c = self.shape
        if self.kind == "scalar":
            if self.shape != (1, 1):
                raise ValueError("scalar variables have shape (1, 1)")
        elif self.kind == "sym":
            if r != c or r < 1:
                raise ValueError("symmetric variables need square shape, n >= 1")
        elif self.kind == "rect":
            if self.mask is not None and self.mask.shape != self.shape:
                raise ValueError("mask shape must match variable shape")
        else:
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if self.kind != "scalar" and (self.lower is not None or self.upper is not None):
            raise ValueError("box bounds are supported on scalar variables only")

    def __repr__(self):
        return f"<{self.kind} var {self.name!r} {self.shape}>"

    def __hash__(self):
        return self.uid

    def __eq__(self, other):
        return self is other

    @property
    def n_params(self) -> int:
        if self.kind == "scalar":
            return 1
        if self.kind == "sym":
            n = self.shape[0]
            return n * (n + 1) // 2
        if self.mask is None:
            return self.shape[0] * self.shape[1]
        return int(self.mask.sum())

    def param_entries(self) -> list[list[tuple[int, int, float]]]:
        """Per free parameter, the matrix entries (i, j, weight) it populates."""
        if self.kind == "scalar":
            return [[(0, 0, 1.0)]]
        if self.kind == "sym":
            n = self.shape[0]
            out = []
            for j in range(n):
                for i in range(j + 1):
                    out.append([(i, j, 1.0)] if i == j else [(i, j, 1.0), (j, i, 1.0)])
            return out
        r, c = self.shape
        out = []
        for i in range(r):
            for j in range(c):
                if self.mask is None or self.mask[i, j]:
                    out.append([(i, j, 1.0)])
        return out

    def pack(self, value) -> np.ndarray:
        """Flatten a variable value into its free-parameter vector."""
        if self.kind == "scalar":
            return np.array([float(value)])
        V = np.asarray(value, dtype=float)
        out = np.empty(self.n_params)
        for k, entries in enumerate(self.param_entries()):
            i, j, _ = entries[0]
            out[k] = V[i, j]
        return out

    def unpack(self, params: np.ndarray):
        """Inverse of :meth:`pack`."""
        params = np.asarray(params, dtype=float).ravel()
        if self.kind == "scalar":
            return float(params[0])
        V = np.zeros(self.shape)
        for k, entries in enumerate(self.param_entries()):
            for i, j, w in entries:
                V[i, j] = w * params[k]
        return V

    def zero_value(self):
        return 0.0 if self.kind == "scalar" else np.zeros(self.shape)


def scalar_var(name: str, lower: float | None = None, upper: float | None = None) -> VarRef:
    return VarRef(name, "scalar", (1, 1), lower=lower, upper=upper)


def sym_var(name: str, n: int) -> VarRef:
    return VarRef(name, "sym", (n, n))


def rect_var(name: str, rows: int, cols: int, mask: np.ndarray | None = None) -> VarRef:
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
    return VarRef(name, "rect", (rows, cols), mask=mask)


@dataclass(frozen=True)
class Term:
    left: np.ndarray    # (m, a)
    var: VarRef
    right: np.ndarray   # (b, n)
    transposed: bool = False

    def var_shape(self) -> tuple[int, int]:
        r, c = self.var.shape
        return (c, r) if self.transposed else (r, c)


class AffineMatrixExpr:
    """Matrix expression ``sum_k L_k X_k R_k + const``, affine in all variables."""

    __slots__ = ("shape", "terms", "const")

    # make numpy defer binary ops to the reflected methods here
    __array_ufunc__ = None

    def __init__(self, shape: tuple[int, int], terms: list[Term], const: np.ndarray):
        self.shape = (int(shape[0]), int(shape[1]))
        const = np.asarray(const, dtype=float)
        if const.shape != self.shape:
            raise ValueError(f"constant shape {const.shape} != expression shape {self.shape}")
        for t in self.terms_check(terms):
            pass
        self.terms = terms
        self.const = const

    def terms_check(self, terms):
        m, n = self.shape
        for t in terms:
            a, b = t.var_shape()
            if t.left.shape != (m, a) or t.right.shape != (b, n):
                raise ValueError(
                    f"term does not conform: left {t.left.shape}, var {t.var_shape()}, "
                    f"right {t.right.shape}, expression {self.shape}")
            yield t

    # -- constructors -------------------------------------------------
    @staticmethod
    def constant(M) -> "AffineMatrixExpr":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return AffineMatrixExpr(M.shape, [], M)

    @staticmethod
    def variable(v: VarRef) -> "AffineMatrixExpr":
        r, c = v.shape
        return AffineMatrixExpr(
            (r, c), [Term(np.eye(r), v, np.eye(c))], np.zeros((r, c)))

    # -- algebra ------------------------------------------------------
    def __add__(self, other):
        other = as_expr(other, like=self)
        if other.shape != self.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        return AffineMatrixExpr(self.shape, self.terms + other.terms,
                                self.const + other.const)

    __radd__ = __add__

    def __neg__(self):
        return AffineMatrixExpr(
            self.shape,
            [Term(-t.left, t.var, t.right, t.transposed) for t in self.terms],
            -self.const)

    def __sub__(self, other):
        return self + (-as_expr(other, like=self))

    def __rsub__(self, other):
        return as_expr(other, like=self) + (-self)

    def __mul__(self, c):
        c = float(c)
        return AffineMatrixExpr(
            self.shape,
            [Term(c * t.left, t.var, t.right, t.transposed) for t in self.terms],
            c * self.const)

    __rmul__ = __mul__

    def __matmul__(self, M):
        if isinstance(M, AffineMatrixExpr):
            if M.terms:
                if self.terms:
                    raise TypeError("product of two variable expressions is not affine")
                return M.__rmatmul__(self.const)
            M = M.const
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if self.shape[1] != M.shape[0]:
            raise ValueError(f"matmul mismatch {self.shape} @ {M.shape}")
        shape = (self.shape[0], M.shape[1])
        return AffineMatrixExpr(
            shape, [Term(t.left, t.var, t.right @ M, t.transposed) for t in self.terms],
            self.const @ M)

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.shape[0]:
            raise ValueError(f"matmul mismatch {M.shape} @ {self.shape}")
        shape = (M.shape[0], self.shape[1])
        return AffineMatrixExpr(
            shape, [Term(M @ t.left, t.var, t.right, t.transposed) for t in self.terms],
            M @ self.const)

    @property
    def T(self) -> "AffineMatrixExpr":
        return AffineMatrixExpr(
            (self.shape[1], self.shape[0]),
            [Term(t.right.T, t.var, t.left.T, not t.transposed) for t in self.terms],
            self.const.T)

    # -- evaluation ---------------------------------------------------
    def variables(self) -> list[VarRef]:
        seen: dict[int, VarRef] = {}
        for t in self.terms:
            seen.setdefault(t.var.uid, t.var)
        return list(seen.values())

    def evaluate(self, assignment: dict) -> np.ndarray:
        """Numeric value at ``assignment`` (VarRef -> value; missing vars are 0)."""
        out = self.const.copy()
        for t in self.terms:
            val = assignment.get(t.var, None)
            if val is None:
                continue
            V = np.atleast_2d(np.asarray(val, dtype=float))
            if t.transposed:
                V = V.T
            out += t.left @ V @ t.right
        return out

    def is_symmetric(self, rtol: float = 1e-9, rng: np.random.Generator | None = None) -> bool:
        """Structural symmetry: expr == expr.T for every variable assignment.

        The defect expr - expr.T is affine, so vanishing at the zero
        assignment and at two random assignments certifies symmetry
        (up to a measure-zero event).
        """
        if self.shape[0] != self.shape[1]:
            return False
        rng = rng or np.random.default_rng(0)
        assignments = [dict()]
        for _ in range(2):
            a = {}
            for v in self.variables():
                a[v] = v.unpack(rng.standard_normal(v.n_params))
            assignments.append(a)
        for a in assignments:
            M = self.evaluate(a)
            scale = max(1.0, float(np.abs(M).max()))
            if np.abs(M - M.T).max() > rtol * scale:
                return False
        return True


def as_expr(x, like: AffineMatrixExpr | None = None) -> AffineMatrixExpr:
    if isinstance(x, AffineMatrixExpr):
        return x
    if isinstance(x, VarRef):
        return AffineMatrixExpr.variable(x)
    if np.isscalar(x) and like is not None:
        m, n = like.shape
        if m == n:
            return AffineMatrixExpr.constant(float(x) * np.eye(m))
    return AffineMatrixExpr.constant(x)


def const(M) -> AffineMatrixExpr:
    return AffineMatrixExpr.constant(M)


def atom(v: VarRef) -> AffineMatrixExpr:
    return AffineMatrixExpr.variable(v)


def hermitian(e: AffineMatrixExpr) -> AffineMatrixExpr:
    """H(E) = E + E.T."""
    return e + e.T


def scaled(e, M) -> AffineMatrixExpr:
    """Product of a scalar (1x1) affine expression with a constant matrix.

    Each rank-one slice of M becomes one term, keeping the result affine.
    """
    e = as_expr(e)
    if e.shape != (1, 1):
        raise ValueError(f"scaled() needs a 1x1 expression, got {e.shape}")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    m, n = M.shape
    terms: list[Term] = []
    for t in e.terms:
        for j in range(n):
            col = M[:, j:j + 1]
            if not np.any(col):
                continue
            ej = np.zeros((1, n))
            ej[0, j] = 1.0
            terms.append(Term(col @ t.left, t.var, t.right @ ej, t.transposed))
    return AffineMatrixExpr((m, n), terms, float(e.const[0, 0]) * M)


def bmat(blocks: list[list]) -> AffineMatrixExpr:
    """Assemble a block matrix of expressions / arrays / scalars ("0" fills)."""
    nrow = len(blocks)
    ncol = len(blocks[0])
    exprs: list[list[AffineMatrixExpr | None]] = [[None] * ncol for _ in range(nrow)]
    row_h: list[int | None] = [None] * nrow
    col_w: list[int | None] = [None] * ncol
    for i, row in enumerate(blocks):
        if len(row) != ncol:
            raise ValueError("ragged block structure")
        for j, blk in enumerate(row):
            if np.isscalar(blk) and float(blk) == 0.0:
                continue
            e = as_expr(blk)
            exprs[i][j] = e
            for (sz, table, idx) in ((e.shape[0], row_h, i), (e.shape[1], col_w, j)):
                if table[idx] is None:
                    table[idx] = sz
                elif table[idx] != sz:
                    raise ValueError(f"inconsistent block sizes at ({i}, {j})")
    if any(h is None for h in row_h) or any(w is None for w in col_w):
        raise ValueError("could not infer all block dimensions (row/col of only zeros)")
    M, N = sum(row_h), sum(col_w)
    ro = np.concatenate([[0], np.cumsum(row_h)])
    co = np.concatenate([[0], np.cumsum(col_w)])
    terms: list[Term] = []
    cmat = np.zeros((M, N))
    for i in range(nrow):
        for j in range(ncol):
            e = exprs[i][j]
            if e is None:
                continue
            cmat[ro[i]:ro[i + 1], co[j]:co[j + 1]] = e.const
            for t in e.terms:
                left = np.zeros((M, t.left.shape[1]))
                left[ro[i]:ro[i + 1], :] = t.left
                right = np.zeros((t.right.shape[0], N))
                right[:, co[j]:co[j + 1]] = t.right
                terms.append(Term(left, t.var, right, t.transposed))
    return AffineMatrixExpr((M, N), terms, cmat)


def block_diag(blocks: list) -> AffineMatrixExpr:
    n = len(blocks)
    grid = [[blocks[i] if i == j else 0 for j in range(n)] for i in range(n)]
    return bmat(grid)
