"""Symmetric-matrix vectorization and numerical PSD tests.

The half-vectorization used throughout is the isometric "svec": upper
triangle stacked column-wise with off-diagonal entries scaled by sqrt(2),
so that <svec(S), svec(T)> = trace(S @ T).  This is also the layout the
conic backend expects for PSD cone slacks.
"""

from __future__ import annotations

import numpy as np

SYM_TOL = 1e-9

_SQRT2 = np.sqrt(2.0)


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def triu_indices_colmajor(n: int) -> tuple[np.ndarray, np.ndarray]:
    """(row, col) indices of the upper triangle, stacked column-wise."""
    cols = np.concatenate([np.full(j + 1, j, dtype=np.intp) for j in range(n)]) \
        if n else np.empty(0, dtype=np.intp)
    rows = np.concatenate([np.arange(j + 1, dtype=np.intp) for j in range(n)]) \
        if n else np.empty(0, dtype=np.intp)
    return rows, cols


def _require_symmetric(S: np.ndarray, sym_tol: float) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    if S.size:
        scale = max(1.0, float(np.abs(S).max()))
        if np.abs(S - S.T).max() > sym_tol * scale:
            raise ValueError("matrix is not symmetric within tolerance")
    return S


def svec(S: np.ndarray, sym_tol: float = SYM_TOL) -> np.ndarray:
    """Isometric half-vectorization of a symmetric matrix."""
    S = _require_symmetric(S, sym_tol)
    n = S.shape[0]
    rows, cols = triu_indices_colmajor(n)
    Ssym = 0.5 * (S + S.T)
    out = Ssym[rows, cols]
    out[rows != cols] *= _SQRT2
    return out


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`; reconstructs the symmetric matrix exactly."""
    v = np.asarray(v, dtype=float).ravel()
    n = int(round((np.sqrt(8 * v.size + 1) - 1) / 2))
    if svec_dim(n) != v.size:
        raise ValueError(f"length {v.size} is not a triangular number")
    rows, cols = triu_indices_colmajor(n)
    vals = v.copy()
    vals[rows != cols] /= _SQRT2
    S = np.zeros((n, n))
    S[rows, cols] = vals
    S[cols, rows] = vals
    return S


def check_psd(M: np.ndarray, strict: bool = False, tol: float = 1e-9,
              sym_tol: float = SYM_TOL) -> bool:
    """Eigenvalue test for positive (semi)definiteness.

    Semidefinite: smallest eigenvalue >= -tol.  Strict: >= +tol.
    """
    M = _require_symmetric(M, sym_tol)
    if M.size == 0:
        return not strict
    lam_min = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return lam_min >= tol if strict else lam_min >= -tol


def min_eig(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return np.inf
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def schur_psd_check(P: np.ndarray, Q: np.ndarray, R: np.ndarray,
                    tol: float = 1e-9) -> bool:
    """PSD test of [[P, Q], [Q.T, R]] via the Schur complement R - Q.T P^-1 Q.

    Requires P > 0; equivalent to the eigenvalue test on the full block
    matrix (both paths must agree, which the test suite enforces).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    Q = np.asarray(Q, dtype=float).reshape(P.shape[0], R.shape[0])
    if not check_psd(P, strict=True, tol=tol):
        raise ValueError("Schur path needs P > 0")
    comp = R - Q.T @ np.linalg.solve(P, Q)
    return check_psd(0.5 * (comp + comp.T), strict=False, tol=tol)
