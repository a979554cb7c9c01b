"""Equilibrium-independent dissipativity machinery for LTI subsystems.

Covers: quadratic supply rates, X-EID analysis of a fixed LTI system,
local-gain synthesis that enforces a target X-EID property, the closed-form
RL-line passivity characterization, and network-level Y-EID analysis and
synthesis blocks over a static interconnection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lmi import (AffineMatrixExpr, LmiProblem, SolveOptions, atom, bmat,
                  const, hermitian, rect_var, scalar_var, scaled, solve,
                  sym_var)


@dataclass(frozen=True)
class SupplyRate:
    """Quadratic supply rate s(u, y) = [u; y]' [[X11, X12], [X21, X22]] [u; y]."""

    X11: np.ndarray
    X12: np.ndarray
    X21: np.ndarray
    X22: np.ndarray

    def __post_init__(self):
        if not np.allclose(self.X21, self.X12.T):
            raise ValueError("supply rate must be symmetric: X21 == X12'")

    @staticmethod
    def passive(m: int) -> "SupplyRate":
        return SupplyRate.ifofp(0.0, 0.0, m)

    @staticmethod
    def ifofp(nu: float, rho: float, m: int) -> "SupplyRate":
        I = np.eye(m)
        return SupplyRate(-nu * I, 0.5 * I, 0.5 * I, -rho * I)

    @staticmethod
    def l2_gain(gamma: float, q: int, m: int) -> "SupplyRate":
        return SupplyRate(gamma ** 2 * np.eye(q), np.zeros((q, m)),
                          np.zeros((m, q)), -np.eye(m))

    def evaluate(self, u: np.ndarray, y: np.ndarray) -> float:
        u = np.atleast_1d(u); y = np.atleast_1d(y)
        return float(u @ self.X11 @ u + 2.0 * u @ self.X12 @ y + y @ self.X22 @ y)


@dataclass(frozen=True)
class PassivityCertificate:
    """IF-OFP indices with the storage matrix that certifies them."""

    nu: float
    rho: float
    P: np.ndarray
    gain: np.ndarray | None = None

    @property
    def supply(self) -> SupplyRate:
        return SupplyRate.ifofp(self.nu, self.rho, self.P.shape[0])

    def storage(self, x_err: np.ndarray) -> float:
        x_err = np.atleast_1d(x_err)
        return float(x_err @ self.P @ x_err)


def _analysis_lmi_expr(A, B, C, D, X: SupplyRate, P):
    """Prop.-style analysis block in the storage variable P (as expression)."""
    A, B, C, D = map(np.atleast_2d, (A, B, C, D))
    n = A.shape[0]
    PA = atom(P) @ A
    top_left = -hermitian(PA) + const(C.T @ X.X22 @ C)
    top_right = -(atom(P) @ B) + const(C.T @ X.X21 + C.T @ X.X22 @ D)
    bottom = const(X.X11 + (X.X12 @ D) + (X.X12 @ D).T + D.T @ X.X22 @ D)
    return bmat([[top_left, top_right], [top_right.T, bottom]])


def analyze_xeid(A, B, C, D, X: SupplyRate,
                 options: SolveOptions | None = None) -> PassivityCertificate | None:
    """Test X-EID of an LTI system; returns a storage certificate or None.

    The test is exact (necessary and sufficient) for LTI systems, so an
    infeasible LMI certifies the property fails up to numerical tolerance.
    Solver breakdown raises instead of returning None.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    P = sym_var("P", n)
    prob = LmiProblem("xeid-analysis")
    prob.add_pd(atom(P), margin=1e-9)
    prob.add_psd(_analysis_lmi_expr(A, B, C, D, X, P))
    sol = solve(prob, options)
    if sol.status == "infeasible":
        return None
    if not sol.ok:
        raise RuntimeError(f"X-EID analysis did not converge: {sol.status} ({sol.note})")
    nu, rho = _ifofp_of(X)
    return PassivityCertificate(nu, rho, sol.value(P))


def _ifofp_of(X: SupplyRate) -> tuple[float, float]:
    nu = -float(X.X11[0, 0]) if X.X11.size else 0.0
    rho = -float(X.X22[0, 0]) if X.X22.size else 0.0
    return nu, rho


def maximize_output_index(A, B, C, D, nu: float = 0.0,
                          options: SolveOptions | None = None):
    """Largest rho with the system IF-OFP(nu, rho); returns (rho, P)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if np.any(np.atleast_2d(np.asarray(D, dtype=float)) != 0.0):
        raise ValueError("index maximization supports D = 0 only")
    n = A.shape[0]
    m = C.shape[0]
    P = sym_var("P", n)
    rho = scalar_var("rho")
    X_fixed = SupplyRate.ifofp(nu, 0.0, m)
    prob = LmiProblem("max-ofp")
    prob.add_pd(atom(P), margin=1e-10)
    base = _analysis_lmi_expr(A, B, C, D, X_fixed, P)
    n_out = base.shape[0]
    CC = np.asarray(C.T @ C, dtype=float)
    shift = bmat([[scaled(-atom(rho), CC), np.zeros((n, n_out - n))],
                  [np.zeros((n_out - n, n)), np.zeros((n_out - n, n_out - n))]])
    prob.add_psd(base + shift)
    prob.minimize([(rho, -1.0)])
    sol = solve(prob, options)
    if not sol.ok:
        raise RuntimeError(f"index maximization failed: {sol.status}")
    return sol.value(rho), sol.value(P)


def best_ifofp_indices(A, B, C, D, options: SolveOptions | None = None):
    """Lexicographic index pair: max rho at nu = 0, then best nu at that rho.

    Feasibility is monotone toward more negative nu (a larger input
    shortage only weakens the supply), so the meaningful second stage
    minimizes the shortage, pushing nu up toward zero.
    """
    rho, _ = maximize_output_index(A, B, C, D, nu=0.0, options=options)
    A2 = np.atleast_2d(np.asarray(A, dtype=float))
    C2 = np.atleast_2d(np.asarray(C, dtype=float))
    n = A2.shape[0]
    m = C2.shape[0]
    P = sym_var("P", n)
    nu = scalar_var("nu", upper=0.0)
    prob = LmiProblem("max-ifp")
    prob.add_pd(atom(P), margin=1e-10)
    base = _analysis_lmi_expr(A, B, C, D, SupplyRate.ifofp(0.0, rho, m), P)
    q = base.shape[0] - n
    shift = bmat([[np.zeros((n, n)), np.zeros((n, q))],
                  [np.zeros((q, n)), scaled(atom(nu), -np.eye(q))]])
    prob.add_psd(base + shift)
    prob.minimize([(nu, -1.0)])
    sol = solve(prob, options)
    if not sol.ok:
        raise RuntimeError(f"index maximization failed: {sol.status}")
    return PassivityCertificate(sol.value(nu), rho, sol.value(P))


def synthesize_local_xeid(A, B, X: SupplyRate,
                          pole_bound: float | None = None,
                          options: SolveOptions | None = None):
    """Design L so that dx = (A + BL)x + eta is X-EID from eta to the state.

    Needs X22 < 0.  Optionally constrains all closed-loop poles to
    Re(lambda) >= -pole_bound (keeps the design integrable at a fixed step).
    Returns (L, P).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n, m = B.shape
    w = np.linalg.eigvalsh(0.5 * (X.X22 + X.X22.T))
    if w.max() >= 0:
        raise ValueError("synthesis requires X22 < 0")
    P = sym_var("P", n)
    K = rect_var("K", m, n)
    prob = LmiProblem("xeid-synthesis")
    prob.add_pd(atom(P), margin=1e-9)
    APBK = const(A) @ atom(P) + const(B) @ atom(K)
    blk = bmat([
        [const(-np.linalg.inv(X.X22)), atom(P), np.zeros((n, n))],
        [atom(P), -hermitian(APBK), const(-np.eye(n)) + atom(P) @ X.X21],
        [np.zeros((n, n)), (const(-np.eye(n)) + atom(P) @ X.X21).T, const(X.X11)],
    ])
    prob.add_psd(blk)
    if pole_bound is not None:
        prob.add_psd(hermitian(APBK) + 2.0 * pole_bound * atom(P))
    sol = solve(prob, options)
    if sol.status == "infeasible":
        raise ValueError(f"no local gain achieves the requested X-EID property "
                         f"(nu={_ifofp_of(X)[0]:g}, rho={_ifofp_of(X)[1]:g})")
    if not sol.ok:
        raise RuntimeError(f"local X-EID synthesis failed: {sol.status} ({sol.note})")
    Pv = sol.value(P)
    L = sol.value(K) @ np.linalg.inv(Pv)
    # the solve variable is the inverse of the storage matrix; return the
    # storage so the certificate matches V = x' P x directly
    P_store = np.linalg.inv(Pv)
    return L, 0.5 * (P_store + P_store.T)


def line_passivity_closed_form(R_l: float, L_l: float) -> PassivityCertificate:
    """Extremal RL-line passivity point: nu_max = 0, rho_max = R_l at P = L_l/2."""
    if R_l <= 0 or L_l <= 0:
        raise ValueError("need R_l, L_l > 0")
    return PassivityCertificate(0.0, R_l, np.array([[L_l / 2.0]]))


def line_analysis_lmi(R_l: float, L_l: float, nu: float, rho: float):
    """The 2x2 line dissipativity block as a function of (P, nu, rho)."""
    def block(Pbar):
        return np.array([
            [2.0 * Pbar * R_l / L_l - rho, -Pbar / L_l + 0.5],
            [-Pbar / L_l + 0.5, -nu],
        ])
    return block


# -- network level ------------------------------------------------------

def _stack_supply(dg_supplies, line_supplies, which: str) -> np.ndarray:
    blocks = [getattr(s, which) for s in dg_supplies] + \
             [getattr(s, which) for s in line_supplies]
    if not blocks:
        return np.zeros((0, 0))
    import scipy.linalg as sla
    return sla.block_diag(*blocks)


def analyze_network_yeid(M, dg_supplies, line_supplies, Y: SupplyRate,
                         options: SolveOptions | None = None):
    """Certify network Y-EID for a fixed interconnection via scalar multipliers.

    Solves the analysis LMI in p_i >= 0, pbar_l >= 0.  Feasibility certifies
    the property; infeasibility only means no certificate was found (the
    test is sufficient, not necessary) and returns None.
    """
    n_dg = len(dg_supplies)
    n_ln = len(line_supplies)
    dims_u = [s.X11.shape[0] for s in dg_supplies]
    dims_ub = [s.X11.shape[0] for s in line_supplies]
    nu_dim, nub_dim = sum(dims_u), sum(dims_ub)
    r = M.E_c.shape[1]
    nz = M.H_c.shape[0]

    Muy, Muyb, Muw = M.K, M.C_bar, M.E_c
    Mby, Mbyb, Mbw = M.C, np.zeros((nub_dim, nub_dim)), M.E_bar_c
    Mzy, Mzyb, Mzw = M.H_c, M.H_bar_c, np.zeros((nz, r))

    T = np.block([
        [Muy, Muyb, Muw],
        [np.eye(nu_dim), np.zeros((nu_dim, nub_dim)), np.zeros((nu_dim, r))],
        [Mby, Mbyb, Mbw],
        [np.zeros((nub_dim, nu_dim)), np.eye(nub_dim), np.zeros((nub_dim, r))],
        [np.zeros((r, nu_dim)), np.zeros((r, nub_dim)), np.eye(r)],
        [Mzy, Mzyb, Mzw],
    ])

    p = [scalar_var(f"p{i}", lower=0.0) for i in range(n_dg)]
    pb = [scalar_var(f"pbar{l}", lower=0.0) for l in range(n_ln)]

    def embed(i, which, for_dg):
        dims = dims_u if for_dg else dims_ub
        base_u = sum(dims[:i])
        total = nu_dim if for_dg else nub_dim
        Xi = getattr((dg_supplies if for_dg else line_supplies)[i], which)
        out = np.zeros((total, total))
        out[base_u:base_u + dims[i], base_u:base_u + dims[i]] = Xi
        return out

    def Xp_expr(which_row):
        k1, k2 = which_row
        blocks = []
        for group, vars_, n_grp in ((True, p, n_dg), (False, pb, n_ln)):
            total = nu_dim if group else nub_dim
            acc = const(np.zeros((total, total)))
            for i in range(n_grp):
                acc = acc + scaled(atom(vars_[i]), embed(i, f"X{k1}{k2}", group))
            blocks.append(acc)
        return blocks  # (dg block, line block)

    zero = lambda a, b: np.zeros((a, b))
    Xp11_d, Xp11_l = Xp_expr("11")
    Xp12_d, Xp12_l = Xp_expr("12")
    Xp21_d, Xp21_l = Xp_expr("21")
    Xp22_d, Xp22_l = Xp_expr("22")
    Ymat = np.block([[Y.X11, Y.X12], [Y.X21, Y.X22]])
    mid = bmat([
        [Xp11_d, Xp12_d, zero(nu_dim, nub_dim), zero(nu_dim, nub_dim), zero(nu_dim, r + nz)],
        [Xp21_d, Xp22_d, zero(nu_dim, nub_dim), zero(nu_dim, nub_dim), zero(nu_dim, r + nz)],
        [zero(nub_dim, nu_dim), zero(nub_dim, nu_dim), Xp11_l, Xp12_l, zero(nub_dim, r + nz)],
        [zero(nub_dim, nu_dim), zero(nub_dim, nu_dim), Xp21_l, Xp22_l, zero(nub_dim, r + nz)],
        [zero(r + nz, nu_dim), zero(r + nz, nu_dim), zero(r + nz, nub_dim),
         zero(r + nz, nub_dim), const(-Ymat)],
    ])
    expr = const(T.T) @ mid @ T
    prob = LmiProblem("network-yeid-analysis")
    prob.add_psd(-expr)
    sol = solve(prob, options)
    if sol.status == "infeasible":
        return None
    if not sol.ok:
        raise RuntimeError(f"network analysis failed: {sol.status} ({sol.note})")
    return {"p": np.array([sol.value(v) for v in p]),
            "p_bar": np.array([sol.value(v) for v in pb])}


def build_network_yeid_synthesis(blocks, nu, rho, nu_bar, rho_bar,
                                 Q_expr, p_exprs, pbar_exprs, gamma_expr,
                                 reduced: bool = False):
    """Assemble the global synthesis LMI matrix as an affine expression.

    ``blocks`` carries the fixed interconnection pieces (C_bar, C, E_c,
    E_bar_c, H_c, H_bar_c); the subsystem indices are fixed numbers from the
    local design stage, which keeps the matrix affine in (Q, p, pbar,
    gamma~).  The multiplier and gain-cap arguments are scalar (1x1)
    expressions, so callers can pre-scale their decision variables.
    Assumption guard: all indices must be strictly non-passive.
    """
    nu = np.asarray(nu, dtype=float)
    nu_bar = np.asarray(nu_bar, dtype=float)
    if np.any(nu >= 0):
        raise ValueError("assumption violated: every DG index nu_i must be < 0 "
                         "(strictly non-passive treatment)")
    if nu_bar.size and np.any(nu_bar >= 0):
        raise ValueError("assumption violated: every line index nu_bar_l must be < 0")
    rho = np.asarray(rho, dtype=float)
    rho_bar = np.asarray(rho_bar, dtype=float)

    N = len(nu)
    L = len(nu_bar)
    n1, n2 = 3 * N, L
    nz = n1 + n2
    Cb, C = blocks.C_bar, blocks.C
    E_c, Eb_c = blocks.E_c, blocks.E_bar_c
    H_c, Hb_c = blocks.H_c, blocks.H_bar_c
    r = E_c.shape[1]

    def diag_embed_dg(vals):
        return np.kron(np.diag(vals), np.eye(3))

    X12 = diag_embed_dg(-1.0 / (2.0 * nu))
    X21 = X12.T
    Xb12 = np.diag(-1.0 / (2.0 * nu_bar)) if L else np.zeros((0, 0))
    Xb21 = Xb12.T

    def p_weighted(vals, exprs, embed3: bool):
        dim = 3 * len(vals) if embed3 else len(vals)
        acc = const(np.zeros((dim, dim)))
        for i, e_i in enumerate(exprs):
            e = np.zeros(len(vals)); e[i] = vals[i]
            D = np.kron(np.diag(e), np.eye(3)) if embed3 else np.diag(e)
            acc = acc + scaled(e_i, D)
        return acc

    Xp11 = p_weighted(-nu, p_exprs, True)
    Xp22 = p_weighted(-rho, p_exprs, True)
    Xbp11 = p_weighted(-nu_bar, pbar_exprs, False) if L else const(np.zeros((0, 0)))
    Xbp22 = p_weighted(-rho_bar, pbar_exprs, False) if L else const(np.zeros((0, 0)))
    Gamma = scaled(gamma_expr, np.eye(r))

    z = lambda a, b: np.zeros((a, b))
    r4 = -(Q_expr.T @ X12) - (const(X21) @ Q_expr) - Xp22
    r45 = -(const(X21) @ (Xp11 @ Cb)) - ((Xbp11 @ C).T @ Xb12)
    if reduced:
        # exact Schur elimination of the performance rows: the (z, z) block
        # is the identity and H_c' H_c = I, H_c' Hbar_c = 0, so removing
        # them just subtracts the identity from the output diagonals
        return bmat([
            [Xp11, z(n1, n2), Q_expr, Xp11 @ Cb, Xp11 @ E_c],
            [z(n2, n1), Xbp11, Xbp11 @ C, z(n2, n2), Xbp11 @ Eb_c],
            [Q_expr.T, (Xbp11 @ C).T, r4 - const(np.eye(n1)), r45,
             -(const(X21) @ (Xp11 @ E_c))],
            [(Xp11 @ Cb).T, z(n2, n2), r45.T, -Xbp22 - const(np.eye(n2)),
             -(const(Xb21) @ (Xbp11 @ Eb_c))],
            [(Xp11 @ E_c).T, (Xbp11 @ Eb_c).T,
             (-(const(X21) @ (Xp11 @ E_c))).T,
             (-(const(Xb21) @ (Xbp11 @ Eb_c))).T, Gamma],
        ])
    W = bmat([
        [Xp11, z(n1, n2), z(n1, nz), Q_expr, Xp11 @ Cb, Xp11 @ E_c],
        [z(n2, n1), Xbp11, z(n2, nz), Xbp11 @ C, z(n2, n2), Xbp11 @ Eb_c],
        [z(nz, n1), z(nz, n2), np.eye(nz), H_c, Hb_c, z(nz, r)],
        [Q_expr.T, (Xbp11 @ C).T, H_c.T, r4, r45,
         -(const(X21) @ (Xp11 @ E_c))],
        [(Xp11 @ Cb).T, z(n2, n2), Hb_c.T, r45.T, -Xbp22,
         -(const(Xb21) @ (Xbp11 @ Eb_c))],
        [(Xp11 @ E_c).T, (Xbp11 @ Eb_c).T, z(r, nz),
         (-(const(X21) @ (Xp11 @ E_c))).T, (-(const(Xb21) @ (Xbp11 @ Eb_c))).T,
         Gamma],
    ])
    return W
