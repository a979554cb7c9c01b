"""Equilibrium computation and current-sharing setpoint optimization.

The closed-form equilibrium for references V_r is

    V_E    = V_r
    I_tE   = (B R^-1 B' + Y_L) V_r + I_L
    I_barE = R^-1 B' V_r
    u_E    = [I + R_t (B R^-1 B' + Y_L)] V_r + R_t I_L

and the sharing setpoint (V_r*, I_s*) solves a small convex QP balancing
voltage fidelity against the common per-unit loading ratio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import MicrogridSpec, dg_state_matrices, line_state_matrices
from .lmi import (LmiProblem, SolveOptions, atom, bmat, const, scalar_var,
                  scaled, solve)


@dataclass(frozen=True)
class EquilibriumPoint:
    V_E: np.ndarray       # DG voltages (V)
    I_tE: np.ndarray      # DG internal currents (A)
    I_barE: np.ndarray    # line currents (A)
    v_E: np.ndarray       # integrator offsets (pinned to zero)
    u_E: np.ndarray       # equilibrium control inputs (V)

    def state_vector(self) -> np.ndarray:
        """Packed simulator state [V, I_t, v, I_line]."""
        return np.concatenate([self.V_E, self.I_tE, self.v_E, self.I_barE])


@dataclass(frozen=True)
class SharingSetpoint:
    V_r_star: np.ndarray   # optimized reference vector (V)
    I_s_star: float        # common per-unit sharing ratio
    u_S: np.ndarray        # steady-state control inputs (V)
    objective: float = float("nan")


def _conductance_matrix(mg: MicrogridSpec) -> np.ndarray:
    """B R^-1 B' + Y_L, the network conductance seen by the DG currents."""
    B = mg.B
    if mg.n_lines:
        G = B @ np.diag(1.0 / mg.line_vec("R_l")) @ B.T
    else:
        G = np.zeros((mg.n_dgs, mg.n_dgs))
    return G + np.diag(mg.vec("Y_L"))


def check_equilibrium_existence(mg: MicrogridSpec) -> dict:
    """Positive definiteness (hence invertibility) of B R^-1 B' + Y_L."""
    G = _conductance_matrix(mg)
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    exists = bool(w[0] > 0.0)
    cond = float(w[-1] / w[0]) if exists else float("inf")
    return {"exists": exists, "condition_number": cond}


def compute_equilibrium(mg: MicrogridSpec, V_r: np.ndarray) -> EquilibriumPoint:
    V_r = np.asarray(V_r, dtype=float)
    if V_r.shape != (mg.n_dgs,):
        raise ValueError(f"V_r must have length {mg.n_dgs}")
    chk = check_equilibrium_existence(mg)
    if not chk["exists"]:
        raise ValueError("equilibrium system matrix is singular "
                         "(network conductance not positive definite)")
    G = _conductance_matrix(mg)
    I_L = mg.vec("I_L_bar")
    R_t = mg.vec("R_t")
    I_tE = G @ V_r + I_L
    if mg.n_lines:
        I_barE = np.diag(1.0 / mg.line_vec("R_l")) @ mg.B.T @ V_r
    else:
        I_barE = np.zeros(0)
    u_E = V_r + R_t * I_tE
    return EquilibriumPoint(V_r.copy(), I_tE, I_barE, np.zeros(mg.n_dgs), u_E)


def equilibrium_residual(mg: MicrogridSpec, eq: EquilibriumPoint) -> float:
    """Relative norm of the vector field at the claimed equilibrium.

    The tracking reference equals the equilibrium voltage by construction,
    so the integrator rows are evaluated against eq.V_E.
    """
    N = mg.n_dgs
    xdot = np.zeros(3 * N + mg.n_lines)
    for i, dg in enumerate(mg.dgs):
        A, B, _ = dg_state_matrices(dg)
        x_i = np.array([eq.V_E[i], eq.I_tE[i], eq.v_E[i]])
        coupling = -sum(mg.B[i, l] * eq.I_barE[l]
                        for l in range(mg.n_lines)) / dg.C_t
        affine = np.array([(-dg.I_L_bar) / dg.C_t + coupling, 0.0, -eq.V_E[i]])
        xdot[3 * i: 3 * i + 3] = A @ x_i + (B @ [eq.u_E[i]]).ravel() + affine
    for l, line in enumerate(mg.lines):
        Al, Bl, _ = line_state_matrices(line)
        u_l = float(mg.B[:, l] @ eq.V_E)
        xdot[3 * N + l] = Al[0, 0] * eq.I_barE[l] + Bl[0, 0] * u_l
    scale = max(1.0, float(np.linalg.norm(eq.state_vector())))
    return float(np.linalg.norm(xdot)) / scale


def steady_state_inputs(mg: MicrogridSpec, V_r: np.ndarray, I_s: float) -> np.ndarray:
    """u_S,i = V_r,i + R_t,i I_n,i I_s (feedforward holding the setpoint)."""
    V_r = np.asarray(V_r, dtype=float)
    return V_r + mg.vec("R_t") * mg.I_n * float(I_s)


def optimize_reference(mg: MicrogridSpec, V_r_desired: np.ndarray | None = None,
                       V_min: float | np.ndarray | None = None,
                       V_max: float | np.ndarray | None = None,
                       alpha_V: float = 1.0, alpha_I: float = 0.1,
                       options: SolveOptions | None = None) -> SharingSetpoint:
    """Optimize (V_r, I_s): min alpha_V ||V_r - V_r_desired||^2 + alpha_I I_s.

    Subject to the equilibrium sharing balance
    diag(I_n) 1 I_s - (B R^-1 B' + Y_L) V_r = I_L, box bounds on V_r and
    0 <= I_s <= 1.  Convex QP solved through the LMI layer with a Schur
    epigraph on the quadratic term.
    """
    N = mg.n_dgs
    Vbar = mg.V_r if V_r_desired is None else np.asarray(V_r_desired, dtype=float)
    lo = np.full(N, 0.90 * mg.V_base) if V_min is None else np.broadcast_to(
        np.asarray(V_min, dtype=float), (N,))
    hi = np.full(N, 1.10 * mg.V_base) if V_max is None else np.broadcast_to(
        np.asarray(V_max, dtype=float), (N,))
    if np.any(lo > hi):
        raise ValueError("empty reference-voltage box")
    chk = check_equilibrium_existence(mg)
    if not chk["exists"]:
        raise ValueError("setpoint optimization needs an invertible network "
                         "conductance matrix")

    G = _conductance_matrix(mg)
    I_L = mg.vec("I_L_bar")
    I_n = mg.I_n

    v = [scalar_var(f"Vr{i}", lower=float(lo[i]), upper=float(hi[i]))
         for i in range(N)]
    Is = scalar_var("Is", lower=0.0, upper=1.0)
    t = scalar_var("t", lower=0.0)

    prob = LmiProblem("sharing-setpoint")
    dev = bmat([[atom(v[i]) - const([[Vbar[i]]])] for i in range(N)])
    prob.add_psd(bmat([[np.eye(N), dev], [dev.T, atom(t)]]))
    for i in range(N):
        bal = scaled(atom(Is), [[I_n[i]]])
        for j in range(N):
            if G[i, j] != 0.0:
                bal = bal - G[i, j] * atom(v[j])
        prob.add_eq(bal - const([[I_L[i]]]), name=f"balance{i}")
    prob.minimize([(t, alpha_V), (Is, alpha_I)])
    sol = solve(prob, options or SolveOptions(feas_tol=1e-7,
                                              backend_tol=1e-13))
    if sol.status == "infeasible":
        raise ValueError(_describe_infeasible_setpoint(mg, G, I_L, lo, hi))
    if not sol.ok:
        raise RuntimeError(f"setpoint optimization failed: {sol.status} ({sol.note})")

    V_star = np.array([sol.value(x) for x in v])
    I_star = float(sol.value(Is))
    resid = np.abs(I_n * I_star - G @ V_star - I_L).max()
    if resid > 1e-6:
        raise RuntimeError(f"sharing balance residual too large: {resid:.3e}")
    return SharingSetpoint(V_star, I_star,
                           steady_state_inputs(mg, V_star, I_star),
                           objective=float(sol.objective))


def _describe_infeasible_setpoint(mg, G, I_L, lo, hi) -> str:
    """Name the binding constraint for an infeasible setpoint problem."""
    I_n = mg.I_n
    need_lo = (G @ lo + I_L) / I_n
    need_hi = (G @ hi + I_L) / I_n
    if np.min(need_lo) > 1.0:
        return ("setpoint infeasible: load exceeds capacity "
                f"(sharing ratio would need at least {np.min(need_lo):.3f} > 1 "
                "even at the lower voltage bound)")
    if np.max(need_hi) < 0.0:
        return "setpoint infeasible: sharing ratio would need to be negative"
    return ("setpoint infeasible: voltage box too tight to satisfy the "
            "per-DG sharing balance with a common ratio")

