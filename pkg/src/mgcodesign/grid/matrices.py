"""State-space blocks and the networked interconnection matrix.

Per-DG state is (V, I_t, v) with v the voltage-tracking integrator; each
line contributes its current as a scalar state.  The static interconnection
routes DG states, line states, disturbances and performance outputs:

    [u_dg; u_line; z] = M [x_dg; x_line; w]

with blocks {K, Cbar, E_c | C, 0, Ebar_c | H_c, Hbar_c, 0}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import DgParams, LineParams, MicrogridSpec


def dg_state_matrices(dg: DgParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A_i, B_i, E_i) for the augmented DG model (V, I_t, v)."""
    A = np.array([
        [-dg.Y_L / dg.C_t, 1.0 / dg.C_t, 0.0],
        [-1.0 / dg.L_t, -dg.R_t / dg.L_t, 0.0],
        [1.0, 0.0, 0.0],
    ])
    B = np.array([[0.0], [1.0 / dg.L_t], [0.0]])
    E = np.diag([1.0 / dg.C_t, 1.0 / dg.L_t, 1.0])
    return A, B, E


def line_state_matrices(line: LineParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(A_l, B_l, E_l), all 1x1, for the RL line current state."""
    return (np.array([[-line.R_l / line.L_l]]),
            np.array([[1.0 / line.L_l]]),
            np.array([[1.0 / line.L_l]]))


def coupling_matrices(mg: MicrogridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(Cbar, C): DG <- line and line <- DG static couplings.

    Block (i, l) of Cbar is -(1/C_ti) [B_il, 0, 0]^T; block (l, i) of C is
    [B_il, 0, 0].  They satisfy C = -Cbar^T C_t exactly, with
    C_t = diag(C_ti I_3).
    """
    N, L = mg.n_dgs, mg.n_lines
    B = mg.B
    Cbar = np.zeros((3 * N, L))
    C = np.zeros((L, 3 * N))
    for i in range(N):
        for l in range(L):
            if B[i, l] != 0.0:
                Cbar[3 * i, l] = -B[i, l] / mg.dgs[i].C_t
                C[l, 3 * i] = B[i, l]
    return Cbar, C


def disturbance_blocks(mg: MicrogridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(E_c, Ebar_c) mapping the stacked disturbance w_c = [w_dg; w_line]."""
    N, L = mg.n_dgs, mg.n_lines
    E = np.zeros((3 * N, 3 * N))
    for i, dg in enumerate(mg.dgs):
        E[3 * i: 3 * i + 3, 3 * i: 3 * i + 3] = dg_state_matrices(dg)[2]
    Ebar = np.diag([1.0 / l.L_l for l in mg.lines]) if L else np.zeros((0, 0))
    E_c = np.hstack([E, np.zeros((3 * N, L))])
    Ebar_c = np.hstack([np.zeros((L, 3 * N)), Ebar])
    return E_c, Ebar_c


def performance_blocks(mg: MicrogridSpec) -> tuple[np.ndarray, np.ndarray]:
    """(H_c, Hbar_c): identity-on-own-states performance outputs."""
    N, L = mg.n_dgs, mg.n_lines
    H_c = np.vstack([np.eye(3 * N), np.zeros((L, 3 * N))])
    Hbar_c = np.vstack([np.zeros((3 * N, L)), np.eye(L)])
    return H_c, Hbar_c


@dataclass(frozen=True)
class InterconnectionMatrix:
    K: np.ndarray        # 3N x 3N distributed-gain block matrix
    C_bar: np.ndarray    # 3N x L
    C: np.ndarray        # L x 3N
    E_c: np.ndarray      # 3N x (3N+L)
    E_bar_c: np.ndarray  # L x (3N+L)
    H_c: np.ndarray      # (3N+L) x 3N
    H_bar_c: np.ndarray  # (3N+L) x L

    @property
    def n_dgs(self) -> int:
        return self.K.shape[0] // 3

    @property
    def n_lines(self) -> int:
        return self.C.shape[0]

    def full(self) -> np.ndarray:
        """The complete (3N+L+3N+L)-square interconnection matrix."""
        zero_ll = np.zeros((self.n_lines, self.n_lines))
        zero_zw = np.zeros((self.H_c.shape[0], self.E_c.shape[1]))
        return np.block([
            [self.K, self.C_bar, self.E_c],
            [self.C, zero_ll, self.E_bar_c],
            [self.H_c, self.H_bar_c, zero_zw],
        ])


def check_gain_structure(mg: MicrogridSpec, K: np.ndarray, tol: float = 1e-8):
    """Validate the distributed-gain block structure and Laplacian row condition.

    Raises ValueError naming the first offending block.  In each 3x3 block
    only the (2,2) entry may be nonzero, and the matrix K_I of those entries
    must satisfy K_I diag(I_n) 1 = 0.
    """
    N = mg.n_dgs
    if K.shape != (3 * N, 3 * N):
        raise ValueError(f"K must be {3 * N}x{3 * N}, got {K.shape}")
    scale = max(1.0, float(np.abs(K).max()))
    for i in range(N):
        for j in range(N):
            blk = K[3 * i: 3 * i + 3, 3 * j: 3 * j + 3]
            masked = blk.copy()
            masked[1, 1] = 0.0
            if np.abs(masked).max() > tol * scale:
                raise ValueError(f"gain block ({i}, {j}) has entries outside (2,2)")
    K_I = extract_consensus_entries(K)
    resid = np.abs(K_I @ np.diag(mg.I_n) @ np.ones(N)).max()
    if resid > tol * max(1.0, scale):
        raise ValueError(f"Laplacian row condition violated (residual {resid:.3e})")
    return K_I


def extract_consensus_entries(K: np.ndarray) -> np.ndarray:
    N = K.shape[0] // 3
    return np.array([[K[3 * i + 1, 3 * j + 1] for j in range(N)] for i in range(N)])


def assemble_interconnection(mg: MicrogridSpec, K: np.ndarray | None = None,
                             tol: float = 1e-8) -> InterconnectionMatrix:
    """Assemble all interconnection blocks for a (possibly zero) gain matrix."""
    N = mg.n_dgs
    if K is None:
        K = np.zeros((3 * N, 3 * N))
    check_gain_structure(mg, K, tol=tol)
    Cbar, C = coupling_matrices(mg)
    E_c, Ebar_c = disturbance_blocks(mg)
    H_c, Hbar_c = performance_blocks(mg)
    return InterconnectionMatrix(K, Cbar, C, E_c, Ebar_c, H_c, Hbar_c)
