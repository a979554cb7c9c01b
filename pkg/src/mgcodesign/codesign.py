"""Controller and communication-topology co-design pipeline.

Two LMI stages: a one-shot local design that fixes per-DG feedback gains
and all subsystem passivity indices while honoring the necessary
conditions for the network stage, and a global stage that synthesizes the
sparse distributed-gain block matrix plus the communication graph under a
finite-L2-gain certificate, with hard or soft graph constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dissipativity import (PassivityCertificate, SupplyRate,
                            build_network_yeid_synthesis)
from .grid import (MicrogridSpec, assemble_interconnection, dg_state_matrices,
                   extract_consensus_entries)
from .lmi import (LmiProblem, SolveOptions, atom, bmat, const, hermitian,
                  rect_var, scalar_var, scaled, solve, sym_var)

I3 = np.eye(3)
ONE = np.eye(1)


@dataclass(frozen=True)
class DesignParams:
    """Tunables of both design stages.

    With ``p``/``p_bar`` left unset, the multipliers track the capacitive
    coupling scale (p_i = multiplier_scale * C_ti, p_bar_l =
    multiplier_scale), which centers the pairwise necessary conditions for
    heterogeneous components.  Raising gamma_bar or multiplier_scale is the
    first remedy for an infeasible local stage.
    """

    p: float | np.ndarray | None = None     # DG multipliers (None: auto)
    p_bar: float | np.ndarray | None = None  # line multipliers (None: auto)
    multiplier_scale: float = 2e6
    gamma_bar: float = 1e13                 # cap on gamma^2
    c_link: np.ndarray | None = None        # N x N link costs (soft mode)
    c1: float = 1e-3                        # L2-gain cost weight
    alpha_slack: float = 1e2                # slack penalty
    eta_slack: float = 1e-4                 # slack trace cap
    graph_mode: str = "soft"                # "hard" | "soft"
    eps_margin: float = 1e-6                # PD margin for strict LMIs
    eps_topology: float = 1e-6              # relative gain threshold for links
    eps_nu: float = 1e-7                    # line input-index nudge magnitude
    pole_bound: float = 2500.0              # closed-loop pole cap (rad/s)
    decay_min: float | None = None          # optional closed-loop decay floor
    joint_margin: float = 0.85              # safety factor in the joint index cap
    stiffness_target: float = 0.03          # quasi-static output impedance (ohm)
    enforce_necessary: bool = True          # re-impose the 6x6 conditions globally
    reweight_passes: int = 0                # optional reweighted-L1 refinement
    slack_structure: str = "diag"           # "diag" | "full"
    feas_tol: float = 5e-6
    max_iter: int = 500

    def p_vec(self, mg: MicrogridSpec) -> np.ndarray:
        if self.p is None:
            return self.multiplier_scale * mg.vec("C_t")
        return np.broadcast_to(np.asarray(self.p, dtype=float), (mg.n_dgs,)).copy()

    def pbar_vec(self, mg: MicrogridSpec) -> np.ndarray:
        if self.p_bar is None:
            return np.full(mg.n_lines, self.multiplier_scale)
        return np.broadcast_to(np.asarray(self.p_bar, dtype=float),
                               (mg.n_lines,)).copy()

    @property
    def coupled_margin(self) -> float:
        """PD margin for the per-pair condition blocks.

        Larger than the generic margin so that backend accuracy (relative
        to block scale) cannot erase the strictness of these conditions.
        """
        return max(self.eps_margin, 1e-4)

    def __post_init__(self):
        if self.graph_mode not in ("hard", "soft"):
            raise ValueError("graph_mode must be 'hard' or 'soft'")
        if self.gamma_bar <= 0 or self.eta_slack < 0:
            raise ValueError("gamma_bar must be positive, eta_slack nonnegative")
        if self.eps_nu <= 0:
            raise ValueError("eps_nu must be positive")
        for v in (self.p, self.p_bar):
            if v is not None and np.any(np.asarray(v) <= 0):
                raise ValueError("multipliers p, p_bar must be positive")


@dataclass(frozen=True)
class LocalDesign:
    K0: list[np.ndarray]          # per-DG 1x3 state-feedback gains
    P: list[np.ndarray]           # per-DG 3x3 storage matrices
    nu: np.ndarray                # per-DG input-feedforward indices (< 0)
    rho_tilde: np.ndarray         # per-DG inverse output indices (> 0)
    gamma_tilde: np.ndarray       # per-DG L2 budget estimates
    P_bar: np.ndarray             # per-line storage scalars
    nu_bar: np.ndarray            # per-line input indices (< 0)
    rho_bar: np.ndarray           # per-line output indices (> 0)
    xi: dict = field(default_factory=dict)   # (i, l) -> bilinear surrogate
    s1: float = 0.0
    s2: float = 0.0
    p: np.ndarray | None = None
    p_bar_used: np.ndarray | None = None

    @property
    def rho(self) -> np.ndarray:
        return 1.0 / self.rho_tilde

    def dg_certificate(self, i: int) -> PassivityCertificate:
        return PassivityCertificate(float(self.nu[i]), float(self.rho[i]),
                                    self.P[i], gain=self.K0[i])

    def line_certificate(self, l: int) -> PassivityCertificate:
        return PassivityCertificate(float(self.nu_bar[l]), float(self.rho_bar[l]),
                                    np.array([[self.P_bar[l]]]))

    def dg_supplies(self) -> list[SupplyRate]:
        return [SupplyRate.ifofp(float(n), float(r), 3)
                for n, r in zip(self.nu, self.rho)]

    def line_supplies(self) -> list[SupplyRate]:
        return [SupplyRate.ifofp(float(n), float(r), 1)
                for n, r in zip(self.nu_bar, self.rho_bar)]


def _pairs(mg: MicrogridSpec):
    """(i, l) incidence pairs: every line with each of its endpoint DGs."""
    out = []
    for l, (a, b) in enumerate(mg.topology.lines):
        out.append((a, l))
        out.append((b, l))
    return out


def _transformed_condition_block(p, pbar, Ct, Bil, nu_e, nub_e, rt_e, rhob_e,
                                 gt_e, xi_e):
    """Per-(i,l) 6x6 block of the local stage, in decision-variable form.

    The bilinear entries carry the surrogate xi in place of nu_bar*rho~; a
    companion 3x3 constraint couples the three quantities.
    """
    Cb = -Bil / Ct
    Cc = Bil
    Z = {}
    Z[0, 0] = -p * nu_e;        Z[0, 4] = (-p * Cb) * nu_e;    Z[0, 5] = -p * nu_e
    Z[1, 1] = -pbar * nub_e;    Z[1, 3] = (-pbar * Cc) * xi_e; Z[1, 5] = -pbar * nub_e
    Z[2, 2] = const(ONE);       Z[2, 3] = rt_e;                Z[2, 4] = const(ONE)
    Z[3, 3] = p * rt_e;         Z[3, 4] = (-0.5 * p * Cb - 0.5 * Cc * pbar) * rt_e
    Z[3, 5] = (-0.5 * p) * rt_e
    Z[4, 4] = pbar * rhob_e;    Z[4, 5] = const(-0.5 * pbar * ONE)
    Z[5, 5] = gt_e
    G = [[0] * 6 for _ in range(6)]
    for i in range(6):
        for j in range(6):
            if (i, j) in Z:
                G[i][j] = Z[i, j]
            elif (j, i) in Z and i > j:
                G[i][j] = Z[j, i].T
    return bmat(G)


def nudged_line_indices(R_l: float, L_l: float, eps_nu: float):
    """Line indices at the strictly-non-passive nudge point.

    The extremal input index 0 is inadmissible for the network synthesis
    assumptions, so the lines are certified at nu_bar = -eps_nu while
    keeping the extremal output pair (rho_bar = R_l, P_bar = L_l / 2); the
    2x2 line LMI then holds with a strict dissipation margin of
    eps_nu |u|^2 along trajectories.
    """
    return -eps_nu, R_l, L_l / 2.0


def design_local(mg: MicrogridSpec, params: DesignParams | None = None) -> LocalDesign:
    """One-shot local controller synthesis with embedded necessary conditions.

    Line indices are pinned at their nudged closed-form extremals, which
    makes every bilinear surrogate xi_il = nu_bar_l * rho~_i an exact
    constant; the transformed per-pair condition blocks then coincide with
    the congruence-transformed necessary-condition matrices.  One LMI over
    all DG gains, storages and indices; the objective minimizes the input
    shortages (they gate the network stage) with the summed L2 budgets as
    a tie-break.  A gain-conditioning pass then fixes the quasi-static
    output impedance without touching the certified indices.
    """
    params = params or DesignParams()
    N, L = mg.n_dgs, mg.n_lines
    p = params.p_vec(mg)
    pbar = params.pbar_vec(mg)
    eps = params.eps_margin

    # the local stage only ever needs modest budgets (its per-pair blocks
    # lack the disturbance-channel scalings of the network stage), so cap
    # its gamma~ variables tightly to keep them well scaled
    local_cap = min(params.gamma_bar, 1e7)

    nub_vals = np.zeros(L)
    rhob_vals = np.zeros(L)
    Pb_vals = np.zeros(L)
    for l, line in enumerate(mg.lines):
        nub_vals[l], rhob_vals[l], Pb_vals[l] = nudged_line_indices(
            line.R_l, line.L_l, params.eps_nu)

    # joint network condition: the V-coordinate row of the network LMI
    # couples each DG to all its incident lines and its disturbance column,
    # capping the input shortage per unit of line dissipation.  The output
    # index is pinned (by substitution) at an interior point of the
    # admissible window so the solve stays non-degenerate; the cap itself is
    # kept as a slack safeguard row.
    rho_pin = np.full(N, np.nan)
    caps = np.full(N, np.nan)
    for i in range(N):
        incident = mg.topology.neighbors(i)
        if not incident:
            # isolated DG: no joint cap; pin the output index near its
            # cheap low end so downstream budgets stay bounded
            rho_pin[i] = 2.0 * 1.05 / p[i]
            continue
        denom = sum(1.0 / (pbar[l] * rhob_vals[l]) for l in incident)
        caps[i] = params.joint_margin * mg.dgs[i].C_t ** 2 / (p[i] * denom)
        # input-shortage floor grows roughly as 0.55 C_t + 0.9 rho; back out
        # the admissible output-index window and pin its geometric midpoint
        hi = (caps[i] - 0.62 * mg.dgs[i].C_t) / 0.95
        lo = 1.05 / p[i]
        if hi <= 1.05 * lo:
            raise ValueError(
                f"DG {i}: no admissible output-index window (degree "
                f"{len(incident)}, shortage cap {caps[i]:.3e}); raise "
                "multiplier_scale, line resistance or joint_margin")
        # bias low: the shortage floor grows with rho, and small rho costs
        # only L2 budget (gamma~ ~ p / 4 rho), which is cheap
        rho_pin[i] = float(np.sqrt(lo * min(hi, 5.0 * lo)))

    prob = LmiProblem("local-design")
    P = [sym_var(f"P{i}", 3) for i in range(N)]
    Kt = [rect_var(f"Kt{i}", 1, 3) for i in range(N)]
    nu = [scalar_var(f"nu{i}", upper=-1e-12) for i in range(N)]
    rt = {i: scalar_var(f"rt{i}", lower=1e-12)
          for i in range(N) if np.isnan(rho_pin[i])}
    gt = [scalar_var(f"gt{i}", lower=1e-9, upper=local_cap)
          for i in range(N)]
    pairs = _pairs(mg)
    s1 = scalar_var("s1") if pairs else None
    s2 = scalar_var("s2") if pairs else None

    def rt_expr(i):
        if i in rt:
            return atom(rt[i])
        return const(ONE / rho_pin[i])


    for i in range(N):
        A, B, _ = dg_state_matrices(mg.dgs[i])
        prob.add_pd(atom(P[i]), margin=1e-9, name=f"P{i}")
        APBK = const(A) @ atom(P[i]) + const(B) @ atom(Kt[i])
        blk = bmat([
            [scaled(rt_expr(i), I3), atom(P[i]), np.zeros((3, 3))],
            [atom(P[i]), -hermitian(APBK), const(-I3) + 0.5 * atom(P[i])],
            [np.zeros((3, 3)), const(-I3) + 0.5 * atom(P[i]),
             scaled(-atom(nu[i]), I3)],
        ])
        prob.add_pd(blk, margin=eps, name=f"dg_block{i}")
        if params.pole_bound is not None:
            prob.add_psd(hermitian(APBK) + 2.0 * params.pole_bound * atom(P[i]),
                         name=f"pole_cap{i}")
        if params.decay_min is not None and params.decay_min > 0:
            prob.add_psd(-hermitian(APBK) - 2.0 * params.decay_min * atom(P[i]),
                         name=f"decay_floor{i}")
        if not np.isnan(caps[i]):
            prob.add_psd((1.0 / caps[i]) * atom(nu[i]) + const(ONE),
                         name=f"joint_cap{i}")

    xi_vals = {}
    for (i, l) in pairs:
        xi_vals[(i, l)] = nub_vals[l] / rho_pin[i]  # nu_bar * rho~, both pinned
        prob.add_psd(bmat([
            [const(ONE), const(nub_vals[l] * ONE), rt_expr(i)],
            [const(nub_vals[l] * ONE), atom(s1), const(xi_vals[(i, l)] * ONE)],
            [rt_expr(i), const(xi_vals[(i, l)] * ONE), atom(s2)],
        ]), name=f"schur_{i}_{l}")
        blk = _transformed_condition_block(
            p[i], pbar[l], mg.dgs[i].C_t, mg.B[i, l],
            atom(nu[i]), const(nub_vals[l] * ONE), rt_expr(i),
            const(rhob_vals[l] * ONE), atom(gt[i]),
            const(xi_vals[(i, l)] * ONE))
        prob.add_pd(blk, margin=params.coupled_margin, name=f"pair_{i}_{l}")

    # primary objective: smallest input shortages (these gate the network
    # stage and land the gains on the stiff, well-conditioned corner);
    # summed budgets act as the tie-break
    obj = [(nu[i], -1.0 / mg.dgs[i].C_t) for i in range(N)]
    obj += [(g, 0.01 / local_cap) for g in gt]
    prob.minimize(obj)
    sol = solve(prob, SolveOptions(feas_tol=params.feas_tol,
                                   max_iter=params.max_iter))
    if sol.status == "infeasible":
        raise ValueError(
            "local design infeasible for the given multipliers; try a larger "
            f"gamma_bar (now {params.gamma_bar:g}) or different p, p_bar "
            f"(now p[0]={p[0]:g}, p_bar[0]={pbar[0] if L else float('nan'):g})")
    if not sol.ok:
        raise RuntimeError(f"local design solve failed: {sol.status} ({sol.note})")

    nu_vals = np.array([sol.value(v) for v in nu])
    rho_tilde = np.array([sol.value(rt[i]) if i in rt else 1.0 / rho_pin[i]
                          for i in range(N)])
    K0 = []
    P_vals = []
    for i in range(N):
        Ki, Pi = _polish_gain(mg.dgs[i], float(nu_vals[i]),
                              float(rho_tilde[i]), params)
        if Ki is None:
            Pi = sol.value(P[i])
            Ki = sol.value(Kt[i]) @ np.linalg.inv(Pi)
        K0.append(Ki)
        # the synthesis variable is the inverse of the storage matrix
        # (V = x~' P^-1 x~ certifies the property), so store its inverse
        Pinv = np.linalg.inv(Pi)
        P_vals.append(0.5 * (Pinv + Pinv.T))
    return LocalDesign(
        K0=K0,
        P=P_vals,
        nu=nu_vals,
        rho_tilde=rho_tilde,
        gamma_tilde=np.array([sol.value(v) for v in gt]),
        P_bar=Pb_vals,
        nu_bar=nub_vals,
        rho_bar=rhob_vals,
        xi=xi_vals,
        s1=sol.value(s1) if pairs else 0.0,
        s2=sol.value(s2) if pairs else 0.0,
        p=p, p_bar_used=pbar)


def _polish_gain(dg, nu_i: float, rho_tilde_i: float, params: DesignParams):
    """Condition one DG's gain at fixed certified indices.

    Two passes: first re-solve (K~, P) maximizing the current-feedback
    entry (a stiffness proxy) to obtain a well-centered storage matrix,
    then fix that P (making the gain row affine) and steer the effective
    output impedance (R_t - k2)/(1 - k1) to the stiffness target.
    """
    A, B, _ = dg_state_matrices(dg)

    P = sym_var("P_pol", 3)
    Kt = rect_var("Kt_pol", 1, 3)
    prob = LmiProblem("gain-polish-a")
    prob.add_pd(atom(P), margin=1e-9)
    APBK = const(A) @ atom(P) + const(B) @ atom(Kt)
    blk = bmat([
        [const(rho_tilde_i * I3), atom(P), np.zeros((3, 3))],
        [atom(P), -hermitian(APBK), const(-I3) + 0.5 * atom(P)],
        [np.zeros((3, 3)), const(-I3) + 0.5 * atom(P), const(-nu_i * I3)],
    ])
    prob.add_pd(blk, margin=params.eps_margin)
    if params.pole_bound is not None:
        prob.add_psd(hermitian(APBK) + 2.0 * params.pole_bound * atom(P),
                     name="pole_cap")
    prob.minimize([(Kt, np.array([[0.0, -1.0, 0.0]]))])
    sol = solve(prob, SolveOptions(feas_tol=params.feas_tol,
                                   max_iter=params.max_iter))
    if not sol.ok:
        return None, None
    Pv = sol.value(P)

    # pass B: P fixed, gain row affine; soft-target the output impedance
    K0v = rect_var("K0_pol", 1, 3)
    t = scalar_var("t_stiff", lower=0.0)
    prob2 = LmiProblem("gain-polish-b")
    KtP = atom(K0v) @ Pv
    APBK2 = const(A @ Pv) + const(B) @ KtP
    blk2 = bmat([
        [const(rho_tilde_i * I3), const(Pv), np.zeros((3, 3))],
        [const(Pv), -hermitian(APBK2), const(-I3 + 0.5 * Pv)],
        [np.zeros((3, 3)), const(-I3 + 0.5 * Pv), const(-nu_i * I3)],
    ])
    prob2.add_pd(blk2, margin=0.5 * params.eps_margin)
    if params.pole_bound is not None:
        prob2.add_psd(hermitian(APBK2) + 2.0 * params.pole_bound * const(Pv))
    sel1 = np.zeros((3, 1)); sel1[0, 0] = 1.0
    sel2 = np.zeros((3, 1)); sel2[1, 0] = 1.0
    sel3 = np.zeros((3, 1)); sel3[2, 0] = 1.0
    k1 = atom(K0v) @ sel1
    k2 = atom(K0v) @ sel2
    k3 = atom(K0v) @ sel3
    # (R_t - k2) - sigma (k1 - 1) == 0 up to the minimized residual t
    sig = params.stiffness_target
    resid = const(dg.R_t * ONE) - k2 - sig * k1 + const(sig * ONE)
    prob2.add_psd(atom(t) - resid)
    prob2.add_psd(atom(t) + resid)
    # keep a small negative integral trim so the tracking state stays bound
    prob2.add_psd(-1e-3 * ONE - k3)
    prob2.minimize([(t, 1.0)])
    sol2 = solve(prob2, SolveOptions(feas_tol=params.feas_tol,
                                     max_iter=params.max_iter))
    if not sol2.ok:
        return sol.value(Kt) @ np.linalg.inv(Pv), Pv
    return sol2.value(K0v), Pv


def necessary_condition_matrix(p_i, pbar_l, C_ti, B_il, nu_i, nub_l, rho_i,
                               rhob_l, gamma_t) -> np.ndarray:
    """The per-(i,l) 6x6 necessary-condition matrix in closed form."""
    Cb = -B_il / C_ti
    Cc = B_il
    return np.array([
        [-p_i * nu_i, 0, 0, 0, -p_i * nu_i * Cb, -p_i * nu_i],
        [0, -pbar_l * nub_l, 0, -pbar_l * nub_l * Cc, 0, -pbar_l * nub_l],
        [0, 0, 1.0, 1.0, 1.0, 0],
        [0, -Cc * nub_l * pbar_l, 1.0, p_i * rho_i,
         -0.5 * p_i * Cb - 0.5 * Cc * pbar_l, -0.5 * p_i],
        [-Cb * nu_i * p_i, 0, 1.0, -0.5 * Cb * p_i - 0.5 * pbar_l * Cc,
         pbar_l * rhob_l, -0.5 * pbar_l],
        [-nu_i * p_i, -pbar_l * nub_l, 0, -0.5 * p_i, -0.5 * pbar_l, gamma_t],
    ])


def necessary_condition_matrices(mg: MicrogridSpec, nu, rho, nu_bar, rho_bar,
                                 p, p_bar, gamma_tilde):
    """Assemble and test every per-(i,l) necessary-condition matrix.

    ``gamma_tilde`` may be a scalar (network-level budget) or per-DG array.
    Returns {(i, l): (matrix, is_pd)}.
    """
    gt = np.broadcast_to(np.asarray(gamma_tilde, dtype=float), (mg.n_dgs,))
    out = {}
    for (i, l) in _pairs(mg):
        M = necessary_condition_matrix(
            p[i], p_bar[l], mg.dgs[i].C_t, mg.B[i, l],
            nu[i], nu_bar[l], rho[i], rho_bar[l], gt[i])
        lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
        out[(i, l)] = (M, lam > 0.0)
    return out


def scalar_necessary_conditions(nu, rho, nu_bar, rho_bar, p, p_bar,
                                gamma_tilde, C_t, pairs):
    """Direct evaluation of the scalar necessary-condition list (strict).

    Cross-check oracle mirroring the closed-form inequality set; returns a
    dict of named verdict arrays.
    """
    nu = np.asarray(nu, float); rho = np.asarray(rho, float)
    nu_bar = np.asarray(nu_bar, float); rho_bar = np.asarray(rho_bar, float)
    p = np.asarray(p, float); p_bar = np.asarray(p_bar, float)
    gt = np.broadcast_to(np.asarray(gamma_tilde, dtype=float), nu.shape)
    C_t = np.asarray(C_t, float)
    res = {
        "nu_window": (-gt / p < nu) & (nu < 0),
        "rho_floor": rho > 1.0 / p,
        "rho_gamma": rho > p / (4.0 * gt),
    }
    d, e, f = [], [], []
    for (i, l) in pairs:
        d.append(rho_bar[l] > -p[i] * nu[i] / (p_bar[l] * C_t[i] ** 2))
        e.append(rho_bar[l] > (p[i] / (2 * C_t[i]) - p_bar[l] / 2.0) ** 2
                 / (p[i] * p_bar[l] * rho[i]))
        f.append((-p[i] * rho[i] / p_bar[l] < nu_bar[l]) & (nu_bar[l] < 0))
    res["line_coupling_nu"] = np.array(d)
    res["line_coupling_rho"] = np.array(e)
    res["nu_bar_window"] = np.array(f)
    return res


def linearized_nu_bar_bound(p_i: float, pbar_l: float, rho_t_min: float,
                            rho_t_max: float) -> tuple[float, float]:
    """Chord (m, c) linearizing the hyperbolic line-index bound.

    The exact condition nu_bar > -p / (pbar rho~) is nonlinear in rho~;
    since -p / (pbar rho~) is concave on [rho_t_min, rho_t_max], its chord
    lies below it there, so nu_bar > m rho~ + c is a (weaker) linear
    necessary condition.
    """
    if not (0 < rho_t_min < rho_t_max):
        raise ValueError("need 0 < rho_t_min < rho_t_max")
    y_min = -p_i / (pbar_l * rho_t_min)
    y_max = -p_i / (pbar_l * rho_t_max)
    m = (y_max - y_min) / (rho_t_max - rho_t_min)
    c = y_max - m * rho_t_max
    return m, c


@dataclass(frozen=True)
class CodesignResult:
    K: np.ndarray                  # 3N x 3N block gain matrix
    Q: np.ndarray                  # solver-space variable
    comm_links: list[tuple[int, int]]   # directed links (j -> i)
    link_gains: np.ndarray         # N x N consensus gains k_ij (zero diagonal)
    gamma: float                   # achieved L2 bound sqrt(gamma~)
    gamma_tilde: float
    p: np.ndarray
    p_bar: np.ndarray
    slack_trace: float
    objective: float
    approximate_dissipativity: bool
    graph_mode: str
    diagnostics: dict = field(default_factory=dict)


def default_link_costs(mg: MicrogridSpec, mode: str, c0: float = 1.0) -> np.ndarray:
    """Link costs: zero in hard mode; distance-weighted c0 (1 + d/d_max) in soft."""
    N = mg.n_dgs
    c = np.zeros((N, N))
    if mode == "hard":
        return c
    d = mg.topology.distances
    if d is None or d.max() == 0:
        c[:] = c0
    else:
        c = c0 * (1.0 + d / d.max())
    np.fill_diagonal(c, 0.0)
    return c


def _allowed_pairs(mg: MicrogridSpec, mode: str) -> set[tuple[int, int]]:
    N = mg.n_dgs
    allowed = {(i, i) for i in range(N)}
    if mode == "soft":
        allowed |= {(i, j) for i in range(N) for j in range(N) if i != j}
    else:
        for (a, b) in mg.topology.adjacency_pairs():
            allowed.add((a, b))
            allowed.add((b, a))
    return allowed


def design_global(mg: MicrogridSpec, local: LocalDesign,
                  params: DesignParams | None = None) -> CodesignResult:
    """Distributed-gain and communication-topology co-design.

    Minimizes sparsity-weighted link gains plus the L2 budget and slack
    penalty subject to the network dissipativity LMI, the weighted-Laplacian
    row condition and (optionally) the per-pair necessary conditions.
    Optional reweighted-L1 refinement re-solves with costs inversely
    proportional to the previous link gains.
    """
    params = params or DesignParams()
    N = mg.n_dgs
    c = params.c_link
    if c is None:
        c = default_link_costs(mg, params.graph_mode)
    else:
        c = np.asarray(c, dtype=float)
        if c.shape != (N, N) or np.any(c < 0) or np.any(np.diag(c) != 0):
            raise ValueError("c_link must be N x N, nonnegative, zero diagonal")
    result = _design_global_once(mg, local, params, c)
    for _ in range(params.reweight_passes):
        g = np.abs(result.link_gains)
        scale = max(g.max(), 1e-12)
        c = c / (g / scale + 1e-3)
        np.fill_diagonal(c, 0.0)
        result = _design_global_once(mg, local, params, c)
    return result


def _design_global_once(mg: MicrogridSpec, local: LocalDesign,
                        params: DesignParams, c: np.ndarray) -> CodesignResult:
    N, L = mg.n_dgs, mg.n_lines
    nu, rho = local.nu, local.rho
    nub, rhob = local.nu_bar, local.rho_bar
    if np.any(nu >= 0) or (L and np.any(nub >= 0)):
        raise ValueError("global design needs strictly negative input indices; "
                         "nudge any zero line index first")
    I_n = mg.I_n
    L_t = mg.vec("L_t")
    eps = params.eps_margin

    allowed = _allowed_pairs(mg, params.graph_mode)
    mask = np.zeros((3 * N, 3 * N), dtype=bool)
    for (i, j) in allowed:
        mask[3 * i + 1, 3 * j + 1] = True

    prob = LmiProblem("global-codesign")
    Q = rect_var("Q", 3 * N, 3 * N, mask=mask)
    # multipliers and the gain budget are solved in units of the local-stage
    # values, keeping every decision variable near unity for the backend
    unit_p = local.p if local.p is not None else params.p_vec(mg)
    unit_pb = local.p_bar_used if local.p_bar_used is not None else params.pbar_vec(mg)
    p_vars = [scalar_var(f"p{i}", lower=1e-6, upper=1e6) for i in range(N)]
    pb_vars = [scalar_var(f"pb{l}", lower=1e-6, upper=1e6) for l in range(L)]
    gt_hat = scalar_var("gamma_hat", lower=1e-12, upper=1.0)
    p_exprs = [float(unit_p[i]) * atom(p_vars[i]) for i in range(N)]
    pb_exprs = [float(unit_pb[l]) * atom(pb_vars[l]) for l in range(L)]
    gt_expr = params.gamma_bar * atom(gt_hat)

    blocks = assemble_interconnection(mg)
    W = build_network_yeid_synthesis(blocks, nu, rho, nub, rhob,
                                     atom(Q), p_exprs, pb_exprs, gt_expr,
                                     reduced=True)
    dim = W.shape[0]

    if params.slack_structure == "full":
        S = sym_var("s_W", dim)
        S_expr = atom(S)
        trace_terms = [(S, np.eye(dim) * params.alpha_slack)]
    elif params.slack_structure == "diag":
        s_diag = [scalar_var(f"s{k}", lower=0.0) for k in range(dim)]
        S_expr = const(np.zeros((dim, dim)))
        for k, sv in enumerate(s_diag):
            E = np.zeros((dim, dim)); E[k, k] = 1.0
            S_expr = S_expr + scaled(atom(sv), E)
        trace_terms = [(sv, params.alpha_slack) for sv in s_diag]
    else:
        raise ValueError("slack_structure must be 'diag' or 'full'")

    prob.add_pd(W + S_expr, margin=eps, name="W_plus_slack")
    if params.slack_structure == "full":
        prob.add_psd(S_expr, name="slack_psd")
    tr = const(np.full((1, 1), -params.eta_slack))
    if params.slack_structure == "full":
        for k in range(dim):
            E = np.zeros((1, dim)); E[0, k] = 1.0
            tr = tr + E @ atom(S) @ E.T
    else:
        for sv in s_diag:
            tr = tr + atom(sv)
    prob.add_psd(-tr, name="slack_trace_cap")

    # weighted-Laplacian row condition on the consensus entries of Q
    for i in range(N):
        row = const(np.zeros((1, 1)))
        sel_i = np.zeros((1, 3 * N)); sel_i[0, 3 * i + 1] = 1.0
        for j in range(N):
            if (i, j) in allowed:
                sel_j = np.zeros((3 * N, 1)); sel_j[3 * j + 1, 0] = 1.0
                row = row + I_n[j] * (sel_i @ atom(Q) @ sel_j)
        prob.add_eq(row, name=f"laplacian_row{i}")

    if params.enforce_necessary:
        for (i, l) in _pairs(mg):
            blk = _fixed_index_condition_block(mg, i, l, nu, nub, rho, rhob,
                                               p_exprs, pb_exprs, gt_expr)
            prob.add_pd(blk, margin=params.coupled_margin, name=f"necc_{i}_{l}")

    # the gain cost applies to the normalized budget gamma~/gamma_bar so
    # its weight keeps the same meaning when the cap is recalibrated
    obj = [(gt_hat, params.c1)] + trace_terms
    t_vars = {}
    for (i, j) in sorted(allowed):
        if i == j or c[i, j] == 0.0:
            continue
        t = scalar_var(f"t_{i}_{j}", lower=0.0)
        t_vars[(i, j)] = t
        sel_i = np.zeros((1, 3 * N)); sel_i[0, 3 * i + 1] = 1.0
        sel_j = np.zeros((3 * N, 1)); sel_j[3 * j + 1, 0] = 1.0
        q_ij = sel_i @ atom(Q) @ sel_j
        prob.add_psd(atom(t) - q_ij, name=f"abs+_{i}_{j}")
        prob.add_psd(atom(t) + q_ij, name=f"abs-_{i}_{j}")
        obj.append((t, float(c[i, j])))
    prob.minimize(obj)

    sol = solve(prob, SolveOptions(feas_tol=params.feas_tol,
                                   max_iter=params.max_iter))
    if sol.status == "infeasible":
        raise ValueError("global co-design infeasible with the supplied local "
                         "indices; revisit the local stage or raise gamma_bar")
    if not sol.ok:
        raise RuntimeError(f"global co-design failed: {sol.status} ({sol.note})")

    p_val = np.array([unit_p[i] * sol.value(v) for i, v in enumerate(p_vars)])
    pb_val = np.array([unit_pb[l] * sol.value(v) for l, v in enumerate(pb_vars)])
    gt_val = float(params.gamma_bar * sol.value(gt_hat))
    Q_val = sol.value(Q)
    K = np.zeros_like(Q_val)
    for i in range(N):
        K[3 * i: 3 * i + 3, :] = Q_val[3 * i: 3 * i + 3, :] / (-p_val[i] * nu[i])
    if params.slack_structure == "full":
        slack = float(np.trace(sol.value(S)))
    else:
        slack = float(sum(sol.value(sv) for sv in s_diag))

    links, gains = extract_topology(K, I_n, L_t, params.eps_topology)
    return CodesignResult(
        K=K, Q=Q_val, comm_links=links, link_gains=gains,
        gamma=float(np.sqrt(gt_val)), gamma_tilde=gt_val,
        p=p_val, p_bar=pb_val, slack_trace=slack,
        objective=float(sol.objective),
        approximate_dissipativity=slack > 1e-9,
        graph_mode=params.graph_mode,
        diagnostics={"status": sol.status, "iterations": sol.iterations,
                     "worst_psd_violation": sol.worst_psd_violation,
                     "worst_eq_violation": sol.worst_eq_violation,
                     "note": sol.note})


def _fixed_index_condition_block(mg, i, l, nu, nub, rho, rhob,
                                 p_exprs, pb_exprs, gt_expr):
    """Eq.-(40)-shaped block, affine in (p_i, pbar_l, gamma~) at fixed indices."""
    Cb = -mg.B[i, l] / mg.dgs[i].C_t
    Cc = mg.B[i, l]
    pi = p_exprs[i]
    pl = pb_exprs[l]
    Z = {}
    Z[0, 0] = (-nu[i]) * pi;     Z[0, 4] = (-nu[i] * Cb) * pi;  Z[0, 5] = (-nu[i]) * pi
    Z[1, 1] = (-nub[l]) * pl;    Z[1, 3] = (-nub[l] * Cc) * pl; Z[1, 5] = (-nub[l]) * pl
    Z[2, 2] = const(ONE);        Z[2, 3] = const(ONE);          Z[2, 4] = const(ONE)
    Z[3, 3] = rho[i] * pi;       Z[3, 4] = (-0.5 * Cb) * pi + (-0.5 * Cc) * pl
    Z[3, 5] = -0.5 * pi
    Z[4, 4] = rhob[l] * pl;      Z[4, 5] = -0.5 * pl
    Z[5, 5] = gt_expr
    G = [[0] * 6 for _ in range(6)]
    for a in range(6):
        for b in range(6):
            if (a, b) in Z:
                G[a][b] = Z[a, b]
            elif (b, a) in Z and a > b:
                G[a][b] = Z[b, a].T
    return bmat(G)


def extract_topology(K: np.ndarray, I_n: np.ndarray, L_t: np.ndarray,
                     eps_topology: float = 1e-6, tol: float = 1e-6):
    """Recover consensus gains and the communication graph from the gain blocks.

    k_ij = -I_n_j L_t_i K[(i,2),(j,2)] for i != j; a directed link (j -> i)
    is reported where |k_ij| exceeds eps_topology * max |k|.  The diagonal
    blocks must be consistent with the recovered off-diagonal gains.
    """
    N = len(I_n)
    K_I = extract_consensus_entries(K)
    gains = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            if i != j:
                gains[i, j] = -I_n[j] * L_t[i] * K_I[i, j]
    # absolute floor: an all-but-zero gain matrix is an empty graph
    scale = np.abs(gains).max()
    for i in range(N):
        expect = gains[i].sum() / (L_t[i] * I_n[i])
        if abs(K_I[i, i] - expect) > tol * max(1.0, abs(expect)):
            raise ValueError(
                f"malformed gain matrix: diagonal block {i} inconsistent with "
                f"recovered link gains ({K_I[i, i]:.6g} vs {expect:.6g})")
    links = [(j, i) for i in range(N) for j in range(N)
             if i != j and abs(gains[i, j]) > max(eps_topology * scale, 1e-9)]
    return links, gains
