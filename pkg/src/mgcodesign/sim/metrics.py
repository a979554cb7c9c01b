"""Trajectory metrics and trajectory-level dissipativity verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codesign import LocalDesign
from ..equilibrium import SharingSetpoint, compute_equilibrium
from ..grid import MicrogridSpec, coupling_matrices, dg_state_matrices
from .simulate import Trajectory


@dataclass(frozen=True)
class Metrics:
    steady_state_voltage_error: np.ndarray   # per DG, mean |V - ref| over tail (V)
    max_voltage_deviation: float             # max over tail window |V - ref| (V)
    settling_times: dict                     # event time -> settling time (s) or None
    per_unit_spread: float                   # tail-mean max_ij |pu_i - pu_j|
    sharing_ratio: float                     # tail-mean per-unit level
    l2_ratio: float                          # sqrt(int ||z||^2 / int ||w||^2)
    dissipation_violation: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.steady_state_voltage_error < 0):
            raise ValueError("voltage errors are magnitudes")


def settling_time(t: np.ndarray, V: np.ndarray, t_event: float, t_next: float,
                  ref: np.ndarray | float, band: float) -> float | None:
    """Earliest time after t_event from which every DG voltage stays in band."""
    sel = (t >= t_event) & (t <= t_next)
    tt = t[sel]
    ref = np.asarray(ref, dtype=float)
    inside = np.all(np.abs(V[sel] - ref) <= band, axis=1)
    if not inside[-1]:
        return None
    # last sample outside the band determines the settling instant
    outside = np.nonzero(~inside)[0]
    if outside.size == 0:
        return 0.0
    k = outside[-1]
    if k + 1 >= len(tt):
        return None
    return float(tt[k + 1] - t_event)


def compute_metrics(traj: Trajectory, mg: MicrogridSpec,
                    setpoint: SharingSetpoint,
                    event_times: list[float] | None = None,
                    ref: np.ndarray | float | None = None,
                    band_frac: float = 0.01,
                    tail_frac: float = 0.1,
                    l2_window: tuple[float, float] | None = None,
                    dissipation: dict | None = None) -> Metrics:
    """Standard report: regulation errors, settling, sharing, energy ratio.

    Bands are centered on each DG's optimized reference; the band width is
    band_frac of the nominal bus voltage.
    """
    t = traj.t
    if ref is None:
        ref = setpoint.V_r_star
    ref = np.broadcast_to(np.asarray(ref, dtype=float), (mg.n_dgs,))
    band = band_frac * float(mg.V_base)
    t_end = t[-1]
    tail = t >= t_end * (1.0 - tail_frac)

    sse = np.abs(traj.V[tail] - ref[None, :]).mean(axis=0)
    max_dev = float(np.abs(traj.V[tail] - ref[None, :]).max())

    settle = {}
    for k, te in enumerate(event_times or []):
        if te > t_end:
            raise ValueError(f"event window {te} outside trajectory")
        t_next = min([x for x in (event_times or []) if x > te] + [t_end])
        settle[te] = settling_time(t, traj.V, te, t_next, ref, band)

    pu = traj.per_unit(mg.I_n)
    spread = float((pu[tail].max(axis=1) - pu[tail].min(axis=1)).mean())
    ratio = float(pu[tail].mean())

    l2 = _l2_ratio(traj, mg, setpoint, l2_window)
    return Metrics(sse, max_dev, settle, spread, ratio, l2,
                   dissipation_violation=dict(dissipation or {}))


def _l2_ratio(traj: Trajectory, mg: MicrogridSpec, setpoint: SharingSetpoint,
              window: tuple[float, float] | None) -> float:
    """Empirical energy gain from injected disturbances to the error states."""
    t = traj.t
    h = traj.h
    if window is None:
        window = (0.0, float(t[-1]))
    lo, hi = window
    if lo < 0 or hi > t[-1] + 1e-12:
        raise ValueError("window outside trajectory")
    eq = compute_equilibrium(mg, setpoint.V_r_star)
    I_tE = mg.I_n * setpoint.I_s_star
    sel = (t >= lo) & (t <= hi)
    z2 = (np.abs(traj.V[sel] - setpoint.V_r_star[None, :]) ** 2).sum(axis=1)
    z2 += (np.abs(traj.I_t[sel] - I_tE[None, :]) ** 2).sum(axis=1)
    z2 += (np.abs(traj.v[sel]) ** 2).sum(axis=1)
    if mg.n_lines:
        z2 += (np.abs(traj.I_l[sel] - eq.I_barE[None, :]) ** 2).sum(axis=1)
    num = float(np.trapezoid(z2, dx=h))

    ks = np.nonzero(sel)[0]
    ks = ks[ks < traj.w_v.shape[0]]
    w2 = (traj.w_v[ks] ** 2).sum(axis=1) + (traj.w_c[ks] ** 2).sum(axis=1)
    if mg.n_lines:
        w2 += (traj.w_l[ks] ** 2).sum(axis=1)
    den = float(np.sum(w2) * h)
    if den <= 0.0:
        return float("nan")
    return float(np.sqrt(num / den))


def dissipation_check(traj: Trajectory, mg: MicrogridSpec,
                      local: LocalDesign, setpoint: SharingSetpoint,
                      slack_coef: float = 1e-6,
                      rel_tol: float = 1e-3) -> dict:
    """Sampled storage-derivative vs supply-rate check per certified subsystem.

    Central-difference d/dt of x~' P x~ against the quadratic supply at each
    interior sample, allowing slack_coef * |x~|^2 of absolute slack plus a
    relative truncation allowance (line certificates sit exactly on the
    dissipation boundary, where the O(h^2) differentiation error otherwise
    flips signs at random).  Returns violation fractions keyed by subsystem.
    """
    h = traj.h
    if h > 1e-3 + 1e-12:
        raise ValueError("dissipation check needs a fine sampling (h <= 1e-3)")
    N, L = mg.n_dgs, mg.n_lines
    eq = compute_equilibrium(mg, setpoint.V_r_star)
    I_tE = mg.I_n * setpoint.I_s_star

    xt = np.stack([traj.V - setpoint.V_r_star[None, :],
                   traj.I_t - I_tE[None, :],
                   traj.v], axis=2)           # (n+1, N, 3)
    xl = traj.I_l - eq.I_barE[None, :] if L else np.zeros((len(traj.t), 0))

    Cbar, _ = coupling_matrices(mg)
    out = {}
    n_samp = xt.shape[0]
    mid = slice(1, n_samp - 1)

    # distributed + coupling input seen by each DG error subsystem
    Kmat = traj.meta.get("K")
    for i in range(N):
        P = local.P[i]
        nu_i, rho_i = local.nu[i], local.rho[i]
        x_i = xt[:, i, :]
        V_store = np.einsum("kj,jl,kl->k", x_i, P, x_i)
        dV = (V_store[2:] - V_store[:-2]) / (2 * h)

        u_i = np.zeros((n_samp, 3))
        for l in range(L):
            u_i += np.outer(xl[:, l], Cbar[3 * i: 3 * i + 3, l])
        if Kmat is not None:
            for j in range(N):
                blk = Kmat[3 * i: 3 * i + 3, 3 * j: 3 * j + 3]
                u_i += xt[:, j, :] @ blk.T
        steps = min(traj.w_v.shape[0], n_samp)
        _, _, E = dg_state_matrices(mg.dgs[i])
        w_full = np.zeros((n_samp, 3))
        w_full[:steps, 0] = traj.w_v[:steps, i]
        w_full[:steps, 1] = traj.w_c[:steps, i]
        u_i += w_full @ E.T

        u2 = (u_i ** 2).sum(axis=1)
        ux = (u_i * x_i).sum(axis=1)
        x2 = (x_i ** 2).sum(axis=1)
        s = -nu_i * u2 + ux - rho_i * x2
        slack = slack_coef * x2
        # truncation allowance scaled by every term magnitude in play
        mag = np.abs(dV) + (-nu_i) * u2[mid] + np.abs(ux[mid]) + rho_i * x2[mid]
        viol = dV > (s[mid] + slack[mid] + rel_tol * mag + 1e-12)
        out[f"dg{i}"] = float(np.mean(viol)) if viol.size else 0.0

    for l in range(L):
        Pb = float(local.P_bar[l])
        nu_l, rho_l = local.nu_bar[l], local.rho_bar[l]
        x_l = xl[:, l]
        V_store = Pb * x_l ** 2
        dV = (V_store[2:] - V_store[:-2]) / (2 * h)
        u_l = xt[:, :, 0] @ mg.B[:, l]
        steps = min(traj.w_l.shape[0], n_samp)
        u_l = u_l.copy()
        u_l[:steps] += traj.w_l[:steps, l]
        s = -nu_l * u_l ** 2 + u_l * x_l - rho_l * x_l ** 2
        slack = slack_coef * x_l ** 2
        mag = (np.abs(dV) + (-nu_l) * u_l[mid] ** 2 + np.abs(u_l[mid] * x_l[mid])
               + rho_l * x_l[mid] ** 2)
        viol = dV > (s[mid] + slack[mid] + rel_tol * mag + 1e-12)
        out[f"line{l}"] = float(np.mean(viol)) if viol.size else 0.0
    return out
