"""Closed-loop time-domain simulation of the microgrid.

States are (V_i, I_ti, v_i) per DG plus each line current.  The control
input stacks the steady-state feedforward, the local state feedback in
error coordinates and the distributed consensus injection, each gated by
its activation flag.  The voltage-tracking integrator runs only while the
local layer is active (no pre-activation windup).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..codesign import LocalDesign
from ..equilibrium import SharingSetpoint, compute_equilibrium
from ..grid import MicrogridSpec
from .kernels import backend_name, get_kernel
from .scenario import Disturbance, Event, Scenario


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray           # (n+1,)
    V: np.ndarray           # (n+1, N)
    I_t: np.ndarray         # (n+1, N)
    v: np.ndarray           # (n+1, N)
    I_l: np.ndarray         # (n+1, L)
    u: np.ndarray           # (n+1, N)
    w_v: np.ndarray         # (n, N) applied per-step disturbances
    w_c: np.ndarray         # (n, N)
    w_l: np.ndarray         # (n, L)
    layer_flags: np.ndarray  # (n+1, 3) steady/local/distributed
    meta: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    def per_unit(self, I_n: np.ndarray) -> np.ndarray:
        return self.I_t / I_n[None, :]


@dataclass(frozen=True)
class DroopController:
    """Primary droop with an average-voltage secondary restoration layer."""

    m: np.ndarray              # droop slopes (V/A)
    secondary_on_at: float = 1.0
    ki_sec: float = 20.0       # 1/s

    def __post_init__(self):
        if np.any(self.m < 0):
            raise ValueError("droop slopes must be nonnegative")


def droop_baseline(mg: MicrogridSpec, m: np.ndarray | float | None = None,
                   secondary_on_at: float = 1.0,
                   ki_sec: float = 20.0) -> DroopController:
    """Default 5% droop: m_i = 0.05 V_r / I_n,i, secondary PI on the average."""
    if m is None:
        m = 0.05 * mg.V_r / mg.I_n
    m = np.broadcast_to(np.asarray(m, dtype=float), (mg.n_dgs,)).copy()
    return DroopController(m, secondary_on_at, ki_sec)


def consensus_injection_matrix(mg: MicrogridSpec, K: np.ndarray) -> np.ndarray:
    """N x N map from raw DG currents to the distributed input (volts).

    u_G,i = L_t,i (K x~)_(i, current-row); the weighted-Laplacian row
    condition makes the injection depend on raw currents only.
    """
    N = mg.n_dgs
    L_t = mg.vec("L_t")
    Kg = np.zeros((N, N))
    for i in range(N):
        for j in range(N):
            Kg[i, j] = L_t[i] * K[3 * i + 1, 3 * j + 1]
    return Kg


def _draw_noise(dist: Disturbance, n_steps: int, N: int, L: int):
    if not dist.enabled:
        return (np.zeros((n_steps, N)), np.zeros((n_steps, N)),
                np.zeros((n_steps, L)))
    rng = np.random.default_rng(dist.seed)
    wv = rng.normal(0.0, np.sqrt(dist.sigma_v2), (n_steps, N))
    wc = rng.normal(0.0, np.sqrt(dist.sigma_c2), (n_steps, N))
    wl = rng.normal(0.0, np.sqrt(dist.sigma_l2), (n_steps, L))
    return wv, wc, wl


def simulate(mg: MicrogridSpec, setpoint: SharingSetpoint | None,
             local: LocalDesign | None, K: np.ndarray | None,
             scenario: Scenario, x0: np.ndarray | None = None,
             droop: DroopController | None = None) -> Trajectory:
    """Integrate the closed loop through a scenario with RK4.

    ``x0`` defaults to the design equilibrium of the initial loads (packed
    [V, I_t, v, I_l]).  Passing ``droop`` replaces the layered controller
    with the droop baseline (layer events then gate only its secondary
    stage).  Deterministic for fixed inputs and the noise seed.
    """
    N, L = mg.n_dgs, mg.n_lines
    h = scenario.h
    n_steps = scenario.n_steps

    if droop is None:
        if setpoint is None or local is None:
            raise ValueError("layered simulation needs a setpoint and local design")
        Vr = setpoint.V_r_star
        uS = setpoint.u_S
        Is = setpoint.I_s_star
        K0 = np.vstack([k.reshape(1, 3) for k in local.K0])
        Kg = consensus_injection_matrix(mg, K) if K is not None else np.zeros((N, N))
        m_droop = np.zeros(N)
        k_sec = 0.0
        mode = 0
    else:
        Vr = mg.V_r
        uS = np.zeros(N)
        Is = 0.0
        K0 = np.zeros((N, 3))
        Kg = np.zeros((N, N))
        m_droop = droop.m
        k_sec = droop.ki_sec
        mode = 1

    if x0 is None:
        eq = compute_equilibrium(mg, Vr)
        x0 = eq.state_vector()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (3 * N + L,):
        raise ValueError(f"x0 must have length {3 * N + L}")

    wv, wc, wl = _draw_noise(scenario.disturbance, n_steps, N, L)

    outV = np.empty((n_steps + 1, N)); outIt = np.empty((n_steps + 1, N))
    outv = np.empty((n_steps + 1, N)); outIl = np.empty((n_steps + 1, L))
    outU = np.empty((n_steps + 1, N))
    flags = np.empty((n_steps + 1, 3))

    V = x0[:N].copy(); It = x0[N:2 * N].copy()
    vi = x0[2 * N:3 * N].copy(); Il = x0[3 * N:].copy()
    outV[0] = V; outIt[0] = It; outv[0] = vi; outIl[0] = Il

    state = {
        "sS": 1.0 if scenario.steady_on else 0.0,
        "sL": 1.0 if scenario.local_on else 0.0,
        "sD": 1.0 if scenario.distributed_on else 0.0,
        "IL": mg.vec("I_L_bar"),
        "YL": mg.vec("Y_L"),
    }
    if droop is not None:
        # droop primary is always on; sL gates only the secondary layer
        state["sS"] = 0.0
        state["sL"] = 1.0 if droop.secondary_on_at <= 0.0 else 0.0
        state["sD"] = 0.0

    events = list(scenario.events)
    if droop is not None and droop.secondary_on_at < scenario.t_end:
        events.append(Event(droop.secondary_on_at, "activate_local"))
        events.sort(key=lambda e: e.t)

    def apply_event(e: Event):
        if e.kind == "activate_steady":
            state["sS"] = 1.0
        elif e.kind == "activate_local":
            state["sL"] = 1.0
        elif e.kind == "activate_distributed":
            state["sD"] = 1.0
        elif e.kind == "set_I_L_bar":
            if e.dg is None:
                state["IL"] = np.full(N, float(e.value))
            else:
                state["IL"] = state["IL"].copy()
                state["IL"][e.dg] = float(e.value)
        elif e.kind == "scale_Y_L":
            if e.dg is None:
                state["YL"] = state["YL"] * float(e.value)
            else:
                state["YL"] = state["YL"].copy()
                state["YL"][e.dg] *= float(e.value)

    # segment boundaries on the step grid
    bounds = sorted({0, n_steps} | {int(round(e.t / h)) for e in events})
    ev_by_idx: dict[int, list[Event]] = {}
    for e in events:
        ev_by_idx.setdefault(int(round(e.t / h)), []).append(e)

    kernel = get_kernel()
    Ct = mg.vec("C_t"); Lt = mg.vec("L_t"); Rt = mg.vec("R_t")
    Rl = mg.line_vec("R_l") if L else np.zeros(0)
    Ll = mg.line_vec("L_l") if L else np.zeros(0)
    Bmat = mg.B
    In = mg.I_n
    Vr_mean = float(np.mean(Vr))

    cursor = 0
    for b0, b1 in zip(bounds[:-1], bounds[1:]):
        for e in ev_by_idx.get(b0, []):
            apply_event(e)
        flags[b0:b1 + 1] = [state["sS"], state["sL"], state["sD"]]
        if b1 == b0:
            continue
        kernel(V, It, vi, Il, h, b1 - b0, b0,
               Ct, Lt, Rt, state["YL"], state["IL"], Bmat, Rl, Ll,
               uS, Vr, In, float(Is), K0, Kg, m_droop, k_sec, Vr_mean,
               state["sS"], state["sL"], state["sD"], mode,
               wv[b0:b1], wc[b0:b1], wl[b0:b1],
               outV, outIt, outv, outIl, outU)
        cursor = b1
    for e in ev_by_idx.get(n_steps, []):
        apply_event(e)

    if not np.all(np.isfinite(outV)) or not np.all(np.isfinite(outIt)):
        bad = np.argwhere(~np.isfinite(outV))
        t_bad = bad[0, 0] * h if bad.size else float("nan")
        raise FloatingPointError(
            f"simulation diverged (first non-finite state near t = {t_bad:.4g} s); "
            "reduce the step size or check the design")

    # input log at t=0 mirrors the first stage evaluation
    outU[0] = outU[1] if n_steps >= 1 else 0.0
    t = np.arange(n_steps + 1) * h
    return Trajectory(t, outV, outIt, outv, outIl, outU, wv, wc, wl, flags,
                      meta={"backend": backend_name(),
                            "noise_seed": scenario.disturbance.seed
                            if scenario.disturbance.enabled else None,
                            "mode": "droop" if droop is not None else "layered",
                            "K": None if (droop is not None or K is None)
                            else K.copy()})
