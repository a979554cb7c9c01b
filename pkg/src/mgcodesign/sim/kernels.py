"""Fixed-step RK4 integration kernels for the closed-loop microgrid.

The hot loop exists in two flavors: a numba @njit build and the identical
pure-numpy function.  Selection: env var MGCODESIGN_BACKEND=numpy forces the
fallback; anything else uses numba when importable.  Disturbances are
pre-drawn per step and held constant within a step.
"""

from __future__ import annotations

import os

import numpy as np


def _rk4_segment(V, It, vi, Il, h, n_steps, out_off,
                 Ct, Lt, Rt, YL, IL, Bmat, Rl, Ll,
                 uS, Vr, In, Is, K0, Kg, m_droop, k_sec, Vr_mean,
                 sS, sL, sD, mode,
                 wv, wc, wl,
                 outV, outIt, outv, outIl, outU):
    """Integrate one constant-parameter segment, writing every sample.

    mode 0: layered design controller; mode 1: droop primary with the
    v-slot reused as the secondary correction state (sL gates secondary).
    Returns nothing; states are updated in place.
    """
    N = V.shape[0]
    L = Il.shape[0]
    kV = np.empty((4, N)); kI = np.empty((4, N))
    kv = np.empty((4, N)); kL = np.empty((4, L))
    V1 = np.empty(N); I1 = np.empty(N); v1 = np.empty(N); Il1 = np.empty(L)
    u = np.empty(N)
    coef = np.array([0.0, 0.5, 0.5, 1.0])

    for step in range(n_steps):
        for s in range(4):
            if s == 0:
                for i in range(N):
                    V1[i] = V[i]; I1[i] = It[i]; v1[i] = vi[i]
                for l in range(L):
                    Il1[l] = Il[l]
            else:
                c = coef[s] * h
                for i in range(N):
                    V1[i] = V[i] + c * kV[s - 1, i]
                    I1[i] = It[i] + c * kI[s - 1, i]
                    v1[i] = vi[i] + c * kv[s - 1, i]
                for l in range(L):
                    Il1[l] = Il[l] + c * kL[s - 1, l]

            # control law
            if mode == 0:
                for i in range(N):
                    ui = sS * uS[i]
                    if sL > 0.0:
                        ui += sL * (K0[i, 0] * (V1[i] - Vr[i])
                                    + K0[i, 1] * (I1[i] - In[i] * Is)
                                    + K0[i, 2] * v1[i])
                    if sD > 0.0:
                        acc = 0.0
                        for j in range(N):
                            acc += Kg[i, j] * I1[j]
                        ui += sD * acc
                    u[i] = ui
            else:
                for i in range(N):
                    u[i] = Vr[i] - m_droop[i] * I1[i] + sL * v1[i]

            # plant derivatives (disturbance held constant over the step)
            for i in range(N):
                inj = 0.0
                for l in range(L):
                    inj += Bmat[i, l] * Il1[l]
                kV[s, i] = (I1[i] - YL[i] * V1[i] - IL[i] - inj
                            + wv[step, i]) / Ct[i]
                kI[s, i] = (-V1[i] - Rt[i] * I1[i] + u[i]
                            + wc[step, i]) / Lt[i]
            if mode == 0:
                for i in range(N):
                    kv[s, i] = sL * (V1[i] - Vr[i])
            else:
                vbar = 0.0
                for i in range(N):
                    vbar += V1[i]
                vbar /= N
                for i in range(N):
                    kv[s, i] = sL * k_sec * (Vr_mean - vbar)
            for l in range(L):
                du = 0.0
                for i in range(N):
                    du += Bmat[i, l] * V1[i]
                kL[s, l] = (-Rl[l] * Il1[l] + du + wl[step, l]) / Ll[l]

        h6 = h / 6.0
        for i in range(N):
            V[i] += h6 * (kV[0, i] + 2 * kV[1, i] + 2 * kV[2, i] + kV[3, i])
            It[i] += h6 * (kI[0, i] + 2 * kI[1, i] + 2 * kI[2, i] + kI[3, i])
            vi[i] += h6 * (kv[0, i] + 2 * kv[1, i] + 2 * kv[2, i] + kv[3, i])
        for l in range(L):
            Il[l] += h6 * (kL[0, l] + 2 * kL[1, l] + 2 * kL[2, l] + kL[3, l])

        idx = out_off + step + 1
        for i in range(N):
            outV[idx, i] = V[i]
            outIt[idx, i] = It[i]
            outv[idx, i] = vi[i]
        for l in range(L):
            outIl[idx, l] = Il[l]
        # log the applied input at the new sample (stage-1 law of next step)
        if mode == 0:
            for i in range(N):
                ui = sS * uS[i] + sL * (K0[i, 0] * (V[i] - Vr[i])
                                        + K0[i, 1] * (It[i] - In[i] * Is)
                                        + K0[i, 2] * vi[i])
                if sD > 0.0:
                    acc = 0.0
                    for j in range(N):
                        acc += Kg[i, j] * It[j]
                    ui += sD * acc
                outU[idx, i] = ui
        else:
            for i in range(N):
                outU[idx, i] = Vr[i] - m_droop[i] * It[i] + sL * vi[i]


_kernel_numpy = _rk4_segment

try:  # pragma: no cover - depends on environment
    import numba

    _kernel_numba = numba.njit(cache=True)(_rk4_segment)
    HAS_NUMBA = True
except Exception:  # pragma: no cover
    _kernel_numba = None
    HAS_NUMBA = False


def backend_name() -> str:
    forced = os.environ.get("MGCODESIGN_BACKEND", "").strip().lower()
    if forced == "numpy":
        return "numpy"
    if forced == "numba" and not HAS_NUMBA:
        raise RuntimeError("MGCODESIGN_BACKEND=numba but numba is unavailable")
    return "numba" if HAS_NUMBA else "numpy"


def get_kernel():
    return _kernel_numba if backend_name() == "numba" else _kernel_numpy
