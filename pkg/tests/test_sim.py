import dataclasses

import numpy as np
import pytest

from mgcodesign.codesign import DesignParams, design_global, design_local
from mgcodesign.equilibrium import compute_equilibrium, optimize_reference
from mgcodesign.grid import benchmark_microgrid
from mgcodesign.sim import (Disturbance, Event, Scenario, backend_name,
                            compute_metrics, consensus_injection_matrix,
                            dissipation_check, droop_baseline,
                            layer_activation_scenario, load_change_scenario,
                            simulate)
from mgcodesign.sim.kernels import HAS_NUMBA


@pytest.fixture(scope="module")
def designed():
    mg = benchmark_microgrid(4, topology_seed=1)
    sp = optimize_reference(mg)
    params = DesignParams(graph_mode="hard")
    local = design_local(mg, params)
    result = design_global(mg, local, params)
    return mg, sp, local, result


def equilibrium_state(mg, sp):
    eq = compute_equilibrium(mg, sp.V_r_star)
    x = eq.state_vector()
    x[mg.n_dgs:2 * mg.n_dgs] = mg.I_n * sp.I_s_star
    return x


class TestSimulate:
    def test_determinism(self, designed):
        mg, sp, local, result = designed
        sc = Scenario(t_end=0.2, disturbance=Disturbance(enabled=True, seed=5))
        a = simulate(mg, sp, local, result.K, sc)
        b = simulate(mg, sp, local, result.K, sc)
        np.testing.assert_array_equal(a.V, b.V)
        np.testing.assert_array_equal(a.I_l, b.I_l)

    def test_equilibrium_invariance(self, designed):
        mg, sp, local, result = designed
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.5))
        x_eq = equilibrium_state(mg, sp)
        scale = 1.0 + np.abs(x_eq)
        dev = np.abs(np.hstack([traj.V, traj.I_t, traj.v, traj.I_l]) - x_eq)
        assert (dev / scale).max() <= 1e-6

    def test_rk4_order(self, designed):
        # state difference between h and h/2 runs shrinks ~h^4
        mg, sp, local, result = designed
        x0 = equilibrium_state(mg, sp)
        x0[:4] += 0.5
        errs = []
        for h in (4e-4, 2e-4, 1e-4):
            tr = simulate(mg, sp, local, result.K, Scenario(t_end=0.04, h=h),
                          x0=x0)
            errs.append(tr.V[-1].copy())
        d1 = np.linalg.norm(errs[0] - errs[2])
        d2 = np.linalg.norm(errs[1] - errs[2])
        assert d1 / d2 > 8.0   # fourth-order collapse (16x in the limit)

    def test_integrator_gated_by_local_layer(self, designed):
        mg, sp, local, result = designed
        sc = layer_activation_scenario(t_end=0.5, t_steady=0.1, t_local=0.4,
                                       t_distributed=0.45)
        traj = simulate(mg, sp, local, result.K, sc, x0=np.zeros(16))
        before = traj.t < 0.4
        np.testing.assert_array_equal(traj.v[before], 0.0)

    def test_load_step_event_applied(self, designed):
        mg, sp, local, result = designed
        sc = Scenario(t_end=0.4, events=(
            Event(0.2, "set_I_L_bar", dg=None, value=6.0),))
        traj = simulate(mg, sp, local, result.K, sc)
        i_mid = np.searchsorted(traj.t, 0.19)
        assert np.abs(traj.V[i_mid] - sp.V_r_star).max() < 1e-6
        assert traj.I_t[-1].sum() > traj.I_t[i_mid].sum() + 5.0

    def test_scale_yl_single_dg_event(self, designed):
        mg, sp, local, result = designed
        sc = Scenario(t_end=0.4, events=(
            Event(0.2, "scale_Y_L", dg=0, value=2.0),))
        traj = simulate(mg, sp, local, result.K, sc)
        assert traj.I_t[-1, 0] > traj.I_t[0, 0] + 3.0

    def test_blowup_detected(self, designed):
        mg, sp, local, result = designed
        bad = [k.copy() for k in local.K0]
        bad[0] = np.array([[3.0, 50.0, 0.0]])   # positive current feedback
        local_bad = dataclasses.replace(local, K0=bad)
        with pytest.raises(FloatingPointError, match="diverged"):
            simulate(mg, sp, local_bad, result.K, Scenario(t_end=2.0))

    def test_distributed_neutrality_along_trajectory(self, designed):
        mg, sp, local, result = designed
        Kg = consensus_injection_matrix(mg, result.K)
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.1))
        u_g = traj.I_t @ Kg.T
        np.testing.assert_allclose(u_g, 0.0, atol=1e-6)

    def test_backends_agree(self, designed, monkeypatch):
        if not HAS_NUMBA:
            pytest.skip("numba unavailable")
        mg, sp, local, result = designed
        x0 = equilibrium_state(mg, sp)
        x0[:4] += 0.3
        results = {}
        for kern in ("numba", "numpy"):
            monkeypatch.setenv("MGCODESIGN_BACKEND", kern)
            traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.05),
                            x0=x0)
            assert traj.meta["backend"] == kern
            results[kern] = traj
        np.testing.assert_allclose(results["numba"].V, results["numpy"].V,
                                   rtol=1e-12, atol=1e-12)


class TestDroop:
    def test_pre_secondary_offset_oracle(self, designed):
        mg, sp, local, result = designed
        dr = droop_baseline(mg)
        traj = simulate(mg, None, None, None, Scenario(t_end=1.0),
                        droop=dr, x0=equilibrium_state(mg, sp))
        # static droop equilibrium: V = Vr - (m + R_t).I with the network
        N = mg.n_dgs
        G = mg.B @ np.diag(1.0 / mg.line_vec("R_l")) @ mg.B.T \
            + np.diag(mg.vec("Y_L"))
        S = np.diag(mg.vec("R_t") + dr.m)
        V_pred = np.linalg.solve(np.eye(N) + S @ G,
                                 mg.V_r - S @ mg.vec("I_L_bar"))
        np.testing.assert_allclose(traj.V[-1], V_pred, atol=5e-3)
        assert np.all(traj.V[-1] < mg.V_r)   # sits below the reference

    def test_zero_slope_leaves_resistive_offset(self, designed):
        mg, sp, _, _ = designed
        dr = droop_baseline(mg, m=0.0, secondary_on_at=10.0)
        traj = simulate(mg, None, None, None, Scenario(t_end=1.5), droop=dr,
                        x0=equilibrium_state(mg, sp))
        eq = compute_equilibrium(mg, mg.V_r)
        expected_drop = mg.vec("R_t") * eq.I_tE   # u = V_r feedforward only
        np.testing.assert_allclose(mg.V_r - traj.V[-1], expected_drop,
                                   rtol=0.05)

    def test_secondary_restores_average(self, designed):
        mg, sp, _, _ = designed
        dr = droop_baseline(mg, secondary_on_at=0.5)
        traj = simulate(mg, None, None, None, Scenario(t_end=4.0), droop=dr,
                        x0=equilibrium_state(mg, sp))
        err = abs(traj.V[-1].mean() - np.mean(mg.V_r))
        assert err < 5e-3


class TestMetrics:
    def test_constant_at_reference_all_zero(self, designed):
        mg, sp, local, result = designed
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.2))
        m = compute_metrics(traj, mg, sp)
        assert m.max_voltage_deviation < 1e-8
        assert m.per_unit_spread < 1e-8
        assert m.sharing_ratio == pytest.approx(sp.I_s_star, abs=1e-8)

    def test_window_outside_rejected(self, designed):
        mg, sp, local, result = designed
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.2))
        with pytest.raises(ValueError, match="window|outside"):
            compute_metrics(traj, mg, sp, l2_window=(0.0, 5.0))

    def test_settling_reported_per_event(self, designed):
        mg, sp, local, result = designed
        sc = load_change_scenario(t_end=3.0, t_current=1.0, t_up=2.0,
                                  t_down=2.5)
        traj = simulate(mg, sp, local, result.K, sc)
        m = compute_metrics(traj, mg, sp, event_times=[1.0, 2.0, 2.5])
        assert set(m.settling_times) == {1.0, 2.0, 2.5}
        assert all(v is not None and v < 0.5
                   for v in m.settling_times.values())

    def test_dissipation_check_requires_fine_step(self, designed):
        mg, sp, local, result = designed
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.2, h=5e-3))
        with pytest.raises(ValueError, match="fine"):
            dissipation_check(traj, mg, local, sp)

    def test_dissipation_zero_trajectory(self, designed):
        mg, sp, local, result = designed
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.2))
        frac = dissipation_check(traj, mg, local, sp)
        assert all(v == 0.0 for v in frac.values())

    def test_dissipation_detects_false_certificate(self, designed):
        mg, sp, local, result = designed
        x0 = equilibrium_state(mg, sp)
        x0[:4] += 0.5
        traj = simulate(mg, sp, local, result.K, Scenario(t_end=0.5), x0=x0)
        bogus = dataclasses.replace(local, rho_tilde=local.rho_tilde / 50.0)
        frac = dissipation_check(traj, mg, bogus, sp)
        assert max(frac[f"dg{i}"] for i in range(4)) > 0.3


def test_backend_name_env(monkeypatch):
    monkeypatch.setenv("MGCODESIGN_BACKEND", "numpy")
    assert backend_name() == "numpy"
    monkeypatch.delenv("MGCODESIGN_BACKEND")
