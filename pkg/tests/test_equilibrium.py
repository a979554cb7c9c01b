import numpy as np
import pytest

from mgcodesign.equilibrium import (check_equilibrium_existence,
                                    compute_equilibrium, equilibrium_residual,
                                    optimize_reference, steady_state_inputs)
from mgcodesign.grid import (DgParams, LineParams, MicrogridSpec,
                             benchmark_microgrid, topology_from_edges)


def single_dg_oracle():
    """Closed-form optimum of the 1-D eliminated setpoint problem.

    With one DG the balance pins I_s(V) = (I_L + Y_L V) / I_n; eliminating
    it leaves a quadratic in V whose stationary point is explicit.
    """
    Y_L, I_L, I_n = 0.2, 3.0, 800.0 / 48.0
    alpha_V, alpha_I, Vbar = 1.0, 0.1, 48.0
    V_star = Vbar - alpha_I * Y_L / (2 * alpha_V * I_n)
    I_star = (I_L + Y_L * V_star) / I_n
    return V_star, I_star


class TestEquilibrium:
    def test_single_dg_hand_values(self):
        mg = benchmark_microgrid(1)
        eq = compute_equilibrium(mg, np.array([48.0]))
        assert eq.I_tE[0] == pytest.approx(12.6)
        assert eq.u_E[0] == pytest.approx(48.63)

    def test_equal_references_zero_line_currents(self):
        mg = benchmark_microgrid(2, topology=topology_from_edges(2, [(0, 1)]))
        eq = compute_equilibrium(mg, np.full(2, 48.0))
        np.testing.assert_allclose(eq.I_barE, 0.0, atol=1e-14)

    def test_residual_oracle(self):
        # plugging the closed form into the raw vector field gives ~0
        mg = benchmark_microgrid(4, seed=8, topology_seed=2)
        eq = compute_equilibrium(mg, np.linspace(46.0, 50.0, 4))
        assert equilibrium_residual(mg, eq) <= 1e-9

    def test_wrong_point_has_residual(self):
        mg = benchmark_microgrid(2, topology=topology_from_edges(2, [(0, 1)]))
        eq = compute_equilibrium(mg, np.full(2, 48.0))
        import dataclasses
        bad = dataclasses.replace(eq, I_tE=eq.I_tE + 1.0)
        assert equilibrium_residual(mg, bad) > 1e-3


class TestExistence:
    def test_loaded_network_exists(self):
        chk = check_equilibrium_existence(benchmark_microgrid(4, topology_seed=1))
        assert chk["exists"] and np.isfinite(chk["condition_number"])

    def test_unloaded_laplacian_singular(self):
        mg = benchmark_microgrid(3, topology_seed=2)
        import dataclasses
        dgs = tuple(dataclasses.replace(d, Y_L=0.0) for d in mg.dgs)
        mg0 = dataclasses.replace(mg, dgs=dgs)
        assert not check_equilibrium_existence(mg0)["exists"]

    def test_single_dg_condition_one(self):
        chk = check_equilibrium_existence(benchmark_microgrid(1))
        assert chk["condition_number"] == pytest.approx(1.0)


class TestSetpoint:
    def test_single_dg_kkt_oracle(self):
        mg = benchmark_microgrid(1)
        sp = optimize_reference(mg, V_min=45.6, V_max=50.4,
                                alpha_V=1.0, alpha_I=0.1)
        V_star, I_star = single_dg_oracle()
        assert sp.V_r_star[0] == pytest.approx(V_star, abs=1e-6)
        assert sp.I_s_star == pytest.approx(I_star, abs=1e-6)
        assert sp.u_S[0] == pytest.approx(V_star + 0.05 * (800 / 48) * I_star,
                                          abs=1e-6)

    def test_uniform_four_dg_aggregate_oracle(self):
        # four identical DGs: line terms vanish and the aggregate balance
        # sum(I_tE) = I_s sum(I_n) pins the optimizer
        topo = topology_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        dg = DgParams(0.05, 0.01, 2.2e-3, 0.2, 3.0, 800.0, 48.0)
        lines = tuple(LineParams(4.0, 0.01, e) for e in topo.lines)
        mg = MicrogridSpec((dg,) * 4, lines, topo)
        sp = optimize_reference(mg, V_min=45.6, V_max=50.4)
        assert sp.I_s_star == pytest.approx(0.7560, abs=2e-4)
        assert np.ptp(sp.V_r_star) < 1e-6

    def test_sharing_equality_active(self):
        mg = benchmark_microgrid(4, seed=8, topology_seed=2)
        sp = optimize_reference(mg)
        eq = compute_equilibrium(mg, sp.V_r_star)
        per_unit = eq.I_tE / mg.I_n
        assert np.abs(per_unit - sp.I_s_star).max() <= 1e-6

    def test_monotone_in_load(self):
        import dataclasses
        for seed, topo in ((3, 2), (12, 6), (13, 7), (23, 3)):
            mg = benchmark_microgrid(4, seed=seed, topology_seed=topo)
            sp1 = optimize_reference(mg)
            dgs = tuple(dataclasses.replace(d, I_L_bar=1.2 * d.I_L_bar)
                        for d in mg.dgs)
            sp2 = optimize_reference(dataclasses.replace(mg, dgs=dgs))
            assert sp2.I_s_star > sp1.I_s_star

    def test_infeasible_names_binding_constraint(self):
        import dataclasses
        mg = benchmark_microgrid(1)
        heavy = dataclasses.replace(mg, dgs=(dataclasses.replace(
            mg.dgs[0], I_L_bar=40.0),))
        with pytest.raises(ValueError, match="capacity"):
            optimize_reference(heavy)

    def test_empty_box_rejected(self):
        mg = benchmark_microgrid(1)
        with pytest.raises(ValueError, match="box"):
            optimize_reference(mg, V_min=50.0, V_max=49.0)


class TestSteadyStateInputs:
    def test_hand_value(self):
        mg = benchmark_microgrid(1)
        u = steady_state_inputs(mg, np.array([48.0]), 0.756)
        assert u[0] == pytest.approx(48.0 + 0.05 * (800 / 48) * 0.756)

    def test_zero_ratio(self):
        mg = benchmark_microgrid(3, topology_seed=2)
        np.testing.assert_array_equal(
            steady_state_inputs(mg, mg.V_r, 0.0), mg.V_r)

    def test_consistency_with_equilibrium_input(self):
        # when (V_r, I_s) satisfy the sharing balance exactly, u_S == u_E
        mg = benchmark_microgrid(4, seed=8, topology_seed=2)
        sp = optimize_reference(mg)
        eq = compute_equilibrium(mg, sp.V_r_star)
        np.testing.assert_allclose(sp.u_S, eq.u_E, atol=1e-6)
