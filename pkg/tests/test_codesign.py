import dataclasses

import numpy as np
import pytest

from mgcodesign.codesign import (CodesignResult, DesignParams,
                                 design_global, design_local,
                                 extract_topology,
                                 linearized_nu_bar_bound,
                                 necessary_condition_matrices,
                                 necessary_condition_matrix,
                                 nudged_line_indices,
                                 scalar_necessary_conditions)
from mgcodesign.grid import (benchmark_microgrid, dg_state_matrices,
                             topology_from_edges)


@pytest.fixture(scope="module")
def pinned():
    mg = benchmark_microgrid(4, topology_seed=1)
    params = DesignParams(graph_mode="hard")
    local = design_local(mg, params)
    result = design_global(mg, local, params)
    return mg, params, local, result


class TestDesignLocal:
    def test_index_signs_and_bounds(self, pinned):
        mg, params, local, _ = pinned
        assert np.all(local.nu < 0)
        assert np.all(local.rho_tilde > 0)
        assert np.all((0 < local.gamma_tilde)
                      & (local.gamma_tilde < params.gamma_bar))
        for l, line in enumerate(mg.lines):
            nb, rb, Pb = nudged_line_indices(line.R_l, line.L_l, params.eps_nu)
            assert local.nu_bar[l] == nb
            assert local.rho_bar[l] == rb
            assert local.P_bar[l] == Pb

    def test_closed_loops_hurwitz(self, pinned):
        mg, _, local, _ = pinned
        for i in range(mg.n_dgs):
            A, B, _ = dg_state_matrices(mg.dgs[i])
            eigs = np.linalg.eigvals(A + B @ local.K0[i].reshape(1, 3))
            assert eigs.real.max() < 0

    def test_certificates_verify_analysis_lmi(self, pinned):
        mg, _, local, _ = pinned
        for i in range(mg.n_dgs):
            A, B, _ = dg_state_matrices(mg.dgs[i])
            Acl = A + B @ local.K0[i].reshape(1, 3)
            P = local.P[i]
            M = np.block([
                [-(P @ Acl + Acl.T @ P) - local.rho[i] * np.eye(3),
                 0.5 * np.eye(3) - P],
                [0.5 * np.eye(3) - P, -local.nu[i] * np.eye(3)],
            ])
            assert np.linalg.eigvalsh(M)[0] >= -1e-7

    def test_bilinear_surrogate_pinned_exactly(self, pinned):
        mg, _, local, _ = pinned
        for (i, l), xi in local.xi.items():
            assert xi == pytest.approx(
                local.nu_bar[l] * local.rho_tilde[i], rel=1e-9)

    def test_single_dg_reduces_to_plain_synthesis(self):
        # no lines: the pair constraints are vacuous and the stage reduces
        # to plain local-gain synthesis, round-tripped through analysis
        from mgcodesign.dissipativity import SupplyRate, analyze_xeid
        mg = benchmark_microgrid(1)
        local = design_local(mg, DesignParams(p=0.1, gamma_bar=1e6))
        A, B, _ = dg_state_matrices(mg.dgs[0])
        Acl = A + B @ local.K0[0].reshape(1, 3)
        assert np.linalg.eigvals(Acl).real.max() < 0
        assert local.xi == {}
        cert = analyze_xeid(Acl, np.eye(3), np.eye(3), np.zeros((3, 3)),
                            SupplyRate.ifofp(local.nu[0], local.rho[0], 3))
        assert cert is not None

    def test_infeasible_reports_remedy(self):
        mg = benchmark_microgrid(4, topology_seed=1)
        with pytest.raises(ValueError, match="multiplier_scale|gamma_bar"):
            design_local(mg, DesignParams(joint_margin=0.05))


class TestNecessaryConditions:
    def test_matrix_as_printed(self):
        M = necessary_condition_matrix(p_i=2.0, pbar_l=3.0, C_ti=0.5,
                                       B_il=1.0, nu_i=-1.0, nub_l=-0.25,
                                       rho_i=4.0, rhob_l=5.0, gamma_t=7.0)
        Cb = -1.0 / 0.5
        assert M[0, 0] == 2.0 and M[0, 4] == 2.0 * Cb and M[0, 5] == 2.0
        assert M[1, 1] == 0.75 and M[1, 3] == 0.75 and M[1, 5] == 0.75
        np.testing.assert_array_equal(M[2], [0, 0, 1, 1, 1, 0])
        assert M[3, 3] == 8.0 and M[5, 5] == 7.0
        assert M[3, 4] == -0.5 * 2.0 * Cb - 0.5 * 3.0
        np.testing.assert_array_equal(M, M.T)

    def test_zero_nu_not_pd(self):
        mg = benchmark_microgrid(2, topology=topology_from_edges(2, [(0, 1)]))
        v = necessary_condition_matrices(
            mg, nu=np.zeros(2), rho=np.ones(2), nu_bar=np.array([-1.0]),
            rho_bar=np.array([1.0]), p=np.ones(2), p_bar=np.ones(1),
            gamma_tilde=10.0)
        assert not any(pd for _, pd in v.values())

    def test_designed_instance_all_pd(self, pinned):
        mg, _, local, result = pinned
        v = necessary_condition_matrices(
            mg, local.nu, local.rho, local.nu_bar, local.rho_bar,
            result.p, result.p_bar, result.gamma_tilde)
        assert all(pd for _, pd in v.values())
        assert len(v) == 2 * mg.n_lines

    def test_scalar_conditions_arithmetic(self):
        res = scalar_necessary_conditions(
            nu=[-1.0], rho=[15.0], nu_bar=[-0.5], rho_bar=[30.0],
            p=[0.1], p_bar=[0.2], gamma_tilde=1000.0, C_t=[0.5],
            pairs=[(0, 0)])
        assert res["nu_window"][0]          # -gamma/p = -10000 < -1 < 0
        assert res["rho_floor"][0]          # 15 > 10
        assert res["rho_gamma"][0]
        assert res["line_coupling_nu"][0]   # 30 > 0.1/(0.2*0.25) = 2
        assert res["nu_bar_window"][0]      # -0.1*15/0.2 = -7.5 < -0.5 < 0

    def test_scalar_boundary_strict(self):
        res = scalar_necessary_conditions(
            nu=[-1.0], rho=[10.0], nu_bar=[-0.5], rho_bar=[30.0],
            p=[0.1], p_bar=[0.2], gamma_tilde=1000.0, C_t=[0.5],
            pairs=[(0, 0)])
        assert not res["rho_floor"][0]      # rho == 1/p exactly fails

    def test_chord_linearization_is_conservative(self):
        # the chord of the concave hyperbola lies below it on the interval,
        # so the linear bound is implied by (weaker than) the exact one
        p, pbar = 0.1, 0.2
        lo, hi = 0.02, 1.4
        m, c = linearized_nu_bar_bound(p, pbar, lo, hi)
        grid = np.linspace(lo, hi, 500)
        exact = -p / (pbar * grid)
        chord = m * grid + c
        assert np.all(chord <= exact + 1e-12)
        # touches at the interval ends
        assert chord[0] == pytest.approx(exact[0])
        assert chord[-1] == pytest.approx(exact[-1])

    def test_chord_rejects_bad_interval(self):
        with pytest.raises(ValueError):
            linearized_nu_bar_bound(0.1, 0.2, 1.0, 0.5)

    def test_pd_implies_scalar_conditions(self, pinned):
        # the printed matrices being PD implies every scalar minor condition
        mg, _, local, result = pinned
        res = scalar_necessary_conditions(
            local.nu, local.rho, local.nu_bar, local.rho_bar,
            result.p, result.p_bar, result.gamma_tilde,
            mg.vec("C_t"), [(i, l) for l, (a, b) in
                            enumerate(mg.topology.lines) for i in (a, b)])
        for name, arr in res.items():
            assert np.all(arr), name


class TestDesignGlobal:
    def test_hard_graph_subset_of_physical(self, pinned):
        mg, _, _, result = pinned
        phys = mg.topology.adjacency_pairs()
        for (j, i) in result.comm_links:
            assert (min(i, j), max(i, j)) in phys
        # bidirectional
        assert {(i, j) for (j, i) in result.comm_links} == set(result.comm_links)

    def test_gain_recovery_identity(self, pinned):
        mg, _, local, result = pinned
        for i in range(mg.n_dgs):
            scale = -result.p[i] * local.nu[i]
            np.testing.assert_allclose(
                result.K[3 * i: 3 * i + 3, :] * scale,
                result.Q[3 * i: 3 * i + 3, :], rtol=1e-9, atol=1e-12)

    def test_structural_zeros(self, pinned):
        mg, _, _, result = pinned
        for i in range(mg.n_dgs):
            for j in range(mg.n_dgs):
                blk = result.Q[3 * i: 3 * i + 3, 3 * j: 3 * j + 3].copy()
                blk[1, 1] = 0.0
                assert not np.any(blk)

    def test_laplacian_row_condition(self, pinned):
        mg, _, _, result = pinned
        from mgcodesign.grid import extract_consensus_entries
        K_I = extract_consensus_entries(result.K)
        resid = np.abs(K_I @ np.diag(mg.I_n) @ np.ones(mg.n_dgs)).max()
        assert resid <= 1e-5 * max(1.0, np.abs(K_I).max())

    def test_soft_mode_ordering(self, pinned):
        mg, params, local, hard = pinned
        soft_par = dataclasses.replace(params, graph_mode="soft")
        soft = design_global(mg, local, soft_par)
        # evaluate the hard solution under the soft costs
        from mgcodesign.codesign import default_link_costs
        c = default_link_costs(mg, "soft")
        hard_obj_soft_costs = (
            sum(c[i, j] * abs(hard.Q[3 * i + 1, 3 * j + 1])
                for i in range(4) for j in range(4) if i != j)
            + params.c1 * hard.gamma_tilde / params.gamma_bar
            + params.alpha_slack * hard.slack_trace)
        assert soft.objective <= hard_obj_soft_costs + 1e-6
        assert np.abs(soft.link_gains).max() \
            <= np.abs(hard.link_gains).max() + 1e-9

    def test_reweighted_refinement_runs(self, pinned):
        mg, params, local, _ = pinned
        par = dataclasses.replace(params, graph_mode="soft",
                                  reweight_passes=2)
        res = design_global(mg, local, par)
        assert res.gamma > 0
        assert np.abs(res.link_gains).max() <= 1e-6 or res.comm_links

    def test_single_dg_degenerate(self):
        mg = benchmark_microgrid(1)
        params = DesignParams()
        local = design_local(mg, params)
        res = design_global(mg, local, params)
        assert np.abs(res.Q).max() < 1e-9   # Laplacian row pins the self gain
        assert res.comm_links == []

    def test_assumption_guard(self, pinned):
        mg, params, local, _ = pinned
        broken = dataclasses.replace(local, nu=np.abs(local.nu))
        with pytest.raises(ValueError, match="negative input indices"):
            design_global(mg, broken, params)

    def test_gamma_bar_monotonicity(self):
        # enlarging the budget cap never shrinks the feasible set
        seeds = [(2, 3), (7, 1), (8, 2), (11, 5), (12, 6), (13, 7), (14, 1),
                 (17, 4), (20, 7), (22, 2)]
        for seed, topo in seeds:
            mg = benchmark_microgrid(4, seed=seed, topology_seed=topo)
            for gbar in (1e13, 1e14):
                params = DesignParams(graph_mode="hard", gamma_bar=gbar)
                local = design_local(mg, params)
                result = design_global(mg, local, params)
                assert result.gamma_tilde < gbar

    def test_designed_network_certificate_and_perturbation(self, pinned):
        # fixed-interconnection analysis certifies the designed loop, and a
        # flipped physical coupling loses the certificate
        from mgcodesign.grid import assemble_interconnection
        from mgcodesign.dissipativity import SupplyRate, analyze_network_yeid
        mg, _, local, result = pinned
        M = assemble_interconnection(mg, result.K)
        Y = SupplyRate.l2_gain(result.gamma * 1.05, M.E_c.shape[1],
                               M.H_c.shape[0])
        good = analyze_network_yeid(M, local.dg_supplies(),
                                    local.line_supplies(), Y)
        assert good is not None and np.all(good["p"] > 0)
        bad = analyze_network_yeid(dataclasses.replace(M, C=-M.C),
                                   local.dg_supplies(),
                                   local.line_supplies(), Y)
        assert bad is None


class TestExtractTopology:
    def test_zero_gain_empty(self):
        links, gains = extract_topology(np.zeros((6, 6)), np.ones(2),
                                        np.full(2, 0.01))
        assert links == [] and not np.any(gains)

    def test_two_dg_hand_assembled(self):
        # symmetric consensus gain k between two DGs
        In = np.array([16.0, 12.0])
        Lt = np.array([0.01, 0.02])
        k = 2.5
        K = np.zeros((6, 6))
        K[1, 1] = k / (Lt[0] * In[0]);  K[1, 4] = -k / (Lt[0] * In[1])
        K[4, 4] = k / (Lt[1] * In[1]);  K[4, 1] = -k / (Lt[1] * In[0])
        links, gains = extract_topology(K, In, Lt)
        assert set(links) == {(0, 1), (1, 0)}
        assert gains[0, 1] == pytest.approx(k)
        assert gains[1, 0] == pytest.approx(k)

    def test_inconsistent_diagonal_rejected(self):
        K = np.zeros((6, 6))
        K[1, 4] = 3.0   # off-diagonal gain with no diagonal counterpart
        with pytest.raises(ValueError, match="diagonal"):
            extract_topology(K, np.ones(2), np.full(2, 0.01))

    def test_distributed_term_vanishes_at_proportional_currents(self, pinned):
        mg, _, _, result = pinned
        from mgcodesign.sim import consensus_injection_matrix
        Kg = consensus_injection_matrix(mg, result.K)
        u = Kg @ (0.83 * mg.I_n)
        np.testing.assert_allclose(u, 0.0, atol=1e-6 * max(1, np.abs(Kg).max()))
