import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mgcodesign.lmi import (LmiProblem, SolveOptions, atom, bmat, check_psd,
                            const, rect_var, scalar_var, schur_psd_check,
                            scaled, smat, solve, svec, svec_dim, sym_var)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def sym_matrices(n):
    return arrays(np.float64, (n, n), elements=finite).map(lambda A: A + A.T)


class TestSvec:
    def test_identity_2x2(self):
        assert np.array_equal(svec(np.eye(2)), [1.0, 0.0, 1.0])

    def test_diag_123(self):
        assert np.array_equal(svec(np.diag([1.0, 2.0, 3.0])),
                              [1, 0, 2, 0, 0, 3])

    def test_offdiag_scaling(self):
        a, b, c = 1.5, -0.3, 2.0
        v = svec(np.array([[a, b], [b, c]]))
        assert v[0] == a and v[2] == c
        assert v[1] == pytest.approx(np.sqrt(2) * b, rel=1e-15)

    @given(sym_matrices(4))
    @settings(max_examples=60, deadline=None)
    def test_trace_inner_product(self, S):
        T = np.arange(16.0).reshape(4, 4)
        T = T + T.T
        lhs = float(svec(S) @ svec(T))
        rhs = float(np.trace(S @ T))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)

    @given(sym_matrices(5))
    @settings(max_examples=80, deadline=None)
    def test_round_trip_one_ulp(self, S):
        # diagonal round-trips bit-exactly; off-diagonals to one ulp (the
        # irrational sqrt(2) scaling necessarily rounds once each way)
        R = smat(svec(S))
        assert np.array_equal(np.diag(R), np.diag(S))
        assert np.all(np.abs(R - S) <= np.spacing(np.abs(S)))

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ValueError):
            svec(np.array([[0.0, 1.0], [0.0, 0.0]]))

    def test_smat_rejects_bad_length(self):
        with pytest.raises(ValueError):
            smat(np.zeros(4))

    def test_dims(self):
        assert svec_dim(6) == 21


class TestCheckPsd:
    def test_identity_strict(self):
        assert check_psd(np.eye(3), strict=True, tol=1e-9)

    def test_indefinite(self):
        # eigenvalues {3, -1} by the characteristic polynomial
        assert not check_psd(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_zero_matrix(self):
        Z = np.zeros((3, 3))
        assert check_psd(Z, strict=False)
        assert not check_psd(Z, strict=True, tol=1e-9)

    def test_rejects_nonfinite(self):
        M = np.eye(2)
        M[0, 1] = M[1, 0] = np.nan
        with pytest.raises(ValueError):
            check_psd(M)

    def test_schur_agreement_random_blocks(self):
        rng = np.random.default_rng(7)
        agree = 0
        n_trials = 1000
        for _ in range(n_trials):
            n, m = rng.integers(1, 4, 2)
            A = rng.standard_normal((n, n))
            P = A @ A.T + 0.5 * np.eye(n)
            Q = rng.standard_normal((n, m))
            R = rng.standard_normal((m, m))
            R = 0.5 * (R + R.T) + rng.uniform(-1.0, 3.0) * np.eye(m)
            full = np.block([[P, Q], [Q.T, R]])
            agree += (check_psd(full, tol=1e-8)
                      == schur_psd_check(P, Q, R, tol=1e-8))
        assert agree == n_trials


class TestExpressions:
    def test_affinity_midpoint(self):
        rng = np.random.default_rng(3)
        X = sym_var("X", 3)
        y = scalar_var("y")
        e = const(rng.standard_normal((2, 3))) @ atom(X) @ rng.standard_normal((3, 2)) \
            + scaled(atom(y), rng.standard_normal((2, 2))) + const(np.eye(2))
        a1 = {X: rng.standard_normal((3, 3)), y: 1.3}
        a1[X] = a1[X] + a1[X].T
        a2 = {X: rng.standard_normal((3, 3)), y: -0.4}
        a2[X] = a2[X] + a2[X].T
        mid = {X: 0.5 * (a1[X] + a2[X]), y: 0.5 * (a1[y] + a2[y])}
        np.testing.assert_allclose(
            e.evaluate(mid), 0.5 * (e.evaluate(a1) + e.evaluate(a2)),
            rtol=1e-12, atol=1e-12)

    def test_transpose_consistency(self):
        X = rect_var("X", 2, 3)
        e = const(np.ones((2, 2))) @ atom(X)
        val = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(e.T.evaluate({X: val}),
                                      e.evaluate({X: val}).T)

    def test_nonconforming_blocks_rejected(self):
        with pytest.raises(ValueError):
            bmat([[np.eye(2), np.eye(3)]])

    def test_mask_restricts_free_entries(self):
        mask = np.zeros((2, 2), dtype=bool)
        mask[0, 1] = True
        Q = rect_var("Q", 2, 2, mask=mask)
        assert Q.n_params == 1
        val = Q.unpack([5.0])
        assert val[0, 1] == 5.0 and val[0, 0] == 0.0 and val[1, 1] == 0.0

    def test_variable_product_rejected(self):
        X = sym_var("A", 2)
        Y = sym_var("B", 2)
        with pytest.raises(TypeError):
            atom(X) @ atom(Y)


class TestSolve:
    def test_scalar_lyapunov_feasible(self):
        P = scalar_var("P")
        prob = LmiProblem()
        prob.add_pd(atom(P), margin=1e-6)
        prob.add_psd(2.0 * atom(P))   # -2*A*P with A = -1
        sol = solve(prob)
        assert sol.ok and sol.value(P) > 0

    def test_scalar_lyapunov_infeasible(self):
        P = scalar_var("P")
        prob = LmiProblem()
        prob.add_pd(atom(P), margin=1e-6)
        prob.add_psd(-2.0 * atom(P))  # -2*A*P with A = +1
        assert solve(prob).status == "infeasible"

    def test_line_passivity_maximization(self):
        R, L = 0.02, 0.01
        Pb = scalar_var("Pb", lower=1e-12)
        rho = scalar_var("rho")
        prob = LmiProblem()
        prob.add_psd(bmat([
            [(2 * R / L) * atom(Pb) - atom(rho),
             (-1.0 / L) * atom(Pb) + const([[0.5]])],
            [(-1.0 / L) * atom(Pb) + const([[0.5]]), const([[0.0]])],
        ]))
        prob.minimize([(rho, -1.0)])
        sol = solve(prob)
        assert sol.ok
        assert sol.value(rho) == pytest.approx(R, rel=1e-6)
        assert sol.value(Pb) == pytest.approx(L / 2, rel=1e-6)

    def test_solution_reverification(self):
        # returned solutions satisfy every constraint at 10x feas_tol
        rng = np.random.default_rng(11)
        opts = SolveOptions(feas_tol=1e-8)
        for trial in range(20):
            n = int(rng.integers(2, 5))
            X = sym_var(f"X{trial}", n)
            A = rng.standard_normal((n, n))
            target = A @ A.T + np.eye(n)
            prob = LmiProblem()
            prob.add_psd(atom(X))
            prob.add_psd(const(target) - atom(X))
            prob.minimize([(X, -np.eye(n))])
            sol = solve(prob, opts)
            assert sol.ok
            for con in prob.constraints:
                val = con.shifted().evaluate(sol.values)
                assert check_psd(val, tol=10 * opts.feas_tol)

    def test_determinism(self):
        def run():
            X = sym_var("X", 3)
            prob = LmiProblem()
            prob.add_pd(atom(X), margin=1e-6)
            prob.add_psd(const(2.0 * np.eye(3)) - atom(X))
            prob.minimize([(X, -np.eye(3))])
            return solve(prob).value(X)
        np.testing.assert_array_equal(run(), run())

    def test_equality_constraints(self):
        x = scalar_var("x")
        y = scalar_var("y")
        prob = LmiProblem()
        prob.add_eq(atom(x) + atom(y) - const([[3.0]]))
        prob.add_psd(atom(x) - const([[1.0]]))
        prob.add_psd(atom(y) - const([[1.0]]))
        prob.minimize([(x, 1.0)])
        sol = solve(prob)
        assert sol.ok
        assert sol.value(x) + sol.value(y) == pytest.approx(3.0, abs=1e-6)

    def test_variable_owned_by_one_problem(self):
        x = scalar_var("x")
        p1 = LmiProblem()
        p1.add_psd(atom(x))
        p2 = LmiProblem()
        with pytest.raises(ValueError):
            p2.add_psd(atom(x))

    def test_no_constraints_rejected(self):
        with pytest.raises(ValueError):
            solve(LmiProblem())

    def test_asymmetric_constraint_rejected(self):
        X = rect_var("Xr", 2, 2)
        prob = LmiProblem()
        with pytest.raises(ValueError):
            prob.add_psd(atom(X))

    def test_dump_conic(self):
        x = scalar_var("x")
        prob = LmiProblem("demo")
        prob.add_psd(atom(x) - const([[1.0]]))
        text = prob.dump_conic()
        assert "demo" in text and "A[" in text
