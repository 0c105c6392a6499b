import numpy as np
import pytest
import scipy.sparse as sp

from saddlesolve.krylov import GmresParams, PrecondOperator, fgmres
from saddlesolve.mlilu import (
    FactorParams,
    crout_ilu_level,
    equilibrate,
    factorize,
    ml_solve,
    reassemble,
    static_defer,
)
from saddlesolve.sparse import Permutation, as_csr

from conftest import random_saddle, random_sparse


def scale_apply(a, dr, dc):
    return sp.diags(dr) @ a @ sp.diags(dc)


class TestEquilibrate:
    def test_diagonal_case(self):
        a = as_csr(sp.diags([100.0, 0.01]).tocsr())
        dr, dc = equilibrate(a)
        scaled = scale_apply(a, dr, dc).toarray()
        assert np.allclose(np.diag(scaled), 1.0)

    def test_fixed_point(self):
        a = as_csr(sp.csr_matrix(np.array([[1.0, 0.5], [0.5, 1.0]])))
        dr, dc = equilibrate(a)
        assert np.allclose(dr, 1.0) and np.allclose(dc, 1.0)

    def test_wide_range_property(self):
        rng = np.random.default_rng(12)
        n = 20
        dense = (rng.random((n, n)) < 0.4) * np.exp(rng.uniform(-14, 14, (n, n)))
        dense += np.eye(n) * np.exp(rng.uniform(-14, 14, n))
        a = as_csr(sp.csr_matrix(dense))
        dr, dc = equilibrate(a)
        scaled = np.abs(scale_apply(a, dr, dc).toarray())
        rn = scaled.max(axis=1)
        cn = scaled.max(axis=0)
        assert rn.min() >= 0.5 and rn.max() <= 2.0
        assert cn.min() >= 0.5 and cn.max() <= 2.0

    def test_empty_row_rejected(self):
        a = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(ValueError, match="empty"):
            equilibrate(a)


class TestStaticDefer:
    def test_saddle_structure_is_identity(self):
        a = random_saddle(8, 4, seed=3)
        p = static_defer(a, 1e-2)
        assert np.array_equal(p.inverse, np.arange(12))

    def test_stable_partition(self):
        a = as_csr(sp.diags([0.0, 1.0, 0.0, 1.0]).tocsr() + sp.eye(4) * 0)
        dense = np.diag([0.0, 1.0, 0.0, 1.0])
        dense[0, 1] = dense[2, 3] = 1e-3  # keep rows structurally nonempty
        a = as_csr(sp.csr_matrix(dense))
        p = static_defer(a, 1e-2)
        assert np.array_equal(p.inverse, [1, 3, 0, 2])

    def test_known_zero_positions_land_last(self):
        rng = np.random.default_rng(4)
        n = 10
        dense = rng.random((n, n)) + np.eye(n)
        zeros = [2, 5, 7]
        for z in zeros:
            dense[z, z] = 0.0
        a = as_csr(sp.csr_matrix(dense))
        p = static_defer(a, 1e-2)
        assert sorted(p.inverse[-3:]) == zeros
        kept = [i for i in range(n) if i not in zeros]
        assert list(p.inverse[:7]) == kept  # stable among the kept

    def test_leading_diagonals_pass_threshold(self):
        a, _ = random_sparse(30, 0.2, seed=8, diag_shift=1.0)
        dense = a.toarray()
        for z in (3, 11, 19):
            dense[z, z] = 1e-9
        a = as_csr(sp.csr_matrix(dense))
        p = static_defer(a, 1e-2)
        d = np.abs(a.diagonal())
        thr = 1e-2 * d.max()
        n_keep = int(np.count_nonzero(d >= thr))
        assert np.all(d[p.inverse[:n_keep]] >= thr)


class TestCroutLevel:
    def test_exact_dense_block(self):
        rng = np.random.default_rng(1)
        dense = rng.random((5, 5)) + 5 * np.eye(5)
        a = as_csr(sp.csr_matrix(dense))
        budgets = np.full(5, 5)
        level, schur = crout_ilu_level(a, FactorParams(alpha=5.0, droptol=0.0), budgets, budgets)
        assert level.n_b == 5 and schur.shape == (0, 0)
        low = level.L.toarray() + np.eye(5)
        up = level.U.toarray() + np.eye(5)
        rebuilt = low @ np.diag(np.concatenate([level.D])) @ up
        order = level.perm.inverse
        assert np.linalg.norm(rebuilt - dense[order][:, order]) / np.linalg.norm(dense) <= 1e-12

    def test_identity_input(self):
        a = as_csr(sp.eye(6, format="csr"))
        budgets = np.ones(6, dtype=int)
        level, schur = crout_ilu_level(a, FactorParams(alpha=1.0, droptol=0.0), budgets, budgets)
        assert level.n_b == 6
        assert level.L.nnz == 0 and level.U.nnz == 0
        assert np.allclose(level.D, 1.0)
        assert level.n_dynamic_deferred == 0

    def test_tiny_pivot_deferred_hand_schur(self):
        a = as_csr(sp.csr_matrix(np.array([[1e-16, 1.0], [1.0, 1.0]])))
        budgets = np.full(2, 2)
        level, schur = crout_ilu_level(a, FactorParams(alpha=2.0, droptol=0.0), budgets, budgets, n_candidates=2)
        assert level.n_b == 1
        assert level.n_dynamic_deferred == 1
        # eliminated block is {index 1}; Schur over {0} is 1e-16 - 1*1*1
        assert schur.shape == (1, 1)
        assert schur[0, 0] == pytest.approx(1e-16 - 1.0, abs=0)

    def test_total_deferral_returns_input(self):
        dense = np.zeros((3, 3))
        dense[0, 1] = dense[1, 2] = dense[2, 0] = 1e-30
        dense[np.diag_indices(3)] = 1e-30
        a = as_csr(sp.csr_matrix(dense))
        budgets = np.full(3, 3)
        level, schur = crout_ilu_level(a, FactorParams(alpha=3.0, droptol=0.0), budgets, budgets)
        assert level.n_b == 0
        assert np.allclose(schur.toarray(), dense)


class TestFactorize:
    def test_exact_limit_spd_tridiagonal(self):
        n = 100
        a = as_csr(sp.diags([2 * np.ones(n), -np.ones(n - 1), -np.ones(n - 1)], [0, 1, -1]).tocsr())
        m = factorize(a, FactorParams(alpha=float(n), droptol=0.0, dense_switch=10))
        r = reassemble(m)
        assert np.linalg.norm(r - a.toarray()) / np.linalg.norm(a.toarray()) <= 1e-12

    def test_exactness_random(self):
        for seed in (1, 2, 3):
            a, _ = random_sparse(60, 0.15, seed=seed, diag_shift=3.0)
            m = factorize(a, FactorParams(alpha=60.0, droptol=0.0, dense_switch=8))
            r = reassemble(m)
            dense = a.toarray()
            assert np.linalg.norm(r - dense) / np.linalg.norm(dense) <= 1e-10

    def test_saddle_static_deferral_counts_pressure(self):
        nb, ne = 24, 9
        a = random_saddle(nb, ne, seed=5)
        m = factorize(a, FactorParams(alpha=10.0, droptol=0.0, dense_switch=4))
        assert m.levels[0].n_static_deferred == ne

    def test_cavity_stokes_defers_exactly_the_pressure_block(self):
        # level-4 cavity Stokes system: the zero pressure diagonal block is
        # statically deferred to the next level in full
        from saddlesolve import cavity as cav
        prob = cav.build_problem(4, re=100.0)
        a = cav.stokes_operator(prob)
        m = factorize(a, FactorParams(alpha=2.0, droptol=0.01, dense_switch=64))
        assert m.levels[0].n_static_deferred == prob.mesh.n_pressure

    def test_zero_matrix_perturbed_tail(self):
        dense = np.zeros((3, 3))
        a = sp.csr_matrix(dense)
        a = sp.csr_matrix((np.zeros(9), (np.repeat(np.arange(3), 3), np.tile(np.arange(3), 3))), shape=(3, 3))
        m = factorize(as_csr(a), FactorParams(alpha=3.0, droptol=0.0, dense_switch=3))
        assert m.perturbed
        v = np.ones(3)
        out = ml_solve(m, v)  # must be usable, never aborts
        assert np.all(np.isfinite(out))

    def test_fill_caps_recorded_and_respected(self):
        a, _ = random_sparse(80, 0.2, seed=10, diag_shift=2.0)
        params = FactorParams(alpha=1.5, droptol=0.01, dense_switch=10)
        m = factorize(a, params)
        for lev in m.levels:
            if lev.n_b == 0:
                continue
            col_counts = np.diff(lev.L.tocsc().indptr)[:lev.n_b]
            row_counts = np.diff(lev.U.indptr)[:lev.n_b]
            assert np.all(col_counts <= lev.caps_col)
            assert np.all(row_counts <= lev.caps_row)

    def test_fill_bound_aggregate(self):
        a, _ = random_sparse(120, 0.1, seed=11, diag_shift=2.0)
        params = FactorParams(alpha=2.0, droptol=0.01, dense_switch=16)
        m = factorize(a, params)
        n_levels = len(m.levels)
        floor_slack = sum(2 * 5 * lev.n + lev.n for lev in m.levels)
        bound = params.alpha * a.nnz * (1 + n_levels) + 16 * 16 + floor_slack
        assert m.total_nnz <= bound

    def test_deferral_soundness(self):
        a = random_saddle(40, 15, seed=6)
        params = FactorParams(alpha=3.0, droptol=0.01, dense_switch=8)
        m = factorize(a, params)
        for lev in m.levels:
            if lev.n_b:
                assert np.abs(lev.D).min() >= params.pivot_floor


class TestMlSolve:
    def test_exact_inverts(self):
        a, rng = random_sparse(70, 0.15, seed=13, diag_shift=4.0)
        m = factorize(a, FactorParams(alpha=70.0, droptol=0.0, dense_switch=8))
        v = rng.standard_normal(70)
        x = ml_solve(m, v)
        assert np.linalg.norm(a @ x - v) / np.linalg.norm(v) <= 1e-10

    def test_identity_factor(self):
        a = as_csr(sp.eye(12, format="csr"))
        m = factorize(a, FactorParams(alpha=2.0, droptol=0.0, dense_switch=3))
        v = np.arange(12, dtype=float)
        assert np.allclose(ml_solve(m, v), v)

    def test_approximate_solve_and_fgmres(self):
        rng = np.random.default_rng(14)
        n = 30
        dense = rng.random((n, n)) * (rng.random((n, n)) < 0.3)
        dense += np.diag(np.abs(dense).sum(axis=1) + 1.0)  # diagonally dominant
        a = as_csr(sp.csr_matrix(dense))
        m = factorize(a, FactorParams(alpha=4.0, droptol=0.01, dense_switch=5))
        v = rng.standard_normal(n)
        x = ml_solve(m, v)
        exact = np.linalg.solve(dense, v)
        assert np.linalg.norm(x - exact) / np.linalg.norm(exact) <= 0.5
        _, rep = fgmres(a, PrecondOperator(m), v, GmresParams(restart=30, max_iters=100, rtol=1e-10))
        assert rep.converged and rep.iterations <= 10

    def test_linearity(self):
        a, rng = random_sparse(40, 0.2, seed=15, diag_shift=3.0)
        m = factorize(a, FactorParams(alpha=2.0, droptol=0.02, dense_switch=8))
        u = rng.standard_normal(40)
        v = rng.standard_normal(40)
        lhs = ml_solve(m, 1.5 * u - 2.0 * v)
        rhs = 1.5 * ml_solve(m, u) - 2.0 * ml_solve(m, v)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 1.0)

    def test_dimension_check(self):
        a, _ = random_sparse(10, 0.3, seed=16, diag_shift=2.0)
        m = factorize(a, FactorParams())
        with pytest.raises(ValueError, match="length"):
            ml_solve(m, np.ones(11))


def test_reassembly_applies_permutations_and_scalings():
    # equilibration plus two recursion levels must all invert correctly
    a = random_saddle(25, 10, seed=21)
    dense = a.toarray()
    m = factorize(a, FactorParams(alpha=35.0, droptol=0.0, dense_switch=5))
    assert len(m.levels) >= 2
    r = reassemble(m)
    assert np.linalg.norm(r - dense) / np.linalg.norm(dense) <= 1e-10
