import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import unitary_group

from sparse_spectra import kernels, sv
from sparse_spectra.errors import InvalidParameter, ResourceLimit
from sparse_spectra.model import BinaryMatrix, ModelParams, sample_modified
from sparse_spectra.walk import build_process


def complex_matrix(rng, rows, cols, sparse=False):
    if sparse:
        return (rng.random((rows, cols)) < 0.3).astype(np.complex128)
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


class TestSingularSpectrum:
    def test_identity(self):
        np.testing.assert_allclose(sv.singular_values(np.eye(5)), np.ones(5), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(sv.singular_values(np.diag([1.0, 3.0, 2.0])), [3, 2, 1], rtol=1e-15)

    def test_matches_gram_eigenvalues(self):
        rng = np.random.default_rng(42)
        a = complex_matrix(rng, 6, 6)
        ref = np.sqrt(np.sort(np.linalg.eigvalsh(a.conj().T @ a))[::-1])
        np.testing.assert_allclose(sv.singular_values(a), ref, rtol=1e-8)

    def test_vectors_contract(self):
        rng = np.random.default_rng(42)
        a = complex_matrix(rng, 5, 7)
        spec = sv.singular_spectrum(a, want_vectors=True)
        v = spec.vectors
        np.testing.assert_allclose(v.conj().T @ v, np.eye(7), atol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(a @ v, axis=0), spec.padded(), atol=1e-12)
        assert np.all(np.diff(spec.values) <= 0) and np.all(spec.values >= 0)

    def test_cap(self, monkeypatch):
        monkeypatch.setenv("SPARSE_SPECTRA_DENSE_CAP", "4")
        with pytest.raises(ResourceLimit):
            sv.singular_spectrum(np.eye(5))

    def test_shifted_matrix(self):
        m = BinaryMatrix.from_dense([[0, 1, 0], [1, 0, 1]])
        a = sv.ShiftedMatrix(m, 2j).dense
        np.testing.assert_array_equal(a, [[-2j, 1, 0], [1, -2j, 1]])
        with pytest.raises(InvalidParameter):
            sv.ShiftedMatrix(BinaryMatrix.zeros(1, 3), 0)

    def test_csv(self):
        text = sv.singular_spectrum(np.diag([2.0, 1.0])).to_csv()
        assert text.splitlines() == ["index,sigma", "1,2.0", "2,1.0"]


class TestSecularAppend:
    def test_completes_identity(self):
        spec = sv.singular_spectrum(np.array([[1.0, 0.0]]), want_vectors=True)
        np.testing.assert_allclose(sv.secular_append_row(spec, [0, 1]).values, [1, 1], atol=1e-12)

    def test_zero_row_keeps_spectrum(self):
        rng = np.random.default_rng(42)
        a = complex_matrix(rng, 4, 6)
        spec = sv.singular_spectrum(a, want_vectors=True)
        new = sv.secular_append_row(spec, np.zeros(6))
        np.testing.assert_allclose(new.values, np.append(spec.values, 0.0), atol=1e-12)

    def test_needs_vectors(self):
        with pytest.raises(InvalidParameter):
            sv.secular_append_row(sv.singular_spectrum(np.eye(2)), [1, 0])

    @pytest.mark.parametrize("short", [0, 1])
    def test_matches_full_decomposition(self, short):
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 12))
            a = complex_matrix(rng, n - short, n, sparse=bool(rng.integers(2)))
            x = complex_matrix(rng, 1, n, sparse=bool(rng.integers(2))).ravel()
            got = sv.secular_append_row(sv.singular_spectrum(a, want_vectors=True), x).values
            ref = sv.singular_values(np.vstack([a, x]))
            worst = max(worst, np.max(np.abs(got - ref[:got.size])) / max(ref[0], 1.0))
        assert worst <= 1e-8

    def test_five_by_six(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            a = complex_matrix(rng, 5, 6)
            x = complex_matrix(rng, 1, 6).ravel()
            got = sv.secular_append_row(sv.singular_spectrum(a, want_vectors=True), x).values
            np.testing.assert_allclose(got, sv.singular_values(np.vstack([a, x])), rtol=1e-8, atol=1e-12)

    def test_secular_residual(self):
        rng = np.random.default_rng(42)
        a = complex_matrix(rng, 7, 8)
        x = complex_matrix(rng, 1, 8).ravel()
        spec = sv.singular_spectrum(a, want_vectors=True)
        poles = spec.padded() ** 2
        w = np.abs(x @ spec.vectors) ** 2
        for backend in kernels.BACKENDS:
            _, resid = kernels.secular_roots(poles, w, backend=backend)
            assert resid.max() <= 1e-9

    def test_repeated_poles_deflate(self):
        # identity 3x4 has sigma = 1 three times and a zero; the append is still exact
        a = np.eye(3, 4)
        x = np.array([1.0, 1.0, 0.0, 2.0])
        got = sv.secular_append_row(sv.singular_spectrum(a, want_vectors=True), x).values
        np.testing.assert_allclose(got, sv.singular_values(np.vstack([a, x])), atol=1e-12)


class TestWindowInequality:
    def test_zero_row(self):
        rng = np.random.default_rng(42)
        res = sv.window_product_inequality(complex_matrix(rng, 4, 5), np.zeros(5), 2, 3)
        assert res.rhs == 0 and res.holds

    def test_bounds(self):
        with pytest.raises(InvalidParameter):
            sv.window_product_inequality(np.eye(4), np.ones(4), 1, 2)
        with pytest.raises(InvalidParameter):
            sv.window_product_inequality(np.eye(4), np.ones(4), 2, 4)

    def test_all_windows_six_by_eight(self):
        rng = np.random.default_rng(42)
        checks = 0
        for _ in range(300):
            a = complex_matrix(rng, 6, 8, sparse=bool(rng.integers(2)))
            x = complex_matrix(rng, 1, 8).ravel()
            for ell in range(1, 8):
                for k in range(2, ell + 2):
                    res = sv.window_product_inequality(a, x, k, ell)
                    assert res.holds, (k, ell, res)
                    checks += 1
        assert checks == 300 * 28

    def test_single_value_window(self):
        rng = np.random.default_rng(42)
        for _ in range(200):
            a = complex_matrix(rng, 5, 5)
            x = complex_matrix(rng, 1, 5).ravel()
            for ell in range(1, 5):
                assert sv.window_product_inequality(a, x, ell + 1, ell).holds


class TestBottomProjection:
    def test_full_dimension(self):
        rng = np.random.default_rng(42)
        spec = sv.singular_spectrum(complex_matrix(rng, 5, 5), want_vectors=True)
        x = complex_matrix(rng, 1, 5).ravel()
        np.testing.assert_allclose(sv.bottom_projection(spec, 5, x)[0], np.linalg.norm(x), rtol=1e-12)

    def test_top_vector_is_orthogonal(self):
        rng = np.random.default_rng(42)
        spec = sv.singular_spectrum(complex_matrix(rng, 6, 6), want_vectors=True)
        assert sv.bottom_projection(spec, 5, spec.vectors[:, 0])[0] <= 1e-9

    def test_pythagoras_idempotent_self_adjoint(self):
        rng = np.random.default_rng(42)
        spec = sv.singular_spectrum(complex_matrix(rng, 7, 8), want_vectors=True)
        x = complex_matrix(rng, 1, 8).ravel()
        y = complex_matrix(rng, 1, 8).ravel()
        norm, px = sv.bottom_projection(spec, 3, x)
        np.testing.assert_allclose(norm ** 2 + np.linalg.norm(x - px) ** 2, np.linalg.norm(x) ** 2, rtol=1e-10)
        np.testing.assert_allclose(sv.bottom_projection(spec, 3, px)[1], px, atol=1e-10)
        py = sv.bottom_projection(spec, 3, y)[1]
        np.testing.assert_allclose(np.vdot(px, y), np.vdot(x, py), atol=1e-10)

    def test_rank_range(self):
        spec = sv.singular_spectrum(np.eye(3), want_vectors=True)
        with pytest.raises(InvalidParameter):
            sv.bottom_projection(spec, 4, np.ones(3))


class TestCirculant:
    def test_permutation(self):
        res = sv.circulant_lsv(2, 0)
        assert res.bound == 1 and abs(res.exact - 1) < 1e-12 and res.bound_ok and res.det_ok

    def test_root_of_unity(self):
        res = sv.circulant_lsv(3, 1)
        assert res.bound == 0 and res.exact < 1e-12 and res.det_ok

    def test_s3_z2(self):
        # |2^3 - 1| / 3^2 = 7/9
        res = sv.circulant_lsv(3, 2)
        np.testing.assert_allclose(res.bound, 7 / 9, rtol=1e-15)
        np.testing.assert_allclose(res.exact, 1.0, rtol=1e-12)
        assert res.bound_ok

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 12), st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False))
    def test_bound_and_determinant(self, s, z):
        res = sv.circulant_lsv(s, z)
        assert res.bound_ok and res.det_ok


class TestNormInequalities:
    def test_zero_row_tight(self):
        rng = np.random.default_rng(42)
        a = complex_matrix(rng, 4, 4)
        rep = sv.norm_inequality_suite(a, np.vstack([a, np.zeros(4)]), a)
        assert abs(rep.interlacing_slack) <= 1e-12

    def test_schur_tight_on_ones(self):
        a = np.ones((3, 3))
        rep = sv.norm_inequality_suite(a, np.vstack([a, np.ones(3)]), a)
        assert abs(rep.schur_slack) <= 1e-12

    def test_random_sparse(self):
        rng = np.random.default_rng(42)
        for _ in range(2000):
            n = int(rng.integers(1, 20))
            a = (rng.random((n, n)) < 3 / n).astype(np.float64)
            ap = np.vstack([a, (rng.random((1, n)) < 3 / n)])
            b = a + 0.1 * rng.standard_normal((n, n))
            assert sv.norm_inequality_suite(a, ap, b).ok(1e-9)

    def test_shape_checks(self):
        with pytest.raises(InvalidParameter):
            sv.norm_inequality_suite(np.eye(2), np.eye(2), np.eye(2))


class TestRearrangement:
    @given(st.lists(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
                    min_size=1, max_size=30))
    def test_invariants(self, vals):
        v = np.array(vals)
        rr = sv.rearrange(v)
        np.testing.assert_array_equal(np.sort(rr.values), np.sort(np.abs(v)))
        assert np.all(np.diff(rr.values) <= 0)
        np.testing.assert_array_equal(np.abs(v)[rr.order], rr.values)
        norm = np.linalg.norm(v)
        if norm > 0:
            assert rr.star(1) >= norm / math.sqrt(v.size) - 1e-12

    def test_level_set_matches_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            v = np.round(rng.standard_normal(40) + 1j * rng.standard_normal(40), 1)
            delta = 0.3
            centers = np.append(v, 0)
            ref = max(int(np.sum(np.abs(v - c) <= delta)) for c in centers)
            assert sv.largest_level_set(v, delta) == ref


class TestSpreadness:
    def test_zero_column_kernel(self):
        a = np.zeros((6, 6), dtype=np.int8)
        a[:, :] = np.eye(6, k=1, dtype=np.int8)
        a[:, 2] = 0
        m = sv.ShiftedMatrix(BinaryMatrix.from_dense(a), 0)
        rep = sv.spreadness_probe(m, 1e-8, 1.0, delta=0.01)
        v = rep.vectors[0]
        assert v.sigma < 1e-12
        np.testing.assert_allclose(v.profile, [1, 0, 0, 0, 0, 0], atol=1e-12)
        assert v.level_set == 5

    def test_empty_report_when_no_small_value(self):
        m = sv.ShiftedMatrix(BinaryMatrix.identity(4), 3)
        assert sv.spreadness_probe(m, 1e-3, 1.0).vectors == []

    @settings(max_examples=100, deadline=None)
    @given(st.integers(20, 80), st.integers(0, 2 ** 32 - 1), st.floats(0.5, 3.0))
    def test_zero_level_bound_is_a_theorem(self, n, seed, d):
        rng = np.random.default_rng(seed)
        a = (rng.random((n, n)) < d / n).astype(np.float64)
        zero_rows = int(np.count_nonzero(a.sum(axis=1) == 0))
        z = complex(*rng.normal(size=2))
        v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        v /= np.linalg.norm(v)
        resid = float(np.linalg.norm((a - z * np.eye(n)) @ v))
        applies, _, holds = sv.zero_level_bound(v, resid, z, zero_rows, d, n)
        if applies:
            assert holds

    @pytest.mark.slow
    def test_extracted_matrix_spread(self):
        n = 2000
        params = ModelParams(n, 4, seed=42)
        ok = 0
        for t in range(100):
            b = sample_modified(params, t)
            proc = build_process(b, params, 42, t)
            bt = b.principal(proc.order[:proc.m])
            rep = sv.spreadness_probe(sv.ShiftedMatrix(bt, 1 + 1j), math.inf, 4.0, n=n)
            ok += rep.vectors[0].star_ok
        assert ok >= 95


class TestBalancedBasis:
    def test_single_coordinate(self):
        n = 50
        res = sv.balanced_basis(np.eye(n)[:, :1])
        assert res.literal_score == pytest.approx(n)
        np.testing.assert_allclose(np.abs(res.basis[:, 0]), np.eye(n)[:, 0], atol=1e-12)

    def test_two_coordinates_mix(self):
        res = sv.balanced_basis(np.eye(8)[:, :2])
        mods = np.abs(res.basis)
        np.testing.assert_allclose(mods[:2], np.full((2, 2), 1 / math.sqrt(2)), atol=1e-12)
        np.testing.assert_allclose(mods[2:], 0, atol=1e-12)

    def test_orthonormal_same_span(self):
        rng = np.random.default_rng(42)
        q = unitary_group.rvs(30, random_state=rng)[:, :5]
        res = sv.balanced_basis(q, seed=3)
        np.testing.assert_allclose(res.basis.conj().T @ res.basis, np.eye(5), atol=1e-10)
        proj = q @ q.conj().T
        np.testing.assert_allclose(proj @ res.basis, res.basis, atol=1e-10)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InvalidParameter):
            sv.balanced_basis(np.ones((4, 2)))

    def test_random_subspaces_clear_floor(self):
        rng = np.random.default_rng(42)
        scores = [sv.balanced_basis(unitary_group.rvs(200, random_state=rng)[:, :10], seed=t).literal_score
                  for t in range(100)]
        assert np.mean(np.array(scores) >= 0.1) >= 0.9


class TestIterationBound:
    def test_trivial_case(self):
        assert sv.iteration_bound(100, 60, 2).steps == 0

    def test_growth_step_arithmetic(self):
        assert sv.growth_step(2 ** 10, 2 ** 20, 2) == 1
        alpha = (10 * math.log(2)) ** -2
        num = alpha * 2 ** 10
        den = 2 ** 15 * (2 + 10 * math.log(2))
        assert 21 < num < 22 and 2.9e5 < den < 3.0e5

    def test_bound_holds(self):
        res = sv.iteration_bound(10 ** 6, 10 ** 3, 4)
        assert res.holds and res.bound == pytest.approx(2 ** 17 * 4 * math.log(1000) ** 4)
