import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from sparse_spectra.errors import InvalidParameter, ToleranceNotMet
from sparse_spectra.model import (BinaryMatrix, DegreeSequence, ModelParams, coupling_stats,
                                  degree_gamma, degseq_regular, joint_degree_histogram,
                                  poisson_degrees, poisson_tail_eps, rho_degree_law, rho_table,
                                  sample_configuration, sample_iid, sample_modified)
from sparse_spectra.walk import build_process


@st.composite
def binary_matrices(draw, max_dim=8):
    rows = draw(st.integers(1, max_dim))
    cols = draw(st.integers(1, max_dim))
    bits = draw(st.lists(st.integers(0, 1), min_size=rows * cols, max_size=rows * cols))
    return np.array(bits, dtype=np.int8).reshape(rows, cols)


class TestBinaryMatrix:
    def test_rejects_duplicates_and_out_of_range(self):
        with pytest.raises(InvalidParameter):
            BinaryMatrix(2, 2, [0, 0], [1, 1])
        with pytest.raises(InvalidParameter):
            BinaryMatrix(2, 2, [2], [0])
        with pytest.raises(InvalidParameter):
            BinaryMatrix.from_dense([[0, 2]])

    @given(binary_matrices())
    def test_dense_round_trip(self, a):
        m = BinaryMatrix.from_dense(a)
        np.testing.assert_array_equal(m.to_dense(), a)
        np.testing.assert_array_equal(m.row_sums(), a.sum(axis=1))
        np.testing.assert_array_equal(m.col_sums(), a.sum(axis=0))
        np.testing.assert_array_equal(m.transpose().to_dense(), a.T)

    @given(binary_matrices())
    def test_text_round_trip_is_bit_exact(self, a):
        m = BinaryMatrix.from_dense(a)
        text = m.to_text()
        back = BinaryMatrix.from_text(text)
        assert back.to_text() == text
        np.testing.assert_array_equal(back.to_dense(), a)

    def test_text_header_and_sorted_pairs(self):
        m = BinaryMatrix(3, 4, [2, 0, 0], [1, 3, 0])
        lines = m.to_text().splitlines()
        assert lines[0] == "3 4 3"
        assert lines[1:] == ["0 0", "0 3", "2 1"]

    def test_principal_and_permuted(self):
        rng = np.random.default_rng(42)
        a = (rng.random((7, 7)) < 0.4).astype(np.int8)
        m = BinaryMatrix.from_dense(a)
        idx = [5, 1, 3]
        np.testing.assert_array_equal(m.principal(idx).to_dense(), a[np.ix_(idx, idx)])
        perm = rng.permutation(7)
        moved = np.zeros_like(a)
        moved[np.ix_(perm, perm)] = a
        np.testing.assert_array_equal(m.permuted(perm).to_dense(), moved)

    def test_degree_sequence_json(self):
        degs = DegreeSequence((1, 2, 0), (0, 3, 0))
        assert DegreeSequence.from_json(degs.to_json()) == degs


class TestSampleIID:
    def test_full_density_gives_all_ones(self):
        m = sample_iid(ModelParams(3, 3))
        np.testing.assert_array_equal(m.to_dense(), np.ones((3, 3)))

    def test_mean_total_ones(self):
        params = ModelParams(1000, 4, seed=42)
        totals = [sample_iid(params, t).nnz for t in range(200)]
        assert 4000 - 3 * 63.2 <= np.mean(totals) <= 4000 + 3 * 63.2

    def test_deterministic(self):
        a = sample_iid(ModelParams(50, 2, seed=7))
        b = sample_iid(ModelParams(50, 2, seed=7))
        assert a.to_text() == b.to_text()

    def test_d_above_n_rejected(self):
        with pytest.raises(InvalidParameter):
            sample_iid(ModelParams(3, 4))

    def test_count_of_ones_is_binomial(self):
        n, d = 30, 3.0
        params = ModelParams(n, d, seed=42)
        counts = np.array([sample_iid(params, t).nnz for t in range(1000)])
        law = stats.binom(n * n, d / n)
        edges = np.unique(law.ppf(np.linspace(0, 1, 11)[1:-1]))
        bins = np.searchsorted(edges, counts, side="right")
        observed = np.bincount(bins, minlength=edges.size + 1)
        cdf = np.concatenate([[0.0], law.cdf(edges), [1.0]])
        expected = np.diff(cdf) * counts.size
        assert stats.chisquare(observed, expected).pvalue > 1e-3


class TestSampleModified:
    def test_block_means(self):
        params = ModelParams(100, 4, seed=42)
        ell = params.boost_size
        assert ell == 21
        core = 100 - ell
        dense = np.mean([sample_modified(params, t).to_dense(np.float64) for t in range(400)], axis=0)
        core_ones = dense[:core, :core].sum()
        band_ones = dense.sum() - core_ones
        # per-trial sd of a binomial count, divided by sqrt(trials)
        sd_core = math.sqrt(core ** 2 * 0.04 * 0.96 / 400)
        tau = params.boost_prob
        sd_band = math.sqrt((100 ** 2 - core ** 2) * tau * (1 - tau) / 400)
        assert abs(core_ones - core ** 2 * 4 / 100) <= 4 * sd_core
        assert abs(band_ones - (100 ** 2 - core ** 2) * tau) <= 4 * sd_band

    def test_boosted_band_expectation_at_2000(self):
        params = ModelParams(2000, 4, seed=42)
        core = 2000 - params.boost_size
        totals = []
        for t in range(50):
            m = sample_modified(params, t)
            totals.append(np.count_nonzero((m.row_idx >= core) | (m.col_idx >= core)))
        expect = (2000 ** 2 - core ** 2) * params.boost_prob
        assert abs(np.mean(totals) - expect) <= 4 * math.sqrt(expect / 50)

    def test_single_entry_frequency(self):
        hits = sum(1 in sample_modified(ModelParams(2000, 4, seed=s)).out_neighbors(1)
                   for s in range(10_000))
        p = 4 / 2000
        assert abs(hits / 10_000 - p) <= 3 * math.sqrt(p * (1 - p) / 10_000)

    def test_empty_boost_block_rejected_by_process_check(self):
        # (log n)^2 < n for every n, so the boosted block never fills the matrix;
        # an empty block (n = 2) is what the process check rejects
        with pytest.raises(InvalidParameter):
            ModelParams(2, 1.0, cutoff=1).check_process()
        with pytest.raises(InvalidParameter):
            ModelParams(0, 1.0)


class TestPoissonTail:
    def test_empty_sum(self):
        assert poisson_tail_eps(4, 0) == 1.0

    def test_closed_form(self):
        np.testing.assert_allclose(poisson_tail_eps(1, 1), 1 - math.exp(-1), rtol=1e-14)

    def test_partial_sum_oracle(self):
        mpmath.mp.dps = 40
        ref = 1 - mpmath.fsum(mpmath.mpf(4) ** k * mpmath.e ** -4 / mpmath.factorial(k) for k in range(8))
        assert abs(poisson_tail_eps(4, 8) - float(ref)) < 1e-12

    @given(st.floats(0.1, 20), st.integers(0, 30))
    def test_is_probability_and_monotone(self, d, cutoff):
        e0 = poisson_tail_eps(d, cutoff)
        e1 = poisson_tail_eps(d, cutoff + 1)
        assert 0 <= e1 <= e0 <= 1


class TestRho:
    def test_no_extraction_is_product_poisson(self):
        params = ModelParams(1000, 4, cutoff=60)
        for j, k in [(0, 0), (3, 5), (4, 4), (9, 1)]:
            ref = stats.poisson.pmf(j, 4) * stats.poisson.pmf(k, 4)
            np.testing.assert_allclose(rho_degree_law(j, k, params), ref, rtol=1e-9)

    def test_sums_to_one(self):
        table = rho_table(ModelParams(1000, 4, cutoff=8))
        assert abs(table.sum() - 1) <= 1e-9

    @pytest.mark.parametrize("d,cutoff", [(1.5, 3), (2.5, 4), (4.0, 5), (4.0, 8), (6.0, 9)])
    def test_marginal_is_a_law(self, d, cutoff):
        table = rho_table(ModelParams(1000, d, cutoff=cutoff))
        marginal = table.sum(axis=1)
        assert np.all(marginal >= 0)
        assert abs(marginal.sum() - 1) <= 1e-9

    def test_short_truncation_reports_tolerance(self):
        # a_max = 2 + 12 leaves a Chernoff tail near 3e-12 at d = 1
        with pytest.raises(ToleranceNotMet):
            rho_table(ModelParams(1000, 1.0, cutoff=2))

    def test_gamma_closed_form(self):
        # eps * E[X 1{X >= cutoff}] * P(Y >= cutoff) / d with E[X 1{X >= c}] = d P(Pois(d) >= c - 1)
        d, cutoff = 4.0, 5
        eps = poisson_tail_eps(d, cutoff)
        np.testing.assert_allclose(degree_gamma(d, cutoff), eps ** 2 * poisson_tail_eps(d, cutoff - 1),
                                   rtol=1e-10)

    def test_empirical_joint_histogram(self):
        params = ModelParams(4000, 4, cutoff=8, seed=42)
        table = rho_table(params)
        top = 12
        ref = np.zeros((top + 1, top + 1))
        ref[:top, :top] = table[:top, :top]
        ref[top, :top] = table[top:, :top].sum(axis=0)
        ref[:top, top] = table[:top, top:].sum(axis=1)
        ref[top, top] = table[top:, top:].sum()
        b = sample_modified(params)
        proc = build_process(b, params, 42)
        bm = b.principal(proc.order[:proc.m])
        hist = joint_degree_histogram(bm, top)
        assert np.max(np.abs(hist - ref)) <= 4 / math.sqrt(4000)


class TestCoupling:
    def test_zero_matrix_profile(self):
        assert coupling_stats(BinaryMatrix.zeros(5), 1.0, 0.5).profile == {0: 5}

    def test_identity_profile(self):
        assert coupling_stats(BinaryMatrix.identity(5), 1.0, 0.5).profile == {1: 5}

    def test_ratio_matches_direct_likelihood(self):
        rng = np.random.default_rng(42)
        n, d, tau = 6, 1.5, 0.6
        p = d / n
        a = (rng.random((n, n)) < 0.3).astype(np.int8)
        base = np.where(a == 1, p, 1 - p).prod()
        alt = 0.0
        for v in range(n):
            probs = np.full((n, n), p)
            probs[v, :] = tau
            probs[:, v] = tau
            alt += np.where(a == 1, probs, 1 - probs).prod() / n
        got = coupling_stats(BinaryMatrix.from_dense(a), d, tau).log_ratio
        np.testing.assert_allclose(got, math.log(alt / base), rtol=1e-10)

    def test_tv_estimate_and_importance_identity(self):
        n, d = 2000, 4.0
        tau = math.sqrt(math.log(n)) / n
        params = ModelParams(n, d, seed=42)
        ratios = np.exp([coupling_stats(sample_iid(params, t), d, tau).log_ratio for t in range(1000)])
        assert np.mean(np.abs(ratios - 1)) <= n ** -0.25
        se = ratios.std(ddof=1) / math.sqrt(ratios.size)
        assert abs(ratios.mean() - 1) <= 3 * se


class TestConfiguration:
    def test_single_edge(self):
        g, simple = sample_configuration(DegreeSequence([1], [1]), seed=0)
        assert simple and g.mult.tolist() == [1]

    def test_forced_double_edge(self):
        for t in range(5):
            g, simple = sample_configuration(DegreeSequence([2], [2]), seed=0, trial=t)
            assert not simple and g.mult.tolist() == [2]

    def test_mismatched_totals(self):
        with pytest.raises(InvalidParameter):
            sample_configuration(DegreeSequence([1, 1], [1, 0]), seed=0)

    def test_uniform_over_two_matchings(self):
        degs = DegreeSequence([1, 1], [1, 1])
        ident = 0
        for t in range(10_000):
            g, _ = sample_configuration(degs, seed=42, trial=t)
            ident += bool(np.array_equal(g.rows, g.cols))
        assert abs(ident / 10_000 - 0.5) <= 3 * 0.5 / 100

    def test_poisson_simple_fraction_in_pilot_band(self):
        from sparse_spectra.constants import PILOTS
        lo, hi = PILOTS["configuration_simple"]["band"]
        hits = [sample_configuration(poisson_degrees(500, 4.0, 42, t), 42, t)[1] for t in range(1000)]
        assert lo <= np.mean(hits) <= hi

    def test_pilot_matches_double_edge_poisson_limit(self):
        # double edges are asymptotically Pois(E[D(D-1)]^2 / (2 E[D]^2)) = Pois(d^2 / 2)
        from sparse_spectra.constants import PILOTS
        p = PILOTS["configuration_simple"]["value"]
        ref = math.exp(-4.0 ** 2 / 2)
        assert abs(p - ref) <= 4 * math.sqrt(ref * (1 - ref) / 4000)

    def test_poisson_degrees_balanced(self):
        degs = poisson_degrees(300, 3.0, seed=42)
        assert sum(degs.out) == sum(degs.in_)


class TestRegularity:
    def test_constant_degrees_regular(self):
        degs = DegreeSequence([4] * 100, [4] * 100)
        # bullet 4 needs sum d^{-out} in = e d e^{-d} m, which constant degree 4 misses unless mu is loose
        verdict = degseq_regular(degs, 4.0, 0.01, 100.0, 100)
        assert verdict.bullet in (None, 4)
        assert degseq_regular(degs, 4.0, 1.0, 100.0, 100).regular

    def test_half_size_fails_first_bullet(self):
        degs = DegreeSequence([4] * 50, [4] * 50)
        v = degseq_regular(degs, 4.0, 0.1, 100.0, 100)
        assert not v.regular and v.bullet == 1

    def test_prefix_reduction_matches_brute_force(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            m = 8
            out = rng.poisson(2, m)
            inn = rng.poisson(2, m)
            tot = out + inn
            C, d = 0.9, 2.0
            brute_ok = all(tot[list(s)].sum() <= C * (d + math.log(m / k)) * k
                           for k in range(1, m + 1) for s in itertools.combinations(range(m), k))
            v = degseq_regular(DegreeSequence(out, inn), d, 10.0, C, m)
            assert (v.bullet == 2) == (not brute_ok)

    def test_extracted_matrix_is_regular(self):
        params = ModelParams(4000, 4, cutoff=8, seed=42)
        mu = math.sqrt(params.eps)
        ok = 0
        for t in range(200):
            b = sample_modified(params, t)
            proc = build_process(b, params, 42, t)
            bm = b.principal(proc.order[:proc.m])
            ok += degseq_regular(DegreeSequence.of(bm), 4.0, mu, 16.0, 4000).regular
        assert ok >= 198
