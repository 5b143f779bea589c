import numpy as np

from sparse_spectra import suite


class TestChecks:
    def test_each_check_passes(self):
        for res in suite.run_suite(seed=3, scale=0.05):
            assert res.passed, res
            assert res.instances >= 1

    def test_result_record(self):
        res = suite.CheckResult("x", 10, 1, 0.5, 1e-8)
        d = res.to_dict()
        assert d["passed"] is False and d["inconclusive"] == 0

    def test_secular_worst_is_small(self):
        res = suite.check_secular(200, seed=5)
        assert res.worst <= 1e-10

    def test_circulant_counts_every_size(self):
        res = suite.check_circulant(draws=3, s_max=5)
        assert res.instances == 15

    def test_random_matrix_kinds(self):
        rng = np.random.default_rng(42)
        shapes = {suite._random_matrix(rng, 3, 4).shape for _ in range(30)}
        assert shapes == {(3, 4)}
