"""Exact linear-algebra identities and inequalities checked on random instances."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import sv
from .rng import stream


@dataclass
class CheckResult:
    name: str
    instances: int
    failures: int
    worst: float        # largest error (identities) or most negative slack (inequalities)
    tolerance: float
    inconclusive: int = 0   # instances whose rounding allowance is at least 1e-6

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def _random_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Sparse 0/1, Gaussian complex, or 0/1 shifted by a random z, with equal odds."""
    kind = rng.integers(3)
    if kind == 0:
        return (rng.random((rows, cols)) < rng.uniform(0.1, 0.6)).astype(np.complex128)
    if kind == 1:
        return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))
    a = (rng.random((rows, cols)) < 4 / max(cols, 4)).astype(np.complex128)
    z = complex(*rng.normal(size=2))
    k = min(rows, cols)
    a[np.arange(k), np.arange(k)] -= z
    return a


def check_secular(instances: int = 1000, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """Row append by the secular equation against a fresh SVD; error relative to sigma_1."""
    rng = stream(seed, "suite-secular")
    worst, bad = 0.0, 0
    for _ in range(instances):
        cols = int(rng.integers(2, 41))
        rows = cols - int(rng.integers(0, 2))
        a = _random_matrix(rng, rows, cols)
        x = _random_matrix(rng, 1, cols).ravel()
        got = sv.secular_append_row(sv.singular_spectrum(a, want_vectors=True), x).values
        ref = sv.singular_values(np.vstack([a, x[None, :]]))
        err = float(np.max(np.abs(got - ref[:got.size]))) / max(float(ref[0]), 1e-300)
        worst = max(worst, err)
        bad += err > tol
    return CheckResult("secular_append_row", instances, bad, worst, tol)


def check_girko(instances: int = 200, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """prod sigma_i(M - zI) = |det(M - zI)| as a relative error of the products."""
    rng = stream(seed, "suite-girko")
    worst, bad = 0.0, 0
    for _ in range(instances):
        n = int(rng.integers(1, 65))
        a = (rng.random((n, n)) < rng.uniform(0.5, 6) / n).astype(np.complex128)
        z = complex(*rng.normal(size=2))
        a -= z * np.eye(n)
        log_sv = float(np.sum(np.log(sv.singular_values(a))))
        log_det = float(np.linalg.slogdet(a)[1])
        err = abs(math.expm1(log_sv - log_det))
        worst = max(worst, err)
        bad += err > tol
    return CheckResult("girko_product", instances, bad, worst, tol)


def check_circulant(draws: int = 100, s_max: int = 12, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    """|det((Y - zI)^dag (Y - zI))| = |z^s - 1|^2 for the cyclic shift Y."""
    rng = stream(seed, "suite-circulant")
    worst, bad, count = 0.0, 0, 0
    for _ in range(draws):
        z = complex(*rng.normal(size=2))
        for s in range(1, s_max + 1):
            res = sv.circulant_lsv(s, z)
            err = abs(res.gram_det - res.target) / max(res.target, 1e-300)
            worst = max(worst, err)
            bad += not res.det_ok
            count += 1
    return CheckResult("circulant_determinant", count, bad, worst, tol)


def check_norm_inequalities(instances: int = 10_000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """Cauchy interlacing for a row append, Weyl perturbation and the Schur bound."""
    rng = stream(seed, "suite-norms")
    worst, bad = math.inf, 0
    for _ in range(instances):
        cols = int(rng.integers(1, 13))
        rows = int(rng.integers(1, 13))
        a = _random_matrix(rng, rows, cols)
        ap = np.vstack([a, _random_matrix(rng, 1, cols)])
        b = a + 10.0 ** rng.uniform(-3, 0) * _random_matrix(rng, rows, cols)
        rep = sv.norm_inequality_suite(a, ap, b)
        worst = min(worst, min(rep))
        bad += not rep.ok(tol)
    return CheckResult("interlacing_weyl_schur", instances, bad, worst, tol)


def check_window_inequality(instances: int = 10_000, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    """The appended-row window product bound over random (matrix, row, k, ell)."""
    rng = stream(seed, "suite-window")
    worst, bad, vague = math.inf, 0, 0
    for _ in range(instances):
        cols = int(rng.integers(3, 13))
        rows = cols - int(rng.integers(0, 2))
        a = _random_matrix(rng, rows, cols)
        x = _random_matrix(rng, 1, cols).ravel()
        ell = int(rng.integers(1, cols))
        k = int(rng.integers(2, ell + 2))
        res = sv.window_product_inequality(a, x, k, ell, tol)
        if res.allowance >= 1e-6:
            vague += 1
        else:
            worst = min(worst, res.margin)
        bad += not res.holds
    return CheckResult("window_product_inequality", instances, bad, worst, tol, vague)


def run_suite(seed: int = 0, scale: float = 1.0) -> list[CheckResult]:
    """All exact checks; ``scale`` multiplies every instance count."""
    def count(base):
        return max(1, int(round(base * scale)))
    return [
        check_secular(count(1000), seed),
        check_girko(count(200), seed),
        check_circulant(count(100), 12, seed),
        check_norm_inequalities(count(10_000), seed),
        check_window_inequality(count(10_000), seed),
    ]
