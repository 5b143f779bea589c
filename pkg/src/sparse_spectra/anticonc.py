"""Monte Carlo concentration functions and anticoncentration checks."""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import stats

from . import constants, kernels
from .errors import InvalidParameter, PreconditionViolated
from .rng import stream
from .sv import largest_level_set

Sampler = Callable[[np.random.Generator, int], np.ndarray]

WILSON_LEVEL = 0.99


def wilson_interval(hits: int, trials: int, level: float = WILSON_LEVEL) -> tuple[float, float]:
    if trials < 1:
        raise InvalidParameter("need at least one trial")
    zq = stats.norm.ppf(0.5 + level / 2)
    p = hits / trials
    den = 1 + zq * zq / trials
    mid = (p + zq * zq / (2 * trials)) / den
    half = zq * math.sqrt(p * (1 - p) / trials + zq * zq / (4 * trials * trials)) / den
    return max(0.0, float(mid - half)), min(1.0, float(mid + half))


@dataclass(frozen=True)
class ConcentrationEstimate:
    """Best sample-centred ball mass at radius t and at 2t (brackets the supremum)."""

    radius: float
    value: float
    value_wide: float
    trials: int
    half_width: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return asdict(self)


def _best_ball(samples: np.ndarray, radius: float, max_centers: int, rng) -> int:
    centers = np.unique(samples)
    if centers.size > max_centers:
        centers = rng.choice(centers, max_centers, replace=False)
    return int(kernels.ball_counts(samples, centers, radius).max())


def concentration_from_samples(samples, t: float, max_centers: int = 4096,
                               seed: int = 0) -> ConcentrationEstimate:
    samples = np.asarray(samples, dtype=np.complex128).ravel()
    if t < 0:
        raise InvalidParameter("radius must be non-negative")
    n = samples.size
    rng = stream(seed, "levy-centers")
    hits = _best_ball(samples, t, max_centers, rng)
    rng = stream(seed, "levy-centers")
    hits_wide = _best_ball(samples, 2 * t, max_centers, rng)
    lo, hi = wilson_interval(hits, n)
    return ConcentrationEstimate(t, hits / n, hits_wide / n, n, (hi - lo) / 2, lo, hi)


def levy_estimate(sampler: Sampler, t: float, trials: int, seed: int = 0,
                  max_centers: int = 4096) -> ConcentrationEstimate:
    """Estimate sup_z P(|G - z| <= t) from ``trials`` draws of ``sampler(rng, size)``."""
    if trials < 1000:
        raise InvalidParameter("levy_estimate needs at least 1000 trials")
    samples = sampler(stream(seed, "levy"), trials)
    return concentration_from_samples(samples, t, max_centers, seed)


# samplers --------------------------------------------------------------------------

def constant(c: complex = 0.0) -> Sampler:
    return lambda rng, size: np.full(size, c, dtype=np.complex128)


def bernoulli(p: float = 0.5, scale: complex = 1.0) -> Sampler:
    return lambda rng, size: scale * (rng.random(size) < p).astype(np.complex128)


def bernoulli_sum(weights, p: float = 0.5) -> Sampler:
    """sum_i w_i xi_i with xi_i iid Ber(p)."""
    w = np.asarray(weights, dtype=np.complex128)

    def draw(rng, size):
        return (rng.random((size, w.size)) < p) @ w
    return draw


# Kolmogorov-Rogozin --------------------------------------------------------------------

class LKRResult(NamedTuple):
    lhs: float
    lhs_lower: float
    rhs: float
    passed: bool
    skipped: bool
    term_levels: np.ndarray


def lkr_check(samplers: Sequence[Sampler], r: float, trials: int, seed: int = 0,
              c_fit: float = constants.C_FIT["lkr"]) -> LKRResult:
    """L(sum xi_i, r) <= C / sqrt(sum (1 - L(xi_i, r))) on one shared draw matrix.

    The sum uses its upper (2r) bracket and each term its lower (r) bracket,
    so both approximations make the check harder to pass.
    """
    if trials < 1000:
        raise InvalidParameter("lkr_check needs at least 1000 trials")
    draws = np.column_stack([np.asarray(s(stream(seed, "lkr", i), trials), dtype=np.complex128)
                             for i, s in enumerate(samplers)])
    levels = np.array([concentration_from_samples(draws[:, i], r, seed=seed).value
                       for i in range(draws.shape[1])])
    total = concentration_from_samples(draws.sum(axis=1), r, seed=seed)
    spread = float(np.sum(1 - levels))
    if spread <= 0:
        return LKRResult(total.value_wide, total.value, math.inf, True, True, levels)
    rhs = c_fit / math.sqrt(spread)
    return LKRResult(total.value_wide, total.value, rhs, total.value_wide <= rhs, False, levels)


# slice anticoncentration --------------------------------------------------------------------

class SliceResult(NamedTuple):
    estimate: ConcentrationEstimate
    gamma: float
    bound: float
    passed: bool


def level_gamma(v, delta: float) -> float:
    """1 - (largest 2 delta sample-centred level set)/n; any delta-ball lies in such a set."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    return 1.0 - largest_level_set(v, 2 * delta) / v.size


def slice_bound(gamma: float, m: int, c_fit: float = constants.C_FIT["slice"]) -> float:
    return c_fit * ((gamma * m) ** -0.5 + math.exp(-gamma * gamma * m / c_fit))


def _check_slice(v: np.ndarray, m: int) -> None:
    if not 1 <= m <= v.size / 2:
        raise InvalidParameter("need 1 <= m <= n/2")


def sample_slice(rng: np.random.Generator, n: int, m: int, size: int) -> np.ndarray:
    """Row indices of ``size`` uniform m-subsets of range(n)."""
    keys = rng.random((size, n))
    return np.argpartition(keys, m - 1, axis=1)[:, :m]


def slice_mc(v, m: int, delta: float, trials: int, seed: int = 0,
             c_fit: float = constants.C_FIT["slice"], gamma: float | None = None) -> SliceResult:
    """Estimate L(sum_{i in S} v_i, delta) for S a uniform m-subset and compare to the bound."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    _check_slice(v, m)
    g = level_gamma(v, delta) if gamma is None else gamma
    if g <= 0:
        raise PreconditionViolated("v is concentrated on one level set (gamma = 0)")
    sums = np.empty(trials, dtype=np.complex128)
    chunk = 20_000
    for c, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        idx = sample_slice(stream(seed, "slice", c), v.size, m, size)
        sums[start:start + size] = v[idx].sum(axis=1)
    est = concentration_from_samples(sums, delta, seed=seed)
    bound = slice_bound(g, m, c_fit)
    return SliceResult(est, g, bound, est.value_wide <= bound)


def slice_law_exact(v, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Atoms and masses of sum_{i in S} v_i over all m-subsets (exhaustive; small n)."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    if math.comb(v.size, m) > 2_000_000:
        raise InvalidParameter("too many subsets to enumerate")
    sums = np.fromiter((v[list(s)].sum() for s in itertools.combinations(range(v.size), m)),
                       dtype=np.complex128, count=math.comb(v.size, m))
    atoms, counts = np.unique(np.round(sums, 12), return_counts=True)
    return atoms, counts / counts.sum()


def concentration_exact(atoms, masses, t: float) -> tuple[float, float]:
    """Best atom-centred closed-ball mass at t and 2t for a finite law."""
    atoms = np.asarray(atoms, dtype=np.complex128)
    masses = np.asarray(masses, dtype=np.float64)
    out = []
    for rad in (t, 2 * t):
        d = np.abs(atoms[:, None] - atoms[None, :]) <= rad
        out.append(float((d * masses[None, :]).sum(axis=1).max()))
    return out[0], out[1]


def hypergeom_max_pmf(n: int, k: int, m: int) -> float:
    return float(stats.hypergeom(n, k, m).pmf(np.arange(0, min(k, m) + 1)).max())


# projection anticoncentration ------------------------------------------------------------------

@dataclass
class ProjectionState:
    """Frozen part of one reveal step.

    ``matrix`` is B_{t-1} (square).  For ``which == "column"`` the random vector
    has length t-1 and is projected by P_{r, B^dag - conj(z) I}; for ``"row"`` the
    frozen new column ``new_column`` completes the wide matrix and the vector of
    length t is projected by P_{r, B* - zI}.  Coordinates in ``random_mask`` are
    a uniform {0,1} vector with ``ones`` ones; the rest equal ``fixed``.
    """

    matrix: np.ndarray
    which: str
    random_mask: np.ndarray
    ones: int
    fixed: np.ndarray
    new_column: np.ndarray | None = None

    def __post_init__(self):
        if self.which not in ("column", "row"):
            raise InvalidParameter("which must be 'column' or 'row'")
        t1 = self.matrix.shape[0]
        size = t1 if self.which == "column" else t1 + 1
        if self.random_mask.shape != (size,) or self.fixed.shape != (size,):
            raise InvalidParameter("mask and fixed part must match the vector length")
        if self.which == "row" and (self.new_column is None or self.new_column.shape != (t1,)):
            raise InvalidParameter("row mode needs the new column")
        if not 0 <= self.ones <= int(self.random_mask.sum()):
            raise InvalidParameter("ones count outside the random support")

    def with_ones(self, ones: int) -> "ProjectionState":
        return ProjectionState(self.matrix, self.which, self.random_mask, ones, self.fixed,
                               self.new_column)


class ProjectionResult(NamedTuple):
    status: str            # "ok" or "not-applicable"
    frequency: float
    half_width: float
    threshold: float
    trigger_value: float
    bound: float
    passed: bool | None
    trials: int


def projection_basis(state: ProjectionState, z: complex, r: int) -> np.ndarray:
    """Rows spanning the bottom r singular subspace used for the projection."""
    a = state.matrix.astype(np.complex128)
    k = a.shape[0]
    a[np.arange(k), np.arange(k)] -= z
    if state.which == "column":
        u, _, _ = np.linalg.svd(a)
        return u[:, k - r:].conj().T
    w = np.hstack([a, state.new_column.astype(np.complex128)[:, None]])
    _, _, vh = np.linalg.svd(w, full_matrices=True)
    return vh[k + 1 - r:]


def first_epoch_state(b, params, step: int, which: str = "row", seed: int = 0,
                      trial: int = 0) -> ProjectionState:
    """State before revealing v_{t} where t = m + 1 + step, from a revelation process."""
    from .walk import build_process, ordered_dense
    proc = build_process(b, params, seed, trial)
    t = proc.m + step
    if not proc.m <= t < proc.t2_end:
        raise InvalidParameter("step outside the first epoch")
    dense = ordered_dense(b, proc.order)
    in_t1 = proc.order[:t] < proc.t1_end
    if which == "column":
        vec = dense[:t, t].astype(np.complex128)
        mask = in_t1
    else:
        vec = dense[t, :t + 1].astype(np.complex128)
        vec[t] -= params.z
        vec = np.conj(vec)
        mask = np.append(in_t1, False)
    fixed = np.where(mask, 0, vec)
    ones = int(vec[mask].real.sum())
    return ProjectionState(dense[:t, :t], which, mask, ones, fixed,
                           dense[:t, t] if which == "row" else None)


def projection_anticonc(state: ProjectionState, z: complex, r: int, trials: int,
                        log_eps: float, seed: int = 0, threshold: float | None = None,
                        force: bool = False, log_inv_eps: float | None = None,
                        c_fit: float = constants.C_FIT["projection"]) -> ProjectionResult:
    """P(|P_r x| < eps_r) over resampled fixed-sum vectors x.

    The trigger sigma_{(t-1)-r/2}(B - zI) <= eps_r is checked in log space
    unless ``force``.  ``threshold`` overrides eps_r in the frequency itself.
    """
    k = state.matrix.shape[0]
    if not 1 <= r <= k:
        raise InvalidParameter("need 1 <= r <= t-1")
    a = state.matrix.astype(np.complex128)
    a[np.arange(k), np.arange(k)] -= z
    vals = np.linalg.svd(a, compute_uv=False)
    trig = float(vals[k - r // 2 - 1]) if r // 2 < k else 0.0
    log_trig = math.log(trig) if trig > 0 else -math.inf
    thr = math.exp(log_eps) if threshold is None else float(threshold)
    bound = c_fit * log_inv_eps ** -0.25 if log_inv_eps else math.inf
    if not force and log_trig > log_eps:
        return ProjectionResult("not-applicable", math.nan, math.nan, thr, trig, bound, None, 0)
    basis = projection_basis(state, z, r)
    support = np.nonzero(state.random_mask)[0]
    hits = 0
    chunk = 10_000
    for c, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        x = np.tile(state.fixed, (size, 1))
        if state.ones:
            pick = sample_slice(stream(seed, "projection", c), support.size, state.ones, size)
            rows = np.repeat(np.arange(size), state.ones)
            x[rows, support[pick.ravel()]] += 1.0
        norms = np.linalg.norm(x @ basis.T, axis=1)
        hits += int(np.count_nonzero(norms < thr))
    lo, hi = wilson_interval(hits, trials)
    freq = hits / trials
    return ProjectionResult("ok", freq, (hi - lo) / 2, thr, trig, bound, freq <= bound, trials)


def zero_coordinate_probability(support: int, ones: int) -> float:
    """P(x_j = 0) for a fixed coordinate of a uniform {0,1}^support vector with ``ones`` ones."""
    return 1.0 - ones / support


# documented instance families ---------------------------------------------------------------

FAMILIES = ("lkr_unit_phases", "lkr_single_bernoulli", "lkr_constants", "levy_binomial",
            "slice_half_half", "slice_random_unit", "slice_exact_small")


def _within(est: float, exact: float, trials: int, sigmas: float = 3.0) -> bool:
    sd = math.sqrt(max(exact * (1 - exact), 1e-12) / trials)
    return abs(est - exact) <= sigmas * sd


def run_family(name: str, trials: int = 1000, seed: int = 0, c_lkr: float = constants.C_FIT["lkr"],
               c_slice: float = constants.C_FIT["slice"]) -> dict:
    """One documented instance; returns a JSON-ready verdict record."""
    if name == "lkr_unit_phases":
        terms = [bernoulli(scale=np.exp(2j * np.pi * k / 100)) for k in range(100)]
        res = lkr_check(terms, 0.4, trials, seed, c_lkr)
        return {"family": name, "lhs": res.lhs, "rhs": res.rhs, "passed": bool(res.passed and not res.skipped)}
    if name == "lkr_single_bernoulli":
        res = lkr_check([bernoulli()], 0.1, trials, seed, c_lkr)
        return {"family": name, "lhs": res.lhs, "rhs": res.rhs,
                "passed": bool(res.passed and _within(res.lhs, 0.5, trials))}
    if name == "lkr_constants":
        res = lkr_check([constant(1.0)] * 5, 0.1, trials, seed, c_lkr)
        return {"family": name, "lhs": res.lhs, "rhs": None, "skipped": res.skipped,
                "passed": bool(res.skipped and res.lhs == 1.0)}
    if name == "levy_binomial":
        est = levy_estimate(bernoulli_sum(np.ones(100)), 0.0, max(trials, 1000) * 10, seed)
        exact = float(stats.binom(100, 0.5).pmf(50))
        return {"family": name, "estimate": est.value, "exact": exact,
                "passed": _within(est.value, exact, est.trials)}
    if name == "slice_half_half":
        v = np.r_[np.ones(50), np.zeros(50)]
        res = slice_mc(v, 20, 0.1, max(trials, 1000) * 10, seed, c_slice)
        exact = hypergeom_max_pmf(100, 50, 20)
        return {"family": name, "estimate": res.estimate.value, "exact": exact, "bound": res.bound,
                "passed": bool(res.passed and _within(res.estimate.value, exact, res.estimate.trials))}
    if name == "slice_random_unit":
        rng = stream(seed, "family-unit")
        v = rng.standard_normal(200) + 1j * rng.standard_normal(200)
        v /= np.linalg.norm(v)
        res = slice_mc(v, 50, 0.01, trials, seed, c_slice)
        return {"family": name, "estimate": res.estimate.value_wide, "gamma": res.gamma,
                "bound": res.bound, "passed": bool(res.passed and res.gamma >= 0.3)}
    if name == "slice_exact_small":
        v = stream(seed, "family-small").standard_normal(12)
        atoms, masses = slice_law_exact(v, 4)
        exact, _ = concentration_exact(atoms, masses, 0.3)
        res = slice_mc(v, 4, 0.3, max(trials, 1000) * 10, seed, c_slice)
        return {"family": name, "estimate": res.estimate.value, "exact": exact,
                "passed": _within(res.estimate.value, exact, res.estimate.trials)}
    raise InvalidParameter(f"unknown family {name!r}")
