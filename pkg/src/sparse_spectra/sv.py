"""Singular values of shifted 0-1 matrices and the exact row-append update."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.stats import unitary_group

from . import constants, kernels
from .errors import InvalidParameter, ResourceLimit, ToleranceNotMet
from .model import BinaryMatrix
from .rng import stream

EPS = np.finfo(np.float64).eps


def dense_cap() -> int:
    return int(os.getenv("SPARSE_SPECTRA_DENSE_CAP", constants.DENSE_CAP))


def check_cap(*dims: int) -> None:
    cap = dense_cap()
    if max(dims, default=0) > cap:
        raise ResourceLimit(f"dense dimension {max(dims)} exceeds cap {cap}")


def shift_identity(rows: int, cols: int) -> np.ndarray:
    """I_{rows x cols}: ones at (i, i) for i < min(rows, cols)."""
    return np.eye(rows, cols)


@dataclass(frozen=True, eq=False)
class ShiftedMatrix:
    """Dense ``base - z I`` for a square or one-row-short 0-1 matrix."""

    base: BinaryMatrix
    z: complex

    def __post_init__(self):
        if self.base.rows not in (self.base.cols, self.base.cols - 1):
            raise InvalidParameter("shifted matrices must be n x n or (n-1) x n")

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    @cached_property
    def dense(self) -> np.ndarray:
        check_cap(*self.shape)
        a = self.base.to_dense(np.complex128)
        a -= self.z * shift_identity(*self.shape)
        a.setflags(write=False)
        return a


@dataclass(frozen=True, eq=False)
class SingularSpectrum:
    """Non-increasing singular values, optional right-singular basis.

    ``vectors`` (when present) is cols x cols; its columns follow the order of
    ``padded()``, i.e. zero singular values of wide matrices come last.
    """

    values: np.ndarray
    rows: int
    cols: int
    vectors: np.ndarray | None = None
    residual: float = 0.0

    def padded(self) -> np.ndarray:
        """Values extended with zeros to length ``cols``."""
        out = np.zeros(self.cols)
        out[:self.values.size] = self.values
        return out

    def sigma(self, i: int) -> float:
        """1-based sigma_i, zero beyond min(rows, cols)."""
        if not 1 <= i <= self.cols:
            raise InvalidParameter(f"singular value index {i} out of range")
        return float(self.values[i - 1]) if i <= self.values.size else 0.0

    def to_csv(self) -> str:
        rows = ["index,sigma"] + [f"{i},{v!r}" for i, v in enumerate(self.values.tolist(), start=1)]
        return "\n".join(rows) + "\n"


def _as_array(m) -> np.ndarray:
    if isinstance(m, ShiftedMatrix):
        return m.dense
    if isinstance(m, BinaryMatrix):
        check_cap(*m.shape)
        return m.to_dense(np.float64)
    a = np.asarray(m)
    if a.ndim != 2:
        raise InvalidParameter("expected a matrix")
    return a


def singular_spectrum(m, want_vectors: bool = False) -> SingularSpectrum:
    """Full dense SVD under the configured dimension cap."""
    a = _as_array(m)
    check_cap(*a.shape)
    rows, cols = a.shape
    if want_vectors:
        _, s, vh = np.linalg.svd(a, full_matrices=True)
        vecs = vh.conj().T
    else:
        s = np.linalg.svd(a, compute_uv=False)
        vecs = None
    top = float(s[0]) if s.size else 0.0
    return SingularSpectrum(s, rows, cols, vecs, EPS * max(rows, cols, 1) * top)


def singular_values(m) -> np.ndarray:
    return singular_spectrum(m).values


# row append ---------------------------------------------------------------------------

def secular_append_row(spec: SingularSpectrum, x, max_iter: int = 200, backend=None) -> SingularSpectrum:
    """Singular values of M with the row ``x`` appended, from the spectrum of M.

    Squared values of the new matrix are the roots of
    1 + sum_i w_i / (sigma_i^2 - t) with w_i = |x v_i|^2.  Repeated poles and
    zero weights are deflated first; every remaining root is bisected inside
    its pole bracket.
    """
    if spec.vectors is None:
        raise InvalidParameter("row append needs the right-singular basis")
    x = np.asarray(x, dtype=np.complex128).ravel()
    if x.size != spec.cols:
        raise InvalidParameter("row length does not match the column count")
    poles = spec.padded() ** 2
    w = np.abs(x @ spec.vectors) ** 2
    scale = poles[0] + float(np.vdot(x, x).real) if poles.size else 0.0
    merge_tol = 8 * EPS * scale
    # group near-equal poles; all but one copy of a group is an exact root
    fixed: list[float] = []
    act_p: list[float] = []
    act_w: list[float] = []
    i = 0
    m = poles.size
    while i < m:
        j = i + 1
        while j < m and poles[i] - poles[j] <= merge_tol:
            j += 1
        fixed.extend(poles[i + 1:j].tolist())
        weight = float(w[i:j].sum())
        # dropping weight w moves its root by at most w
        if weight > merge_tol:
            act_p.append(float(poles[i]))
            act_w.append(weight)
        else:
            fixed.append(float(poles[i]))
        i = j
    roots, resid = kernels.secular_roots(np.array(act_p), np.array(act_w), max_iter, backend)
    if resid.size and resid.max() > 1e-9:
        raise ToleranceNotMet(f"secular residual {resid.max():.3e} above 1e-9")
    sq = np.sort(np.concatenate([roots, np.array(fixed)]))[::-1]
    vals = np.sqrt(np.clip(sq, 0.0, None))[:min(spec.rows + 1, spec.cols)]
    return SingularSpectrum(vals, spec.rows + 1, spec.cols, None, spec.residual)


class WindowCheck(NamedTuple):
    lhs: float
    rhs: float
    log_lhs: float
    log_rhs: float
    margin: float
    holds: bool
    allowance: float = 0.0   # rounding allowance added to rel_tol


def _log_prod(vals: np.ndarray) -> float:
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(vals)))


def _relative_errors(residual: float, vals: np.ndarray) -> float:
    if residual == 0:
        return 0.0
    vals = np.abs(vals)   # LAPACK may report -0.0
    with np.errstate(divide="ignore"):
        return float(np.sum(np.where(vals > 0, residual / vals, np.inf)))


def window_product_inequality(m, x, k: int, ell: int, rel_tol: float = 1e-9) -> WindowCheck:
    """Lower bound on a window of singular values after appending the row ``x``.

    lhs = prod_{i=k}^{ell+1} sigma_i(M'),
    rhs = |P x^dag| (|x|^2 + sigma_{k-1}(M)^2)^{-1/2} prod_{i=k-1}^{ell} sigma_i(M),
    with P the projection onto the cols - ell smallest right-singular vectors of M.
    """
    a = _as_array(m).astype(np.complex128)
    x = np.asarray(x, dtype=np.complex128).ravel()
    cols = a.shape[1]
    if x.size != cols:
        raise InvalidParameter("row length does not match the column count")
    if not (1 <= k - 1 <= ell < cols):
        raise InvalidParameter("need 1 <= k-1 <= ell < cols")
    spec = singular_spectrum(a, want_vectors=True)
    sig = spec.padded()
    new = singular_spectrum(np.vstack([a, x[None, :]])).values
    new_sig = np.zeros(cols)
    new_sig[:new.size] = new
    proj = float(np.linalg.norm(x @ spec.vectors[:, ell:]))
    log_lhs = _log_prod(new_sig[k - 1:ell + 1])
    if proj > 0:
        log_rhs = math.log(proj) - 0.5 * math.log(float(np.vdot(x, x).real) + sig[k - 2] ** 2) \
            + _log_prod(sig[k - 2:ell])
    else:
        log_rhs = -math.inf
    if log_rhs == -math.inf:
        margin = math.inf
    else:
        margin = math.expm1(log_lhs - log_rhs) if log_lhs > -math.inf else -1.0
    # first-order rounding allowance: each factor carries absolute error ~ residual
    new_res = EPS * max(a.shape[0] + 1, cols) * float(new_sig[0])
    slack = _relative_errors(spec.residual, sig[k - 2:ell]) + _relative_errors(new_res, new_sig[k - 1:ell + 1])
    return WindowCheck(math.exp(log_lhs), math.exp(log_rhs) if log_rhs > -math.inf else 0.0,
                       log_lhs, log_rhs, margin, margin >= -(rel_tol + slack), slack)


def bottom_projection(spec: SingularSpectrum, r: int, x) -> tuple[float, np.ndarray]:
    """Project ``x`` onto the span of the ``r`` smallest right-singular vectors."""
    if spec.vectors is None:
        raise InvalidParameter("projection needs the right-singular basis")
    if not 0 <= r <= spec.cols:
        raise InvalidParameter("projection rank out of range")
    x = np.asarray(x, dtype=np.complex128).ravel()
    basis = spec.vectors[:, spec.cols - r:]
    coeffs = basis.conj().T @ x
    return float(np.linalg.norm(coeffs)), basis @ coeffs


class CirculantCheck(NamedTuple):
    bound: float
    exact: float
    gram_det: float
    target: float
    bound_ok: bool
    det_ok: bool


def cyclic_shift(s: int) -> np.ndarray:
    """Y with Y[i, j] = 1 iff i = j + 1 mod s."""
    y = np.zeros((s, s))
    y[(np.arange(s) + 1) % s, np.arange(s)] = 1.0
    return y


def circulant_lsv(s: int, z: complex) -> CirculantCheck:
    """Closed-form lower bound on the least singular value of Y - zI against the SVD."""
    if s < 1:
        raise InvalidParameter("s must be positive")
    z = complex(z)
    bound = abs(z ** s - 1) / (abs(z) + 1) ** (s - 1)
    a = cyclic_shift(s) - z * np.eye(s)
    exact = float(singular_values(a)[-1])
    gram_det = float(abs(np.linalg.det(a.conj().T @ a)))
    target = abs(z ** s - 1) ** 2
    # absolute floor: determinant error of a Gram matrix with entries up to (1+|z|)^2
    floor = 1e3 * EPS * (1 + abs(z)) ** (2 * s)
    return CirculantCheck(bound, exact, gram_det, target, exact >= bound - 1e-10,
                          abs(gram_det - target) <= 1e-8 * target + floor)


class NormReport(NamedTuple):
    interlacing_slack: float
    weyl_slack: float
    schur_slack: float

    def ok(self, tol: float = 1e-9) -> bool:
        return min(self) >= -tol


def norm_inequality_suite(m, m_prime, b) -> NormReport:
    """Worst slack of interlacing (row append), Weyl perturbation and the Schur bound."""
    a = _as_array(m)
    ap = _as_array(m_prime)
    bb = _as_array(b)
    if ap.shape != (a.shape[0] + 1, a.shape[1]) or not np.array_equal(ap[:-1], a):
        raise InvalidParameter("m_prime must be m with one appended row")
    if bb.shape != a.shape:
        raise InvalidParameter("perturbation must match the shape of m")
    cols = a.shape[1]
    s = singular_spectrum(a).padded()
    sp = singular_spectrum(ap).padded()
    inter = min(np.min(sp - s), np.min(s[:-1] - sp[1:]) if cols > 1 else math.inf)
    sb = singular_spectrum(bb).padded()
    gap = float(singular_values(a - bb)[0]) if a.size else 0.0
    weyl = gap - float(np.max(np.abs(s - sb)))
    one_one = float(np.abs(a).sum(axis=0).max())
    inf_inf = float(np.abs(a).sum(axis=1).max())
    schur = math.sqrt(one_one * inf_inf) - float(s[0])
    return NormReport(float(inter), weyl, schur)


# coordinate structure ------------------------------------------------------------------

@dataclass(frozen=True)
class Rearrangement:
    """Moduli sorted non-increasingly together with the sorting permutation."""

    values: np.ndarray
    order: np.ndarray

    def star(self, k: int) -> float:
        """1-based v*_k (0 past the end)."""
        return float(self.values[k - 1]) if 1 <= k <= self.values.size else 0.0


def rearrange(v) -> Rearrangement:
    mod = np.abs(np.asarray(v).ravel())
    order = np.argsort(-mod, kind="stable")
    return Rearrangement(mod[order], order)


def largest_level_set(v, delta: float, backend=None) -> int:
    """max over theta in {v_i} u {0} of #{i : |v_i - theta| <= delta}."""
    v = np.asarray(v, dtype=np.complex128).ravel()
    centers = np.concatenate([v, [0.0]])
    return int(kernels.ball_counts(v, centers, delta, backend).max())


@dataclass
class VectorSpread:
    sigma: float
    profile: np.ndarray
    level_set: int
    level_set_double: int
    star_at_cn: float
    log_star_floor: float
    star_ok: bool
    zero_rows: int
    small_coords: int | None
    zero_level_ok: bool | None


@dataclass
class SpreadnessReport:
    vectors: list
    constants: dict


def spreadness_probe(m: ShiftedMatrix, near_kernel_tol: float, d: float, n: int | None = None,
                     delta: float | None = None, max_vectors: int = 1,
                     consts: dict | None = None) -> SpreadnessReport:
    """Coordinate-spread statistics of the least singular vectors of ``m``."""
    consts = {**constants.SPREAD, **(consts or {})}
    a = m.dense
    n = m.shape[1] if n is None else n
    delta = 0.1 / math.sqrt(n) if delta is None else delta
    spec = singular_spectrum(a, want_vectors=True)
    sig = spec.padded()
    rows = m.base.row_sums()
    zero_rows = np.nonzero(rows[:min(m.shape)] == 0)[0]
    cn = max(1, math.floor(consts["c_scale"] * math.exp(-d) * n))
    log_floor = -consts["C_prime"] * math.log(n) ** 7 - 0.5 * math.log(n)
    out = []
    for idx in range(m.shape[1] - 1, max(m.shape[1] - 1 - max_vectors, -1), -1):
        if sig[idx] > near_kernel_tol:
            break
        v = spec.vectors[:, idx]
        rr = rearrange(v)
        star = rr.star(cn)
        star_ok = star > 0 and math.log(star) >= log_floor
        small = None
        zero_ok = None
        if abs(m.z) > 0 and zero_rows.size >= math.exp(-d) * n / 2:
            theta = float(np.linalg.norm(a @ v)) / abs(m.z)
            cutoff = 2 * math.exp(d / 2) * theta / math.sqrt(n)
            small = int(np.count_nonzero(np.abs(v) <= cutoff))
            zero_ok = small >= math.exp(-d) * n / 4
        out.append(VectorSpread(float(sig[idx]), rr.values, largest_level_set(v, delta),
                                largest_level_set(v, 2 * delta), star, log_floor, star_ok,
                                int(zero_rows.size), small, zero_ok))
    return SpreadnessReport(out, {**consts, "delta": delta, "c": consts["c_scale"] * math.exp(-d)})


def zero_level_bound(v, residual: float, z: complex, zero_rows: int, d: float, n: int):
    """Zero-in-degree bound for a unit v with |(M - zI)v| <= residual.

    Returns (applies, count of small coordinates, holds).
    """
    if zero_rows < math.exp(-d) * n / 2 or z == 0:
        return False, None, None
    theta = residual / abs(z)
    small = int(np.count_nonzero(np.abs(v) <= 2 * math.exp(d / 2) * theta / math.sqrt(n)))
    return True, small, small >= math.exp(-d) * n / 4


@dataclass
class BalancedBasis:
    basis: np.ndarray
    diagnostic: float
    literal_score: float
    tries: int


def _spread_constant(basis: np.ndarray) -> tuple[float, float, float]:
    """Spread constant c, the raw ceil(k/10) score, and the worst k-th largest modulus.

    c is the largest value in (0, 1] with v*_{ceil(ck)} >= c sqrt(k) / n for every column.
    """
    n, k = basis.shape
    stars = -np.sort(-np.abs(basis), axis=0)
    worst = stars.min(axis=1)
    best = 0.0
    for i in range(1, k + 1):
        cand = min(i / k, worst[i - 1] * n / math.sqrt(k))
        if cand > (i - 1) / k:
            best = max(best, cand)
    literal = float(worst[math.ceil(k / 10) - 1] * n / math.sqrt(k))
    return best, literal, float(worst[k - 1])


def balanced_basis(vectors, seed: int = 0, retries: int = 16) -> BalancedBasis:
    """Re-mix an orthonormal basis by unitary rotations to spread every vector's mass.

    Candidates are the discrete Fourier mixing and ``retries`` Haar-random
    unitaries; the kept basis maximises the spread constant c of
    ``_spread_constant``, ties broken by the smallest k-th largest modulus.
    """
    q = np.asarray(vectors, dtype=np.complex128)
    if q.ndim == 1:
        q = q[:, None]
    n, k = q.shape
    if np.abs(q.conj().T @ q - np.eye(k)).max() > 1e-10:
        raise InvalidParameter("input columns are not orthonormal")
    rng = stream(seed, "balanced_basis")
    dft = np.exp(-2j * np.pi * np.outer(np.arange(k), np.arange(k)) / k) / math.sqrt(k)
    mixes = [dft] + [np.atleast_2d(unitary_group.rvs(k, random_state=rng)) if k > 1
                     else np.exp(2j * np.pi * rng.random()) * np.ones((1, 1)) for _ in range(retries)]
    best = None
    for mix in mixes:
        cand = q @ mix
        score = _spread_constant(cand)
        if best is None or (score[0], score[2]) > (best[0][0], best[0][2]):
            best = (score, cand)
    (c, literal, _), basis = best
    return BalancedBasis(basis, c, literal, len(mixes))


class IterationBound(NamedTuple):
    steps: int
    bound: float
    holds: bool


def expansion_alpha(x: float, n: float) -> float:
    """alpha(x) = (log(n/x))^-2."""
    return math.log(n / x) ** -2


def growth_step(x: int, n: int, d: float) -> int:
    return math.ceil(expansion_alpha(x, n) * x / (2 ** 15 * (d + math.log(n / x))))


def iteration_bound(n: int, k: int, d: float) -> IterationBound:
    """Steps of k <- k + g(k) needed to reach n/2, against 2^17 d (log(n/k))^4."""
    if not 1 <= k <= n:
        raise InvalidParameter("need 1 <= k <= n")
    bound = 2 ** 17 * d * math.log(n / k) ** 4
    steps = 0
    x = k
    while x < n / 2:
        x += growth_step(x, n, d)
        steps += 1
    return IterationBound(steps, bound, steps <= bound)
