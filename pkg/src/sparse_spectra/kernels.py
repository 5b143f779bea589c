"""Hot loops, each in a compiled form and a vectorised numpy form.

The public functions dispatch on ``backend`` (``"numba"`` or ``"numpy"``);
the default comes from the ``SPARSE_SPECTRA_NUMBA`` environment flag.  Both
forms consume identical inputs, so results agree to rounding.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

BACKENDS = ("numba", "numpy")


def _pick(backend: str | None) -> str:
    if backend is None:
        return "numba" if USE_NUMBA else "numpy"
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    return backend


# unique-neighbour counts ----------------------------------------------------------

@njit
def _unique_counts_nb(col_ptr, csc_rows, n_rows, sets):
    n_sets, k = sets.shape
    out = np.zeros(n_sets, dtype=np.int64)
    hits = np.zeros(n_rows, dtype=np.int64)
    in_set = np.zeros(n_rows, dtype=np.bool_)
    for s in range(n_sets):
        for a in range(k):
            j = sets[s, a]
            if j < n_rows:
                in_set[j] = True
            for p in range(col_ptr[j], col_ptr[j + 1]):
                hits[csc_rows[p]] += 1
        total = 0
        for a in range(k):
            j = sets[s, a]
            if j < n_rows and hits[j] == 0:
                total += 1
        for a in range(k):
            j = sets[s, a]
            for p in range(col_ptr[j], col_ptr[j + 1]):
                i = csc_rows[p]
                if hits[i] == 1 and not in_set[i]:
                    total += 1
        out[s] = total
        for a in range(k):
            j = sets[s, a]
            if j < n_rows:
                in_set[j] = False
            for p in range(col_ptr[j], col_ptr[j + 1]):
                hits[csc_rows[p]] = 0
    return out


def _unique_counts_np(col_ptr, csc_rows, n_rows, sets):
    out = np.zeros(sets.shape[0], dtype=np.int64)
    for s, cols in enumerate(sets):
        rows = np.concatenate([csc_rows[col_ptr[j]:col_ptr[j + 1]] for j in cols]) if cols.size else np.empty(0, np.int64)
        hits = np.bincount(rows, minlength=n_rows)
        in_set = np.zeros(n_rows, dtype=bool)
        in_set[cols[cols < n_rows]] = True
        out[s] = np.count_nonzero((hits == 1) & ~in_set) + np.count_nonzero((hits == 0) & in_set)
    return out


def unique_neighbor_counts(col_ptr, csc_rows, n_rows, sets, backend=None) -> np.ndarray:
    """|U(S)| for every row of ``sets`` (each row is a set of distinct columns)."""
    sets = np.ascontiguousarray(sets, dtype=np.int64)
    if sets.ndim == 1:
        sets = sets[None, :]
    if sets.shape[1] > 1 and (np.diff(np.sort(sets, axis=1), axis=1) == 0).any():
        raise ValueError("column sets must not repeat an index")
    args = (np.asarray(col_ptr, np.int64), np.asarray(csc_rows, np.int64), int(n_rows), sets)
    return _unique_counts_nb(*args) if _pick(backend) == "numba" else _unique_counts_np(*args)


# secular equation -------------------------------------------------------------------
# Poles p_1 > ... > p_K with positive weights.  Root k sits in (p_k, p_{k-1}),
# with p_0 = p_1 + sum(weights).  Each root is bisected in coordinates shifted
# to its nearer pole so small roots keep relative accuracy.

@njit
def _secular_value(diffs, w, mu):
    f = 1.0
    for j in range(w.size):
        f += w[j] / (diffs[j] - mu)
    return f


@njit
def _secular_nb(poles, w, max_iter):
    K = poles.size
    roots = np.empty(K)
    resid = np.empty(K)
    top = poles[0] + w.sum()
    diffs = np.empty(K)
    for k in range(K):
        if k == 0:
            origin = poles[0]
            lo, hi = 0.0, top - poles[0]
        else:
            mid = 0.5 * (poles[k] + poles[k - 1])
            for j in range(K):
                diffs[j] = poles[j] - poles[k]
            if _secular_value(diffs, w, mid - poles[k]) > 0.0:
                origin = poles[k]
                lo, hi = 0.0, mid - poles[k]
            else:
                origin = poles[k - 1]
                lo, hi = mid - poles[k - 1], 0.0
        for j in range(K):
            diffs[j] = poles[j] - origin
        for _ in range(max_iter):
            m = 0.5 * (lo + hi)
            if m <= lo or m >= hi:
                break
            if _secular_value(diffs, w, m) < 0.0:
                lo = m
            else:
                hi = m
        mu = 0.5 * (lo + hi)
        roots[k] = origin + mu
        num = 1.0
        den = 1.0
        for j in range(K):
            q = w[j] / (diffs[j] - mu)
            num += q
            den += abs(q)
        resid[k] = abs(num) / den
    return roots, resid


def _secular_np(poles, w, max_iter):
    K = poles.size
    top = poles[0] + w.sum()
    origin = poles.copy()
    lo = np.zeros(K)
    hi = np.empty(K)
    hi[0] = top - poles[0]
    if K > 1:
        mid = 0.5 * (poles[1:] + poles[:-1])
        d_mid = poles[None, :] - poles[1:, None] - (mid - poles[1:])[:, None]
        f_mid = 1.0 + (w[None, :] / d_mid).sum(axis=1)
        left = f_mid > 0.0
        origin[1:] = np.where(left, poles[1:], poles[:-1])
        lo[1:] = np.where(left, 0.0, mid - poles[:-1])
        hi[1:] = np.where(left, mid - poles[1:], 0.0)
    diffs = poles[None, :] - origin[:, None]
    active = np.ones(K, dtype=bool)
    for _ in range(max_iter):
        m = 0.5 * (lo + hi)
        active &= (m > lo) & (m < hi)
        if not active.any():
            break
        f = 1.0 + (w[None, :] / (diffs - m[:, None])).sum(axis=1)
        go_right = active & (f < 0.0)
        go_left = active & ~(f < 0.0)
        lo = np.where(go_right, m, lo)
        hi = np.where(go_left, m, hi)
    mu = 0.5 * (lo + hi)
    q = w[None, :] / (diffs - mu[:, None])
    resid = np.abs(1.0 + q.sum(axis=1)) / (1.0 + np.abs(q).sum(axis=1))
    return origin + mu, resid


def secular_roots(poles, weights, max_iter=200, backend=None):
    """Roots of 1 + sum_j w_j / (p_j - x) for strictly decreasing poles, positive weights.

    Returns the roots (descending) and their scaled residuals.
    """
    poles = np.ascontiguousarray(poles, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    if poles.size == 0:
        return np.empty(0), np.empty(0)
    if _pick(backend) == "numba":
        return _secular_nb(poles, weights, int(max_iter))
    return _secular_np(poles, weights, int(max_iter))


# reflected drift chain ------------------------------------------------------------

@njit
def _drift_nb(up):
    n_trials, steps = up.shape
    out = np.zeros(n_trials, dtype=np.int64)
    for a in range(n_trials):
        x = 0
        for s in range(steps):
            if up[a, s]:
                x += 1
            elif x > 0:
                x -= 1
        out[a] = x
    return out


def _drift_np(up):
    x = np.zeros(up.shape[0], dtype=np.int64)
    for s in range(up.shape[1]):
        x = np.where(up[:, s], x + 1, np.maximum(x - 1, 0))
    return x


def drift_chain_final(up, backend=None) -> np.ndarray:
    """Final state of the chain started at 0 that steps +1 where ``up`` is set, else down reflected at 0."""
    up = np.ascontiguousarray(up, dtype=np.bool_)
    return _drift_nb(up) if _pick(backend) == "numba" else _drift_np(up)


# ball counts -------------------------------------------------------------------------

@njit
def _ball_nb(points, centers, radius):
    r2 = radius * radius
    out = np.zeros(centers.size, dtype=np.int64)
    for a in range(centers.size):
        c = centers[a]
        cnt = 0
        for b in range(points.size):
            dz = points[b] - c
            if dz.real * dz.real + dz.imag * dz.imag <= r2:
                cnt += 1
        out[a] = cnt
    return out


def _ball_np(points, centers, radius, chunk=1024):
    out = np.empty(centers.size, dtype=np.int64)
    r2 = radius * radius
    for s in range(0, centers.size, chunk):
        dz = points[None, :] - centers[s:s + chunk, None]
        out[s:s + chunk] = np.count_nonzero(dz.real ** 2 + dz.imag ** 2 <= r2, axis=1)
    return out


def ball_counts(points, centers, radius, backend=None) -> np.ndarray:
    """Number of points within closed distance ``radius`` of each center (complex plane)."""
    points = np.ascontiguousarray(points, dtype=np.complex128).ravel()
    centers = np.ascontiguousarray(centers, dtype=np.complex128).ravel()
    if _pick(backend) == "numba":
        return _ball_nb(points, centers, float(radius))
    return _ball_np(points, centers, float(radius))


# mean log distance ---------------------------------------------------------------------

@njit
def _logdist_nb(eigs, zs):
    out = np.empty(zs.size)
    for a in range(zs.size):
        s = 0.0
        za = zs[a]
        for b in range(eigs.size):
            dr = eigs[b].real - za.real
            di = eigs[b].imag - za.imag
            s += np.log(dr * dr + di * di)
        out[a] = 0.5 * s / eigs.size
    return out


def _logdist_np(eigs, zs, chunk=2048):
    out = np.empty(zs.size)
    with np.errstate(divide="ignore"):
        for s in range(0, zs.size, chunk):
            out[s:s + chunk] = np.log(np.abs(eigs[None, :] - zs[s:s + chunk, None])).mean(axis=1)
    return out


def mean_log_distance(eigs, zs, backend=None) -> np.ndarray:
    """(1/n) sum_i log|lambda_i - z| for every z in ``zs``."""
    eigs = np.ascontiguousarray(eigs, dtype=np.complex128).ravel()
    zs = np.ascontiguousarray(zs, dtype=np.complex128).ravel()
    if _pick(backend) == "numba":
        return _logdist_nb(eigs, zs)
    return _logdist_np(eigs, zs)
