"""The column-then-row revelation process and its window-height walk."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import constants, graph, kernels
from .errors import InvalidParameter, PreconditionViolated
from .model import BinaryMatrix, ModelParams, sample_modified
from .rng import stream
from .sv import check_cap, secular_append_row, singular_spectrum

TINY = np.finfo(np.float64).tiny


# thresholds ----------------------------------------------------------------------------

def log_epsilon_r(n: int, r: float, K: float) -> float:
    """log eps_r = -K (log(n/r))^9; -inf for r = 0."""
    if r <= 0:
        return -math.inf
    if r > n:
        raise InvalidParameter("need r <= n")
    return -K * math.log(n / r) ** 9


class EpsilonR(NamedTuple):
    value: float
    log_value: float
    clamped: bool


def epsilon_r(n: int, r: float, K: float) -> EpsilonR:
    """eps_r = exp(-K (log(n/r))^9), clamped to the smallest normal double on underflow."""
    if not 1 <= r <= n:
        raise InvalidParameter("need 1 <= r <= n")
    lv = log_epsilon_r(n, r, K)
    if lv < math.log(TINY):
        return EpsilonR(TINY, lv, True)
    return EpsilonR(math.exp(lv), lv, False)


# process ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class WalkParams:
    model: ModelParams
    z: complex = 1 + 1j
    K: float = constants.WALK_K
    tau: float = 1.0           # tau(z): lower quantile of the starting singular value
    stride: int = 1
    events: bool = True
    star_k: int = 2
    event_budget: int = 32
    kappa: float = constants.KAPPA

    def __post_init__(self):
        if not self.K > 0:
            raise InvalidParameter("K must be positive")
        if not self.tau > 0:
            raise InvalidParameter("tau must be positive")
        if self.stride < 1:
            raise InvalidParameter("stride must be >= 1")

    @property
    def window_fraction(self) -> float:
        """delta = eps^4 min(1/log(1/tau), 1/25); 1/25 when tau >= 1."""
        e4 = self.model.eps ** 4
        inv = math.inf if self.tau >= 1 else 1.0 / math.log(1.0 / self.tau)
        return e4 * min(inv, 1.0 / 25.0)

    @property
    def window(self) -> int:
        """delta m."""
        return math.floor(self.window_fraction * self.model.walk_start)

    @property
    def start_height(self) -> int:
        m = self.model.walk_start
        return m - math.ceil((1 - self.model.eps ** 4) * m)

    @property
    def tau_first(self) -> float:
        eps = self.model.eps
        return 8 * (self.model.d * math.log(2 / eps) ** 4 + abs(self.z) ** 2)

    @property
    def tau_second(self) -> float:
        return 8 * self.model.n ** 4 * (1 + abs(self.z) ** 2)


@dataclass
class Process:
    """Index partition, extracted set and revelation order.

    ``order[:j]`` lists S_j; ``order[j]`` is v_{j+1} (all 0-based).
    """

    n: int
    m: int
    ell: int
    t1_end: int          # T1 = [0, t1_end)
    t2_end: int          # T2 = [t1_end, t2_end) with t2_end = n - ell
    value: np.ndarray    # val(j) for j in T2
    extracted: np.ndarray
    order: np.ndarray

    def s(self, j: int) -> np.ndarray:
        return self.order[:j]


def build_process(b: BinaryMatrix, params: WalkParams | ModelParams, seed: int = 0,
                  trial: int = 0) -> Process:
    """Partition, extract the high-value set H and fix the revelation order."""
    mp = params.model if isinstance(params, WalkParams) else params
    n = mp.n
    if b.shape != (n, n):
        raise InvalidParameter("matrix does not match the model dimension")
    eps = mp.eps
    ell = mp.boost_size
    core = n - ell
    t1_end = math.floor(n * (1 - eps))
    h = mp.extracted
    if h > max(core - t1_end, 0):
        raise InvalidParameter("extracted set larger than T2")
    rows, cols = b.row_idx, b.col_idx
    keep = (rows < core) & (cols < core)
    out_core = np.bincount(cols[keep], minlength=n)   # deg+(j, [n - ell])
    in_core = np.bincount(rows[keep], minlength=n)    # deg-(j, [n - ell])
    t2 = np.arange(t1_end, core)
    value = np.minimum(out_core[t2], in_core[t2])
    ranked = t2[np.lexsort((t2, -value))]
    extracted = np.sort(ranked[:h])
    mask = np.ones(core, dtype=bool)
    mask[extracted] = False
    start = np.nonzero(mask)[0]
    shuffled = stream(seed, "walk-order", trial).permutation(extracted) if h else extracted
    order = np.concatenate([start, shuffled, np.arange(core, n)]).astype(np.int64)
    return Process(n, n - ell - h, ell, t1_end, core, value, extracted, order)


def degree_bad(b: BinaryMatrix, proc: Process, eps: float) -> np.ndarray:
    """Boolean per vertex of the core block (indices < n - ell)."""
    core = proc.t2_end
    rows, cols = b.row_idx, b.col_idx
    keep = (rows < core) & (cols < core)
    r, c = rows[keep], cols[keep]
    out_all = np.bincount(c, minlength=core)
    in_all = np.bincount(r, minlength=core)
    to_t1 = r < proc.t1_end
    from_t1 = c < proc.t1_end
    out_t1 = np.bincount(c[to_t1], minlength=core)
    in_t1 = np.bincount(r[from_t1], minlength=core)
    lo = math.log(1 / eps)
    return (np.minimum(out_t1, in_t1) <= math.sqrt(lo)) | (np.maximum(out_all, in_all) >= lo ** 2)


def ordered_dense(b: BinaryMatrix, order: np.ndarray) -> np.ndarray:
    check_cap(b.rows)
    return b.to_dense(np.float64)[np.ix_(order, order)]


# spectra helpers ---------------------------------------------------------------------------

def _shifted(block: np.ndarray, z: complex) -> np.ndarray:
    a = block.astype(np.complex128)
    k = min(a.shape)
    a[np.arange(k), np.arange(k)] -= z
    return a


def _values(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(a, compute_uv=False)


def window_log_product(values: np.ndarray, t: int, height: int, width: int) -> float:
    """sum_{j=height}^{height+width} log sigma_{t-j}; -inf if an index leaves [1, t]."""
    lo = t - height - width
    hi = t - height
    if lo < 1 or hi > t:
        return -math.inf
    sel = values[lo - 1:hi]
    with np.errstate(divide="ignore"):
        return float(np.log(sel).sum())


def _bottom_left_norm(a: np.ndarray, r: int, x: np.ndarray) -> float:
    """|P x| for P onto the r smallest right-singular vectors of a^dagger (= left vectors of a)."""
    u, _, _ = np.linalg.svd(a, full_matrices=True)
    return float(np.linalg.norm(u[:, a.shape[0] - r:].conj().T @ x))


def _bottom_right_norm(w: np.ndarray, r: int, x: np.ndarray) -> float:
    """|P x| for P onto the r smallest right-singular vectors of the wide matrix w."""
    if r == 1 and w.shape[0] < w.shape[1]:
        q, _ = np.linalg.qr(w.conj().T, mode="complete")
        return float(abs(np.vdot(q[:, -1], x)))
    _, _, vh = np.linalg.svd(w, full_matrices=True)
    return float(np.linalg.norm(vh[w.shape[1] - r:] @ x))


# trace ------------------------------------------------------------------------------------

RULES = ("e1.up", "e1.sigma", "e1.degree", "e1.projection", "e1.else",
         "e2.sigma", "e2.zero", "e2.projection", "e2.else")


@dataclass
class WalkTrace:
    n: int
    m: int
    ell: int
    z: complex
    K: float
    window: int
    stride: int
    t: list = field(default_factory=list)
    height: list = field(default_factory=list)
    rule: list = field(default_factory=list)
    vertex: list = field(default_factory=list)
    deg_out: list = field(default_factory=list)
    deg_in: list = field(default_factory=list)
    log_window: list = field(default_factory=list)
    log_bound: list = field(default_factory=list)   # log of the required lower bound at t+1
    flag_g: list = field(default_factory=list)
    flag_h: list = field(default_factory=list)
    flag_j: list = field(default_factory=list)
    flag_g2: list = field(default_factory=list)
    approximate: list = field(default_factory=list)
    complete: bool = True
    error: str | None = None

    @property
    def final_height(self) -> int:
        return self.height[-1]

    def iterate_margins(self) -> np.ndarray:
        """log W_{t+1} - log(required bound) at each verified step (nan when skipped)."""
        lw = np.array(self.log_window[1:], dtype=np.float64)
        lb = np.array(self.log_bound[1:], dtype=np.float64)
        with np.errstate(invalid="ignore"):
            return lw - lb

    def iterate_holds(self, rel_tol: float = 1e-9) -> bool:
        marg = self.iterate_margins()
        lb = np.array(self.log_bound[1:], dtype=np.float64)
        ok = np.isnan(lb) | (marg >= -rel_tol * np.maximum(1.0, np.abs(lb)))
        return bool(ok.all())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "X", "rule", "vertex", "deg_out", "deg_in", "logW", "log_bound",
                     "G", "H", "J", "G2", "approx"])
        for row in zip(self.t, self.height, self.rule, self.vertex, self.deg_out, self.deg_in,
                       self.log_window, self.log_bound, self.flag_g, self.flag_h, self.flag_j,
                       self.flag_g2, self.approximate):
            w.writerow([_fmt(x) for x in row])
        return buf.getvalue()

    def summary(self) -> dict:
        counts = {r: self.rule.count(r) for r in RULES if r in self.rule}
        return {"n": self.n, "m": self.m, "ell": self.ell, "z": [self.z.real, self.z.imag],
                "K": self.K, "window": self.window, "stride": self.stride,
                "start_height": self.height[0] if self.height else None,
                "final_height": self.height[-1] if self.height else None,
                "rules": counts, "iterate_holds": self.iterate_holds(),
                "complete": self.complete, "error": self.error}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool) or isinstance(x, np.bool_):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


# the walk ---------------------------------------------------------------------------------

def run_walk(b: BinaryMatrix, params: WalkParams, seed: int = 0, trial: int = 0) -> WalkTrace:
    """Run both epochs of the walk on ``b`` and verify each product iterate."""
    mp = params.model
    mp.check_process()
    n, z, K = mp.n, complex(params.z), params.K
    proc = build_process(b, params, seed, trial)
    m, ell, core = proc.m, proc.ell, proc.t2_end
    width = params.window
    eps = mp.eps
    dense = ordered_dense(b, proc.order)
    bad = degree_bad(b, proc, eps) if proc.extracted.size else np.zeros(core, bool)
    hs_limit = 2 * mp.d * n
    late = n - ell - math.log(n) ** 1.75
    log_tau1 = math.log(params.tau_first)
    log_tau2 = math.log(params.tau_second)
    log_eps1 = log_epsilon_r(n, 1, K)
    prefix_nnz = _prefix_counts(dense)

    tr = WalkTrace(n, m, ell, z, K, width, params.stride)
    x = params.start_height
    vals = _values(_shifted(dense[:m, :m], z))
    lw = window_log_product(vals, m, x, width)
    tr.t.append(m)
    tr.height.append(x)
    tr.rule.append("start")
    tr.vertex.append(None)
    tr.deg_out.append(None)
    tr.deg_in.append(None)
    tr.log_window.append(lw)
    tr.log_bound.append(math.nan)
    tr.flag_g.append(None)
    tr.flag_h.append(None)
    tr.flag_j.append(None)
    tr.flag_g2.append(None)
    tr.approximate.append(False)

    anchor_t, anchor_lw, pending = m, lw, 0.0
    stale = False
    for t in range(m, n):
        v = int(proc.order[t])
        first = t < core
        a_t = _shifted(dense[:t, :t], z)
        w_star = _shifted(dense[:t, :t + 1], z)
        col = dense[:t, t].astype(np.complex128)             # (B*_{t+1} - zI) e_{t+1}
        row = dense[t, :t + 1].astype(np.complex128)
        row[t] -= z
        row = np.conj(row)                                     # (B_{t+1}^dag - z̄ I) e_{t+1}
        sigma_min = float(vals[-1])
        try:
            if first:
                log_thr = log_epsilon_r(n, x, K)
                if x <= (n - ell - t) / 16 or prefix_nnz[t + 1] >= hs_limit or t >= late:
                    rule, step = "e1.up", 1
                elif _log(vals[t - x // 2 - 1]) >= log_thr:
                    rule, step = "e1.sigma", -1
                elif bad[v]:
                    rule, step = "e1.degree", 1
                elif (_log(_bottom_left_norm(a_t, x, col)) >= log_thr
                      and _log(_bottom_right_norm(w_star, x, row)) >= log_thr):
                    rule, step = "e1.projection", -1
                else:
                    rule, step = "e1.else", 1
                factor = -2 * log_tau1 + 2 * log_thr
            else:
                small_ok = _log(sigma_min) >= log_eps1
                if x > 1 and small_ok:
                    rule, step = "e2.sigma", -1
                elif (x == 1 and small_ok) or (x == 0 and _log(_bottom_right_norm(w_star, 1, row)) >= log_eps1):
                    rule, step = "e2.zero", -x
                elif (x >= 1 and _log(sigma_min) <= log_eps1
                      and _log(_bottom_left_norm(a_t, 1, col)) >= log_eps1
                      and _log(_bottom_right_norm(w_star, 1, row)) >= log_eps1):
                    rule, step = "e2.projection", -1
                else:
                    rule, step = "e2.else", 1
                factor = -2 * log_tau2 + 2 * log_eps1
        except np.linalg.LinAlgError as exc:
            tr.complete = False
            tr.error = f"SVD failure at t={t}: {exc}"
            break
        x += step
        pending += factor
        recompute = ((t + 1 - m) % params.stride == 0) or t + 1 == n
        if recompute:
            try:
                vals = _values(_shifted(dense[:t + 1, :t + 1], z))
            except np.linalg.LinAlgError as exc:
                tr.complete = False
                tr.error = f"SVD failure at t={t + 1}: {exc}"
                break
            lw = window_log_product(vals, t + 1, x, width)
            bound = anchor_lw + pending
            anchor_t, anchor_lw, pending = t + 1, lw, 0.0
            stale = False
        else:
            lw, bound = math.nan, math.nan
            stale = True
        tr.t.append(t + 1)
        tr.height.append(x)
        tr.rule.append(rule)
        tr.vertex.append(v)
        tr.deg_out.append(int(np.count_nonzero(dense[:t + 1, t])))
        tr.deg_in.append(int(np.count_nonzero(dense[t, :t + 1])))
        tr.log_window.append(lw)
        tr.log_bound.append(bound)
        tr.approximate.append(stale or params.stride > 1)
        if params.events:
            g, h, j, g2 = _events(b, proc, t, bad, mp, params, first)
        else:
            g = h = j = g2 = None
        tr.flag_g.append(g)
        tr.flag_h.append(h)
        tr.flag_j.append(j)
        tr.flag_g2.append(g2)
    return tr


def _log(x: float) -> float:
    return math.log(x) if x > 0 else -math.inf


def _prefix_counts(dense: np.ndarray) -> np.ndarray:
    """Number of ones in the leading k x k block for k = 0..n."""
    n = dense.shape[0]
    idx = np.maximum.outer(np.arange(n), np.arange(n))
    counts = np.bincount(idx[dense > 0], minlength=n)
    return np.concatenate([[0], np.cumsum(counts)])


def _events(b: BinaryMatrix, proc: Process, t: int, bad: np.ndarray, mp: ModelParams,
            params: WalkParams, first: bool):
    """(G_{t+1}, H_{t+1}, J_{t+1}, G'_{t+1}) with J, H only in the first epoch."""
    n = mp.n
    s_t = proc.order[:t]
    bt = b.principal(s_t)
    btd = bt.transpose()
    seed = int(proc.order[t])
    if first:
        r = math.log(n) ** 1.5
        g = all(graph.event_d(mm, mp.d, mp.eps, n) is True and
                graph.event_u(mm, r, n, params.kappa, params.event_budget, seed) for mm in (bt, btd))
        v = int(proc.order[t])
        h = bool(bad[v])
        remaining = proc.order[t:proc.t2_end]
        j = bool(remaining.size and bad[remaining].mean() >= mp.eps)
        return g, h, j, None
    r = math.log(math.log(n)) ** 2
    g = bool(graph.event_d(btd, mp.d, mp.eps, n) is True
             and graph.event_u(btd, r, n, params.kappa, params.event_budget, seed))
    star = b.submatrix(s_t, proc.order[:t + 1])
    g2 = bool(graph.event_u(star, r, n, params.kappa, params.event_budget, seed)
              and graph.event_d(_pad_square(star), mp.d, mp.eps, n) is True
              and graph.event_u_star(star, t, params.star_k))
    return g, None, None, g2


def _pad_square(mm: BinaryMatrix) -> BinaryMatrix:
    k = max(mm.shape)
    return BinaryMatrix(k, k, mm.row_idx, mm.col_idx)


def tracked_window_logs(b: BinaryMatrix, params: WalkParams, heights, seed: int = 0,
                        trial: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Window log-products along the order, by rank-one secular updates and by direct SVD.

    Step t -> t+1 appends the new column (as a row of the adjoint) and then the
    new row, each through the secular equation.  ``heights[i]`` is the window
    height used at t = m + 1 + i.
    """
    proc = build_process(b, params, seed, trial)
    dense = ordered_dense(b, proc.order)
    z, m, width = complex(params.z), proc.m, params.window
    tracked, direct = [], []
    for i, x in enumerate(heights):
        t = m + i
        adj = singular_spectrum(_shifted(dense[:t, :t], z).conj().T, want_vectors=True)
        wide = secular_append_row(adj, np.conj(dense[:t, t]))          # (B*_{t+1} - zI)^dagger
        wide_full = singular_spectrum(_shifted(dense[:t, :t + 1], z), want_vectors=True)
        wide_full.values[:] = wide.values[:wide_full.values.size]
        row = dense[t, :t + 1].astype(np.complex128)
        row[t] -= z
        grown = secular_append_row(wide_full, row)
        tracked.append(window_log_product(grown.values, t + 1, x, width))
        direct.append(window_log_product(_values(_shifted(dense[:t + 1, :t + 1], z)), t + 1, x, width))
    return np.array(tracked), np.array(direct)


# end-of-walk checks ------------------------------------------------------------------------

class FinalWindow(NamedTuple):
    log_product: float
    log_threshold: float
    passed: bool
    log_sigma_min: float
    log_sigma_threshold: float
    sigma_passed: bool


def final_window_check(trace: WalkTrace, b: BinaryMatrix, params: WalkParams,
                       c_cfg: float = constants.C_FIT["final_window"],
                       eps_cfg: float | None = None) -> FinalWindow:
    """prod_{j=0}^{delta m} sigma_{n-j}(B - zI) against exp(-C eps n); sigma_n against exp(-eps' n)."""
    if not trace.complete:
        raise PreconditionViolated("walk trace is incomplete")
    n = b.rows
    vals = _values(_shifted(b.to_dense(np.float64), params.z))
    lp = window_log_product(vals, n, 0, trace.window)
    eps = params.model.eps
    thr = -c_cfg * eps * n
    ls = _log(float(vals[-1]))
    eps_cfg = eps if eps_cfg is None else eps_cfg
    sthr = -eps_cfg * n
    return FinalWindow(lp, thr, lp > thr, ls, sthr, ls > sthr)


def smallest_singular_check(a: BinaryMatrix, z: complex, rate: float) -> tuple[float, bool]:
    """(log sigma_n(A - zI), sigma_n > exp(-rate n))."""
    vals = _values(_shifted(a.to_dense(np.float64), z))
    ls = _log(float(vals[-1]))
    return ls, ls > -rate * a.rows


def start_singular_value(b: BinaryMatrix, params: WalkParams, seed: int = 0, trial: int = 0) -> float:
    """sigma_{ceil((1 - eps^4) m)}(B_m - zI_m)."""
    proc = build_process(b, params, seed, trial)
    m = proc.m
    dense = ordered_dense(b, proc.order)[:m, :m]
    vals = _values(_shifted(dense, params.z))
    return float(vals[math.ceil((1 - params.model.eps ** 4) * m) - 1])


def tau_pilot(params: WalkParams, runs: int = 20, seed: int = 0, quantile: float = 0.05) -> float:
    """Empirical lower quantile of the starting singular value over independent samples."""
    samples = []
    for r in range(runs):
        b = sample_modified(params.model, trial=10_000 + r)
        samples.append(start_singular_value(b, params, seed, 10_000 + r))
    return float(np.quantile(samples, quantile))


# drift lemma ----------------------------------------------------------------------------------

class TailEstimate(NamedTuple):
    frequency: float
    bound: float
    passed: bool
    histogram: np.ndarray      # empirical law of X_k
    exact: np.ndarray          # dynamic-programming law of X_k
    trials: int


def drift_exact_law(p: float, k: int) -> np.ndarray:
    """Law of X_k for X_1 = 0 and k - 1 steps: +1 w.p. p, else -1 reflected at 0."""
    law = np.zeros(k + 1)
    law[0] = 1.0
    for _ in range(k - 1):
        new = np.zeros_like(law)
        new[1:] += p * law[:-1]
        new[:-1] += (1 - p) * law[1:]
        new[0] += (1 - p) * law[0]
        law = new
    return law


def walk_tail_mc(p: float, k: int, t: int, trials: int, seed: int = 0,
                 c_fit: float = constants.C_FIT["walk_tail"], chunk: int = 100_000,
                 backend=None) -> TailEstimate:
    """Empirical P(X_k >= t) for the extremal drift chain against (c_fit p)^{t/2}."""
    if not 0 <= p < 1:
        raise InvalidParameter("need 0 <= p < 1")
    if k < 1 or trials < 1:
        raise InvalidParameter("need k >= 1 and trials >= 1")
    hist = np.zeros(k + 1, dtype=np.int64)
    for c, start in enumerate(range(0, trials, chunk)):
        size = min(chunk, trials - start)
        up = stream(seed, "drift", c).random((size, k - 1)) < p
        final = kernels.drift_chain_final(up, backend)
        hist += np.bincount(final, minlength=k + 1)
    freq = float(hist[t:].sum() / trials) if t <= k else 0.0
    bound = (c_fit * p) ** (t / 2)
    return TailEstimate(freq, bound, freq <= bound, hist / trials, drift_exact_law(p, k), trials)
