"""Random 0-1 matrix models, their degree statistics and the coupling ratio.

Conventions: ``M[i, j] = 1`` is a directed edge ``j -> i``.  Column sums are
out-degrees, row sums are in-degrees.  All indices are 0-based.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np
from scipy import sparse, special, stats

from .errors import InvalidParameter, ToleranceNotMet
from .rng import stream

INDEX = np.int64


@dataclass(frozen=True, eq=False)
class BinaryMatrix:
    """Immutable sparse 0-1 matrix kept in row-major and column-major order.

    ``row_idx``/``col_idx`` list the ones sorted lexicographically by (row, col);
    that ordering doubles as the CSR layout.  The CSC layout is built once.
    """

    rows: int
    cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    row_ptr: np.ndarray = field(init=False, repr=False)
    col_ptr: np.ndarray = field(init=False, repr=False)
    csc_rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        r = np.ascontiguousarray(self.row_idx, dtype=INDEX).ravel()
        c = np.ascontiguousarray(self.col_idx, dtype=INDEX).ravel()
        if r.shape != c.shape:
            raise InvalidParameter("row and column index arrays differ in length")
        if self.rows < 0 or self.cols < 0:
            raise InvalidParameter("negative dimension")
        if r.size:
            if r.min() < 0 or r.max() >= self.rows or c.min() < 0 or c.max() >= self.cols:
                raise InvalidParameter("entry index out of range")
        key = r * max(self.cols, 1) + c
        if r.size > 1 and not np.all(key[1:] > key[:-1]):
            order = np.argsort(key, kind="stable")
            key, r, c = key[order], r[order], c[order]
            if np.any(key[1:] == key[:-1]):
                raise InvalidParameter("duplicate entry")
        r.setflags(write=False)
        c.setflags(write=False)
        row_ptr = np.zeros(self.rows + 1, dtype=INDEX)
        np.cumsum(np.bincount(r, minlength=self.rows), out=row_ptr[1:])
        by_col = np.lexsort((r, c))
        col_ptr = np.zeros(self.cols + 1, dtype=INDEX)
        np.cumsum(np.bincount(c, minlength=self.cols), out=col_ptr[1:])
        csc_rows = r[by_col]
        for a in (row_ptr, col_ptr, csc_rows):
            a.setflags(write=False)
        object.__setattr__(self, "row_idx", r)
        object.__setattr__(self, "col_idx", c)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_ptr", col_ptr)
        object.__setattr__(self, "csc_rows", csc_rows)

    # construction -----------------------------------------------------------
    @classmethod
    def from_dense(cls, a) -> "BinaryMatrix":
        a = np.asarray(a)
        if a.ndim != 2:
            raise InvalidParameter("expected a 2-d array")
        if not np.all((a == 0) | (a == 1)):
            raise InvalidParameter("entries must be 0 or 1")
        r, c = np.nonzero(a)
        return cls(a.shape[0], a.shape[1], r, c)

    @classmethod
    def zeros(cls, rows: int, cols: int | None = None) -> "BinaryMatrix":
        cols = rows if cols is None else cols
        return cls(rows, cols, np.empty(0, INDEX), np.empty(0, INDEX))

    @classmethod
    def identity(cls, n: int) -> "BinaryMatrix":
        k = np.arange(n)
        return cls(n, n, k, k)

    # views --------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.row_idx.size)

    def row_sums(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def col_sums(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def diagonal(self) -> np.ndarray:
        k = min(self.rows, self.cols)
        out = np.zeros(k, dtype=INDEX)
        on = self.row_idx == self.col_idx
        out[self.row_idx[on]] = 1
        return out

    def out_neighbors(self, j: int) -> np.ndarray:
        """Rows hit by column ``j``."""
        return self.csc_rows[self.col_ptr[j]:self.col_ptr[j + 1]]

    def in_neighbors(self, i: int) -> np.ndarray:
        """Columns hitting row ``i``."""
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    @cached_property
    def csr(self) -> sparse.csr_matrix:
        data = np.ones(self.nnz, dtype=np.float64)
        return sparse.csr_matrix((data, self.col_idx, self.row_ptr), shape=self.shape)

    def to_dense(self, dtype=np.int8) -> np.ndarray:
        a = np.zeros(self.shape, dtype=dtype)
        a[self.row_idx, self.col_idx] = 1
        return a

    def transpose(self) -> "BinaryMatrix":
        return BinaryMatrix(self.cols, self.rows, self.col_idx, self.row_idx)

    def submatrix(self, rows: Sequence[int], cols: Sequence[int]) -> "BinaryMatrix":
        """Entries at ``rows x cols`` relabelled by position in the given sequences."""
        rows = np.asarray(rows, dtype=INDEX)
        cols = np.asarray(cols, dtype=INDEX)
        rpos = np.full(self.rows, -1, dtype=INDEX)
        cpos = np.full(self.cols, -1, dtype=INDEX)
        rpos[rows] = np.arange(rows.size)
        cpos[cols] = np.arange(cols.size)
        nr, nc = rpos[self.row_idx], cpos[self.col_idx]
        keep = (nr >= 0) & (nc >= 0)
        return BinaryMatrix(rows.size, cols.size, nr[keep], nc[keep])

    def principal(self, idx: Sequence[int]) -> "BinaryMatrix":
        return self.submatrix(idx, idx)

    def permuted(self, perm: Sequence[int]) -> "BinaryMatrix":
        """``P^T M P`` for square M: entry (i, j) moves to (perm[i], perm[j])."""
        perm = np.asarray(perm, dtype=INDEX)
        return BinaryMatrix(self.rows, self.cols, perm[self.row_idx], perm[self.col_idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, BinaryMatrix):
            return NotImplemented
        return (self.shape == other.shape and np.array_equal(self.row_idx, other.row_idx)
                and np.array_equal(self.col_idx, other.col_idx))

    __hash__ = None

    # text format --------------------------------------------------------------
    def to_text(self) -> str:
        lines = [f"{self.rows} {self.cols} {self.nnz}"]
        lines += [f"{i} {j}" for i, j in zip(self.row_idx.tolist(), self.col_idx.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BinaryMatrix":
        lines = text.split("\n")
        try:
            rows, cols, nnz = (int(x) for x in lines[0].split())
            pairs = np.array([ln.split() for ln in lines[1:1 + nnz]], dtype=INDEX).reshape(nnz, 2)
        except (ValueError, IndexError) as exc:
            raise InvalidParameter(f"malformed matrix text: {exc}") from exc
        return cls(rows, cols, pairs[:, 0], pairs[:, 1])


@dataclass(frozen=True)
class DegreeSequence:
    """Bipartite degree sequence: ``out`` are column sums, ``in_`` are row sums."""

    out: tuple[int, ...]
    in_: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "out", tuple(int(x) for x in self.out))
        object.__setattr__(self, "in_", tuple(int(x) for x in self.in_))
        if min(self.out + self.in_, default=0) < 0:
            raise InvalidParameter("negative degree")

    @classmethod
    def of(cls, m: BinaryMatrix) -> "DegreeSequence":
        return cls(tuple(m.col_sums().tolist()), tuple(m.row_sums().tolist()))

    def to_json(self) -> str:
        return json.dumps({"out": list(self.out), "in": list(self.in_)})

    @classmethod
    def from_json(cls, text: str) -> "DegreeSequence":
        obj = json.loads(text)
        return cls(obj["out"], obj["in"])


@dataclass(frozen=True)
class ModelParams:
    """Dimension, mean degree, extraction cutoff and seed of one experiment."""

    n: int
    d: float
    cutoff: int = 8
    seed: int = 0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise InvalidParameter("n must be a positive integer")
        if not self.d > 0:
            raise InvalidParameter("d must be positive")
        if int(self.cutoff) != self.cutoff or self.cutoff < 0:
            raise InvalidParameter("cutoff must be a non-negative integer")

    @property
    def boost_size(self) -> int:
        return math.floor(math.log(self.n) ** 2)

    @property
    def boost_prob(self) -> float:
        return math.sqrt(math.log(self.n)) / self.n

    @property
    def eps(self) -> float:
        return poisson_tail_eps(self.d, self.cutoff)

    @property
    def extracted(self) -> int:
        """Size of the extracted set, floor(eps^3 n)."""
        return math.floor(self.eps ** 3 * self.n)

    @property
    def walk_start(self) -> int:
        return self.n - self.boost_size - self.extracted

    def check_process(self) -> None:
        """Raise unless the revelation process is well defined for these values."""
        if not 0 < self.eps < 1:
            raise InvalidParameter(f"eps = {self.eps} outside (0, 1)")
        if self.boost_size < 1 or self.boost_size >= self.n:
            raise InvalidParameter("boosted block must satisfy 1 <= size < n")
        if self.walk_start <= 0:
            raise InvalidParameter("walk start index must be positive")

    def with_seed(self, seed: int) -> "ModelParams":
        return ModelParams(self.n, self.d, self.cutoff, seed)


# sampling -----------------------------------------------------------------------

def _bernoulli_block(rng: np.random.Generator, n_rows: int, n_cols: int, p: float):
    total = n_rows * n_cols
    if total == 0 or p <= 0:
        return np.empty(0, INDEX), np.empty(0, INDEX)
    k = int(rng.binomial(total, min(p, 1.0)))
    flat = rng.choice(total, size=k, replace=False) if k < total else np.arange(total)
    flat = np.sort(flat)
    return flat // n_cols, flat % n_cols


def sample_iid(params: ModelParams, trial: int = 0) -> BinaryMatrix:
    """n x n matrix with independent Ber(d/n) entries."""
    n, d = params.n, params.d
    if d > n:
        raise InvalidParameter("d must not exceed n")
    r, c = _bernoulli_block(stream(params.seed, "iid", trial), n, n, d / n)
    return BinaryMatrix(n, n, r, c)


def sample_modified(params: ModelParams, trial: int = 0) -> BinaryMatrix:
    """Ber(d/n) on the leading (n-l) x (n-l) block, Ber(sqrt(log n)/n) elsewhere."""
    n, d = params.n, params.d
    if d > n:
        raise InvalidParameter("d must not exceed n")
    ell = params.boost_size
    if ell >= n:
        raise InvalidParameter("boosted block size must be below n")
    core = n - ell
    tau = params.boost_prob
    r0, c0 = _bernoulli_block(stream(params.seed, "modified", trial, 0), core, core, d / n)
    r1, c1 = _bernoulli_block(stream(params.seed, "modified", trial, 1), core, ell, tau)
    r2, c2 = _bernoulli_block(stream(params.seed, "modified", trial, 2), ell, n, tau)
    r = np.concatenate([r0, r1, r2 + core])
    c = np.concatenate([c0, c1 + core, c2])
    return BinaryMatrix(n, n, r, c)


# degree statistics --------------------------------------------------------------

def poisson_tail_eps(d: float, cutoff: int) -> float:
    """P(Pois(d) >= cutoff)."""
    if not d > 0 or cutoff < 0:
        raise InvalidParameter("need d > 0 and cutoff >= 0")
    if cutoff == 0:
        return 1.0
    return float(stats.poisson.sf(cutoff - 1, d))


def _poisson_pmf(d: float, top: int) -> np.ndarray:
    return stats.poisson.pmf(np.arange(top + 1), d)


def _poisson_tail_bound(d: float, a: int) -> float:
    """Chernoff bound on P(Pois(d) >= a) for a > d."""
    if a <= d:
        return 1.0
    return math.exp(-d + a * (1.0 + math.log(d / a)))


def degree_gamma(d: float, cutoff: int) -> float:
    """Fraction of stubs attached to extracted vertices: eps * E[X 1{min(X,Y) >= cutoff}] / d."""
    eps = poisson_tail_eps(d, cutoff)
    top = cutoff + 12 * math.ceil(d)
    pmf = _poisson_pmf(d, top)
    k = np.arange(top + 1)
    tail_y = eps
    return float(eps * np.sum(k[cutoff:] * pmf[cutoff:]) * tail_y / d)


def rho_table(params: ModelParams) -> np.ndarray:
    """Limiting joint (out, in) degree law of the post-extraction matrix.

    ``table[j, k]`` is the mass at out-degree j, in-degree k.  Each surviving
    vertex keeps a Pois(d) x Pois(d) pair (a, a'), removed with probability eps
    when min(a, a') >= cutoff, then every stub is independently lost with
    probability gamma.
    """
    d, cutoff = params.d, params.cutoff
    eps = poisson_tail_eps(d, cutoff)
    if eps >= 1:
        raise InvalidParameter("extraction removes everything (eps = 1)")
    top = cutoff + 12 * math.ceil(d)
    if 2 * _poisson_tail_bound(d, top + 1) >= 1e-12:
        raise ToleranceNotMet("Poisson truncation tail exceeds 1e-12")
    gamma = degree_gamma(d, cutoff)
    pmf = _poisson_pmf(d, top)
    a = np.arange(top + 1)
    low = np.minimum.outer(a, a) < cutoff
    weight = np.outer(pmf, pmf) * np.where(low, 1.0, 1.0 - eps)
    # thin[a, j] = P(Bin(a, 1 - gamma) = j)
    thin = stats.binom.pmf(a[None, :], a[:, None], 1.0 - gamma)
    return thin.T @ weight @ thin / (1.0 - eps ** 3)


def rho_degree_law(j: int, k: int, params: ModelParams) -> float:
    if j < 0 or k < 0:
        raise InvalidParameter("degrees must be non-negative")
    table = rho_table(params)
    if j >= table.shape[0] or k >= table.shape[1]:
        return 0.0
    return float(table[j, k])


def joint_degree_histogram(m: BinaryMatrix, top: int) -> np.ndarray:
    """Fraction of columns with (out-degree j, in-degree k), degrees capped at ``top``."""
    out = np.minimum(m.col_sums(), top)
    inn = np.minimum(m.row_sums(), top)
    hist = np.zeros((top + 1, top + 1))
    np.add.at(hist, (out, inn), 1.0)
    return hist / max(m.cols, 1)


class CouplingStats(NamedTuple):
    profile: dict
    log_ratio: float


def coupling_stats(m: BinaryMatrix, d: float, tau: float) -> CouplingStats:
    """Star-degree profile and exact log-likelihood ratio of the one-boosted-vertex model.

    The alternative model picks a uniform vertex and boosts its row and column
    to probability ``tau``; the ratio against iid Ber(d/n) depends on the
    matrix only through the star-degree counts.
    """
    if m.rows != m.cols:
        raise InvalidParameter("matrix must be square")
    n = m.rows
    p = d / n
    star = m.row_sums() + m.col_sums() - m.diagonal()
    counts = np.bincount(star, minlength=1)
    levels = np.nonzero(counts)[0]
    profile = {int(l): int(counts[l]) for l in levels}
    log_terms = (np.log(counts[levels]) + levels * math.log(tau / p)
                 + (2 * n - 1 - levels) * (math.log1p(-tau) - math.log1p(-p)))
    return CouplingStats(profile, float(special.logsumexp(log_terms) - math.log(n)))


# configuration model ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Multigraph:
    """Bipartite multigraph: ``rows[k], cols[k]`` carries ``mult[k]`` parallel edges."""

    n_rows: int
    n_cols: int
    rows: np.ndarray
    cols: np.ndarray
    mult: np.ndarray

    @property
    def simple(self) -> bool:
        return bool(np.all(self.mult == 1))

    def to_binary(self) -> BinaryMatrix:
        if not self.simple:
            raise InvalidParameter("multigraph has repeated edges")
        return BinaryMatrix(self.n_rows, self.n_cols, self.rows, self.cols)


def poisson_degrees(n: int, d: float, seed: int, trial: int = 0, max_tries: int = 100_000) -> DegreeSequence:
    """iid Pois(d) out- and in-degrees conditioned (by rejection) on equal totals."""
    rng = stream(seed, "poisson-degrees", trial)
    for _ in range(max_tries):
        out = rng.poisson(d, n)
        inn = rng.poisson(d, n)
        if out.sum() == inn.sum():
            return DegreeSequence(out, inn)
    raise InvalidParameter("could not match stub totals")


def sample_configuration(degs: DegreeSequence, seed: int, trial: int = 0) -> tuple[Multigraph, bool]:
    """Uniform perfect matching between column stubs and row stubs."""
    out = np.asarray(degs.out, dtype=INDEX)
    inn = np.asarray(degs.in_, dtype=INDEX)
    if out.sum() != inn.sum():
        raise InvalidParameter("stub totals differ")
    left = np.repeat(np.arange(out.size), out)
    right = np.repeat(np.arange(inn.size), inn)
    right = right[stream(seed, "config", trial).permutation(right.size)]
    key = right * max(out.size, 1) + left
    uniq, mult = np.unique(key, return_counts=True)
    g = Multigraph(inn.size, out.size, uniq // max(out.size, 1), uniq % max(out.size, 1), mult)
    return g, g.simple


class RegularityVerdict(NamedTuple):
    regular: bool
    bullet: int | None
    set_size: int | None


def degseq_regular(degs: DegreeSequence, d: float, mu: float, C: float, n: int) -> RegularityVerdict:
    """Check the four (d, mu, C)-regularity conditions; report the first failure.

    Condition 2 only needs prefixes of the descending total degrees: for each
    size the worst set is the top of that ordering.
    """
    out = np.asarray(degs.out, dtype=np.float64)
    inn = np.asarray(degs.in_, dtype=np.float64)
    if out.size != inn.size:
        raise InvalidParameter("out and in sequences differ in length")
    m = out.size
    if not (1 - mu) <= m / n <= (1 + mu):
        return RegularityVerdict(False, 1, m)
    if m:
        tot = np.sort(out + inn)[::-1]
        sizes = np.arange(1, m + 1)
        bad = np.cumsum(tot) > C * (d + np.log(m / sizes)) * sizes
        if bad.any():
            return RegularityVerdict(False, 2, int(sizes[np.argmax(bad)]))
    lo, hi = (1 - mu) * d * m, (1 + mu) * d * m
    if not (lo <= out.sum() <= hi and lo <= inn.sum() <= hi):
        return RegularityVerdict(False, 3, m)
    mixed = float(np.sum(np.power(d, -out) * inn))
    target = math.e * d * math.exp(-d) * m
    if not (1 - mu) * target <= mixed <= (1 + mu) * target:
        return RegularityVerdict(False, 4, m)
    return RegularityVerdict(True, None, None)
