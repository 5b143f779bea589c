"""Digraph structure of 0-1 matrices: unique neighbours, expansion, density, SCCs."""
from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from . import constants, kernels
from .errors import InvalidParameter
from .model import BinaryMatrix, DegreeSequence, degseq_regular
from .rng import stream


@dataclass(frozen=True, eq=False)
class Digraph:
    """Vertex j has an edge to i whenever ``M[i, j] = 1``."""

    n: int
    out_ptr: np.ndarray
    out_adj: np.ndarray
    in_ptr: np.ndarray
    in_adj: np.ndarray
    loops: np.ndarray

    @classmethod
    def from_matrix(cls, m: BinaryMatrix) -> "Digraph":
        if m.rows != m.cols:
            raise InvalidParameter("a digraph needs a square matrix")
        return cls(m.rows, m.col_ptr, m.csc_rows, m.row_ptr, m.col_idx, m.diagonal().astype(bool))

    @classmethod
    def from_edges(cls, n: int, edges) -> "Digraph":
        """Edges as (source, target) pairs."""
        e = np.asarray(list(edges), dtype=np.int64).reshape(-1, 2)
        return cls.from_matrix(BinaryMatrix(n, n, e[:, 1], e[:, 0]))

    def out_neighbors(self, v: int) -> np.ndarray:
        return self.out_adj[self.out_ptr[v]:self.out_ptr[v + 1]]

    def in_neighbors(self, v: int) -> np.ndarray:
        return self.in_adj[self.in_ptr[v]:self.in_ptr[v + 1]]

    def out_degrees(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def in_degrees(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    def _bfs(self, sources, forward: bool) -> np.ndarray:
        ptr, adj = (self.out_ptr, self.out_adj) if forward else (self.in_ptr, self.in_adj)
        seen = np.zeros(self.n, dtype=bool)
        queue = deque(int(s) for s in sources)
        seen[list(queue)] = True
        while queue:
            u = queue.popleft()
            for w in adj[ptr[u]:ptr[u + 1]]:
                if not seen[w]:
                    seen[w] = True
                    queue.append(int(w))
        return seen

    def forward_set(self, v: int) -> np.ndarray:
        """X_G(v): vertices reachable from v (v included)."""
        return np.nonzero(self._bfs([v], True))[0]

    def backward_set(self, v: int) -> np.ndarray:
        """Y_G(v): vertices that reach v (v included)."""
        return np.nonzero(self._bfs([v], False))[0]


# unique neighbours ------------------------------------------------------------------

def _check_columns(m: BinaryMatrix, s) -> np.ndarray:
    s = np.asarray(s, dtype=np.int64).ravel()
    if s.size and (s.min() < 0 or s.max() >= m.cols):
        raise InvalidParameter("column index out of range")
    if np.unique(s).size != s.size:
        raise InvalidParameter("column set repeats an index")
    return s


def unique_neighbors(m: BinaryMatrix, s) -> np.ndarray:
    """Rows outside S with exactly one one in the columns S, plus rows of S with none there."""
    s = _check_columns(m, s)
    hits = np.zeros(m.rows, dtype=np.int64)
    for j in s:
        hits[m.out_neighbors(int(j))] += 1
    in_s = np.zeros(m.rows, dtype=bool)
    in_s[s[s < m.rows]] = True
    return np.nonzero(np.where(in_s, hits == 0, hits == 1))[0]


def unique_neighbor_count(m: BinaryMatrix, sets, backend=None) -> np.ndarray:
    """|U(S)| for each row of ``sets``."""
    return kernels.unique_neighbor_counts(m.col_ptr, m.csc_rows, m.rows, sets, backend)


def expansion_alpha(k, n: int):
    """alpha(k) = (log(n/k))^-2."""
    return np.log(n / np.asarray(k, dtype=np.float64)) ** -2.0


def nu_obs_margin(m: BinaryMatrix, v, ell: int, z: complex) -> float:
    """min over i in U(S) of |((M - zI) v_S)_i| - v*_ell min(|z|, 1), S = top-ell coordinates.

    +inf when U(S) is empty.
    """
    v = np.asarray(v, dtype=np.complex128).ravel()
    if v.size != m.cols or not 1 <= ell <= m.cols:
        raise InvalidParameter("vector length or ell out of range")
    order = np.argsort(-np.abs(v), kind="stable")
    s = order[:ell]
    vs = np.zeros_like(v)
    vs[s] = v[s]
    image = m.csr @ vs - z * np.eye(m.rows, m.cols) @ vs
    u = unique_neighbors(m, s)
    if u.size == 0:
        return math.inf
    return float(np.abs(image[u]).min() - np.abs(v[order[ell - 1]]) * min(abs(z), 1.0))


# expansion census --------------------------------------------------------------------

@dataclass
class ExpansionReport:
    mode: str
    sizes: list
    draws: dict
    violations: dict
    alpha: dict
    filtered_draws: dict = field(default_factory=dict)
    filtered_violations: dict = field(default_factory=dict)
    star_checked: int = 0
    star_violations: int = 0
    worst: dict | None = None
    partial: bool = False

    @property
    def holds(self) -> bool:
        return not any(self.violations.values()) and not any(self.filtered_violations.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _record_worst(report: ExpansionReport, sets: np.ndarray, counts: np.ndarray, need: float):
    gap = counts - need
    i = int(np.argmin(gap))
    if report.worst is None or gap[i] < report.worst["gap"]:
        report.worst = {"set": sorted(int(x) for x in sets[i]), "unique": int(counts[i]),
                        "needed": float(need), "gap": float(gap[i])}


def _filter_ok(total: int, k: int, n: int) -> bool:
    return abs(total - k) <= k / math.sqrt(math.log(n / k))


def _filtered_sets(out_deg: np.ndarray, k: int, count: int, rng):
    """Uniform k-sets with |sum of out-degrees - k| <= k / sqrt(log(n/k)).

    A DP over degree classes counts sets by (size, degree sum); draws pick a
    class composition backwards from a feasible end state, then uniform
    vertices inside each class.  Returns None when the family is empty.
    """
    n = out_deg.size
    slack = k / math.sqrt(math.log(n / k))
    top = math.floor(k + slack)
    degs, members = np.unique(out_deg, return_inverse=True)
    keep = degs <= top
    classes = [(int(dg), np.nonzero(members == c)[0]) for c, dg in enumerate(degs) if keep[c]]
    # table[c][size, total]: weighted count of sets drawn from the first c classes
    table = [np.zeros((k + 1, top + 1))]
    table[0][0, 0] = 1.0
    for dg, verts in classes:
        prev = table[-1]
        nxt = np.zeros_like(prev)
        for c in range(min(verts.size, k) + 1):
            if c * dg > top:
                break
            nxt[c:, c * dg:] += prev[:k + 1 - c, :top + 1 - c * dg] * float(math.comb(verts.size, c))
        table.append(nxt)
    totals = np.arange(top + 1)
    ends = np.nonzero(np.abs(totals - k) <= slack)[0]
    end_w = table[-1][k, ends]
    if end_w.sum() <= 0:
        return None
    size = np.full(count, k)
    total = rng.choice(ends, size=count, p=end_w / end_w.sum())
    picks = [[] for _ in range(count)]
    for ci in range(len(classes) - 1, -1, -1):
        dg, verts = classes[ci]
        prev = table[ci]
        take = np.zeros(count, dtype=np.int64)
        states, inv = np.unique(np.stack([size, total], axis=1), axis=0, return_inverse=True)
        inv = inv.ravel()
        for si, (sz, tt) in enumerate(states):
            cs = np.arange(min(verts.size, sz) + 1)
            cs = cs[cs * dg <= tt]
            w = prev[sz - cs, tt - cs * dg] * np.array([float(math.comb(verts.size, int(c))) for c in cs])
            who = np.nonzero(inv == si)[0]
            take[who] = rng.choice(cs, size=who.size, p=w / w.sum())
        need = np.nonzero(take)[0]
        if need.size:
            cmax = int(take.max())
            cols = np.arange(cmax)
            idx = rng.integers(verts.size, size=(need.size, cmax))
            redo = np.arange(need.size)
            while redo.size:
                # columns past a draw's own count get distinct sentinels
                cand = np.where(cols < take[need[redo], None], idx[redo], -1 - cols)
                srt = np.sort(cand, axis=1)
                dup = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
                redo = redo[dup]
                idx[redo] = rng.integers(verts.size, size=(redo.size, cmax))
            part = idx
            for row, draw in enumerate(need):
                picks[draw].extend(verts[part[row, :take[draw]]].tolist())
        size = size - take
        total = total - take * dg
    return np.sort(np.array(picks, dtype=np.int64), axis=1)


def expansion_census(m: BinaryMatrix, r_min: int, k_max: int, mode: str = "sampled",
                     budget: int = 10_000, seed: int = 0, k_exact: int = 3,
                     filtered: bool = True, star_column: int | None = None,
                     star_k: int = 3, n_alpha: int | None = None, backend=None) -> ExpansionReport:
    """Count sets S with |U(S)| < alpha(|S|)|S| over sizes r_min..k_max.

    ``exact`` enumerates all sets of size <= k_exact (at most ``budget`` sets
    in total); ``sampled`` draws ``budget`` uniform sets per size and, when
    ``filtered``, ``budget`` more from the degree-sum filtered family.  Sizes
    at or above ``n_alpha`` (the n inside alpha, default the column count)
    are skipped since alpha is undefined there.
    When ``star_column`` is given, every set of size <= star_k containing it
    is checked for U(S) = 0.
    """
    n = m.cols
    n_alpha = n if n_alpha is None else n_alpha
    if not 1 <= r_min or k_max > n:
        raise InvalidParameter("need 1 <= r_min and k_max <= cols")
    if mode not in ("exact", "sampled"):
        raise InvalidParameter(f"unknown census mode {mode!r}")
    sizes = list(range(r_min, min(k_max, n_alpha - 1) + 1))
    report = ExpansionReport(mode, sizes, {}, {}, {})
    rng = stream(seed, "census")
    out_deg = m.col_sums()
    used = 0
    for k in sizes:
        need = float(expansion_alpha(k, n_alpha) * k)
        report.alpha[k] = float(expansion_alpha(k, n_alpha))
        if mode == "exact":
            if k > k_exact:
                report.partial = True
                continue
            total = math.comb(n, k)
            if used + total > budget:
                report.partial = True
                continue
            used += total
            bad = 0
            for chunk in _chunks(itertools.combinations(range(n), k), 4096):
                sets = np.array(chunk, dtype=np.int64)
                counts = unique_neighbor_count(m, sets, backend)
                bad += int(np.count_nonzero(counts < need))
                _record_worst(report, sets, counts, need)
            report.draws[k] = total
            report.violations[k] = bad
        else:
            sets = np.sort(np.array([rng.choice(n, k, replace=False) for _ in range(budget)]), axis=1)
            counts = unique_neighbor_count(m, sets, backend)
            report.draws[k] = budget
            report.violations[k] = int(np.count_nonzero(counts < need))
            _record_worst(report, sets, counts, need)
            if filtered:
                fsets = _filtered_sets(out_deg, k, budget, rng)
                if fsets is None:
                    report.filtered_draws[k] = 0
                    report.filtered_violations[k] = 0
                else:
                    counts = unique_neighbor_count(m, fsets, backend)
                    report.filtered_draws[k] = budget
                    report.filtered_violations[k] = int(np.count_nonzero(counts < need))
                    _record_worst(report, fsets, counts, need)
    if star_column is not None:
        checked, bad = star_census(m, star_column, star_k, backend)
        report.star_checked, report.star_violations = checked, bad
    return report


def _chunks(it, size):
    while True:
        block = list(itertools.islice(it, size))
        if not block:
            return
        yield block


def _small_subsets(items: np.ndarray, k: int):
    """All k-subsets of ``items`` as rows, vectorised for k <= 2."""
    if k == 0:
        yield np.empty((1, 0), dtype=np.int64)
    elif k == 1:
        yield items[:, None]
    elif k == 2:
        a, b = np.triu_indices(items.size, 1)
        for s in range(0, a.size, 1 << 18):
            yield np.stack([items[a[s:s + (1 << 18)]], items[b[s:s + (1 << 18)]]], axis=1)
    else:
        for chunk in _chunks(itertools.combinations(items.tolist(), k), 4096):
            yield np.array(chunk, dtype=np.int64)


def star_census(m: BinaryMatrix, column: int, k_max: int, backend=None) -> tuple[int, int]:
    """Sets of size <= k_max containing ``column``: (checked, with U(S) empty)."""
    others = np.array([j for j in range(m.cols) if j != column], dtype=np.int64)
    checked = bad = 0
    for k in range(min(k_max, m.cols)):
        for block in _small_subsets(others, k):
            sets = np.hstack([np.full((block.shape[0], 1), column, dtype=np.int64), block])
            counts = unique_neighbor_count(m, sets, backend)
            checked += sets.shape[0]
            bad += int(np.count_nonzero(counts == 0))
    return checked, bad


# local density ------------------------------------------------------------------------

@dataclass
class DensityVerdict:
    status: str  # "pass", "fail" or "undecided"
    witness: list | None
    explored: int

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def local_density_check(m: BinaryMatrix, s_max: int, budget: int = 2_000_000) -> DensityVerdict:
    """Is sum_{i,j in S} M_ij <= |S| for every vertex set with |S| <= s_max?

    A smallest violating set is connected in the symmetrised graph, so the
    search enumerates connected subsets (ESU order, each subset once).
    """
    if m.rows != m.cols:
        raise InvalidParameter("density check needs a square matrix")
    n = m.rows
    if s_max > n:
        raise InvalidParameter("s_max exceeds the vertex count")
    loops = m.diagonal().astype(np.int64)
    weight: list[dict[int, int]] = [dict() for _ in range(n)]
    for i, j in zip(m.row_idx.tolist(), m.col_idx.tolist()):
        if i != j:
            weight[i][j] = weight[i].get(j, 0) + 1
            weight[j][i] = weight[j].get(i, 0) + 1
    explored = 0
    for root in range(n):
        # stack frames: (subset, frontier, excluded neighbourhood, block sum)
        stack = [([root], sorted(u for u in weight[root] if u > root),
                  {root, *weight[root]}, int(loops[root]))]
        while stack:
            sub, ext, closed, mass = stack.pop()
            explored += 1
            if explored > budget:
                return DensityVerdict("undecided", None, explored)
            if mass > len(sub):
                return DensityVerdict("fail", sorted(sub), explored)
            if len(sub) == s_max:
                continue
            ext = list(ext)
            while ext:
                w = ext.pop()
                gain = int(loops[w]) + sum(weight[w].get(u, 0) for u in sub)
                new_ext = ext + [u for u in weight[w] if u > root and u not in closed]
                stack.append((sub + [w], new_ext, closed | set(weight[w]), mass + gain))
    return DensityVerdict("pass", None, explored)


# strongly connected components ---------------------------------------------------------

@dataclass
class SCCReport:
    labels: np.ndarray           # component id per vertex, reverse topological order
    components: list             # vertex arrays
    kinds: list                  # "single", "cycle" or "other"
    giant: int                   # size of the largest component

    @property
    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.components], dtype=np.int64)

    @property
    def cycle_lengths(self) -> list:
        return [int(c.size) for c, k in zip(self.components, self.kinds) if k == "cycle"]

    def summary(self) -> dict:
        sizes = self.sizes
        return {"count": len(self.components), "giant": int(self.giant),
                "singletons": int(sum(k == "single" for k in self.kinds)),
                "cycles": sorted(self.cycle_lengths),
                "other_sizes": sorted(int(s) for s, k in zip(sizes, self.kinds) if k == "other")}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def scc_structure(g: Digraph) -> SCCReport:
    """Tarjan's algorithm without recursion."""
    n = g.n
    index = np.full(n, -1, dtype=np.int64)
    low = np.zeros(n, dtype=np.int64)
    on_stack = np.zeros(n, dtype=bool)
    labels = np.full(n, -1, dtype=np.int64)
    stack: list[int] = []
    components = []
    counter = 0
    ptr, adj = g.out_ptr.tolist(), g.out_adj.tolist()
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, ptr[root])]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < ptr[v + 1]:
                work[-1] = (v, pos + 1)
                w = adj[pos]
                if index[w] < 0:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, ptr[w]))
                elif on_stack[w] and index[w] < low[v]:
                    low[v] = index[w]
                continue
            work.pop()
            if work:
                u = work[-1][0]
                if low[v] < low[u]:
                    low[u] = low[v]
            if low[v] == index[v]:
                members = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    labels[w] = len(components)
                    members.append(w)
                    if w == v:
                        break
                components.append(np.array(sorted(members), dtype=np.int64))
    kinds = []
    for cid, comp in enumerate(components):
        if comp.size == 1:
            kinds.append("cycle" if g.loops[comp[0]] else "single")
            continue
        internal = sum(int(np.count_nonzero(labels[g.out_neighbors(int(v))] == cid)) for v in comp)
        kinds.append("cycle" if internal == comp.size else "other")
    giant = max((c.size for c in components), default=0)
    return SCCReport(labels, components, kinds, int(giant))


def theta_root(eps: float, tol: float = 1e-12) -> float:
    """Nonzero root of 1 - x - exp(-(1 + eps) x) on (0, 1]."""
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    f = lambda x: -x - math.expm1(-(1.0 + eps) * x)
    lo, hi = 1e-12, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def bad_vertices(g: Digraph, scc: SCCReport | None = None) -> np.ndarray:
    """Vertices in an SCC of size > 1 or carrying a self-loop."""
    scc = scc_structure(g) if scc is None else scc
    sizes = scc.sizes
    return (sizes[scc.labels] > 1) | g.loops


def trivial_image_mask(g: Digraph, scc: SCCReport | None = None) -> np.ndarray:
    """True where every vertex reachable from v is a loop-free singleton SCC."""
    bad = np.nonzero(bad_vertices(g, scc))[0]
    return ~g._bfs(bad, forward=False)


def trivial_image_census(g: Digraph) -> tuple[int, np.ndarray]:
    """Number of trivial-image vertices (a lower bound on the zero-eigenvalue multiplicity)."""
    mask = trivial_image_mask(g)
    return int(mask.sum()), mask


def zero_eigen_multiplicity(m: BinaryMatrix, tol: float = 1e-8) -> int:
    """#{|lambda| < tol} for the matrix scaled to unit spectral-norm estimate."""
    from .sv import check_cap
    check_cap(m.rows)
    a = m.to_dense(np.float64)
    scale = math.sqrt(max(float(np.abs(a).sum(axis=0).max(initial=0)) * float(np.abs(a).sum(axis=1).max(initial=0)), 1e-300))
    if m.nnz == 0:
        return m.rows
    lam = np.linalg.eigvals(a / scale)
    return int(np.count_nonzero(np.abs(lam) < tol))


def reach_sizes(g: Digraph, forward: bool = True, scc: SCCReport | None = None) -> np.ndarray:
    """|X_G(v)| (forward) or |Y_G(v)| for every vertex, via bitsets on the condensation."""
    scc = scc_structure(g) if scc is None else scc
    labels = scc.labels
    ptr, adj = (g.out_ptr, g.out_adj) if forward else (g.in_ptr, g.in_adj)
    ncomp = len(scc.components)
    succ = [set() for _ in range(ncomp)]
    for v in range(g.n):
        cv = labels[v]
        for w in adj[ptr[v]:ptr[v + 1]]:
            cw = labels[w]
            if cw != cv:
                succ[cv].add(int(cw))
    # Tarjan emits sinks first: forward reach of a component only uses lower ids
    order = range(ncomp) if forward else range(ncomp - 1, -1, -1)
    reach = [0] * ncomp
    for c in order:
        bits = 0
        for v in scc.components[c]:
            bits |= 1 << int(v)
        for s in succ[c]:
            bits |= reach[s]
        reach[c] = bits
    sizes = np.array([reach[c].bit_count() for c in range(ncomp)], dtype=np.int64)
    return sizes[labels]


@dataclass
class Bimodality:
    small_max: int
    large_min: int | None
    ratio: float
    bimodal: bool


def reach_bimodality(sizes, min_ratio: float = 10.0) -> Bimodality:
    """Split the reach sizes at their largest multiplicative gap."""
    vals = np.unique(np.asarray(sizes))
    if vals.size < 2:
        return Bimodality(int(vals.max(initial=0)), None, 1.0, False)
    ratios = vals[1:] / np.maximum(vals[:-1], 1)
    i = int(np.argmax(ratios))
    return Bimodality(int(vals[i]), int(vals[i + 1]), float(ratios[i]), bool(ratios[i] >= min_ratio))


# quasirandomness events ---------------------------------------------------------------

def event_d(m: BinaryMatrix, d: float, eps: float, n: int) -> bool | None:
    """Degree regularity (d, eps^1/2, 16) and local sparsity up to floor(sqrt(log n)).

    None when the density search is undecided.
    """
    if not degseq_regular(DegreeSequence.of(m), d, math.sqrt(eps), 16.0, n).regular:
        return False
    s_max = min(math.floor(math.sqrt(math.log(n))), m.rows)
    verdict = local_density_check(m, s_max)
    return None if verdict.status == "undecided" else verdict.passed


def event_u(m: BinaryMatrix, r: float, n: int, kappa: float = constants.KAPPA,
            budget: int = 64, seed: int = 0) -> bool:
    """Sampled check of |U(S)| >= alpha(|S|)|S| over sizes in [r, kappa n]; vacuous if empty."""
    lo = max(1, math.ceil(r))
    hi = min(math.floor(kappa * n), m.cols - 1)
    if lo > hi:
        return True
    sizes = np.unique(np.geomspace(lo, hi, num=min(8, hi - lo + 1)).astype(int))
    for k in sizes:
        if not expansion_census(m, int(k), int(k), "sampled", budget, seed, n_alpha=n).holds:
            return False
    return True


def event_u_star(m: BinaryMatrix, column: int, k_max: int = 3) -> bool:
    """Every set of size <= k_max containing ``column`` has U(S) nonempty."""
    return star_census(m, column, k_max)[1] == 0
