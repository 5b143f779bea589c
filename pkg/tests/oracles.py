"""Direct-definition oracles used by several test modules.

Every function here works from dense arrays and plain enumeration so that it
shares no code with the package.
"""
import itertools

import numpy as np


def brute_unique_neighbors(a, s):
    """Rows i outside S with exactly one j in S where a[i, j] = 1, plus rows of S with none."""
    s = set(int(x) for x in s)
    out = []
    for i in range(a.shape[0]):
        ones = sum(int(a[i, j]) for j in s)
        if (i in s and ones == 0) or (i not in s and ones == 1):
            out.append(i)
    return np.array(out, dtype=np.int64)


def brute_density_ok(a, s_max):
    n = a.shape[0]
    for k in range(1, s_max + 1):
        for s in itertools.combinations(range(n), k):
            if a[np.ix_(s, s)].sum() > k:
                return False
    return True


def reach_closure(a):
    """reach[u, v]: v reachable from u (reflexive), edge u -> v iff a[v, u] = 1."""
    n = a.shape[0]
    reach = (a.T != 0) | np.eye(n, dtype=bool)
    for k in range(n):
        reach |= reach[:, k:k + 1] & reach[k:k + 1, :]
    return reach


def brute_scc_partition(a):
    reach = reach_closure(a)
    mutual = reach & reach.T
    return {tuple(np.nonzero(mutual[v])[0].tolist()) for v in range(a.shape[0])}


def brute_trivial_image(a):
    reach = reach_closure(a)
    mutual = reach & reach.T
    bad = (mutual.sum(axis=1) > 1) | (np.diag(a) != 0)
    return np.array([not bad[reach[v]].any() for v in range(a.shape[0])])


def slice_law(v, m):
    """Exact law of sum_{i in S} v_i over uniform m-subsets S, as (atoms, masses)."""
    sums = {}
    combos = list(itertools.combinations(range(len(v)), m))
    for s in combos:
        key = complex(round(sum(v[i] for i in s).real, 12), round(sum(v[i] for i in s).imag, 12))
        sums[key] = sums.get(key, 0) + 1
    atoms = np.array(list(sums), dtype=np.complex128)
    masses = np.array(list(sums.values()), dtype=np.float64) / len(combos)
    return atoms, masses


def best_ball_mass(atoms, masses, t):
    """max over atom-centred closed balls of radius t of the enclosed mass."""
    d = np.abs(atoms[:, None] - atoms[None, :])
    return float(((d <= t + 1e-12) * masses[None, :]).sum(axis=1).max())
