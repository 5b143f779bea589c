"""Desk-scale constants and pilot-fitted values.

Asymptotic statements leave their constants unnamed; the values here are the
ones this package uses at laptop sizes.  Every fitted value records how it
was obtained; ``scripts/run_pilots.py`` re-derives the pilots.
"""
from __future__ import annotations

VERSION = "0.1.0"

# largest dense dimension handled by the SVD/eigen backends
DENSE_CAP = 4096

# secular cutoff scale in eps_r = exp(-K (log(n/r))^9)
WALK_K = 0.01

# spreadness probe: v*_{floor(cn)} >= exp(-C' (log n)^7)/sqrt(n) with c = c_scale e^{-d}
SPREAD = {"C_prime": 0.05, "c_scale": 1 / 8}

# expansion census: support cap kappa of the U(r) events
KAPPA = 0.01

# fitted multiplicative constants for the anticoncentration and drift bounds
C_FIT = {
    "lkr": 4.0,
    "slice": 8.0,
    "walk_tail": 64.0,
    "final_window": 5.0,
    "rotational_band": 10.0,
    # projection frequency bound C (log 1/eps)^{-1/4}; pilot: see PILOTS["projection"]
    "projection": 1.0,
}

# pilot values; each entry: value and the procedure that produced it
PILOTS = {
    "subcritical_trivial_image": {
        "value": 0.9958,
        "procedure": "mean trivial-image fraction, n=600, d=0.5, seed=1, 200 iid trials",
    },
    "configuration_simple": {
        "value": 0.0005,
        "band": (0.0, 0.0033),
        "procedure": "simple fraction of the configuration model on iid Pois(4) degrees, n=500, seed=1, "
                     "4000 trials; band p +- 4 sd at 1000 trials, floored at 0",
    },
    "balanced_basis_floor": {
        "value": 8.93,
        "procedure": "10th percentile literal score, random 10-dim subspaces of C^200, seed=1, 200 trials",
    },
    "projection": {
        "value": 0.0,
        "procedure": "max frequency at the natural eps_r over first-epoch states (3 steps, row and column), "
                     "n=1200, d=4, cutoff=5, z=1+i, r=start_height//2, seed=1, 200 trials",
    },
}
