"""Recompute the pilot values stored in ``constants.PILOTS``.

Every pilot uses seed 1, which no test uses.  Run: python scripts/run_pilots.py
"""
import json
import math

import numpy as np
from scipy.stats import unitary_group

from sparse_spectra import anticonc, graph, sv
from sparse_spectra.model import ModelParams, poisson_degrees, sample_configuration, sample_iid, sample_modified
from sparse_spectra.walk import WalkParams, build_process, log_epsilon_r

SEED = 1


def subcritical_trivial_image(trials=200):
    mp = ModelParams(600, 0.5, seed=SEED)
    fr = [graph.trivial_image_census(graph.Digraph.from_matrix(sample_iid(mp, t)))[0] / 600
          for t in range(trials)]
    return {"value": float(np.mean(fr)), "sd": float(np.std(fr, ddof=1))}


def configuration_simple(trials=4000, check_trials=1000):
    hits = [sample_configuration(poisson_degrees(500, 4.0, SEED, t), SEED, t)[1] for t in range(trials)]
    p = float(np.mean(hits))
    half = 4 * math.sqrt(p * (1 - p) / check_trials)
    return {"value": p, "band": [round(p - half, 4), round(p + half, 4)]}


def balanced_basis_floor(trials=200):
    rng = np.random.default_rng(SEED)
    scores, consts = [], []
    for t in range(trials):
        q = unitary_group.rvs(200, random_state=rng)[:, :10]
        res = sv.balanced_basis(q, seed=t)
        scores.append(res.literal_score)
        consts.append(res.diagnostic)
    return {"value": float(np.quantile(scores, 0.1)), "spread_constant_p10": float(np.quantile(consts, 0.1)),
            "fraction_literal_at_least_0.1": float(np.mean(np.array(scores) >= 0.1))}


def projection(trials=200):
    b = sample_modified(ModelParams(1200, 4.0, cutoff=5, seed=SEED))
    params = WalkParams(ModelParams(1200, 4.0, cutoff=5, seed=SEED))
    proc = build_process(b, params, SEED, 0)
    r = params.start_height // 2
    log_eps = log_epsilon_r(1200, r, params.K)
    worst = 0.0
    for which in ("column", "row"):
        for step in (0, (proc.t2_end - proc.m) // 2, proc.t2_end - proc.m - 1):
            state = anticonc.first_epoch_state(b, params, step, which, SEED, 0)
            res = anticonc.projection_anticonc(state, params.z, r, trials, log_eps, SEED, force=True)
            worst = max(worst, res.frequency)
    return {"value": worst, "r": r, "log_eps": log_eps}


def main():
    out = {"subcritical_trivial_image": subcritical_trivial_image(),
           "configuration_simple": configuration_simple(),
           "balanced_basis_floor": balanced_basis_floor(),
           "projection": projection()}
    print(json.dumps(out, indent=2))


if __name__ == "__main__":
    main()
