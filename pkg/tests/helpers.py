"""Independent reference implementations used as test oracles.

These deliberately avoid the vectorized code paths in the package: the
SINR reference is a literal quadruple loop, and the max-min oracle is an
exhaustive (refined) grid search. They must stay independent of the code
they check.
"""

import numpy as np

from cfpc import netgen
from cfpc.config import SimConfig


def naive_sinr(snapshot, gamma, alloc, cfg):
    """Literal transcription of the SINR expression with explicit loops."""
    K, L, M = snapshot.K, snapshot.L, cfg.M
    rho = {}
    for a in range(alloc.rho.size):
        rho[(int(alloc.pair_ue[a]), int(alloc.pair_ap[a]))] = float(alloc.rho[a])
    serving = {k: [int(l) for l in snapshot.serving[k]] for k in range(K)}
    out = np.zeros(K)
    for k in range(K):
        amp = 0.0
        for l in serving[k]:
            amp += np.sqrt(rho[(k, l)] * gamma[k, l])
        num = M * amp**2
        den = cfg.noise_mw
        for i in range(K):
            for l in serving[i]:
                den += rho[(i, l)] * snapshot.beta[k, l]
        for i in snapshot.pilot_set(k):
            if i == k:
                continue
            amp_i = 0.0
            for l in serving[i]:
                amp_i += np.sqrt(rho[(i, l)] * gamma[k, l])
            den += M * amp_i**2
        out[k] = num / den
    return out


def brute_force_maxmin(snapshot, gamma, cfg, points=30, stages=3):
    """Refined exhaustive grid search over all active-pair powers.

    Returns the best min-SINR found. Only sensible for a handful of pairs.
    """
    n = snapshot.n_pairs
    assert n <= 4, "grid search is exponential in the number of pairs"
    p_ue, p_ap = snapshot.pair_ue, snapshot.pair_ap
    gam_pair = gamma[p_ue, p_ap]
    beta_k = snapshot.beta[:, p_ap]           # (K, n)
    P = cfg.p_dl_max
    K = snapshot.K

    pilot_pairs = []
    for k in range(K):
        for i in snapshot.pilot_set(k):
            if i != k:
                pilot_pairs.append((k, i))

    lo = np.zeros(n)
    hi = np.full(n, P)
    best_val = -1.0
    best_pt = None
    for _ in range(stages):
        axes = [np.linspace(lo[i], hi[i], points) for i in range(n)]
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        per_ap = np.zeros((g.shape[0], snapshot.L))
        for a in range(n):
            per_ap[:, p_ap[a]] += g[:, a]
        g = g[(per_ap <= P + 1e-9).all(axis=1)]
        sqg = np.sqrt(g)
        sig = np.zeros((g.shape[0], K))
        for a in range(n):
            sig[:, p_ue[a]] += sqg[:, a] * np.sqrt(gam_pair[a])
        den = g @ beta_k.T + cfg.noise_mw
        for (k, i) in pilot_pairs:
            amp = np.zeros(g.shape[0])
            for a in range(n):
                if p_ue[a] == i:
                    amp += sqg[:, a] * np.sqrt(gamma[k, p_ap[a]])
            den[:, k] += cfg.M * amp**2
        val = (cfg.M * sig**2 / den).min(axis=1)
        i_best = int(val.argmax())
        if val[i_best] > best_val:
            best_val = float(val[i_best])
            best_pt = g[i_best]
        span = (hi - lo) / (points - 1) * 2.0
        lo = np.maximum(best_pt - span, 0.0)
        hi = np.minimum(best_pt + span, P)
    return best_val, best_pt


def hand_snapshot(beta, n_assoc=None, pilot_of=None, area=100.0):
    """NetworkSnapshot from an explicit beta matrix (positions are dummies)."""
    beta = np.asarray(beta, dtype=float)
    K, L = beta.shape
    n_assoc = L if n_assoc is None else n_assoc
    rng = np.random.default_rng(0)
    ue = rng.uniform(0, area, size=(K, 2))
    ap = rng.uniform(0, area, size=(L, 2))
    pilots = np.arange(K) if pilot_of is None else np.asarray(pilot_of)
    return netgen.NetworkSnapshot(
        ue, ap, beta, pilots, netgen.associate(beta, n_assoc), ap_layout="uniform"
    )


def small_cfg(K, L, M=2, n_assoc=None, noise_dbm=0.0, p_dl_max=5.0, tau_c=20):
    """O(1)-scale config for hand-built physics tests."""
    return SimConfig(
        area_side=100.0, L=L, K=K, M=M,
        N_assoc=L if n_assoc is None else n_assoc,
        tau_c=tau_c, tau_p=K, tau_u=0, p_ul=1.0, p_dl_max=p_dl_max,
        noise_dbm=noise_dbm, shadow_sigma_db=0.0, ap_placement="uniform",
    )
