"""Evaluate the downlink physics and the scalable baseline allocators.

Shows the gamma (channel-estimate quality) matrix, then compares equal
power allocation, fractional power allocation, and the Lozano rule on one
snapshot in terms of per-UE spectral efficiency.
"""

import numpy as np

from cfpc import SimConfig, alloc, netgen, perf

cfg = SimConfig()
snap = netgen.generate_snapshot(cfg, seed=42)
gamma = perf.compute_gamma(snap, cfg)

quality = gamma[snap.pair_ue, snap.pair_ap] / snap.beta[snap.pair_ue, snap.pair_ap]
print("estimation quality gamma/beta over active pairs: "
      f"median {np.median(quality):.3f}, min {quality.min():.3f}")

methods = {
    "epa": alloc.epa(snap, cfg),
    "fpa(nu=0.5)": alloc.fpa(snap, cfg, 0.5),
    "fpa(nu=-0.5)": alloc.fpa(snap, cfg, -0.5),
    "lozano(0.5)": alloc.lozano(snap, cfg, 0.5),
    "lozano(1.0)": alloc.lozano(snap, cfg, 1.0),
}

print(f"\n{'method':<14} {'min SE':>8} {'mean SE':>8} {'max SE':>8}   feasible")
for name, a in methods.items():
    se = perf.compute_se(perf.compute_sinr(snap, gamma, a, cfg), cfg)
    print(f"{name:<14} {se.min():>8.3f} {se.mean():>8.3f} {se.max():>8.3f}   "
          f"{a.is_feasible(cfg.p_dl_max)}")

# the soft-min utility the training loss is built on
se = perf.compute_se(perf.compute_sinr(snap, gamma, methods["epa"], cfg), cfg)
for T in (1.0, 10.0, 100.0):
    print(f"softmin(T={T:>5}): {perf.softmin_utility(se, T):+.4f} "
          f"(-min SE = {-se.min():+.4f}, gap bound ln(K)/T = {np.log(cfg.K)/T:.4f})")
