"""Train a small BiLSTM power-control policy end to end.

The policy maps per-AP feature sequences to positive latent powers and
normalizes them into the budget, so every forward pass is feasible by
construction. Training is unsupervised: the loss is the soft-min of the
spectral efficiencies the policy's own allocation achieves, and gradients
flow through SE, SINR, the normalization, and both LSTM directions.
This demo uses a reduced model (H=16) and a short run; see
05_full_experiment.py for the paper-scale protocol.
"""

import numpy as np

from cfpc import SimConfig, netgen, perf, policy
from cfpc import train as tm

cfg = SimConfig()
params = policy.init_params(H=16, head_dims=(8, 4, 1), seed=0)

snap = netgen.generate_snapshot(cfg, seed=3)
gamma = perf.compute_gamma(snap, cfg)
a0 = policy.infer(params, snap, cfg)
se0 = perf.compute_se(perf.compute_sinr(snap, gamma, a0, cfg), cfg)
print(f"untrained policy: feasible={a0.is_feasible(cfg.p_dl_max)}, "
      f"min SE={se0.min():.3f}")

rep = tm.gradcheck(trials=3, seed=1)
print(f"gradient check (3 random small instances): passed={rep.passed}, "
      f"worst rel err={rep.worst_rel_err:.2e}")

positions = np.random.default_rng(0).uniform(0, cfg.area_side, size=(512, 2))
tcfg = tm.TrainConfig(batch_size=16, epochs=8, hidden=16, head_dims=(8, 4, 1),
                      val_count=16, patience=50, seed=0)
print(f"\ntraining H=16 policy on {positions.shape[0]} UE positions "
      f"({positions.shape[0] // cfg.K} snapshots/epoch) ...")
res = tm.train(positions, cfg, tcfg,
               progress=lambda e, v: print(f"  epoch {e}: val min-SE {v:.4f}"))

a1 = policy.infer(res.params, snap, cfg)
se1 = perf.compute_se(perf.compute_sinr(snap, gamma, a1, cfg), cfg)
print(f"\ntrained policy on the held-out snapshot: min SE {se0.min():.3f} -> "
      f"{se1.min():.3f}")
print(f"best validation epoch: {res.best_epoch} "
      f"(val min-SE {res.best_val_min_se:.4f})")
