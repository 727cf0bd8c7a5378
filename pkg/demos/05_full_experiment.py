"""The paper-scale experiment: train at K=8, benchmark, generalize.

Protocol: 8000 fixed UE positions reshuffled into 1000 groups of 8 every
epoch, mini-batches of 64, H=256, SGD with momentum 0.9 and lr 1e-2,
soft-min temperature 10. Evaluation on 200 disjoint test groups against
tuned FPA/Lozano, EPA, and the centralized MMF oracle, then K=10 and K=15
without retraining.

Takes roughly an hour on two cores the first time (training dominates);
an existing checkpoint under results/acceptance/ is reused. Run with
--retrain to force a fresh training run.
"""

import json
import sys

from cfpc import harness

out_dir = "results/acceptance"
retrain = "--retrain" in sys.argv
summary = harness.run_headline(out_dir, retrain=retrain, progress=print)

print("\n=== K=8 test set (mean over 200 snapshots, bit/s/Hz) ===")
print(f"{'method':<8} {'min SE':>8} {'mean SE':>8} {'max SE':>8}")
for m, s in summary["k8"].items():
    print(f"{m:<8} {s['min_se']:>8.4f} {s['mean_se']:>8.4f} {s['max_se']:>8.4f}")

print(f"\ntuned baselines: FPA nu={summary['tuned']['nu']}, "
      f"Lozano theta={summary['tuned']['theta']}")
print(f"policy / best baseline (min SE): {summary['headline_ratio']:.3f}x")
print(f"oracle / best baseline (min SE): {summary['oracle_over_best_baseline']:.3f}x")
print(f"policy below oracle: {summary['policy_below_oracle']}")

for k, gen in summary["generalization"].items():
    print(f"\n=== generalization {k} (no retraining) ===")
    pct = gen["min_se_percentiles"]
    print(f"{'method':<8} {'p10':>7} {'p50':>7} {'p90':>7}")
    for m, row in pct.items():
        print(f"{m:<8} {row['10']:>7.3f} {row['50']:>7.3f} {row['90']:>7.3f}")

print(f"\nartifacts written under {out_dir}/ "
      "(summary.csv, per-realization CDFs, manifests)")
print(json.dumps({"headline_ratio": summary["headline_ratio"],
                  "oracle_over_best_baseline": summary["oracle_over_best_baseline"]},
                 indent=2))
