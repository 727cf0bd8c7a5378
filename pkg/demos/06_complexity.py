"""Analytic complexity accounting of the policy (1 MAC = 2 FLOPs, FP32).

The model is fixed-size: its cost per active AP-UE pair is constant, so
total inference cost grows linearly in the number of UEs, against the
cubic per-bisection-step cost of centralized max-min solvers.
"""

from cfpc import policy

params = policy.init_params(256, 3, (64, 16, 1), seed=0)
acct = policy.count_params_and_flops(params)

print(f"parameters: {acct['param_count']:,} "
      f"(BiLSTM {acct['param_count_bilstm']:,}, head {acct['param_count_head']:,})")
print(f"per-pair inference cost: {acct['flops_per_pair'] / 1e6:.4f} MFLOPs "
      f"(BiLSTM {acct['flops_bilstm'] / 1e6:.4f}, head {acct['flops_head'] / 1e6:.4f})")
print(f"memory footprint: {acct['memory_bytes'] / 2**20:.2f} MiB")

print("\ntotal inference cost with N=4 serving APs per UE:")
per_pair_m = acct["flops_per_pair"] / 1e6
for K in (8, 10, 15, 50, 100):
    print(f"  K={K:>3}: {4 * K * per_pair_m:>8.1f} MFLOPs")

print("\nscaling sanity for other widths:")
for H in (8, 64, 256):
    p = policy.init_params(H, 3, (64, 16, 1), seed=0)
    a = policy.count_params_and_flops(p)
    assert a["param_count"] == policy.count_params(H, 3, (64, 16, 1))
    print(f"  H={H:>3}: {a['param_count']:>9,} params, "
          f"{a['flops_per_pair']/1e6:>7.4f} MFLOPs/pair")
