"""Exact performance evaluation: gamma coefficients, SINR, SE, soft-min.

All functions are pure. Power allocations are stored sparsely over the
active AP-UE pairs, so one SINR evaluation touches O(N*K) powers plus the
dense beta matrix, never a dense K x L power loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SimConfig
from .netgen import NetworkSnapshot

FEASIBILITY_SLACK_MW = 1e-9  # absolute slack on per-AP budget sums


@dataclass
class PowerAllocation:
    """Nonnegative downlink powers (mW) over the active pairs of a snapshot.

    ``rho[a]`` belongs to pair ``(pair_ue[a], pair_ap[a])``; the pair order
    is the snapshot's canonical UE-major order.
    """

    rho: np.ndarray      # (n_pairs,) mW
    pair_ue: np.ndarray  # (n_pairs,)
    pair_ap: np.ndarray  # (n_pairs,)
    K: int
    L: int

    @classmethod
    def from_pairs(cls, snapshot: NetworkSnapshot, rho) -> "PowerAllocation":
        rho = np.asarray(rho, dtype=float)
        if rho.shape != snapshot.pair_ue.shape:
            raise ValueError(
                f"rho has shape {rho.shape}, expected {snapshot.pair_ue.shape}"
            )
        return cls(rho, snapshot.pair_ue.copy(), snapshot.pair_ap.copy(),
                   snapshot.K, snapshot.L)

    def get(self, k: int, l: int) -> float:
        mask = (self.pair_ue == k) & (self.pair_ap == l)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise KeyError(f"({k}, {l}) is not an active pair")
        return float(self.rho[idx[0]])

    def dense(self) -> np.ndarray:
        """K x L matrix with zeros at inactive pairs (for display/tests)."""
        out = np.zeros((self.K, self.L))
        out[self.pair_ue, self.pair_ap] = self.rho
        return out

    def per_ap_total(self) -> np.ndarray:
        return np.bincount(self.pair_ap, weights=self.rho, minlength=self.L)

    def is_feasible(self, p_max: float, slack: float = FEASIBILITY_SLACK_MW) -> bool:
        return bool(np.all(self.rho >= 0.0)
                    and np.all(self.per_ap_total() <= p_max + slack))


def compute_gamma(snapshot: NetworkSnapshot, cfg: SimConfig, eta=None) -> np.ndarray:
    """MMSE-estimate quality gamma[k, l] (linear, same units as beta).

    gamma_{k,l} = tau_p eta_k beta_{k,l}^2 /
                  (tau_p sum_{i in P_k} eta_i beta_{i,l} + sigma_ul^2)

    ``eta`` optionally overrides the uniform pilot power with per-UE values.
    """
    beta = snapshot.beta
    K = snapshot.K
    eta = np.full(K, cfg.p_ul) if eta is None else np.asarray(eta, dtype=float)
    tau_p = cfg.tau_p
    # accumulate pilot-group sums once, then broadcast per UE
    n_pilots = int(snapshot.pilot_of.max()) + 1
    group = np.zeros((n_pilots, snapshot.L))
    np.add.at(group, snapshot.pilot_of, eta[:, None] * beta)
    denom = tau_p * group[snapshot.pilot_of] + cfg.noise_mw
    return tau_p * eta[:, None] * beta**2 / denom


def compute_sinr(snapshot: NetworkSnapshot, gamma: np.ndarray,
                 alloc: PowerAllocation, cfg: SimConfig) -> np.ndarray:
    """Per-UE downlink SINR (linear) under maximum-ratio precoding.

    Numerator: M (sum_{l in L_k} sqrt(rho_{k,l} gamma_{k,l}))^2.
    Denominator: sum_i sum_{l in L_i} rho_{i,l} beta_{k,l}  (includes i = k)
    + M sum_{i in P_k \\ {k}} (sum_{l in L_i} sqrt(rho_{i,l} gamma_{k,l}))^2
    + sigma_dl^2.
    """
    if np.any(alloc.rho < 0):
        raise ValueError("negative power coefficient violates the contract")
    K, L, M = snapshot.K, snapshot.L, cfg.M
    rho, p_ue, p_ap = alloc.rho, alloc.pair_ue, alloc.pair_ap

    ap_total = np.bincount(p_ap, weights=rho, minlength=L)
    non_coherent = snapshot.beta @ ap_total  # includes the i = k term

    signal_amp = np.bincount(
        p_ue, weights=np.sqrt(rho * gamma[p_ue, p_ap]), minlength=K
    )
    numerator = M * signal_amp**2

    coherent = np.zeros(K)
    sqrt_rho = np.sqrt(rho)
    for k in range(K):
        others = snapshot.pilot_set(k)
        for i in others:
            if i == k:
                continue
            sel = p_ue == i
            amp = np.sum(sqrt_rho[sel] * np.sqrt(gamma[k, p_ap[sel]]))
            coherent[k] += M * amp**2

    return numerator / (non_coherent + coherent + cfg.noise_mw)


def compute_se(sinr, cfg: SimConfig) -> np.ndarray:
    """Spectral efficiency lower bound, bit/s/Hz: (tau_d/tau_c) log2(1+SINR)."""
    return cfg.prelog * np.log2(1.0 + np.asarray(sinr, dtype=float))


def softmin_utility(se, temperature: float) -> float:
    """(1/T) log sum_k exp(-T se_k), the smooth surrogate of -min(se).

    Max-shifted for numerical stability. Lies in
    [-min(se), -min(se) + ln(K)/T].
    """
    se = np.asarray(se, dtype=float)
    if se.size == 0:
        raise ValueError("softmin of an empty SE vector")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    x = -temperature * se
    m = np.max(x)
    return float((m + np.log(np.sum(np.exp(x - m)))) / temperature)
