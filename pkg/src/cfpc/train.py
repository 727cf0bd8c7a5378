"""Unsupervised, physics-informed training of the BiLSTM policy.

The loss is the soft-min surrogate of the max-min-fairness utility,
evaluated on the SE produced by the policy's own allocation, so gradients
flow from the loss through SE, SINR, the per-AP normalization and the
BiLSTM back to the parameters. Differentiation is exact reverse-mode via
cfpc.autodiff; ``gradcheck`` certifies it against 64-bit central finite
differences.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import netgen, perf, policy
from .config import SimConfig
from .errors import ConfigError, NumericalError

LN2 = np.log(2.0)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-2
    momentum: float = 0.9
    temperature: float = 10.0
    epochs: int = 200
    hidden: int = 256
    head_dims: tuple = (64, 16, 1)
    grad_clip: float | None = None  # global-norm bound, disabled by default
    seed: int = 0
    dtype: str = "float32"
    patience: int = 20              # early stop on validation min-SE
    val_count: int = 50             # validation snapshots
    start_epoch: int = 0            # resume point; epoch streams are seed-derived
    feature_mode: str = "global"
    neighborhood: tuple | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass
class TrainResult:
    params: policy.PolicyParams
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_min_se: float = -np.inf
    diverged: bool = False


def batch_loss_graph(pvars: dict, snapshots: list, cfg: SimConfig,
                     temperature: float, perm_rng=None, dtype=np.float64,
                     feature_mode: str = "global", neighborhood=None):
    """Soft-min loss Var over a mini-batch of snapshots.

    Returns (loss Var, aux dict). aux carries the per-UE SE values, the
    per-pair powers grouped by snapshot, and the clamp count, all as plain
    arrays for logging and invariant checks.
    """
    if not snapshots:
        raise ValueError("empty batch")
    B = len(snapshots)
    K, L = snapshots[0].K, snapshots[0].L
    if any(s.K != K or s.L != L for s in snapshots):
        raise ValueError("snapshots in one batch must share K and L")
    H = pvars["lstm_fwd.wh"].value.shape[1]

    seqs = []
    seq_snap = []
    for b, snap in enumerate(snapshots):
        for fs in policy.build_features(snap, cfg, mode=feature_mode,
                                        neighborhood=neighborhood,
                                        perm_rng=perm_rng):
            seqs.append(fs)
            seq_snap.append(b)
    rho_hat, _, order, clamp_count = policy.policy_forward_graph(
        pvars, seqs, H, dtype=dtype
    )

    P = rho_hat.value.shape[0]
    pair_b = np.empty(P, dtype=np.int64)
    pair_k = np.empty(P, dtype=np.int64)
    pair_l = np.empty(P, dtype=np.int64)
    for j, (si, t) in enumerate(order):
        pair_b[j] = seq_snap[si]
        pair_k[j] = seqs[si].ue_order[t]
        pair_l[j] = seqs[si].ap

    gammas = np.stack([perf.compute_gamma(s, cfg) for s in snapshots])
    betas = np.stack([s.beta for s in snapshots])

    ap_ids = pair_b * L + pair_l
    ue_ids = pair_b * K + pair_k
    rho = policy.normalize_pairs(rho_hat, ap_ids, B * L, cfg.p_dl_max)

    # non-coherent interference: sum_l beta[k,l] * (AP l's transmit total)
    ap_power = ad.reshape(ad.segment_sum(rho, ap_ids, B * L), (B, 1, L))
    beta_c = ad.constant(betas.astype(dtype))
    non_coh = ad.sum_(beta_c * ap_power, axis=2)  # (B, K)

    sqrt_rho = ad.sqrt(rho)
    w_sig = np.sqrt(gammas[pair_b, pair_k, pair_l]).astype(dtype)
    sig_amp = ad.segment_sum(sqrt_rho * ad.constant(w_sig), ue_ids, B * K)
    numer = float(cfg.M) * ad.reshape(sig_amp * sig_amp, (B, K))

    # coherent (pilot-sharing) term; absent with orthogonal pilots
    coh_rows = []
    coh_ids = []
    for b, snap in enumerate(snapshots):
        for k in range(K):
            for i in snap.pilot_set(k):
                if i == k:
                    continue
                row = np.where(
                    (pair_b == b) & (pair_k == i),
                    np.sqrt(cfg.M * gammas[b, k, pair_l]),
                    0.0,
                )
                coh_rows.append(row)
                coh_ids.append(b * K + k)
    if coh_rows:
        C = ad.constant(np.asarray(coh_rows, dtype=dtype))
        amps = ad.reshape(ad.matmul(C, ad.reshape(sqrt_rho, (P, 1))), (len(coh_rows),))
        coh = ad.reshape(
            ad.segment_sum(amps * amps, np.asarray(coh_ids), B * K), (B, K)
        )
        denom = non_coh + coh + cfg.noise_mw
    else:
        denom = non_coh + cfg.noise_mw

    sinr = numer / denom
    se = ad.log1p(sinr) * (cfg.prelog / LN2)
    lse = ad.logsumexp(se * (-temperature), axis=1)  # (B,)
    if not np.all(np.isfinite(lse.value)):
        bad = int(np.flatnonzero(~np.isfinite(lse.value))[0])
        raise NumericalError(f"non-finite loss contribution from snapshot {bad}")
    loss = ad.sum_(lse) * (1.0 / (temperature * B))

    aux = {
        "se": se.value.copy(),
        "rho": rho.value.copy(),
        "pair_b": pair_b,
        "pair_k": pair_k,
        "pair_l": pair_l,
        "clamp_count": clamp_count,
    }
    return loss, aux


def loss(params: policy.PolicyParams, snapshots: list, cfg: SimConfig,
         temperature: float, perm_rng=None, **kw) -> float:
    """Scalar soft-min loss of the current policy on a batch."""
    pvars = {name: ad.constant(a) for name, a in params.items()}
    out, _ = batch_loss_graph(pvars, snapshots, cfg, temperature,
                              perm_rng=perm_rng, dtype=params.wx_f.dtype, **kw)
    return float(out.value)


def grad(params: policy.PolicyParams, snapshots: list, cfg: SimConfig,
         temperature: float, perm_rng=None, **kw):
    """Reverse-mode gradient of the loss w.r.t. every parameter tensor.

    Returns (loss_value, grads, aux) with grads keyed like params.items().
    """
    pvars = policy.params_to_vars(params)
    out, aux = batch_loss_graph(pvars, snapshots, cfg, temperature,
                                perm_rng=perm_rng, dtype=params.wx_f.dtype, **kw)
    tape = ad.backward(out)
    grads = {}
    for name, v in pvars.items():
        grads[name] = np.zeros_like(v.value) if v.grad is None else v.grad
    aux["tape_len"] = len(tape)
    return float(out.value), grads, aux


def sgd_step(params: policy.PolicyParams, grads: dict, state: dict,
             lr: float, momentum: float):
    """Classical momentum: v <- momentum v + g; theta <- theta - lr v."""
    for name, a in params.items():
        g = grads[name]
        v = state.get(name)
        v = g.copy() if v is None else momentum * v + g
        state[name] = v
        a -= (lr * v).astype(a.dtype, copy=False)
    return params, state


def clip_grads(grads: dict, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2))
                        for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def validation_min_se(params, snapshots, cfg: SimConfig, perm_seed: int = 0):
    """Mean per-snapshot minimum SE of the policy, evaluated in float64."""
    allocs = policy.infer_batch(params, snapshots, cfg, perm_seed=perm_seed)
    mins = []
    for snap, alloc in zip(snapshots, allocs):
        g = perf.compute_gamma(snap, cfg)
        mins.append(perf.compute_se(perf.compute_sinr(snap, g, alloc, cfg), cfg).min())
    return float(np.mean(mins))


def train(train_positions, cfg: SimConfig, traincfg: TrainConfig,
          val_snapshots=None, log_path=None, init=None,
          progress=None) -> TrainResult:
    """Algorithm: per epoch, reshuffle the fixed UE-position pool into
    groups of K, regenerate large-scale fading per group with an
    epoch-derived seed, and run mini-batch SGD on the soft-min loss.

    Keeps the parameters with the best validation min-SE; stops early after
    ``patience`` epochs without improvement. On divergence the best
    checkpoint so far is returned with ``diverged=True``.
    """
    positions = np.asarray(train_positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ConfigError("train_positions must be (n, 2)")
    if positions.shape[0] % cfg.K:
        raise ConfigError(
            f"{positions.shape[0]} positions not divisible by K = {cfg.K}"
        )
    dtype = np.dtype(traincfg.dtype).type
    params = (init.copy() if init is not None
              else policy.init_params(traincfg.hidden, 3, traincfg.head_dims,
                                      seed=traincfg.seed)).astype(dtype)

    # fixed AP geometry for the whole run
    ap_rng = np.random.default_rng(cfg.rng_seed)
    _, ap_pos, ap_layout = netgen.sample_positions(cfg, ap_rng)

    if val_snapshots is None:
        val_snapshots = netgen.generate_dataset(
            cfg, traincfg.val_count, seed=[traincfg.seed, 929]
        )

    state = {}
    result = TrainResult(params=params.copy())
    history = result.history
    rows_for_log = []
    step = 0
    epochs_since_best = 0
    n_groups = positions.shape[0] // cfg.K

    for epoch in range(traincfg.start_epoch, traincfg.epochs):
        rng = np.random.default_rng([traincfg.seed, 7919, epoch])
        order = rng.permutation(positions.shape[0])
        groups = order.reshape(n_groups, cfg.K)
        snaps = [
            netgen.snapshot_from_positions(
                cfg, positions[groups[g]], ap_pos,
                shadow_seed=[traincfg.seed, 104729, epoch, g],
                ap_layout=ap_layout,
            )
            for g in range(n_groups)
        ]
        diverged = False
        for start in range(0, n_groups, traincfg.batch_size):
            batch = snaps[start : start + traincfg.batch_size]
            t0 = time.perf_counter()
            try:
                loss_val, grads, aux = grad(
                    params, batch, cfg, traincfg.temperature, perm_rng=rng,
                    feature_mode=traincfg.feature_mode,
                    neighborhood=traincfg.neighborhood,
                )
            except NumericalError:
                diverged = True
                break
            if not np.isfinite(loss_val):
                diverged = True
                break
            if traincfg.grad_clip is not None:
                clip_grads(grads, traincfg.grad_clip)
            params, state = sgd_step(params, grads, state,
                                     traincfg.lr, traincfg.momentum)
            wall_ms = (time.perf_counter() - t0) * 1e3
            row = {"epoch": epoch, "step": step, "loss": loss_val,
                   "val_min_se": "", "wall_ms": wall_ms,
                   "clamp_count": aux["clamp_count"]}
            history.append(row)
            rows_for_log.append(row)
            step += 1
        if diverged:
            result.diverged = True
            break

        val = validation_min_se(params, val_snapshots, cfg,
                                perm_seed=traincfg.seed)
        history.append({"epoch": epoch, "step": step, "loss": "",
                        "val_min_se": val, "wall_ms": 0.0, "clamp_count": 0})
        rows_for_log.append(history[-1])
        if progress is not None:
            progress(epoch, val)
        if val > result.best_val_min_se:
            result.best_val_min_se = val
            result.best_epoch = epoch
            result.params = params.copy()
            epochs_since_best = 0
        else:
            epochs_since_best += 1
        if log_path is not None:
            _write_log(log_path, rows_for_log)
        if epochs_since_best > traincfg.patience:
            break

    if result.best_epoch < 0:  # no epoch finished; keep last params
        result.params = params.copy()
    return result


def _write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(
            fh, fieldnames=["epoch", "step", "loss", "val_min_se",
                            "wall_ms", "clamp_count"]
        )
        w.writeheader()
        w.writerows(rows)


# -- gradient verification --------------------------------------------------


@dataclass
class GradcheckReport:
    passed: bool
    trials: int
    worst_rel_err: float
    worst_param: str
    failures: list = field(default_factory=list)


def _random_small_instance(rng, force_branch=None, shared_pilots=False):
    """Tiny snapshot + float64 params for finite-difference verification."""
    K = int(rng.integers(2 if shared_pilots else 1, 4))
    L = int(rng.integers(2, 4))
    N = int(rng.integers(1, min(L, 2) + 1))
    H = int(rng.choice([2, 3, 4, 6, 8]))
    cfg = SimConfig(
        area_side=100.0, L=L, K=K, M=2, N_assoc=N, tau_c=20, tau_p=K,
        tau_u=0, p_ul=1.0, p_dl_max=5.0, noise_dbm=0.0,
        shadow_sigma_db=0.0, ap_placement="uniform", rng_seed=0,
    )
    ue_pos = rng.uniform(0, 100, size=(K, 2))
    ap_pos = rng.uniform(0, 100, size=(L, 2))
    beta = 10.0 ** rng.uniform(-1.5, 1.5, size=(K, L))
    if shared_pilots and K >= 2:
        pilot_of = np.zeros(K, dtype=np.int64)  # UEs 0..K-2 share pilot 0
        if K >= 3:
            pilot_of[K - 1] = 1
    else:
        pilot_of = np.arange(K)
    snap = netgen.NetworkSnapshot(
        ue_pos, ap_pos, beta, pilot_of, netgen.associate(beta, N),
        ap_layout="uniform",
    )
    params = policy.init_params(H, 3, (3, 2, 1), seed=int(rng.integers(1 << 30)),
                                dtype=np.float64)
    # push the normalization into the requested branch
    if force_branch == "saturated":
        params.head_b[-1][:] = 8.0    # softplus(8) >> P/K: every AP over budget
    elif force_branch == "linear":
        params.head_b[-1][:] = -2.0   # small latents: alpha = 1 everywhere
    return cfg, snap, params


def _branch_margin(params, snap, cfg):
    """Distance of each AP's latent sum from the budget kink, relative."""
    seqs = policy.build_features(snap, cfg)
    pvars = {name: ad.constant(a) for name, a in params.items()}
    rho_hat, _, order, _ = policy.policy_forward_graph(pvars, seqs, params.H)
    sums = {}
    for j, (si, t) in enumerate(order):
        sums[seqs[si].ap] = sums.get(seqs[si].ap, 0.0) + rho_hat.value[j]
    margins = [abs(s - cfg.p_dl_max) / cfg.p_dl_max for s in sums.values()]
    return min(margins) if margins else 1.0


def gradcheck(trials: int = 20, seed: int = 0, tol: float = 1e-4,
              fd_step: float = 1e-4) -> GradcheckReport:
    """Reverse-mode vs central finite differences on random small instances.

    Covers both normalization branches and a multi-element pilot set; fails
    list the offending parameter path.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_param = ""
    failures = []
    done = 0
    attempts = 0
    while done < trials and attempts < trials * 4:
        attempts += 1
        branch = ("saturated", "linear", None)[done % 3]
        shared = done % 4 == 1
        cfg, snap, params = _random_small_instance(rng, branch, shared)
        if _branch_margin(params, snap, cfg) < 1e-3:
            continue  # too close to the min(1, P/S) kink for FD
        T = 10.0
        _, grads, _ = grad(params, [snap], cfg, T)
        gscale = max(float(np.max(np.abs(g))) for g in grads.values())
        # the floor absorbs central-difference noise (~eps*|loss|/h ~ 1e-12)
        # on dead or nearly dead parameters
        floor = max(1e-7, 1e-6 * gscale)
        for name, arr in params.items():
            flat = arr.reshape(-1)
            gflat = grads[name].reshape(-1)
            for i in range(flat.size):
                keep = flat[i]
                flat[i] = keep + fd_step
                lp = loss(params, [snap], cfg, T)
                flat[i] = keep - fd_step
                lm = loss(params, [snap], cfg, T)
                flat[i] = keep
                fd = (lp - lm) / (2 * fd_step)
                rel = abs(gflat[i] - fd) / max(abs(gflat[i]), abs(fd), floor)
                if rel > worst:
                    worst = rel
                    worst_param = f"{name}[{i}]"
                if rel > tol:
                    failures.append((f"{name}[{i}]", rel, float(gflat[i]), fd))
        done += 1
    return GradcheckReport(
        passed=not failures and done == trials,
        trials=done,
        worst_rel_err=worst,
        worst_param=worst_param,
        failures=failures,
    )
