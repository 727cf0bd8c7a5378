"""Experiment pipeline: dataset evaluation, baseline tuning, reporting.

Produces the summary table (per-method mean/min/max SE averaged over test
snapshots) and the per-realization min-SE samples used for empirical CDFs.
All artifacts are CSV plus a JSON run manifest; no plotting.
"""

from __future__ import annotations

import csv
import hashlib
import json
import multiprocessing
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__ as _pkg_version
from . import alloc, perf, policy
from .config import SimConfig
from .errors import ConfigError

EVAL_METHODS = ("epa", "fpa", "lozano", "mmf", "policy")


def worker_count() -> int:
    """Worker cap: CFPC_THREADS if set, else the CPU count."""
    n = os.cpu_count() or 1
    env = os.environ.get("CFPC_THREADS")
    if env:
        try:
            n = min(n, max(1, int(env)))
        except ValueError:
            raise ConfigError(f"CFPC_THREADS must be an integer, got {env!r}")
    return n


@dataclass
class EvalReport:
    """Per-method statistics plus the raw per-UE SE matrices behind them."""

    methods: list
    stats: dict                  # method -> {mean_se, min_se, max_se}
    minima: dict                 # method -> (n_snapshots,) min-SE samples
    per_ue: dict                 # method -> (n_snapshots, K) SE matrix
    fingerprint: str
    seeds: dict = field(default_factory=dict)
    oracle_converged: int = -1


def _se_matrix_stats(se_matrix: np.ndarray) -> dict:
    return {
        "mean_se": float(se_matrix.mean(axis=1).mean()),
        "min_se": float(se_matrix.min(axis=1).mean()),
        "max_se": float(se_matrix.max(axis=1).mean()),
    }


def _mmf_worker(args):
    snap, gamma, cfg, tol = args
    res = alloc.mmf_oracle(snap, gamma, cfg, tol_bisect=tol)
    se = perf.compute_se(perf.compute_sinr(snap, gamma, res.alloc, cfg), cfg)
    return se, res.converged


def evaluate(snapshots: list, methods: list, cfg: SimConfig,
             checkpoint_params=None, nu: float = 0.0, theta: float = 0.5,
             mmf_tol: float = 1e-3, perm_seed: int = 0,
             seeds: dict | None = None) -> EvalReport:
    """SE of every requested method on every snapshot.

    ``nu`` / ``theta`` are the (tuned) baseline exponents; ``policy``
    requires checkpoint_params. The oracle parallelizes across snapshots.
    """
    bad = [m for m in methods if m not in EVAL_METHODS]
    if bad:
        raise ConfigError(f"unknown methods {bad}; choose from {EVAL_METHODS}")
    if "policy" in methods and checkpoint_params is None:
        raise ConfigError("policy evaluation requires a checkpoint")

    gammas = [perf.compute_gamma(s, cfg) for s in snapshots]
    per_ue = {}
    oracle_converged = -1

    for m in methods:
        if m == "policy":
            allocs = policy.infer_batch(checkpoint_params, snapshots, cfg,
                                        perm_seed=perm_seed)
            rows = [
                perf.compute_se(perf.compute_sinr(s, g, a, cfg), cfg)
                for s, g, a in zip(snapshots, gammas, allocs)
            ]
        elif m == "mmf":
            jobs = [(s, g, cfg, mmf_tol) for s, g in zip(snapshots, gammas)]
            workers = min(worker_count(), len(jobs)) or 1
            if workers > 1:
                with multiprocessing.Pool(workers) as pool:
                    out = pool.map(_mmf_worker, jobs)
            else:
                out = [_mmf_worker(j) for j in jobs]
            rows = [se for se, _ in out]
            oracle_converged = sum(int(c) for _, c in out)
        else:
            def run(s, g):
                if m == "epa":
                    a = alloc.epa(s, cfg)
                elif m == "fpa":
                    a = alloc.fpa(s, cfg, nu)
                else:
                    a = alloc.lozano(s, cfg, theta)
                return perf.compute_se(perf.compute_sinr(s, g, a, cfg), cfg)

            rows = [run(s, g) for s, g in zip(snapshots, gammas)]
        per_ue[m] = np.asarray(rows)

    report = EvalReport(
        methods=list(methods),
        stats={m: _se_matrix_stats(per_ue[m]) for m in methods},
        minima={m: per_ue[m].min(axis=1) for m in methods},
        per_ue=per_ue,
        fingerprint=cfg.fingerprint(),
        seeds=dict(seeds or {}),
        oracle_converged=oracle_converged,
    )
    return report


# -- artifact I/O ---------------------------------------------------------


def write_report(report: EvalReport, out_dir, cfg: SimConfig,
                 extra_manifest: dict | None = None):
    """summary.csv (6 significant digits), full-precision per-UE and CDF
    CSVs, and a JSON manifest that pins config, seeds and versions."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    p = os.path.join(out_dir, "summary.csv")
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "mean_se", "min_se", "max_se"])
        for m in report.methods:
            s = report.stats[m]
            w.writerow([m] + [f"{s[c]:.6g}" for c in ("mean_se", "min_se", "max_se")])
    paths["summary"] = p

    for m in report.methods:
        p = os.path.join(out_dir, f"per_ue_se_{m}.csv")
        mat = report.per_ue[m]
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["snapshot"] + [f"ue{k}" for k in range(mat.shape[1])])
            for i, row in enumerate(mat):
                w.writerow([i] + [f"{v:.17g}" for v in row])
        paths[f"per_ue_{m}"] = p

        p = os.path.join(out_dir, f"minse_cdf_{m}.csv")
        samples = np.sort(report.minima[m])
        n = samples.size
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["min_se", "cdf"])
            for i, v in enumerate(samples):
                w.writerow([f"{v:.17g}", f"{(i + 1) / n:.17g}"])
        paths[f"cdf_{m}"] = p

    manifest = {
        "config": cfg.to_dict(),
        "config_fingerprint": report.fingerprint,
        "methods": report.methods,
        "seeds": report.seeds,
        "n_snapshots": int(next(iter(report.per_ue.values())).shape[0]),
        "oracle_converged": report.oracle_converged,
        "cfpc_version": _pkg_version,
        "numpy_version": np.__version__,
        "artifacts": paths,
    }
    manifest.update(extra_manifest or {})
    mp = os.path.join(out_dir, "manifest.json")
    with open(mp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    paths["manifest"] = mp
    return paths


def read_per_ue_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r[1:]] for r in rows[1:]])


def read_cdf_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(r[0]), float(r[1])] for r in rows[1:]])


def read_summary_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return {
        r[0]: {"mean_se": float(r[1]), "min_se": float(r[2]), "max_se": float(r[3])}
        for r in rows[1:]
    }


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tune_and_report(snapshots, cfg: SimConfig, nu_grid, theta_grid):
    """Tune FPA and Lozano on a validation set; EPA has no parameter."""
    best_nu, nu_scores = alloc.tune_baseline(snapshots, cfg, alloc.fpa, nu_grid)
    best_theta, theta_scores = alloc.tune_baseline(
        snapshots, cfg, alloc.lozano, theta_grid
    )
    return {
        "nu": best_nu,
        "theta": best_theta,
        "nu_scores": {str(k): v for k, v in nu_scores.items()},
        "theta_scores": {str(k): v for k, v in theta_scores.items()},
    }


# -- headline experiment ----------------------------------------------------

HEADLINE_SEEDS = {"train": 1101, "val": 2202, "test": 3303, 10: 4404, 15: 5505}
NU_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)
THETA_GRID = (0.0, 0.5, 1.0)


def run_headline(out_dir, retrain: bool = False, epochs: int = 200,
                 mmf_tol: float = 1e-3, progress=None) -> dict:
    """The paper-scale experiment: train at K=8, evaluate against tuned
    baselines and the MMF oracle, then test K=10/15 generalization without
    retraining.

    Artifacts land in ``out_dir``; an existing checkpoint there is reused
    unless ``retrain``. Returns a summary dict with the headline ratios.
    """
    from . import netgen, train as train_mod

    os.makedirs(out_dir, exist_ok=True)
    say = progress or (lambda *_: None)
    cfg = SimConfig()

    val = netgen.generate_dataset(cfg, 100, seed=HEADLINE_SEEDS["val"])
    test = netgen.generate_dataset(cfg, 200, seed=HEADLINE_SEEDS["test"])

    say("tuning baselines on the validation set")
    tuned = tune_and_report(val, cfg, NU_GRID, THETA_GRID)
    with open(os.path.join(out_dir, "tuned.json"), "w") as fh:
        json.dump(tuned, fh, indent=2, sort_keys=True)

    ckpt_path = os.path.join(out_dir, "checkpoint.cfpm")
    if retrain or not os.path.exists(ckpt_path):
        say("training the policy (full protocol)")
        groups = netgen.generate_dataset(cfg, 1000, seed=HEADLINE_SEEDS["train"])
        positions = np.concatenate([s.ue_pos for s in groups])
        tcfg = train_mod.TrainConfig(epochs=epochs, seed=0)
        result = train_mod.train(
            positions, cfg, tcfg, val_snapshots=val,
            log_path=os.path.join(out_dir, "train_log.csv"),
            progress=lambda e, v: say(f"epoch {e}: val min-SE {v:.4f}"),
        )
        policy.save_checkpoint(ckpt_path, result.params)
        params = result.params
    else:
        say("reusing existing checkpoint")
        params = policy.load_checkpoint(ckpt_path)

    say("evaluating on the K=8 test set (incl. MMF oracle)")
    report = evaluate(
        test, ["epa", "fpa", "lozano", "mmf", "policy"], cfg,
        checkpoint_params=params, nu=tuned["nu"], theta=tuned["theta"],
        mmf_tol=mmf_tol, seeds={k: v for k, v in HEADLINE_SEEDS.items()
                                if isinstance(k, str)},
    )
    write_report(report, os.path.join(out_dir, "eval_k8"), cfg,
                 extra_manifest={"tuned": tuned})

    summary = {
        "tuned": tuned,
        "k8": {m: report.stats[m] for m in report.methods},
        "generalization": {},
    }
    base_min = max(report.stats[m]["min_se"] for m in ("epa", "fpa", "lozano"))
    summary["headline_ratio"] = report.stats["policy"]["min_se"] / base_min
    summary["policy_below_oracle"] = (
        report.stats["policy"]["min_se"] <= report.stats["mmf"]["min_se"]
    )
    summary["oracle_over_best_baseline"] = report.stats["mmf"]["min_se"] / base_min

    for K in (10, 15):
        say(f"generalization run at K={K}")
        cfg_k = SimConfig(K=K)
        test_k = netgen.generate_dataset(cfg_k, 200, seed=HEADLINE_SEEDS[K])
        rep_k = evaluate(test_k, ["epa", "fpa", "lozano", "policy"], cfg_k,
                         checkpoint_params=params, nu=tuned["nu"],
                         theta=tuned["theta"])
        write_report(rep_k, os.path.join(out_dir, f"eval_k{K}"), cfg_k,
                     extra_manifest={"tuned": tuned})
        pct = {}
        for m in rep_k.methods:
            pct[m] = {str(p): float(np.percentile(rep_k.minima[m], p))
                      for p in (10, 50, 90)}
        summary["generalization"][f"k{K}"] = {
            "stats": {m: rep_k.stats[m] for m in rep_k.methods},
            "min_se_percentiles": pct,
        }

    with open(os.path.join(out_dir, "headline_summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary
