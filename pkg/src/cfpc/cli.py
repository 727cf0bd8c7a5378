"""cfpc command line: generate | train | eval | tune | complexity.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
A JSON config file (--config) may carry {"sim": {...}, "train": {...}};
explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness, netgen, policy, train as train_mod
from .config import SimConfig
from .errors import ConfigError, CorruptCheckpointError, NumericalError
from .train import TrainConfig


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path!r} is not valid JSON: {e}") from e


def _sim_config(args) -> SimConfig:
    base = _load_config(getattr(args, "config", None)).get("sim", {})
    for key in ("L", "K", "M", "N_assoc", "area_side", "rng_seed"):
        flag = getattr(args, key.lower(), None)
        if flag is not None:
            base[key] = flag
    return SimConfig.from_dict(base)


def _train_config(args) -> TrainConfig:
    base = _load_config(getattr(args, "config", None)).get("train", {})
    for key in ("batch_size", "lr", "momentum", "temperature", "epochs",
                "hidden", "seed", "patience", "grad_clip", "start_epoch"):
        flag = getattr(args, key, None)
        if flag is not None:
            base[key] = flag
    try:
        return TrainConfig(**base)
    except TypeError as e:
        raise ConfigError(f"bad train config: {e}") from e


def _add_sim_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--l", type=int, dest="l", help="number of APs")
    p.add_argument("--k", type=int, dest="k", help="number of UEs")
    p.add_argument("--m", type=int, dest="m", help="antennas per AP")
    p.add_argument("--n-assoc", type=int, dest="n_assoc", help="serving APs per UE")
    p.add_argument("--area-side", type=float, dest="area_side")
    p.add_argument("--rng-seed", type=int, dest="rng_seed")


def cmd_generate(args) -> int:
    cfg = _sim_config(args)
    snaps = netgen.generate_dataset(cfg, args.count, seed=args.seed)
    netgen.save_dataset(args.out, cfg, snaps)
    if args.text_export:
        netgen.export_text(args.text_export, cfg, snaps)
    if snaps:
        beta = np.concatenate([s.beta.ravel() for s in snaps])
        pct = np.percentile(10 * np.log10(beta), [5, 50, 95])
        print(f"wrote {len(snaps)} snapshots to {args.out} "
              f"(L={cfg.L} K={cfg.K} seed={args.seed if args.seed is not None else cfg.rng_seed})")
        print(f"beta percentiles [dB]: p5={pct[0]:.1f} p50={pct[1]:.1f} p95={pct[2]:.1f}")
    else:
        print(f"wrote empty dataset to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _sim_config(args)
    tcfg = _train_config(args)
    header, snaps = netgen.load_dataset(args.dataset)
    if header["K"] != cfg.K or header["L"] != cfg.L:
        raise ConfigError(
            f"dataset has K={header['K']} L={header['L']}, config says "
            f"K={cfg.K} L={cfg.L}"
        )
    positions = np.concatenate([s.ue_pos for s in snaps])
    init = policy.load_checkpoint(args.from_checkpoint) if args.from_checkpoint else None
    print(f"training on {positions.shape[0]} UE positions "
          f"({len(snaps)} groups), H={tcfg.hidden}, B={tcfg.batch_size}")

    def progress(epoch, val):
        print(f"epoch {epoch}: val min-SE {val:.4f}", flush=True)

    result = train_mod.train(positions, cfg, tcfg, log_path=args.log,
                             init=init, progress=progress)
    policy.save_checkpoint(args.out, result.params)
    if result.diverged:
        print("training diverged; wrote best checkpoint so far", file=sys.stderr)
        return 3
    print(f"best epoch {result.best_epoch} "
          f"(val min-SE {result.best_val_min_se:.4f}); checkpoint: {args.out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _sim_config(args)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    header, snaps = netgen.load_dataset(args.dataset)
    cfg = cfg.replace(K=header["K"], L=header["L"], M=header["M"],
                      N_assoc=header["N_assoc"], tau_p=header["K"])
    params = policy.load_checkpoint(args.checkpoint) if args.checkpoint else None
    report = harness.evaluate(
        snaps, methods, cfg, checkpoint_params=params,
        nu=args.nu, theta=args.theta, mmf_tol=args.tol,
        perm_seed=args.perm_seed,
        seeds={"dataset": harness.file_sha256(args.dataset), "perm_seed": args.perm_seed},
    )
    paths = harness.write_report(
        report, args.out_dir, cfg,
        extra_manifest={"dataset_path": args.dataset,
                        "nu": args.nu, "theta": args.theta},
    )
    print(f"{'method':<8} {'mean':>8} {'min':>8} {'max':>8}")
    for m in methods:
        s = report.stats[m]
        print(f"{m:<8} {s['mean_se']:>8.4f} {s['min_se']:>8.4f} {s['max_se']:>8.4f}")
    print(f"artifacts in {args.out_dir} ({len(paths)} files)")
    return 0


def cmd_tune(args) -> int:
    cfg = _sim_config(args)
    header, snaps = netgen.load_dataset(args.dataset)
    cfg = cfg.replace(K=header["K"], L=header["L"], M=header["M"],
                      N_assoc=header["N_assoc"], tau_p=header["K"])
    nu_grid = [float(v) for v in args.nu_grid.split(",")]
    theta_grid = [float(v) for v in args.theta_grid.split(",")]
    tuned = harness.tune_and_report(snaps, cfg, nu_grid, theta_grid)
    with open(args.out, "w") as fh:
        json.dump(tuned, fh, indent=2, sort_keys=True)
    print(f"best nu={tuned['nu']} theta={tuned['theta']} -> {args.out}")
    return 0


def cmd_complexity(args) -> int:
    if args.checkpoint:
        params = policy.load_checkpoint(args.checkpoint)
    else:
        params = policy.init_params(args.hidden)
    acct = policy.count_params_and_flops(params)
    k = args.k or 8
    pairs = (args.n_assoc or 4) * k
    total_mflops = pairs * acct["flops_per_pair"] / 1e6
    print(f"parameters: {acct['param_count']} "
          f"(BiLSTM {acct['param_count_bilstm']}, head {acct['param_count_head']})")
    print(f"per-pair cost: {acct['flops_per_pair'] / 1e6:.4f} MFLOPs "
          f"(BiLSTM {acct['flops_bilstm'] / 1e6:.4f}, head {acct['flops_head'] / 1e6:.4f})")
    print(f"inference at K={k}, N={args.n_assoc or 4}: {total_mflops:.1f} MFLOPs")
    print(f"memory: {acct['memory_bytes'] / 2**20:.2f} MiB (FP32)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfpc",
                                 description="cell-free power control laboratory")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("generate", help="write a snapshot dataset")
    _add_sim_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--text-export", default=None)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train the BiLSTM policy")
    _add_sim_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--log", default=None, help="CSV training log")
    p.add_argument("--from-checkpoint", default=None)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--grad-clip", type=float, dest="grad_clip")
    p.add_argument("--start-epoch", type=int, dest="start_epoch")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate methods on a dataset")
    _add_sim_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--methods", default="epa,fpa,lozano",
                   help="comma list from epa,fpa,lozano,mmf,policy")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--nu", type=float, default=0.0)
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-3, help="MMF bisection tolerance")
    p.add_argument("--perm-seed", type=int, default=0, dest="perm_seed")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("tune", help="grid-tune FPA/Lozano exponents")
    _add_sim_flags(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nu-grid", default="-1,-0.5,0,0.5,1")
    p.add_argument("--theta-grid", default="0,0.5,1")
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("complexity", help="parameter/FLOP/memory accounting")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--hidden", type=int, default=256)
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--n-assoc", type=int, default=4, dest="n_assoc")
    p.set_defaults(fn=cmd_complexity)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 2
    except (NumericalError, CorruptCheckpointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
