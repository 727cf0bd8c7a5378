"""Network snapshot generation.

A snapshot is one large-scale realization: UE/AP geometry, the 3GPP
microcell pathloss with spatially correlated log-normal shadowing, the
orthogonal pilot assignment, and the top-N AP-UE association. Generation
is pure given (cfg, seed), so snapshots can be produced in parallel from
independent seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .config import PL_INTERCEPT_DB, SimConfig
from .errors import ConfigError, UnsupportedConfigError

DATASET_MAGIC = b"CFPC"
DATASET_VERSION = 1
_AP_LAYOUTS = ("grid", "uniform")


@dataclass
class NetworkSnapshot:
    """One large-scale network realization.

    ``beta`` is the K x L matrix of linear-scale channel gains. ``serving``
    holds, per UE, the N_assoc serving APs ordered by decreasing beta
    (ties broken by lower AP index), so ``serving[k, 0]`` is the master AP.
    ``pilot_of`` maps each UE to its pilot index; pilot-sharing sets are
    derived from it, which lets tests inject |P_k| > 1 configurations even
    though the generator only emits orthogonal pilots.
    """

    ue_pos: np.ndarray       # (K, 2) m
    ap_pos: np.ndarray       # (L, 2) m
    beta: np.ndarray         # (K, L) linear
    pilot_of: np.ndarray     # (K,) int
    serving: np.ndarray      # (K, N_assoc) int, beta-descending
    ap_layout: str = "grid"

    # derived maps, filled by __post_init__
    served: list = field(default_factory=list, repr=False)
    master_ap: np.ndarray = field(default=None, repr=False)
    pair_ue: np.ndarray = field(default=None, repr=False)
    pair_ap: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.ue_pos = np.asarray(self.ue_pos, dtype=float)
        self.ap_pos = np.asarray(self.ap_pos, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.pilot_of = np.asarray(self.pilot_of, dtype=np.int64)
        self.serving = np.asarray(self.serving, dtype=np.int64)
        K, L = self.beta.shape
        self.master_ap = self.serving[:, 0].copy()
        self.served = [np.flatnonzero((self.serving == l).any(axis=1)) for l in range(L)]
        # canonical active-pair order: UE-major, each UE's APs in serving order
        self.pair_ue = np.repeat(np.arange(K), self.serving.shape[1])
        self.pair_ap = self.serving.reshape(-1).copy()

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def L(self) -> int:
        return self.beta.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.pair_ue.size

    def pilot_set(self, k: int) -> np.ndarray:
        """P_k: UEs sharing UE k's pilot (includes k)."""
        return np.flatnonzero(self.pilot_of == self.pilot_of[k])

    def pilot_sets(self) -> list:
        return [self.pilot_set(k) for k in range(self.K)]

    def validate(self):
        if not np.all(self.beta > 0):
            raise ValueError("beta must be strictly positive")
        K, N = self.serving.shape
        for k in range(K):
            if len(set(self.serving[k].tolist())) != N:
                raise ValueError(f"serving set of UE {k} has repeats")
        for l in range(self.L):
            for k in self.served[l]:
                if l not in self.serving[k]:
                    raise ValueError("served/serving maps are not mutual inverses")


def sample_positions(cfg: SimConfig, rng: np.random.Generator):
    """Draw UE positions uniformly; place APs on a grid or uniformly.

    APs go on a regular sqrt(L) x sqrt(L) grid when cfg asks for "grid" and
    L is a perfect square; otherwise they are uniform i.i.d. and the layout
    is recorded as "uniform" in the snapshot.
    """
    ue_pos = rng.uniform(0.0, cfg.area_side, size=(cfg.K, 2))
    side = int(round(np.sqrt(cfg.L)))
    if cfg.ap_placement == "grid" and side * side == cfg.L:
        spacing = cfg.area_side / side
        coords = spacing / 2.0 + spacing * np.arange(side)
        xx, yy = np.meshgrid(coords, coords, indexing="ij")
        ap_pos = np.column_stack([xx.ravel(), yy.ravel()])
        layout = "grid"
    else:
        ap_pos = rng.uniform(0.0, cfg.area_side, size=(cfg.L, 2))
        layout = "uniform"
    return ue_pos, ap_pos, layout


def pathloss_db(d3d_m, pl_exponent: float) -> np.ndarray:
    """Median pathloss in dB at 3-D distance d3d_m (meters)."""
    return PL_INTERCEPT_DB - 10.0 * pl_exponent * np.log10(np.asarray(d3d_m, dtype=float))


def shadowing_db(cfg: SimConfig, ue_pos, rng: np.random.Generator, L: int | None = None):
    """Correlated shadow fading, K UEs x L APs, in dB.

    Columns (APs) are independent; within a column the UE-UE correlation is
    sigma_F^2 * 2^(-delta/decorr) with delta the UE-UE distance. The
    correlation matrix receives a 1e-9 jitter on the diagonal if Cholesky
    fails (exactly co-located UEs make it singular).
    """
    ue_pos = np.asarray(ue_pos, dtype=float)
    K = ue_pos.shape[0]
    L = cfg.L if L is None else L
    delta = np.linalg.norm(ue_pos[:, None, :] - ue_pos[None, :, :], axis=-1)
    corr = np.power(2.0, -delta / cfg.shadow_decorr_m)
    try:
        chol = np.linalg.cholesky(corr)
    except np.linalg.LinAlgError:
        chol = np.linalg.cholesky(corr + 1e-9 * np.eye(K))
    z = rng.standard_normal((K, L))
    return cfg.shadow_sigma_db * (chol @ z)


def compute_beta(cfg: SimConfig, ue_pos, ap_pos, rng: np.random.Generator) -> np.ndarray:
    """Linear-scale large-scale gains beta[k, l] for all UE-AP pairs.

    Raises ValueError on an exact horizontal UE-AP collision (d2D = 0);
    generate_snapshot resamples the offending UE before calling here.
    """
    ue_pos = np.asarray(ue_pos, dtype=float)
    ap_pos = np.asarray(ap_pos, dtype=float)
    d2d = np.linalg.norm(ue_pos[:, None, :] - ap_pos[None, :, :], axis=-1)
    if np.any(d2d == 0.0):
        raise ValueError("UE exactly co-located with an AP (d2D = 0); resample")
    d3d = np.sqrt(d2d**2 + cfg.height_diff_m**2)
    beta_db = pathloss_db(d3d, cfg.pl_exponent)
    if cfg.shadow_sigma_db > 0:
        beta_db = beta_db + shadowing_db(cfg, ue_pos, rng, L=ap_pos.shape[0])
    return np.power(10.0, beta_db / 10.0)


def assign_pilots(cfg: SimConfig, K: int | None = None) -> np.ndarray:
    """Orthogonal pilots: identity assignment, only supported for tau_p = K."""
    K = cfg.K if K is None else K
    if cfg.tau_p < K:
        raise UnsupportedConfigError(
            f"tau_p = {cfg.tau_p} < K = {K}: pilot reuse is out of scope"
        )
    return np.arange(K, dtype=np.int64)


def associate(beta: np.ndarray, n_assoc: int) -> np.ndarray:
    """Serving sets: per UE, the n_assoc APs with largest beta.

    Order within a set is beta-descending; exact ties go to the lower AP
    index (stable sort on -beta).
    """
    K, L = beta.shape
    if n_assoc > L:
        raise ConfigError(f"N_assoc = {n_assoc} exceeds L = {L}")
    order = np.argsort(-beta, axis=1, kind="stable")
    return order[:, :n_assoc].astype(np.int64)


def generate_snapshot(cfg: SimConfig, seed) -> NetworkSnapshot:
    """One statistically correct snapshot from an integer seed or SeedSequence."""
    rng = np.random.default_rng(seed)
    ue_pos, ap_pos, layout = sample_positions(cfg, rng)
    # reject exact d2D = 0 collisions by resampling the offending UEs
    for _ in range(100):
        d2d = np.linalg.norm(ue_pos[:, None, :] - ap_pos[None, :, :], axis=-1)
        bad = np.flatnonzero((d2d == 0.0).any(axis=1))
        if bad.size == 0:
            break
        ue_pos[bad] = rng.uniform(0.0, cfg.area_side, size=(bad.size, 2))
    beta = compute_beta(cfg, ue_pos, ap_pos, rng)
    pilot_of = assign_pilots(cfg)
    serving = associate(beta, cfg.N_assoc)
    return NetworkSnapshot(ue_pos, ap_pos, beta, pilot_of, serving, ap_layout=layout)


def snapshot_from_positions(cfg: SimConfig, ue_pos, ap_pos, shadow_seed,
                            ap_layout: str = "grid") -> NetworkSnapshot:
    """Snapshot from fixed geometry with freshly drawn shadowing.

    Used by the training loop, which regroups a fixed pool of UE positions
    every epoch and redraws shadowing with an epoch-derived seed.
    """
    rng = np.random.default_rng(shadow_seed)
    beta = compute_beta(cfg, ue_pos, ap_pos, rng)
    K = np.asarray(ue_pos).shape[0]
    pilot_of = assign_pilots(cfg, K=K)
    serving = associate(beta, cfg.N_assoc)
    return NetworkSnapshot(ue_pos, ap_pos, beta, pilot_of, serving, ap_layout=ap_layout)


def generate_dataset(cfg: SimConfig, count: int, seed=None) -> list:
    """``count`` independent snapshots from spawned child seeds."""
    root = np.random.SeedSequence(cfg.rng_seed if seed is None else seed)
    return [generate_snapshot(cfg, s) for s in root.spawn(count)]


# -- dataset container ---------------------------------------------------
#
# Binary layout (little-endian):
#   magic "CFPC" | version u16 | L u16 | K u16 | M u16 | N_assoc u16 |
#   ap_layout u8 | reserved u8 | count u64
# then per snapshot:
#   ue_pos (K*2 f64) | ap_pos (L*2 f64) | beta (K*L f64) |
#   pilot_of (K u16) | serving (K*N_assoc u16)

_HEADER = struct.Struct("<4sHHHHHBBQ")


def save_dataset(path, cfg: SimConfig, snapshots: list):
    """Write snapshots to the self-describing binary container."""
    try:
        with open(path, "wb") as fh:
            layout = snapshots[0].ap_layout if snapshots else cfg.ap_placement
            fh.write(
                _HEADER.pack(
                    DATASET_MAGIC,
                    DATASET_VERSION,
                    cfg.L,
                    cfg.K,
                    cfg.M,
                    cfg.N_assoc,
                    _AP_LAYOUTS.index(layout),
                    0,
                    len(snapshots),
                )
            )
            for snap in snapshots:
                fh.write(snap.ue_pos.astype("<f8").tobytes())
                fh.write(snap.ap_pos.astype("<f8").tobytes())
                fh.write(snap.beta.astype("<f8").tobytes())
                fh.write(snap.pilot_of.astype("<u2").tobytes())
                fh.write(snap.serving.astype("<u2").tobytes())
    except OSError as e:
        raise OSError(f"cannot write dataset {path!r}: {e}") from e


def load_dataset(path):
    """Read a dataset container; returns (header dict, snapshots list)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read(_HEADER.size)
            if len(raw) < _HEADER.size:
                raise ValueError(f"{path!r}: truncated header")
            magic, version, L, K, M, N, layout_id, _, count = _HEADER.unpack(raw)
            if magic != DATASET_MAGIC:
                raise ValueError(f"{path!r}: bad magic {magic!r}")
            if version != DATASET_VERSION:
                raise ValueError(f"{path!r}: unsupported version {version}")
            header = {
                "L": L,
                "K": K,
                "M": M,
                "N_assoc": N,
                "count": count,
                "ap_layout": _AP_LAYOUTS[layout_id],
            }
            snaps = []
            for _ in range(count):
                ue_pos = np.frombuffer(fh.read(K * 2 * 8), dtype="<f8").reshape(K, 2)
                ap_pos = np.frombuffer(fh.read(L * 2 * 8), dtype="<f8").reshape(L, 2)
                beta = np.frombuffer(fh.read(K * L * 8), dtype="<f8").reshape(K, L)
                pilot_of = np.frombuffer(fh.read(K * 2), dtype="<u2").astype(np.int64)
                serving = np.frombuffer(fh.read(K * N * 2), dtype="<u2").reshape(K, N)
                snaps.append(
                    NetworkSnapshot(
                        ue_pos, ap_pos, beta, pilot_of, serving.astype(np.int64),
                        ap_layout=header["ap_layout"],
                    )
                )
            return header, snaps
    except OSError as e:
        raise OSError(f"cannot read dataset {path!r}: {e}") from e


def export_text(path, cfg: SimConfig, snapshots: list):
    """Human-readable dump of a dataset, for debugging."""
    try:
        with open(path, "w") as fh:
            fh.write(f"# cfpc dataset: L={cfg.L} K={cfg.K} M={cfg.M} "
                     f"N_assoc={cfg.N_assoc} count={len(snapshots)}\n")
            for i, snap in enumerate(snapshots):
                fh.write(f"\n[snapshot {i}] layout={snap.ap_layout}\n")
                fh.write("ue_pos:\n")
                for k in range(snap.K):
                    fh.write(f"  {snap.ue_pos[k, 0]:.6f} {snap.ue_pos[k, 1]:.6f}\n")
                fh.write("ap_pos:\n")
                for l in range(snap.L):
                    fh.write(f"  {snap.ap_pos[l, 0]:.6f} {snap.ap_pos[l, 1]:.6f}\n")
                fh.write("beta (linear):\n")
                for k in range(snap.K):
                    fh.write("  " + " ".join(f"{v:.9e}" for v in snap.beta[k]) + "\n")
                fh.write("pilot_of: " + " ".join(map(str, snap.pilot_of)) + "\n")
                fh.write("serving:\n")
                for k in range(snap.K):
                    fh.write("  " + " ".join(map(str, snap.serving[k])) + "\n")
    except OSError as e:
        raise OSError(f"cannot write text export {path!r}: {e}") from e
