"""AP-centric BiLSTM power-control policy.

Each AP processes the feature sequence of its served UEs with a shared
bidirectional LSTM; the summed hidden states are mapped back to the linear
domain (10^s with a saturation clamp), pushed through a small SELU head,
and turned into strictly positive latent powers by a softplus. A per-AP
normalization then guarantees the power budget, so any parameter vector
yields a feasible allocation by construction.

Inference and training share one graph builder (built on cfpc.autodiff),
so there is no train/test asymmetry beyond UE-order randomization.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .config import SimConfig
from .errors import CorruptCheckpointError, NumericalError
from .netgen import NetworkSnapshot
from .perf import PowerAllocation

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CFPM"
CHECKPOINT_VERSION = 1
LINEAR_MAP_CLAMP = 8.0  # |s| cap before 10^s

_ACTIVATION_IDS = {"selu": 0, "softplus": 1}


# -- parameters -----------------------------------------------------------


@dataclass
class PolicyParams:
    """All trainable weights of the BiLSTM policy and prediction head.

    LSTM weight rows are laid out gate-major: [input, forget, candidate,
    output], H rows each. ``head_w[i]`` has shape (out_i, in_i) with the
    input chain H -> head_dims[0] -> ... -> 1.
    """

    H: int
    d_in: int
    head_dims: tuple
    wx_f: np.ndarray
    wh_f: np.ndarray
    b_f: np.ndarray
    wx_b: np.ndarray
    wh_b: np.ndarray
    b_b: np.ndarray
    head_w: list = field(default_factory=list)
    head_b: list = field(default_factory=list)

    def items(self):
        """(name, array) pairs in the fixed serialization order."""
        yield "lstm_fwd.wx", self.wx_f
        yield "lstm_fwd.wh", self.wh_f
        yield "lstm_fwd.b", self.b_f
        yield "lstm_bwd.wx", self.wx_b
        yield "lstm_bwd.wh", self.wh_b
        yield "lstm_bwd.b", self.b_b
        for i, (w, b) in enumerate(zip(self.head_w, self.head_b)):
            yield f"head.{i}.w", w
            yield f"head.{i}.b", b

    def count(self) -> int:
        return sum(a.size for _, a in self.items())

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            self.H, self.d_in, tuple(self.head_dims),
            self.wx_f.copy(), self.wh_f.copy(), self.b_f.copy(),
            self.wx_b.copy(), self.wh_b.copy(), self.b_b.copy(),
            [w.copy() for w in self.head_w], [b.copy() for b in self.head_b],
        )

    def astype(self, dtype) -> "PolicyParams":
        return PolicyParams(
            self.H, self.d_in, tuple(self.head_dims),
            self.wx_f.astype(dtype), self.wh_f.astype(dtype), self.b_f.astype(dtype),
            self.wx_b.astype(dtype), self.wh_b.astype(dtype), self.b_b.astype(dtype),
            [w.astype(dtype) for w in self.head_w],
            [b.astype(dtype) for b in self.head_b],
        )

    def validate(self):
        for name, a in self.items():
            if not np.all(np.isfinite(a)):
                raise NumericalError(f"non-finite parameter tensor {name}")


def count_params(H: int, d_in: int, head_dims=(64, 16, 1)) -> int:
    """Closed-form parameter count: 2*(4H(d_in+H+1)) + dense head."""
    lstm = 2 * (4 * H * d_in + 4 * H * H + 4 * H)
    head = 0
    prev = H
    for d in head_dims:
        head += d * prev + d
        prev = d
    return lstm + head


def init_params(H: int = 256, d_in: int = 3, head_dims=(64, 16, 1),
                seed: int = 0, dtype=np.float64) -> PolicyParams:
    """Fan-based uniform weights, forget-gate bias 1, other biases 0."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape).astype(dtype)

    def lstm_dir():
        wx = uniform((4 * H, d_in), d_in, H)
        wh = uniform((4 * H, H), H, H)
        b = np.zeros(4 * H, dtype=dtype)
        b[H : 2 * H] = 1.0  # forget gate
        return wx, wh, b

    wx_f, wh_f, b_f = lstm_dir()
    wx_b, wh_b, b_b = lstm_dir()
    head_w, head_b = [], []
    prev = H
    for d in head_dims:
        # LeCun-style fan-in limit, SELU-friendly
        lim = np.sqrt(3.0 / prev)
        head_w.append(rng.uniform(-lim, lim, size=(d, prev)).astype(dtype))
        head_b.append(np.zeros(d, dtype=dtype))
        prev = d
    return PolicyParams(H, d_in, tuple(head_dims), wx_f, wh_f, b_f,
                        wx_b, wh_b, b_b, head_w, head_b)


def params_to_vars(params: PolicyParams) -> dict:
    """Leaf Vars for training; gradient keys match ``params.items()`` names."""
    return {name: ad.leaf(a) for name, a in params.items()}


def count_params_and_flops(params: PolicyParams) -> dict:
    """Analytic complexity accounting (1 MAC = 2 FLOPs, FP32 storage).

    BiLSTM per-pair cost is 2*8H(H+d_in+1)+H (both directions plus the
    hidden-state summation); the head adds 2*sum(out*in).
    """
    H, d_in = params.H, params.d_in
    flops_bilstm = 2 * 8 * H * (H + d_in + 1) + H
    head_macs = 0
    prev = H
    for d in params.head_dims:
        head_macs += d * prev
        prev = d
    flops_head = 2 * head_macs
    n = params.count()
    return {
        "param_count": n,
        "param_count_bilstm": 2 * (4 * H * d_in + 4 * H * H + 4 * H),
        "param_count_head": n - 2 * (4 * H * d_in + 4 * H * H + 4 * H),
        "flops_bilstm": flops_bilstm,
        "flops_head": flops_head,
        "flops_per_pair": flops_bilstm + flops_head,
        "memory_bytes": 4 * n,
    }


# -- features -------------------------------------------------------------


@dataclass
class FeatureSeq:
    """Input sequence of one AP: rows of ``u`` correspond 1:1 with ue_order."""

    ap: int
    ue_order: np.ndarray
    u: np.ndarray  # (len, 3) log10-scale features


def build_features(snapshot: NetworkSnapshot, cfg: SimConfig, mode: str = "global",
                   neighborhood=None, perm_rng=None) -> list:
    """Per-AP feature sequences, log10-scaled and referenced to noise power.

    u = [log10(beta_kl / s2), log10(sum_j beta_kj / s2), log10(sum_i beta_il / s2)]

    In "global" mode the sums run over all APs / all UEs; in "scalable" mode
    over neighborhoods given by ``neighborhood`` = ("top_n", n) or
    ("radius", meters). An empty neighborhood falls back to the singleton
    {l} / {k} for the affected pair and logs a warning. APs serving no UE
    produce no sequence. ``perm_rng`` randomizes the UE order per AP.
    """
    beta = snapshot.beta
    K, L = snapshot.K, snapshot.L
    s2 = cfg.noise_mw

    if mode == "global":
        row_sum = beta.sum(axis=1)          # per UE, over all APs
        col_sum = beta.sum(axis=0)          # per AP, over all UEs
        row_ok = np.ones(K, dtype=bool)
        col_ok = np.ones(L, dtype=bool)
    elif mode == "scalable":
        if neighborhood is None:
            raise ValueError("scalable mode requires a neighborhood rule")
        kind, value = neighborhood
        if kind == "top_n":
            n = int(value)
            ap_mask = np.zeros((K, L), dtype=bool)
            ue_mask = np.zeros((K, L), dtype=bool)
            if n > 0:
                top_ap = np.argsort(-beta, axis=1, kind="stable")[:, : min(n, L)]
                np.put_along_axis(ap_mask, top_ap, True, axis=1)
                top_ue = np.argsort(-beta, axis=0, kind="stable")[: min(n, K), :]
                np.put_along_axis(ue_mask, top_ue, True, axis=0)
        elif kind == "radius":
            d2d = np.linalg.norm(
                snapshot.ue_pos[:, None, :] - snapshot.ap_pos[None, :, :], axis=-1
            )
            ap_mask = d2d <= value
            ue_mask = d2d <= value
        else:
            raise ValueError(f"unknown neighborhood rule {kind!r}")
        row_sum = np.where(ap_mask, beta, 0.0).sum(axis=1)
        col_sum = np.where(ue_mask, beta, 0.0).sum(axis=0)
        row_ok = ap_mask.any(axis=1)
        col_ok = ue_mask.any(axis=0)
        if not (row_ok.all() and col_ok.all()):
            logger.warning(
                "empty neighborhood for %d UE(s) / %d AP(s); using singleton fallback",
                int((~row_ok).sum()), int((~col_ok).sum()),
            )
    else:
        raise ValueError(f"unknown feature mode {mode!r}")

    seqs = []
    for l in range(L):
        ues = snapshot.served[l]
        if ues.size == 0:
            continue
        if perm_rng is not None:
            ues = perm_rng.permutation(ues)
        b_pair = beta[ues, l]
        agg_ue = np.where(row_ok[ues], row_sum[ues], b_pair)
        agg_ap = col_sum[l] if col_ok[l] else b_pair
        u = np.column_stack([
            np.log10(b_pair / s2),
            np.log10(agg_ue / s2),
            np.log10(np.broadcast_to(agg_ap, b_pair.shape) / s2),
        ])
        seqs.append(FeatureSeq(ap=l, ue_order=np.asarray(ues), u=u))
    return seqs


# -- forward graph --------------------------------------------------------


def _lstm_direction(pvars: dict, prefix: str, u_steps: list, n: int, H: int):
    """Run one LSTM direction over pre-sliced constant inputs.

    ``u_steps[t]`` is an (n, d_in) constant; returns the list of hidden
    states, one (n, H) Var per step.
    """
    wx_t = ad.transpose(pvars[f"{prefix}.wx"])
    wh_t = ad.transpose(pvars[f"{prefix}.wh"])
    b = pvars[f"{prefix}.b"]
    h = None
    c = None
    outs = []
    for t, u_t in enumerate(u_steps):
        gates = ad.matmul(u_t, wx_t) + b
        if h is not None:
            gates = gates + ad.matmul(h, wh_t)
        i = ad.sigmoid(ad.slice_cols(gates, 0, H))
        f = ad.sigmoid(ad.slice_cols(gates, H, 2 * H))
        g = ad.tanh(ad.slice_cols(gates, 2 * H, 3 * H))
        o = ad.sigmoid(ad.slice_cols(gates, 3 * H, 4 * H))
        c = i * g if c is None else f * c + i * g
        h = o * ad.tanh(c)
        outs.append(h)
    return outs


def policy_forward_graph(pvars: dict, seqs: list, H: int, dtype=np.float64):
    """Latent powers for a list of feature sequences under shared weights.

    Sequences are bucketed by length so each LSTM step is one batched
    matmul. Returns (rho_hat Var (P,), y Var (P,), order, clamp_count):
    ``order[j] = (seq_index, position)`` maps builder row j back to its
    sequence slot.
    """
    if not seqs:
        raise ValueError("policy forward needs at least one nonempty sequence")
    buckets = {}
    for si, seq in enumerate(seqs):
        T = seq.u.shape[0]
        if T == 0:
            raise ValueError("empty feature sequence")
        buckets.setdefault(T, []).append(si)

    s_parts = []
    order = []
    clamp_count = 0
    for T in sorted(buckets):
        members = buckets[T]
        n = len(members)
        U = np.stack([seqs[si].u for si in members]).astype(dtype)  # (n, T, 3)
        fwd_steps = [ad.constant(np.ascontiguousarray(U[:, t, :])) for t in range(T)]
        bwd_steps = [ad.constant(np.ascontiguousarray(U[:, T - 1 - t, :])) for t in range(T)]
        h_fwd = _lstm_direction(pvars, "lstm_fwd", fwd_steps, n, H)
        h_bwd = _lstm_direction(pvars, "lstm_bwd", bwd_steps, n, H)
        # stack to (T*n, H); row t*n + i holds step t of bucket member i
        fwd_flat = ad.reshape(ad.stack(h_fwd), (T * n, H))
        bwd_flat = ad.reshape(ad.stack(h_bwd), (T * n, H))
        idx_f = np.empty(n * T, dtype=np.int64)
        idx_b = np.empty(n * T, dtype=np.int64)
        for i, si in enumerate(members):
            for t in range(T):
                idx_f[i * T + t] = t * n + i
                idx_b[i * T + t] = (T - 1 - t) * n + i
                order.append((si, t))
        s_parts.append(ad.take(fwd_flat, idx_f) + ad.take(bwd_flat, idx_b))

    s = s_parts[0] if len(s_parts) == 1 else ad.concat(s_parts)
    if not np.all(np.isfinite(s.value)):
        raise NumericalError("non-finite intermediate in BiLSTM hidden state")
    clamp_count = int(np.count_nonzero(np.abs(s.value) > LINEAR_MAP_CLAMP))
    if clamp_count:
        logger.debug("linear-domain mapping clamped %d activations", clamp_count)
    z = ad.pow10_clamp(s, -LINEAR_MAP_CLAMP, LINEAR_MAP_CLAMP)

    n_layers = len([k for k in pvars if k.startswith("head.") and k.endswith(".w")])
    for i in range(n_layers):
        z = ad.matmul(z, ad.transpose(pvars[f"head.{i}.w"])) + pvars[f"head.{i}.b"]
        if i < n_layers - 1:
            z = ad.selu(z)
    y = ad.reshape(z, (z.value.shape[0],))
    if not np.all(np.isfinite(y.value)):
        raise NumericalError("non-finite intermediate in head pre-activation")
    rho_hat = ad.softplus(y)
    return rho_hat, y, order, clamp_count


def forward(params: PolicyParams, feats: FeatureSeq):
    """Pre-activations y and latent powers rho_hat for one AP sequence."""
    pvars = {name: ad.constant(a) for name, a in params.items()}
    rho_hat, y, order, _ = policy_forward_graph(pvars, [feats], params.H,
                                                dtype=params.wx_f.dtype)
    # single sequence: builder order is already position order
    return y.value.copy(), rho_hat.value.copy()


def normalize_pairs(rho_hat, ap_ids, n_aps: int, p_max: float):
    """Per-AP scaling: alpha_l = min(1, P_max / S_l), rho = alpha * rho_hat.

    Accepts a Var (differentiable path; the min is a branch subgradient) or
    a plain array. Returns the same kind.
    """
    is_var = isinstance(rho_hat, ad.Var)
    x = rho_hat if is_var else ad.constant(np.asarray(rho_hat, dtype=float))
    S = ad.segment_sum(x, ap_ids, n_aps)
    # floor keeps P/S and its backward finite for idle APs (S = 0); the
    # min(1, .) branch masks those entries, so values are never selected
    floor = 1e-15 if S.value.dtype == np.float32 else 1e-150
    safe = ad.maximum_const(S, floor)
    ones = ad.constant(np.ones_like(S.value))
    alpha = ad.where(S.value <= p_max, ones, p_max / safe)
    rho = x * ad.take(alpha, ap_ids)
    return rho if is_var else rho.value


def normalize(snapshot: NetworkSnapshot, rho_hat, cfg: SimConfig) -> PowerAllocation:
    """Feasible PowerAllocation from per-pair latents in canonical order."""
    rho = normalize_pairs(np.asarray(rho_hat, dtype=float),
                          snapshot.pair_ap, snapshot.L, cfg.p_dl_max)
    return PowerAllocation.from_pairs(snapshot, rho)


def _pair_slots(snapshot: NetworkSnapshot) -> np.ndarray:
    """(K, L) lookup from pair to its canonical index (-1 if inactive)."""
    slots = np.full((snapshot.K, snapshot.L), -1, dtype=np.int64)
    slots[snapshot.pair_ue, snapshot.pair_ap] = np.arange(snapshot.n_pairs)
    return slots


def infer(params: PolicyParams, snapshot: NetworkSnapshot, cfg: SimConfig,
          perm_seed: int = 0, mode: str = "global",
          neighborhood=None) -> PowerAllocation:
    """Deterministic inference: features -> per-AP BiLSTM -> normalization."""
    return infer_batch(params, [snapshot], cfg, perm_seed=perm_seed,
                       mode=mode, neighborhood=neighborhood)[0]


def infer_batch(params: PolicyParams, snapshots: list, cfg: SimConfig,
                perm_seed: int = 0, mode: str = "global",
                neighborhood=None) -> list:
    """Inference over many snapshots with one shared batched graph."""
    pvars = {name: ad.constant(a) for name, a in params.items()}
    root = np.random.SeedSequence(perm_seed)
    seq_snap = []
    seqs = []
    for b, (snap, child) in enumerate(zip(snapshots, root.spawn(len(snapshots)))):
        rng = np.random.default_rng(child)
        for fs in build_features(snap, cfg, mode=mode, neighborhood=neighborhood,
                                 perm_rng=rng):
            seq_snap.append(b)
            seqs.append(fs)
    rho_hat, _, order, _ = policy_forward_graph(pvars, seqs, params.H,
                                                dtype=params.wx_f.dtype)
    # scatter builder rows back to each snapshot's canonical pair slots
    allocs = []
    slots = [_pair_slots(s) for s in snapshots]
    latents = [np.zeros(s.n_pairs) for s in snapshots]
    for j, (si, t) in enumerate(order):
        b = seq_snap[si]
        seq = seqs[si]
        k = seq.ue_order[t]
        latents[b][slots[b][k, seq.ap]] = rho_hat.value[j]
    for b, snap in enumerate(snapshots):
        allocs.append(normalize(snap, latents[b], cfg))
    return allocs


# -- checkpoint I/O -------------------------------------------------------

_CKPT_FIXED = struct.Struct("<4sHHHH")


def save_checkpoint(path, params: PolicyParams):
    """Binary checkpoint: header, float32 tensors in fixed order, CRC32."""
    params.validate()
    head = _CKPT_FIXED.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
                            params.H, params.d_in, len(params.head_dims))
    head += struct.pack(f"<{len(params.head_dims)}H", *params.head_dims)
    head += struct.pack("<BB", _ACTIVATION_IDS["selu"], _ACTIVATION_IDS["softplus"])
    payload = b"".join(a.astype("<f4").tobytes() for _, a in params.items())
    blob = head + payload
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
            fh.write(struct.pack("<I", crc))
    except OSError as e:
        raise OSError(f"cannot write checkpoint {path!r}: {e}") from e


def load_checkpoint(path) -> PolicyParams:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise OSError(f"cannot read checkpoint {path!r}: {e}") from e
    if len(blob) < _CKPT_FIXED.size + 4:
        raise CorruptCheckpointError(f"{path!r}: truncated checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CorruptCheckpointError(f"{path!r}: CRC mismatch")
    magic, version, H, d_in, n_head = _CKPT_FIXED.unpack(body[: _CKPT_FIXED.size])
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(f"{path!r}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(f"{path!r}: unsupported version {version}")
    off = _CKPT_FIXED.size
    head_dims = struct.unpack_from(f"<{n_head}H", body, off)
    off += 2 * n_head
    act_hidden, act_out = struct.unpack_from("<BB", body, off)
    off += 2
    if (act_hidden, act_out) != (_ACTIVATION_IDS["selu"], _ACTIVATION_IDS["softplus"]):
        raise CorruptCheckpointError(f"{path!r}: unknown activation ids")

    ref = init_params(H, d_in, head_dims, seed=0, dtype=np.float32)
    arrays = {}
    for name, a in ref.items():
        n = a.size
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(a.shape)
        arrays[name] = arr.astype(np.float32)
        off += 4 * n
    if off != len(body):
        raise CorruptCheckpointError(f"{path!r}: trailing bytes in checkpoint")
    out = PolicyParams(
        H, d_in, tuple(head_dims),
        arrays["lstm_fwd.wx"], arrays["lstm_fwd.wh"], arrays["lstm_fwd.b"],
        arrays["lstm_bwd.wx"], arrays["lstm_bwd.wh"], arrays["lstm_bwd.b"],
        [arrays[f"head.{i}.w"] for i in range(len(head_dims))],
        [arrays[f"head.{i}.b"] for i in range(len(head_dims))],
    )
    out.validate()
    return out
