"""Simulation configuration and unit conventions.

All powers are carried in mW and channel gains as linear ratios; dB/dBm
appear only at I/O boundaries. The pathloss intercept is -30.5 dB at 1 m
with slope 10*3.67 (2 GHz microcell form used throughout the cell-free
literature); the -94 dBm noise power corresponds to a 20 MHz bandwidth
with a 7 dB noise figure.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass

from .errors import ConfigError

PL_INTERCEPT_DB = -30.5


@dataclass
class SimConfig:
    """Physical and protocol constants for one experiment family."""

    area_side: float = 500.0  # m
    L: int = 16               # APs
    K: int = 8                # UEs
    M: int = 4                # antennas per AP
    N_assoc: int = 4          # serving APs per UE
    tau_c: int = 200          # coherence block, symbols
    tau_p: int | None = None  # pilot symbols; defaults to K (orthogonal pilots)
    tau_u: int = 0            # uplink data symbols
    p_ul: float = 100.0       # UE pilot power, mW
    p_dl_max: float = 200.0   # per-AP downlink budget, mW
    noise_dbm: float = -94.0  # UL and DL noise power, dBm
    carrier_ghz: float = 2.0  # informational; the intercept already assumes 2 GHz
    pl_exponent: float = 3.67
    height_diff_m: float = 10.0
    shadow_sigma_db: float = 4.0
    shadow_decorr_m: float = 9.0
    ap_placement: str = "grid"  # "grid" (default, needs square L) or "uniform"
    rng_seed: int = 0

    def __post_init__(self):
        if self.tau_p is None:
            self.tau_p = self.K
        self.validate()

    def validate(self):
        if min(self.L, self.K, self.M, self.N_assoc) < 1:
            raise ConfigError("L, K, M, N_assoc must all be >= 1")
        if self.tau_p + self.tau_u > self.tau_c:
            raise ConfigError(
                f"tau_p + tau_u = {self.tau_p + self.tau_u} exceeds tau_c = {self.tau_c}"
            )
        if self.N_assoc > self.L:
            raise ConfigError(f"N_assoc = {self.N_assoc} exceeds L = {self.L}")
        if self.p_ul <= 0 or self.p_dl_max <= 0:
            raise ConfigError("powers must be positive")
        if self.pl_exponent <= 2:
            raise ConfigError("pathloss exponent must exceed 2")
        if self.area_side <= 0:
            raise ConfigError("area_side must be positive")
        if self.ap_placement not in ("grid", "uniform"):
            raise ConfigError(f"unknown ap_placement {self.ap_placement!r}")

    @property
    def tau_d(self) -> int:
        return self.tau_c - self.tau_p - self.tau_u

    @property
    def prelog(self) -> float:
        return self.tau_d / self.tau_c

    @property
    def noise_mw(self) -> float:
        """sigma_dl^2 = sigma_ul^2 in linear mW."""
        return 10.0 ** (self.noise_dbm / 10.0)

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        bad = set(d) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
