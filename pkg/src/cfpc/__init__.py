"""cfpc: a cell-free massive MIMO downlink power-control laboratory.

Network snapshot generation, exact SINR/SE evaluation, scalable baseline
allocators, a centralized max-min-fairness oracle, and an unsupervised
BiLSTM power-control policy trained directly on the communication utility.
"""

__version__ = "0.1.0"

from .config import SimConfig
from .errors import (
    CfpcError,
    ConfigError,
    CorruptCheckpointError,
    NumericalError,
    ParameterError,
    UnsupportedConfigError,
)
from .netgen import NetworkSnapshot, generate_dataset, generate_snapshot
from .perf import PowerAllocation, compute_gamma, compute_se, compute_sinr, softmin_utility
from .alloc import MmfResult, epa, fpa, lozano, mmf_oracle, tune_baseline
from .policy import (
    FeatureSeq,
    PolicyParams,
    build_features,
    count_params,
    count_params_and_flops,
    infer,
    infer_batch,
    init_params,
    load_checkpoint,
    normalize,
    save_checkpoint,
)
from .train import TrainConfig, TrainResult, grad, gradcheck, loss, sgd_step
from .harness import EvalReport, evaluate, write_report

__all__ = [
    "SimConfig",
    "NetworkSnapshot",
    "PowerAllocation",
    "PolicyParams",
    "FeatureSeq",
    "TrainConfig",
    "TrainResult",
    "MmfResult",
    "EvalReport",
    "CfpcError",
    "ConfigError",
    "UnsupportedConfigError",
    "ParameterError",
    "NumericalError",
    "CorruptCheckpointError",
    "generate_snapshot",
    "generate_dataset",
    "compute_gamma",
    "compute_sinr",
    "compute_se",
    "softmin_utility",
    "epa",
    "fpa",
    "lozano",
    "mmf_oracle",
    "tune_baseline",
    "build_features",
    "infer",
    "infer_batch",
    "init_params",
    "normalize",
    "count_params",
    "count_params_and_flops",
    "save_checkpoint",
    "load_checkpoint",
    "loss",
    "grad",
    "sgd_step",
    "gradcheck",
    "evaluate",
    "write_report",
]
