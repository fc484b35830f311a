"""Federated learning of heterogeneous target networks through a shared generative model."""

from .config import ExperimentConfig, parse_config
from .datasets import LabeledDataset, PartitionPlan, make_blobs, make_glyphs, partition_iid, split_train_val
from .errors import ConfigError, DomainError, GeflError, NumericError, ShapeError, UsageError
from .federation import (FederationConfig, RunResult, aggregate, aggregate_by_arch, run_baseline,
                         run_gefl, run_geflf)
from .genmodels import CDDPM, CGAN, CVAE, build_generative
from .metrics import comm_ledger, invert_feature, mnd_ratio
from .nn import Network, mlp
from .runner import run_experiment

__all__ = [
    "CDDPM", "CGAN", "CVAE", "ConfigError", "DomainError", "ExperimentConfig", "FederationConfig",
    "GeflError", "LabeledDataset", "Network", "NumericError", "PartitionPlan", "RunResult",
    "ShapeError", "UsageError", "aggregate", "aggregate_by_arch", "build_generative", "comm_ledger",
    "invert_feature", "make_blobs", "make_glyphs", "mlp", "mnd_ratio", "parse_config",
    "partition_iid", "run_baseline", "run_experiment", "run_gefl", "run_geflf", "split_train_val",
]
