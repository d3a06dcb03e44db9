"""Performance models and a pipeline simulator for offloaded MoE inference."""
from .core import (
    GB,
    ConfigError,
    DerivedSizes,
    HardwareProfile,
    InfeasibleWorkloadError,
    KVCacheConfig,
    ModelConfig,
    Scenario,
    WorkloadSpec,
    kv_bytes_per_token,
    load_scenario,
    load_scenario_file,
    model_bytes,
)
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "GB",
    "ConfigError",
    "DerivedSizes",
    "HardwareProfile",
    "InfeasibleWorkloadError",
    "KVCacheConfig",
    "ModelConfig",
    "Scenario",
    "WorkloadSpec",
    "kv_bytes_per_token",
    "load_scenario",
    "load_scenario_file",
    "model_bytes",
]
