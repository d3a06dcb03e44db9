"""Domain types, scenario ingestion and derived-size arithmetic.

Units: bytes and seconds as floats, token counts as ints.  ``GB`` always
means 10**9 bytes.
"""
from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

GB = 1e9


class ConfigError(ValueError):
    """Scenario document is malformed or violates a type invariant."""


class InfeasibleWorkloadError(ValueError):
    """Workload cannot run on the configured resources."""


_SIZE_RE = re.compile(
    r"^\s*([-+]?\d*\.?\d+(?:[eE][-+]?\d+)?)\s*([a-zA-Z]*)(?:/s)?\s*$"
)
_SUFFIX = {
    "": 1.0,
    "b": 1.0,
    "k": 1e3,
    "kb": 1e3,
    "m": 1e6,
    "mb": 1e6,
    "g": 1e9,
    "gb": 1e9,
    "t": 1e12,
    "tb": 1e12,
    "kib": 2.0**10,
    "mib": 2.0**20,
    "gib": 2.0**30,
    "tib": 2.0**40,
    "flops": 1.0,
    "gflops": 1e9,
    "tflops": 1e12,
}


def parse_quantity(value: Any, key: str = "value") -> float:
    """Parse numbers such as ``19.5e9``, ``"70GB"``, ``"19.5GB/s"`` or ``"150TFLOPS"``."""
    if isinstance(value, bool):
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        m = _SIZE_RE.match(value)
        if m:
            suffix = m.group(2).lower()
            if suffix in _SUFFIX:
                return float(m.group(1)) * _SUFFIX[suffix]
    raise ConfigError(f"{key}: cannot parse {value!r} as a number")


def _positive(value: Any, key: str) -> float:
    x = parse_quantity(value, key)
    if not math.isfinite(x) or x <= 0:
        raise ConfigError(f"{key}: must be positive, got {value!r}")
    return x


def _positive_int(value: Any, key: str) -> int:
    x = _positive(value, key)
    if x != int(x):
        raise ConfigError(f"{key}: must be an integer, got {value!r}")
    return int(x)


@dataclass(frozen=True)
class HardwareProfile:
    """Hardware rates and capacities.

    ``cpu_attn_throughput`` counts KV-cache tokens attended per second for
    one layer; a decode sequence with context ``c`` costs ``c`` such
    token-reads in every layer.
    """

    gpu_flops: float
    io_bandwidth: float
    cpu_mem_bandwidth: float
    cpu_attn_throughput: float
    gpu_mem_capacity: float
    cpu_mem_capacity: float

    def __post_init__(self):
        for name in (
            "gpu_flops",
            "io_bandwidth",
            "cpu_mem_bandwidth",
            "cpu_attn_throughput",
            "gpu_mem_capacity",
            "cpu_mem_capacity",
        ):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"hardware.{name}: must be positive, got {value!r}")
        if self.io_bandwidth > self.cpu_mem_bandwidth:
            raise ConfigError(
                "hardware.io_bandwidth: io_bandwidth exceeds cpu_mem_bandwidth"
            )


@dataclass(frozen=True)
class ModelConfig:
    """MoE transformer shape.

    ``hidden_dim`` is also the per-token activation width moved between CPU
    and GPU during pipeline synchronisation.
    """

    num_layers: int
    hidden_dim: int
    intermediate_dim: int
    num_experts: int
    top_k: int
    gqa_group: int
    kv_heads: int
    head_dim: int
    dtype_bytes: int = 2
    extra_weight_bytes: float = 0.0
    name: str = ""

    def __post_init__(self):
        for name in (
            "num_layers",
            "hidden_dim",
            "intermediate_dim",
            "num_experts",
            "top_k",
            "gqa_group",
            "kv_heads",
            "head_dim",
            "dtype_bytes",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ConfigError(f"model.{name}: must be a positive integer, got {value!r}")
        if self.top_k > self.num_experts:
            raise ConfigError("model.top_k: top_k exceeds num_experts")
        if self.intermediate_dim < self.hidden_dim:
            raise ConfigError("model.intermediate_dim: must be >= hidden_dim")
        if self.kv_heads * self.head_dim * self.gqa_group != self.hidden_dim:
            raise ConfigError(
                "model.kv_heads: kv_heads * head_dim * gqa_group must equal hidden_dim"
            )
        if self.extra_weight_bytes < 0:
            raise ConfigError("model.extra_weight_bytes: must be >= 0")

    @property
    def m(self) -> float:
        """Expert width ratio h_i / h."""
        return self.intermediate_dim / self.hidden_dim

    def layer_params(self) -> float:
        """Parameters of one transformer layer (all experts, Q/O and K/V projections)."""
        h, hi, s = self.hidden_dim, self.intermediate_dim, self.gqa_group
        return 3 * self.num_experts * h * hi + 2 * h * h + 2 * h * h / s

    def active_layer_params(self) -> float:
        h, hi, s = self.hidden_dim, self.intermediate_dim, self.gqa_group
        return 3 * self.top_k * h * hi + 2 * h * h + 2 * h * h / s

    def flops_per_token_layer(self) -> float:
        """GEMM FLOPs for one token through one layer (2 FLOPs per active weight)."""
        return 2.0 * self.active_layer_params()


@dataclass(frozen=True)
class DerivedSizes:
    model_bytes: float
    kv_bytes_per_token: float
    weight_buffer_bytes: float


def model_bytes(model: ModelConfig) -> float:
    return model.num_layers * model.layer_params() * model.dtype_bytes + model.extra_weight_bytes


def kv_bytes_per_token(model: ModelConfig) -> float:
    return float(2 * model.num_layers * model.kv_heads * model.head_dim * model.dtype_bytes)


def flops_per_token(model: ModelConfig) -> float:
    return model.num_layers * model.flops_per_token_layer()


def derived_sizes(model: ModelConfig) -> DerivedSizes:
    mb = model_bytes(model)
    return DerivedSizes(
        model_bytes=mb,
        kv_bytes_per_token=kv_bytes_per_token(model),
        weight_buffer_bytes=2.0 * mb / model.num_layers,
    )


@dataclass(frozen=True)
class KVCacheConfig:
    capacity_tokens: int
    block_size: int = 16

    def __post_init__(self):
        if not isinstance(self.block_size, int) or self.block_size < 1:
            raise ConfigError(f"kv_cache.block_size: must be >= 1, got {self.block_size!r}")
        if not isinstance(self.capacity_tokens, int) or self.capacity_tokens < self.block_size:
            raise ConfigError(
                f"kv_cache.capacity_tokens: must hold at least one block, got {self.capacity_tokens!r}"
            )

    @property
    def num_blocks(self) -> int:
        return self.capacity_tokens // self.block_size

    @classmethod
    def from_bytes(cls, capacity_bytes: float, model: ModelConfig, block_size: int = 16):
        return cls(int(capacity_bytes // kv_bytes_per_token(model)), block_size)


@dataclass(frozen=True)
class WorkloadSpec:
    prompt_lens: tuple[int, ...]
    gen_lens: tuple[int, ...]

    def __post_init__(self):
        if len(self.prompt_lens) != len(self.gen_lens):
            raise ConfigError("workload: prompt and generation lists differ in length")
        if not self.prompt_lens:
            raise ConfigError("workload: needs at least one sequence")
        for i, (p, g) in enumerate(zip(self.prompt_lens, self.gen_lens)):
            if p < 1 or g < 1:
                raise ConfigError(f"workload.sequences[{i}]: prompt_len and gen_len must be >= 1")

    @classmethod
    def from_pairs(cls, pairs) -> "WorkloadSpec":
        pairs = list(pairs)
        return cls(tuple(int(p) for p, _ in pairs), tuple(int(g) for _, g in pairs))

    @classmethod
    def uniform(cls, p: int, g: int, count: int) -> "WorkloadSpec":
        return cls((int(p),) * count, (int(g),) * count)

    @property
    def batch_size(self) -> int:
        return len(self.prompt_lens)

    def mean_prompt(self) -> float:
        return sum(self.prompt_lens) / len(self.prompt_lens)

    def mean_gen(self) -> float:
        return sum(self.gen_lens) / len(self.gen_lens)


@dataclass
class Scenario:
    hardware: HardwareProfile
    model: ModelConfig
    kv_cache: KVCacheConfig
    workload: WorkloadSpec
    sizes: DerivedSizes
    options: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def option(self, path: str, default=None):
        node: Any = self.options
        for part in path.split("."):
            if not isinstance(node, Mapping) or part not in node or node[part] is None:
                return default
            node = node[part]
        return node


_HW_KEYS = (
    "gpu_flops",
    "io_bandwidth",
    "cpu_mem_bandwidth",
    "cpu_attn_throughput",
    "gpu_mem_capacity",
    "cpu_mem_capacity",
)
_MODEL_KEYS = (
    "num_layers",
    "hidden_dim",
    "intermediate_dim",
    "num_experts",
    "top_k",
    "gqa_group",
    "kv_heads",
    "head_dim",
)


def _section(doc: Mapping, name: str) -> Mapping:
    if name not in doc:
        raise ConfigError(f"{name}: missing section")
    sec = doc[name]
    if not isinstance(sec, Mapping):
        raise ConfigError(f"{name}: expected a mapping")
    return sec


def _require(sec: Mapping, section: str, key: str):
    if key not in sec or sec[key] is None:
        raise ConfigError(f"{section}.{key}: missing key")
    return sec[key]


def _build_hardware(doc: Mapping) -> HardwareProfile:
    sec = _section(doc, "hardware")
    values = {k: _positive(_require(sec, "hardware", k), f"hardware.{k}") for k in _HW_KEYS}
    return HardwareProfile(**values)


def _build_model(doc: Mapping) -> ModelConfig:
    sec = _section(doc, "model")
    values = {k: _positive_int(_require(sec, "model", k), f"model.{k}") for k in _MODEL_KEYS}
    values["dtype_bytes"] = _positive_int(sec.get("dtype_bytes", 2), "model.dtype_bytes")
    extra = sec.get("extra_weight_bytes", 0) or 0
    values["extra_weight_bytes"] = parse_quantity(extra, "model.extra_weight_bytes")
    values["name"] = str(sec.get("name", ""))
    return ModelConfig(**values)


def _build_kv(doc: Mapping, model: ModelConfig) -> KVCacheConfig:
    sec = _section(doc, "kv_cache")
    b = _positive_int(sec.get("block_size", 16), "kv_cache.block_size")
    if sec.get("capacity_tokens") is not None:
        return KVCacheConfig(_positive_int(sec["capacity_tokens"], "kv_cache.capacity_tokens"), b)
    if sec.get("capacity_bytes") is not None:
        cap = _positive(sec["capacity_bytes"], "kv_cache.capacity_bytes")
        return KVCacheConfig.from_bytes(cap, model, b)
    raise ConfigError("kv_cache.capacity_tokens: missing key (or give capacity_bytes)")


def _build_workload(doc: Mapping, base_dir: Path | None) -> WorkloadSpec:
    from . import workloads

    sec = _section(doc, "workload")
    if "sequences" in sec:
        pairs = sec["sequences"]
        try:
            return WorkloadSpec.from_pairs((int(p), int(g)) for p, g in pairs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"workload.sequences: expected (p, g) pairs ({exc})") from None
    if "uniform" in sec:
        u = sec["uniform"]
        return WorkloadSpec.uniform(
            _positive_int(_require(u, "workload.uniform", "p"), "workload.uniform.p"),
            _positive_int(_require(u, "workload.uniform", "g"), "workload.uniform.g"),
            _positive_int(_require(u, "workload.uniform", "count"), "workload.uniform.count"),
        )
    if "trace" in sec:
        path = Path(str(sec["trace"]))
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return workloads.ingest_trace(path)
    if "distribution" in sec:
        return workloads.sample_distribution(sec["distribution"], key="workload.distribution")
    if "preset" in sec:
        return workloads.sample_preset(sec, key="workload")
    raise ConfigError("workload: needs one of sequences, uniform, trace, distribution, preset")


def build_scenario(doc: Mapping, base_dir: Path | None = None) -> Scenario:
    """Validate a parsed scenario document and compute derived sizes."""
    if not isinstance(doc, Mapping):
        raise ConfigError("scenario: expected a mapping at top level")
    hw = _build_hardware(doc)
    model = _build_model(doc)
    kv = _build_kv(doc, model)
    workload = _build_workload(doc, base_dir)
    options = {k: copy.deepcopy(v) for k, v in doc.items() if k not in ("hardware", "model", "kv_cache", "workload")}
    return Scenario(hw, model, kv, workload, derived_sizes(model), options, copy.deepcopy(dict(doc)))


def parse_document(config_text: str) -> dict:
    try:
        doc = yaml.safe_load(config_text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"scenario: parse error: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("scenario: expected a mapping at top level")
    return doc


def apply_overrides(doc: dict, overrides: list[str] | tuple[str, ...]) -> dict:
    """Apply ``section.key=value`` overrides in place; values are parsed as YAML scalars."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected section.key=value")
        path, _, raw = item.partition("=")
        parts = [p for p in path.strip().split(".") if p]
        if not parts:
            raise ConfigError(f"override {item!r}: empty key")
        node = doc
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = yaml.safe_load(raw)
    return doc


def load_scenario(
    config_text: str,
    overrides: list[str] | tuple[str, ...] = (),
    base_dir: Path | None = None,
) -> Scenario:
    """Parse and validate a scenario document (YAML text)."""
    doc = parse_document(config_text)
    apply_overrides(doc, overrides)
    return build_scenario(doc, base_dir)


def load_scenario_file(path, overrides=()) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario: file not found: {path}")
    return load_scenario(path.read_text(), overrides, base_dir=path.parent)


def dump_scenario(scenario: Scenario) -> str:
    """Serialise a scenario back to YAML with an inline workload."""
    hw, m, kv = scenario.hardware, scenario.model, scenario.kv_cache
    doc = {
        "hardware": {k: float(getattr(hw, k)) for k in _HW_KEYS},
        "model": {
            "name": m.name,
            **{k: getattr(m, k) for k in _MODEL_KEYS},
            "dtype_bytes": m.dtype_bytes,
            "extra_weight_bytes": float(m.extra_weight_bytes),
        },
        "kv_cache": {"capacity_tokens": kv.capacity_tokens, "block_size": kv.block_size},
        "workload": {
            "sequences": [[p, g] for p, g in zip(scenario.workload.prompt_lens, scenario.workload.gen_lens)]
        },
    }
    doc.update(copy.deepcopy(scenario.options))
    return yaml.safe_dump(doc, sort_keys=False)
