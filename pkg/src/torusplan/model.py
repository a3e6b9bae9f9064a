"""Model and workload descriptions, plus the byte and FLOP counts derived from them."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum
from typing import Any


class Attention(str, Enum):
    MULTIHEAD = "multihead"
    MULTIQUERY = "multiquery"


class Block(str, Enum):
    PARALLEL = "parallel"
    SERIAL = "serial"


class Phase(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"

    def tokens_per_pass(self, workload: "Workload") -> int:
        if self is Phase.PREFILL:
            return workload.batch * workload.input_len
        return workload.batch


_COUNT_FIELDS = ("n_layers", "d_model", "d_ff", "n_heads", "d_head")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters of a decoder-only Transformer."""

    name: str
    n_params: float
    n_layers: int
    d_model: int
    d_ff: int
    n_heads: int
    d_head: int
    attention: Attention = Attention.MULTIQUERY
    block: Block = Block.PARALLEL
    weight_bytes: int = 2
    activation_bytes: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "attention", Attention(self.attention))
        object.__setattr__(self, "block", Block(self.block))
        if self.n_params < 0:
            raise ValueError("n_params must be nonnegative")
        for name in _COUNT_FIELDS:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.weight_bytes not in (1, 2):
            raise ValueError(f"weight_bytes must be 1 or 2, got {self.weight_bytes!r}")
        if self.activation_bytes not in (1, 2, 4):
            raise ValueError(f"activation_bytes must be 1, 2 or 4, got {self.activation_bytes!r}")

    @property
    def E(self) -> int:
        return self.d_model

    @property
    def F(self) -> int:
        return self.d_ff

    def with_weights(self, weight_bytes: int) -> "ModelConfig":
        return dataclasses.replace(self, weight_bytes=weight_bytes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["attention"] = self.attention.value
        d["block"] = self.block.value
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown model keys: {', '.join(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class Workload:
    """``batch`` sequences of ``input_len`` prompt tokens, each generating ``gen_len`` tokens."""

    batch: int
    input_len: int
    gen_len: int

    def __post_init__(self) -> None:
        for name in ("batch", "input_len", "gen_len"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{name} must be an integer, got {value!r}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.input_len < 0 or self.gen_len < 0:
            raise ValueError("input_len and gen_len must be nonnegative")
        if self.input_len + self.gen_len < 1:
            raise ValueError("workload is empty: input_len + gen_len must be >= 1")

    def to_dict(self) -> dict[str, int]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Workload":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValueError(f"unknown workload keys: {', '.join(unknown)}")
        missing = sorted(known - set(data))
        if missing:
            raise ValueError(f"missing workload keys: {', '.join(missing)}")
        return cls(**data)


def matmul_flops_per_token(model: ModelConfig) -> float:
    """Forward-pass matmul FLOPs per token: one multiply-add per parameter."""
    return 2.0 * model.n_params


def attention_flops(model: ModelConfig, batch: int, q_len: int, kv_len: int) -> float:
    """FLOPs of ``QK^T`` plus the attention-weighted sum of ``V``, all layers."""
    if q_len < 0 or kv_len < 0:
        raise ValueError("sequence lengths must be nonnegative")
    return 4.0 * batch * q_len * kv_len * model.n_heads * model.d_head * model.n_layers


def kv_bytes_per_token_per_layer(model: ModelConfig) -> int:
    kv_heads = model.n_heads if model.attention is Attention.MULTIHEAD else 1
    return 2 * kv_heads * model.d_head * model.activation_bytes


def kv_cache_bytes(model: ModelConfig, batch: int, context_len: int) -> int:
    return kv_bytes_per_token_per_layer(model) * model.n_layers * batch * context_len


def weight_bytes_total(model: ModelConfig) -> float:
    return model.n_params * model.weight_bytes


PRESETS: dict[str, ModelConfig] = {
    m.name: m
    for m in (
        ModelConfig("palm-8b", 8.63e9, 32, 4096, 16384, 16, 256),
        ModelConfig("palm-62b", 62.5e9, 64, 8192, 32768, 32, 256),
        ModelConfig("palm-540b", 540e9, 118, 18432, 73728, 48, 256),
        # 48 heads padded to 64 for partitioning; adds 18B parameters.
        ModelConfig("palm-540b-padded", 558e9, 118, 18432, 73728, 64, 256),
        # Same attention parameter count as the padded model, with d_head halved.
        ModelConfig("palm-540b-multihead", 558e9, 118, 18432, 73728, 64, 128, Attention.MULTIHEAD),
        ModelConfig("mtnlg-530b", 530e9, 105, 20480, 81920, 128, 160, Attention.MULTIHEAD, Block.SERIAL),
        # The "3TB KV cache" example: H * d_head = 6144.
        ModelConfig("kv-3tb", 540e9, 118, 18432, 73728, 48, 128, Attention.MULTIHEAD),
        # Single synthetic feedforward layer used for the layout-volume comparison.
        ModelConfig("fig4", 2.0 * 16384 * 65536, 1, 16384, 65536, 128, 128),
    )
}

ALIASES = {"palm-540b-unpadded": "palm-540b", "megatron-530b": "mtnlg-530b"}


def get_preset(name: str) -> ModelConfig:
    key = ALIASES.get(name, name)
    try:
        return PRESETS[key]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise KeyError(f"unknown preset {name!r}; known presets: {known}") from None
