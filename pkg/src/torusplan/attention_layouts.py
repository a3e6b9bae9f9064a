"""Attention sharding: KV-cache footprint per chip, load time, resharding, capacity."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from .collectives import AXES, ChipSpec, Collective, Torus
from .model import Attention, ModelConfig, Phase, kv_bytes_per_token_per_layer, kv_cache_bytes


class AttnSharding(str, Enum):
    HEAD = "head"
    BATCH = "batch"


def kv_divisor(model: ModelConfig, sharding: AttnSharding, n_chips: int) -> int:
    """How many ways the KV cache is split across chips.

    Head sharding of multihead attention stops paying off past ``n_heads`` chips
    (heads get replicated). Head-sharded multiquery attention replicates its
    single KV head on every chip. Batch sharding splits it over all chips.
    """
    sharding = AttnSharding(sharding)
    if sharding is AttnSharding.BATCH:
        if model.attention is not Attention.MULTIQUERY:
            raise ValueError("batch-sharded attention requires multiquery attention")
        return n_chips
    if model.attention is Attention.MULTIHEAD:
        return min(n_chips, model.n_heads)
    return 1


def kv_bytes_per_chip(
    model: ModelConfig, sharding: AttnSharding, batch: int, context_len: int, n_chips: int
) -> float:
    if batch < 0 or context_len < 0:
        raise ValueError("batch and context length must be nonnegative")
    return kv_cache_bytes(model, batch, context_len) / kv_divisor(model, sharding, n_chips)


def kv_load_time(bytes_per_chip: float, hbm_bw: float) -> float:
    """The whole per-chip KV cache is streamed from HBM once per decode step."""
    if not hbm_bw > 0:
        raise ValueError("hbm_bw must be positive")
    return bytes_per_chip / hbm_bw


def qkv_bytes_per_chip(model: ModelConfig, batch: int, n_chips: int) -> float:
    """Per-step Q, K, V activations held by one chip: H query heads plus one K and one V head."""
    return batch * (model.n_heads + 2) * model.d_head * model.activation_bytes / n_chips


def attn_resharding_time(
    model: ModelConfig,
    phase: Phase,
    batch: int,
    torus: Torus,
    chip: ChipSpec,
    sharding: AttnSharding = AttnSharding.BATCH,
) -> float:
    """All-to-all moving Q/K/V from head sharding to batch sharding, per layer per step.

    Only batch-sharded decode pays it; prefill attention is head sharded (or the
    batch is already sharded by a weight-gathered feedforward layout).
    """
    if Phase(phase) is not Phase.DECODE or AttnSharding(sharding) is not AttnSharding.BATCH:
        return 0.0
    n = torus.n_chips
    if n == 1:
        return 0.0
    return Collective("all_to_all", qkv_bytes_per_chip(model, batch, n), AXES).time(chip, torus)


def max_context(
    model: ModelConfig,
    chip: ChipSpec,
    torus: Torus,
    batch: int,
    sharding: AttnSharding,
    reserve_frac: float = 0.3,
) -> int:
    """Longest context whose KV cache fits in ``reserve_frac`` of each chip's HBM.

    Computed in exact rational arithmetic so the result is reproducible and
    ``result + 1`` is guaranteed not to fit.
    """
    if not 0 < reserve_frac < 1:
        raise ValueError(f"reserve_frac must be in (0, 1), got {reserve_frac}")
    if batch < 1:
        raise ValueError("batch must be >= 1")
    budget = Fraction(repr(float(reserve_frac))) * Fraction(chip.hbm_bytes)
    per_token = Fraction(kv_bytes_per_token_per_layer(model) * model.n_layers * batch)
    per_token /= kv_divisor(model, sharding, torus.n_chips)
    return max(0, math.floor(budget / per_token))


def fits_context(
    model: ModelConfig, chip: ChipSpec, torus: Torus, batch: int, sharding: AttnSharding, context_len: int,
    reserve_frac: float = 0.3,
) -> bool:
    budget = Fraction(repr(float(reserve_frac))) * Fraction(chip.hbm_bytes)
    used = Fraction(kv_cache_bytes(model, batch, context_len), kv_divisor(model, sharding, torus.n_chips))
    return used <= budget


@dataclass(frozen=True)
class CapacityRow:
    variant: str
    model: str
    sharding: AttnSharding
    d_head: int
    max_context: dict[int, int]


def capacity_table(
    multihead: ModelConfig,
    multiquery: ModelConfig,
    chip: ChipSpec,
    torus: Torus,
    batches: Sequence[int] = (128, 512),
    reserve_frac: float = 0.3,
) -> list[CapacityRow]:
    """Max context for the multihead, head-sharded multiquery and batch-sharded multiquery variants."""
    variants = [
        ("multihead", multihead, AttnSharding.HEAD),
        ("baseline-multiquery", multiquery, AttnSharding.HEAD),
        ("optimized-multiquery", multiquery, AttnSharding.BATCH),
    ]
    return [
        CapacityRow(
            name,
            m.name,
            sharding,
            m.d_head,
            {b: max_context(m, chip, torus, b, sharding, reserve_frac) for b in batches},
        )
        for name, m, sharding in variants
    ]
