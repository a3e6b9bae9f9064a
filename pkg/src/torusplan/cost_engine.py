"""Per-phase latency, MFU and chip-seconds per token for a chosen layout plan.

Within one forward pass, matmul compute and HBM traffic (weights plus KV cache)
are assumed to overlap perfectly, so the pass takes whichever is larger.
Communication is added on top, scaled by ``1 - alpha`` to account for the share
hidden under compute. All predictions are lower bounds: kernel overheads,
layernorms and embedding matmuls are not modeled.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any

from .attention_layouts import AttnSharding, attn_resharding_time, kv_bytes_per_chip
from .collectives import ChipSpec, Torus
from .ffn_layouts import FfnLayout, ffn_layer_time
from .model import Block, ModelConfig, Phase, Workload, attention_flops, matmul_flops_per_token, weight_bytes_total

DEFAULT_SLACK_FRAC = 0.05


@dataclass(frozen=True)
class LayoutPlan:
    ffn: FfnLayout
    attn: AttnSharding

    @property
    def label(self) -> str:
        return f"{self.ffn.label}+{AttnSharding(self.attn).value}"


@dataclass(frozen=True)
class OverlapPolicy:
    """Fraction of communication time hidden under compute or memory time."""

    alpha: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class CostBreakdown:
    """Time components of one phase, in seconds, summed over all its forward passes."""

    phase: Phase
    tokens: int
    steps: int
    compute_s: float
    weight_load_s: float
    kv_load_s: float
    comm_s: float
    total_s: float
    mfu: float
    cost_chipsec_per_token: float
    mem_bytes_per_chip: float
    feasible: bool

    @property
    def latency_s(self) -> float:
        """Total time for prefill, time per generated token for decode."""
        return self.total_s / self.steps

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["phase"] = self.phase.value
        return d


def mfu(model: ModelConfig, tokens: float, wall_s: float, n_chips: int, chip: ChipSpec) -> float:
    """Observed token throughput relative to what peak FLOPS would allow."""
    if not wall_s > 0:
        raise ValueError(f"wall time must be positive, got {wall_s}")
    return (tokens / wall_s) * matmul_flops_per_token(model) / (n_chips * chip.peak_flops)


def cost_per_token(n_chips: int, wall_s: float, tokens: float) -> float:
    if not tokens > 0:
        raise ValueError(f"token count must be positive, got {tokens}")
    return n_chips * wall_s / tokens


def _series(a: float, b: float, lo: int, hi: int) -> float:
    """Sum of ``a + b*t`` for ``t`` in ``[lo, hi)``."""
    n = hi - lo
    if n <= 0:
        return 0.0
    return n * a + b * (lo + hi - 1) * n / 2.0


def sum_max_linear(a1: float, b1: float, a2: float, b2: float, steps: int) -> float:
    """``sum(max(a1 + b1*t, a2 + b2*t) for t in range(steps))`` without the loop."""
    if b1 == b2:
        return _series(max(a1, a2), b1, 0, steps)
    t0 = (a2 - a1) / (b1 - b2)  # lines cross here
    if b1 > b2:
        k = min(max(math.ceil(t0), 0), steps)
        return _series(a2, b2, 0, k) + _series(a1, b1, k, steps)
    k = min(max(math.floor(t0) + 1, 0), steps)
    return _series(a1, b1, 0, k) + _series(a2, b2, k, steps)


def layer_comm_time(
    model: ModelConfig, chip: ChipSpec, torus: Torus, phase: Phase, batch: int, tokens: int, plan: LayoutPlan
) -> float:
    """Communication of one Transformer layer for one forward pass.

    A parallel block fuses the attention projections into the feedforward
    collectives; a serial block issues them separately, doubling the count.
    """
    t = ffn_layer_time(plan.ffn, tokens, model, chip, torus)
    t += attn_resharding_time(model, phase, batch, torus, chip, plan.attn)
    return t * (2 if model.block is Block.SERIAL else 1)


def memory_per_chip(
    model: ModelConfig, torus: Torus, workload: Workload, phase: Phase, plan: LayoutPlan
) -> float:
    """Peak HBM bytes per chip excluding the activation slack."""
    n = torus.n_chips
    mem = weight_bytes_total(model) / n
    ctx = workload.input_len if phase is Phase.PREFILL else workload.input_len + workload.gen_len
    mem += kv_bytes_per_chip(model, plan.attn, workload.batch, ctx, n)
    if plan.ffn.kind.weight_gathered:
        # both gathered matrices of one layer are resident at once
        mem += 2.0 * model.d_model * model.d_ff * plan.ffn.gather / n * model.weight_bytes
    return mem


def phase_latency(
    model: ModelConfig,
    chip: ChipSpec,
    torus: Torus,
    workload: Workload,
    phase: Phase,
    plan: LayoutPlan,
    overlap: OverlapPolicy = OverlapPolicy(),
    include_attention_flops: bool = False,
    slack_frac: float = DEFAULT_SLACK_FRAC,
) -> CostBreakdown:
    """Evaluate one phase of ``workload`` under ``plan``.

    Prefill is a single pass over ``batch * input_len`` tokens. Decode runs
    ``gen_len`` steps of ``batch`` tokens; step ``t`` attends over
    ``input_len + t`` cached tokens, and the sum over steps is taken in closed
    form.

    Infeasible memory does not raise; the breakdown comes back with
    ``feasible=False``.
    """
    phase = Phase(phase)
    n = torus.n_chips
    b = workload.batch
    flop_rate = n * chip.peak_flops
    weight_load = weight_bytes_total(model) / (n * chip.hbm_bw)
    kv_per_token = kv_bytes_per_chip(model, plan.attn, b, 1, n) / chip.hbm_bw
    keep = 1.0 - overlap.alpha

    if phase is Phase.PREFILL:
        if workload.input_len == 0:
            raise ValueError("prefill needs input_len >= 1")
        steps = 1
        tokens = b * workload.input_len
        compute = matmul_flops_per_token(model) * tokens / flop_rate
        if include_attention_flops:
            compute += attention_flops(model, b, workload.input_len, workload.input_len) / flop_rate
        kv_load = kv_per_token * workload.input_len
        comm = model.n_layers * layer_comm_time(model, chip, torus, phase, b, tokens, plan)
        total = max(compute, weight_load + kv_load) + keep * comm
    else:
        if workload.gen_len == 0:
            raise ValueError("decode needs gen_len >= 1")
        steps = workload.gen_len
        tokens = b * steps
        l0 = workload.input_len
        # per-step compute c0 + c1*t and memory m0 + m1*t
        c0 = matmul_flops_per_token(model) * b / flop_rate
        c1 = 0.0
        if include_attention_flops:
            per_ctx = attention_flops(model, b, 1, 1) / flop_rate
            c0 += per_ctx * l0
            c1 = per_ctx
        m0 = weight_load + kv_per_token * l0
        m1 = kv_per_token
        compute = _series(c0, c1, 0, steps)
        kv_load = _series(kv_per_token * l0, kv_per_token, 0, steps)
        comm_step = model.n_layers * layer_comm_time(model, chip, torus, phase, b, b, plan)
        comm = steps * comm_step
        total = sum_max_linear(c0, c1, m0, m1, steps) + keep * comm
        weight_load *= steps

    mem = memory_per_chip(model, torus, workload, phase, plan)
    feasible = mem + slack_frac * chip.hbm_bytes <= chip.hbm_bytes
    return CostBreakdown(
        phase=phase,
        tokens=tokens,
        steps=steps,
        compute_s=compute,
        weight_load_s=weight_load,
        kv_load_s=kv_load,
        comm_s=comm,
        total_s=total,
        mfu=mfu(model, tokens, total, n, chip) if total > 0 else 0.0,
        cost_chipsec_per_token=cost_per_token(n, total, tokens),
        mem_bytes_per_chip=mem,
        feasible=feasible,
    )
