"""Analytical cost model and layout planner for partitioned Transformer inference on 3D tori."""

from .attention_layouts import AttnSharding, kv_bytes_per_chip, kv_load_time, max_context
from .collectives import TPU_V4, ChipSpec, Torus
from .cost_engine import CostBreakdown, LayoutPlan, OverlapPolicy, cost_per_token, mfu, phase_latency
from .ffn_layouts import FfnKind, FfnLayout, best_ffn_layout, ws2d_optimal_split
from .model import Attention, Block, ModelConfig, Phase, Workload, get_preset
from .optimizer import ParetoPoint, SweepGrid, estimate, pareto_frontier, plan, sweep

__version__ = "0.1.0"

__all__ = [
    "Attention", "AttnSharding", "Block", "ChipSpec", "CostBreakdown", "FfnKind", "FfnLayout", "LayoutPlan",
    "ModelConfig", "OverlapPolicy", "ParetoPoint", "Phase", "SweepGrid", "TPU_V4", "Torus", "Workload",
    "best_ffn_layout", "cost_per_token", "estimate", "get_preset", "kv_bytes_per_chip", "kv_load_time",
    "max_context", "mfu", "pareto_frontier", "phase_latency", "plan", "sweep", "ws2d_optimal_split",
]
