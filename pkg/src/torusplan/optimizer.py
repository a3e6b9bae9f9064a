"""Layout planning, configuration sweeps and Pareto frontiers."""

from __future__ import annotations

import csv
import dataclasses
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from operator import attrgetter
from typing import Any, Callable, Iterable, Sequence

from .attention_layouts import AttnSharding
from .collectives import TPU_V4, ChipSpec, Torus
from .cost_engine import CostBreakdown, LayoutPlan, OverlapPolicy, phase_latency
from .ffn_layouts import FfnKind, best_ffn_layout, divisors, ws2d_layout
from .model import Attention, ModelConfig, Phase, Workload, get_preset


def plan(model: ModelConfig, chip: ChipSpec, torus: Torus, workload: Workload) -> dict[Phase, LayoutPlan]:
    """Pick layouts for each phase the workload has.

    Decode keeps 2D weight-stationary weights and shards multiquery attention
    over batch. Prefill picks its feedforward layout by token count; attention
    stays head sharded unless the XYZ weight-gathered layout has already sharded
    the batch over every chip.
    """
    plans: dict[Phase, LayoutPlan] = {}
    mq = model.attention is Attention.MULTIQUERY
    if workload.input_len > 0:
        tokens = workload.batch * workload.input_len
        ffn, _ = best_ffn_layout(Phase.PREFILL, tokens, model, chip, torus)
        attn = AttnSharding.BATCH if mq and ffn.kind is FfnKind.WG_XYZ else AttnSharding.HEAD
        plans[Phase.PREFILL] = LayoutPlan(ffn, attn)
    if workload.gen_len > 0:
        attn = AttnSharding.BATCH if mq else AttnSharding.HEAD
        plans[Phase.DECODE] = LayoutPlan(ws2d_layout(model, torus), attn)
    return plans


def estimate(
    model: ModelConfig,
    chip: ChipSpec,
    torus: Torus,
    workload: Workload,
    overlap: OverlapPolicy = OverlapPolicy(),
    include_attention_flops: bool = False,
) -> dict[Phase, tuple[LayoutPlan, CostBreakdown]]:
    out = {}
    for phase, p in plan(model, chip, torus, workload).items():
        out[phase] = (p, phase_latency(model, chip, torus, workload, phase, p, overlap, include_attention_flops))
    return out


def torus_shapes(n_chips: int, mode: str = "all") -> list[Torus]:
    """Torus shapes with ``n_chips`` chips.

    ``all`` is every ordered factorization, ``physical`` keeps those with every
    axis at least 4, ``balanced`` keeps the single most cubic shape (sorted
    ascending, e.g. ``4x4x8``).
    """
    shapes = [
        Torus(x, y, n_chips // (x * y))
        for x in divisors(n_chips)
        for y in divisors(n_chips // x)
    ]
    if mode == "all":
        return shapes
    if mode == "physical":
        return [t for t in shapes if min(t.shape) >= 4]
    if mode == "balanced":
        return [min(
            (t for t in shapes if t.x <= t.y <= t.z),
            key=lambda t: (t.z - t.x, t.z),
        )]
    raise ValueError(f"unknown torus shape mode {mode!r}")


@dataclass(frozen=True)
class SweepGrid:
    models: Sequence[ModelConfig]
    chip_counts: Sequence[int]
    batches: Sequence[int]
    weight_bytes: Sequence[int] = (2,)
    phases: Sequence[Phase] = (Phase.PREFILL, Phase.DECODE)
    input_len: int = 2048
    gen_len: int = 64
    shapes: str = "all"
    chip: ChipSpec = TPU_V4
    overlap: OverlapPolicy = OverlapPolicy()
    include_attention_flops: bool = False
    tori: dict[int, Sequence[Torus]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.models and self.chip_counts and self.batches and self.weight_bytes and self.phases):
            raise ValueError("sweep grid has an empty axis")
        for n, shapes in self.tori.items():
            for t in shapes:
                if t.n_chips != n:
                    raise ValueError(f"torus {t} does not have {n} chips")

    def shapes_for(self, n_chips: int) -> list[Torus]:
        if n_chips in self.tori:
            return list(self.tori[n_chips])
        return torus_shapes(n_chips, self.shapes)

    def cases(self) -> list[tuple[ModelConfig, Torus, Workload, Phase]]:
        out = []
        for base in self.models:
            for wb in self.weight_bytes:
                model = base.with_weights(wb)
                for n in self.chip_counts:
                    for torus in self.shapes_for(n):
                        for b in self.batches:
                            for phase in self.phases:
                                phase = Phase(phase)
                                if phase is Phase.PREFILL:
                                    w = Workload(b, self.input_len, 0)
                                else:
                                    w = Workload(b, self.input_len, self.gen_len)
                                out.append((model, torus, w, phase))
        return out


CSV_COLUMNS = (
    "model", "phase", "n_chips", "X", "Y", "Z", "batch", "weight_bytes", "ffn_layout", "attn_sharding",
    "compute_s", "weight_load_s", "kv_load_s", "comm_s", "total_s", "mfu", "cost_chipsec_per_token",
    "feasible", "input_len", "gen_len", "latency_s",
)


@dataclass(frozen=True)
class SweepRecord:
    """One evaluated (configuration, phase) pair, flat enough for a CSV row."""

    model: str
    phase: Phase
    n_chips: int
    X: int
    Y: int
    Z: int
    batch: int
    weight_bytes: int
    ffn_layout: str
    attn_sharding: str
    compute_s: float
    weight_load_s: float
    kv_load_s: float
    comm_s: float
    total_s: float
    mfu: float
    cost_chipsec_per_token: float
    feasible: bool
    input_len: int
    gen_len: int
    latency_s: float

    @classmethod
    def build(cls, model: ModelConfig, torus: Torus, w: Workload, p: LayoutPlan, c: CostBreakdown) -> "SweepRecord":
        return cls(
            model=model.name, phase=c.phase, n_chips=torus.n_chips, X=torus.x, Y=torus.y, Z=torus.z,
            batch=w.batch, weight_bytes=model.weight_bytes, ffn_layout=p.ffn.label,
            attn_sharding=AttnSharding(p.attn).value, compute_s=c.compute_s, weight_load_s=c.weight_load_s,
            kv_load_s=c.kv_load_s, comm_s=c.comm_s, total_s=c.total_s, mfu=c.mfu,
            cost_chipsec_per_token=c.cost_chipsec_per_token, feasible=c.feasible,
            input_len=w.input_len, gen_len=w.gen_len, latency_s=c.latency_s,
        )

    def to_row(self) -> dict[str, str]:
        row = {}
        for name in CSV_COLUMNS:
            value = getattr(self, name)
            if isinstance(value, Phase):
                value = value.value
            elif isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            row[name] = str(value)
        return row

    @classmethod
    def from_row(cls, row: dict[str, str]) -> "SweepRecord":
        missing = [c for c in CSV_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"CSV row missing columns: {', '.join(missing)}")
        kwargs: dict[str, Any] = {}
        for f in dataclasses.fields(cls):
            raw = row[f.name]
            if f.name == "phase":
                kwargs[f.name] = Phase(raw)
            elif f.name == "feasible":
                if raw not in ("true", "false"):
                    raise ValueError(f"feasible must be true/false, got {raw!r}")
                kwargs[f.name] = raw == "true"
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


def _evaluate(case: tuple[ModelConfig, Torus, Workload, Phase], chip: ChipSpec, overlap: OverlapPolicy,
              attn_flops: bool) -> SweepRecord:
    model, torus, w, phase = case
    p = plan(model, chip, torus, w)[phase]
    c = phase_latency(model, chip, torus, w, phase, p, overlap, attn_flops)
    return SweepRecord.build(model, torus, w, p, c)


def sweep(grid: SweepGrid, workers: int = 1) -> list[SweepRecord]:
    """Evaluate every grid case, in grid order. Infeasible cases are kept and flagged."""
    cases = grid.cases()
    args = (grid.chip, grid.overlap, grid.include_attention_flops)
    if workers <= 1:
        return [_evaluate(c, *args) for c in cases]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        n = len(cases)
        return list(pool.map(_evaluate, cases, *([a] * n for a in args), chunksize=64))


@dataclass(frozen=True)
class ParetoPoint:
    latency: float
    cost: float
    mfu: float = 0.0
    config: Any = None

    @classmethod
    def from_record(cls, r: SweepRecord) -> "ParetoPoint":
        return cls(r.latency_s, r.cost_chipsec_per_token, r.mfu, r)


def pareto_frontier(points: Iterable[Any], key: Callable[[Any], tuple[float, float]] | None = None) -> list[Any]:
    """Points not dominated in (latency, cost), both minimized, ordered by latency.

    A point is dominated when another is no worse in both coordinates and
    strictly better in one; exact duplicates of a frontier point are kept.
    """
    key = key or attrgetter("latency", "cost")
    pts = sorted(points, key=key)
    front: list[Any] = []
    best_cost = float("inf")
    last: tuple[float, float] | None = None
    for p in pts:
        lat, cost = key(p)
        if cost < best_cost:
            front.append(p)
            best_cost = cost
            last = (lat, cost)
        elif (lat, cost) == last:
            front.append(p)
    return front


def frontier_from_records(records: Iterable[SweepRecord]) -> list[SweepRecord]:
    return pareto_frontier(
        [r for r in records if r.feasible],
        key=lambda r: (r.latency_s, r.cost_chipsec_per_token),
    )


def records_to_csv(records: Iterable[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.to_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    return [SweepRecord.from_row(row) for row in csv.DictReader(io.StringIO(text))]


@dataclass(frozen=True)
class Scenario:
    model: str
    weight_bytes: int
    torus: Torus
    batch: int
    phase: Phase
    input_len: int = 2048
    gen_len: int = 64

    def workload(self) -> Workload:
        if self.phase is Phase.PREFILL:
            return Workload(self.batch, self.input_len, 0)
        return Workload(self.batch, self.input_len, self.gen_len)

    def resolve(self) -> tuple[ModelConfig, Torus, Workload]:
        return get_preset(self.model).with_weights(self.weight_bytes), self.torus, self.workload()


# Low-latency and high-throughput exemplars for PaLM 540B and 62B.
SCENARIOS: dict[str, Scenario] = {
    "palm-540b-low-latency-prefill": Scenario("palm-540b-padded", 1, Torus(4, 4, 4), 1, Phase.PREFILL),
    "palm-540b-low-latency-decode": Scenario("palm-540b-padded", 1, Torus(4, 4, 4), 64, Phase.DECODE),
    "palm-540b-high-throughput-prefill": Scenario("palm-540b-padded", 2, Torus(4, 4, 4), 512, Phase.PREFILL),
    "palm-540b-high-throughput-decode": Scenario("palm-540b-padded", 2, Torus(4, 4, 4), 512, Phase.DECODE),
    "palm-62b-low-latency-prefill": Scenario("palm-62b", 1, Torus(2, 2, 4), 1, Phase.PREFILL),
    "palm-62b-low-latency-decode": Scenario("palm-62b", 1, Torus(2, 2, 4), 32, Phase.DECODE),
    "palm-62b-high-throughput-prefill": Scenario("palm-62b", 2, Torus(2, 4, 4), 512, Phase.PREFILL),
    "palm-62b-high-throughput-decode": Scenario("palm-62b", 2, Torus(2, 2, 2), 512, Phase.DECODE),
}
