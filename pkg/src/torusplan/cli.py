"""Command-line interface.

Subcommands: ``estimate``, ``sweep``, ``pareto``, ``max-context``,
``crossover`` and ``compare``. Machine output is JSON or CSV in SI units and is
byte-identical for identical inputs.

Exit codes: 0 success, 2 usage error, 3 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from typing import Any, Sequence

from . import __version__
from .attention_layouts import AttnSharding, capacity_table
from .collectives import Torus
from .config import ConfigError, RunConfig, load_config
from .ffn_layouts import crossovers, layout_sweep
from .model import Attention, ModelConfig, Phase, Workload, get_preset
from .optimizer import (
    SweepGrid,
    SweepRecord,
    estimate,
    frontier_from_records,
    pareto_frontier,
    records_to_csv,
    sweep,
    torus_shapes,
)

EXIT_USAGE = 2
EXIT_CONFIG = 3

WEIGHT_NAMES = {"bf16": 2, "bfloat16": 2, "int8": 1}
# Presets whose natural torus is fixed.
PRESET_TORUS = {"fig4": Torus(4, 4, 4)}
MULTIHEAD_VARIANT = {"palm-540b": "palm-540b-multihead", "palm-540b-padded": "palm-540b-multihead"}
FIGURE_MODELS = ("palm-8b", "palm-62b", "palm-540b-padded")
FIGURE_CHIPS = (1, 2, 4, 8, 16, 32, 64, 128, 256)
FIGURES = ("fig1-left", "fig1-right", "figB1", "figC1")


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _weights(text: str) -> list[int]:
    out = []
    for name in text.split(","):
        name = name.strip().lower()
        if name not in WEIGHT_NAMES:
            raise argparse.ArgumentTypeError(f"unknown weight format {name!r} (use bf16 or int8)")
        out.append(WEIGHT_NAMES[name])
    return out


def _torus(text: str) -> Torus:
    try:
        return Torus.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--output", choices=("json", "csv"), default=None, help="output format")
    common.add_argument("--preset", help="model preset name (comma-separated where several are allowed)")
    common.add_argument("--chips", type=_int_list, help="chip count(s)")
    common.add_argument("--torus", type=_torus, help="torus shape, e.g. 4x4x4")
    common.add_argument("--batch", type=_int_list, help="batch size(s)")
    common.add_argument("--input-len", type=int, help="prompt tokens per sequence")
    common.add_argument("--gen-len", type=int, help="generated tokens per sequence")
    common.add_argument("--weights", type=_weights, help="weight format(s): bf16, int8")
    common.add_argument("--alpha", type=float, help="fraction of communication hidden under compute")
    common.add_argument("--attention-flops", action="store_true", help="count attention matmul FLOPs")

    parser = argparse.ArgumentParser(prog="torusplan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("estimate", parents=[common], help="cost breakdown of one configuration")

    for name, text in (("sweep", "evaluate a configuration grid"), ("pareto", "Pareto frontier of a sweep")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--phases", default="prefill,decode", help="phases to evaluate")
        p.add_argument("--shapes", choices=("all", "physical", "balanced"), default="all",
                       help="torus shapes per chip count")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        if name == "pareto":
            p.add_argument("--figure", choices=FIGURES, help="emit a named figure series instead")

    p = sub.add_parser("max-context", parents=[common], help="maximum context per attention variant")
    p.add_argument("--reserve", type=float, default=0.3, help="HBM fraction reserved for the KV cache")
    p.add_argument("--multihead-preset", help="multihead comparison model")

    p = sub.add_parser("crossover", parents=[common], help="feedforward layout regimes by token count")
    p.add_argument("--min-log2", type=int, default=11)
    p.add_argument("--max-log2", type=int, default=20)
    p.add_argument("--per-octave", type=int, default=1, help="grid points per doubling of tokens")

    p = sub.add_parser("compare", parents=[common], help="side-by-side of presets at equal workload")
    return parser


# -- resolution of flags and config -----------------------------------------


def _presets(args: argparse.Namespace, cfg: RunConfig, default: str | None = None) -> list[ModelConfig]:
    if args.preset:
        out = []
        for name in args.preset.split(","):
            try:
                out.append(get_preset(name.strip()))
            except KeyError as exc:
                raise UsageError(f"--preset: {exc.args[0]}") from None
        return out
    if cfg.model is not None:
        return [cfg.model]
    if default is not None:
        return [get_preset(default)]
    raise UsageError("a model is required: pass --preset or a config with 'model'")


def _tori(args: argparse.Namespace, cfg: RunConfig, model: ModelConfig) -> list[Torus]:
    if args.torus is not None:
        if args.chips and args.chips != [args.torus.n_chips]:
            raise UsageError(f"--torus {args.torus} does not have {args.chips[0]} chips (--chips)")
        return [args.torus]
    if args.chips:
        return [torus_shapes(n, "balanced")[0] for n in args.chips]
    if cfg.torus is not None:
        return [cfg.torus]
    if model.name in PRESET_TORUS:
        return [PRESET_TORUS[model.name]]
    raise UsageError("a torus is required: pass --chips, --torus or a config with 'torus'")


def _workload(args: argparse.Namespace, cfg: RunConfig, batch: int | None = None) -> Workload:
    base = cfg.workload
    b = batch if batch is not None else (args.batch[0] if args.batch else (base.batch if base else None))
    li = args.input_len if args.input_len is not None else (base.input_len if base else None)
    lg = args.gen_len if args.gen_len is not None else (base.gen_len if base else None)
    if b is None or (li is None and lg is None):
        raise ConfigError("empty workload: give --batch and --input-len/--gen-len or a config 'workload'")
    return Workload(b, li or 0, lg or 0)


def _options(args: argparse.Namespace, cfg: RunConfig) -> tuple[Any, bool]:
    from .cost_engine import OverlapPolicy

    overlap = OverlapPolicy(args.alpha) if args.alpha is not None else cfg.overlap
    return overlap, args.attention_flops or cfg.include_attention_flops


def _with_weights(args: argparse.Namespace, model: ModelConfig) -> list[ModelConfig]:
    return [model.with_weights(w) for w in args.weights] if args.weights else [model]


# -- output -------------------------------------------------------------------


def _dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _dump_csv(rows: Sequence[dict[str, Any]], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _records_out(records: Sequence[SweepRecord], fmt: str) -> str:
    if fmt == "csv":
        return records_to_csv(records)
    return _dump_json([dataclasses.asdict(r) | {"phase": r.phase.value} for r in records])


# -- commands -----------------------------------------------------------------


def cmd_estimate(args: argparse.Namespace, cfg: RunConfig) -> str:
    model = _presets(args, cfg)[0]
    if args.weights:
        model = model.with_weights(args.weights[0])
    torus = _tori(args, cfg, model)[0]
    workload = _workload(args, cfg)
    overlap, attn_flops = _options(args, cfg)
    result = estimate(model, cfg.chip, torus, workload, overlap, attn_flops)
    if args.output == "csv":
        return records_to_csv([SweepRecord.build(model, torus, workload, p, c) for p, c in result.values()])
    phases = {}
    for phase, (p, c) in result.items():
        phases[phase.value] = {
            "plan": {"ffn_layout": p.ffn.label, "attn_sharding": AttnSharding(p.attn).value},
            "breakdown": c.to_dict(),
        }
    return _dump_json({
        "model": model.to_dict(),
        "chip": dataclasses.asdict(cfg.chip),
        "torus": {"x": torus.x, "y": torus.y, "z": torus.z},
        "workload": workload.to_dict(),
        "options": {"alpha": overlap.alpha, "include_attention_flops": attn_flops},
        "phases": phases,
    })


def _grid(args: argparse.Namespace, cfg: RunConfig) -> SweepGrid:
    models = _presets(args, cfg)
    try:
        phases = tuple(Phase(p.strip()) for p in args.phases.split(","))
    except ValueError:
        raise UsageError(f"--phases: expected prefill and/or decode, got {args.phases!r}") from None
    base = cfg.workload
    batches = args.batch or ([base.batch] if base else None)
    if not batches:
        raise ConfigError("empty workload: give --batch or a config 'workload'")
    if args.torus is not None:
        chip_counts, tori = [args.torus.n_chips], {args.torus.n_chips: [args.torus]}
    elif args.chips:
        chip_counts, tori = args.chips, {}
    elif cfg.torus is not None:
        chip_counts, tori = [cfg.torus.n_chips], {cfg.torus.n_chips: [cfg.torus]}
    else:
        raise UsageError("sweeps need --chips, --torus or a config 'torus'")
    overlap, attn_flops = _options(args, cfg)
    input_len = args.input_len if args.input_len is not None else (base.input_len if base else 2048)
    gen_len = args.gen_len if args.gen_len is not None else (base.gen_len if base else 64)
    if Phase.PREFILL in phases and input_len < 1:
        raise ConfigError("empty workload: prefill needs --input-len >= 1")
    if Phase.DECODE in phases and gen_len < 1:
        raise ConfigError("empty workload: decode needs --gen-len >= 1")
    return SweepGrid(
        models=models, chip_counts=chip_counts, batches=batches,
        weight_bytes=tuple(args.weights or (models[0].weight_bytes,)), phases=phases,
        input_len=input_len, gen_len=gen_len, shapes=args.shapes, chip=cfg.chip, overlap=overlap,
        include_attention_flops=attn_flops, tori=tori,
    )


def cmd_sweep(args: argparse.Namespace, cfg: RunConfig) -> str:
    return _records_out(sweep(_grid(args, cfg), workers=args.workers), args.output or "csv")


FIGURE_COLUMNS = ("series", "phase", "latency_s", "cost_chipsec_per_token", "mfu", "n_chips", "X", "Y", "Z",
                  "batch", "input_len", "weight_bytes", "ffn_layout", "attn_sharding")


def figure_series(name: str, chip, workers: int = 1) -> list[dict[str, Any]]:
    """Per-model frontier points for one of the named figures."""
    models = [get_preset(m) for m in FIGURE_MODELS]
    batches = [2**k for k in range(11)]
    if name == "fig1-left":
        specs = [(Phase.DECODE, batches, (2048,))]
    elif name == "fig1-right":
        specs = [(Phase.PREFILL, batches, (2048,))]
    elif name == "figC1":
        specs = [(Phase.DECODE, batches, (2048,)), (Phase.PREFILL, batches, (2048,))]
    elif name == "figB1":
        specs = [(Phase.PREFILL, [1], tuple(2**k for k in range(5, 11)))]
    else:
        raise UsageError(f"--figure: unknown figure {name!r}")
    rows = []
    for phase, bs, lengths in specs:
        for model in models:
            records = []
            for length in lengths:
                grid = SweepGrid(models=[model], chip_counts=FIGURE_CHIPS, batches=bs, weight_bytes=(1, 2),
                                 phases=(phase,), input_len=length, gen_len=64, shapes="balanced", chip=chip)
                records.extend(sweep(grid, workers=workers))
            if name == "figC1":
                front = pareto_frontier([r for r in records if r.feasible], key=lambda r: (r.latency_s, -r.mfu))
            else:
                front = frontier_from_records(records)
            for r in front:
                rows.append({
                    "series": model.name, "phase": phase.value, "latency_s": r.latency_s,
                    "cost_chipsec_per_token": r.cost_chipsec_per_token, "mfu": r.mfu, "n_chips": r.n_chips,
                    "X": r.X, "Y": r.Y, "Z": r.Z, "batch": r.batch, "input_len": r.input_len,
                    "weight_bytes": r.weight_bytes, "ffn_layout": r.ffn_layout, "attn_sharding": r.attn_sharding,
                })
    return rows


def cmd_pareto(args: argparse.Namespace, cfg: RunConfig) -> str:
    if args.figure:
        rows = figure_series(args.figure, cfg.chip, args.workers)
        if args.output == "json":
            return _dump_json({"figure": args.figure, "points": rows})
        return _dump_csv(rows, FIGURE_COLUMNS)
    records = sweep(_grid(args, cfg), workers=args.workers)
    front = []
    for phase in dict.fromkeys(r.phase for r in records):
        front.extend(frontier_from_records(r for r in records if r.phase is phase))
    return _records_out(front, args.output or "csv")


def _variants(args: argparse.Namespace, model: ModelConfig) -> tuple[ModelConfig, ModelConfig]:
    """(multihead, multiquery) pair to compare."""
    if args.multihead_preset:
        try:
            mh = get_preset(args.multihead_preset)
        except KeyError as exc:
            raise UsageError(f"--multihead-preset: {exc.args[0]}") from None
        if mh.attention is not Attention.MULTIHEAD:
            raise UsageError(f"--multihead-preset: {mh.name} is not a multihead model")
    elif model.attention is Attention.MULTIHEAD:
        mh = model
    elif model.name in MULTIHEAD_VARIANT:
        mh = get_preset(MULTIHEAD_VARIANT[model.name])
    else:
        # keep attention parameters fixed: one KV head of d_head becomes H heads of d_head / 2
        mh = dataclasses.replace(model, name=f"{model.name}-multihead", attention=Attention.MULTIHEAD,
                                 d_head=max(1, model.d_head // 2))
    if model.attention is Attention.MULTIQUERY:
        mq = model
    else:
        mq = dataclasses.replace(model, name=f"{model.name}-multiquery", attention=Attention.MULTIQUERY,
                                 d_head=model.d_head * 2)
    return mh, mq


def cmd_max_context(args: argparse.Namespace, cfg: RunConfig) -> str:
    model = _presets(args, cfg)[0]
    torus = _tori(args, cfg, model)[0]
    batches = args.batch or [128, 512]
    if not 0 < args.reserve < 1:
        raise UsageError(f"--reserve must be in (0, 1), got {args.reserve}")
    mh, mq = _variants(args, model)
    table = capacity_table(mh, mq, cfg.chip, torus, batches, args.reserve)
    rows = []
    for row in table:
        for b in batches:
            rows.append({"variant": row.variant, "model": row.model, "d_head": row.d_head,
                         "attn_sharding": row.sharding.value, "batch": b, "max_context": row.max_context[b]})
    if args.output == "csv":
        return _dump_csv(rows, ("variant", "model", "d_head", "attn_sharding", "batch", "max_context"))
    by = {r.variant: r.max_context for r in table}
    ratios = {
        str(b): {
            "optimized_vs_baseline_multiquery": by["optimized-multiquery"][b] / max(by["baseline-multiquery"][b], 1),
            "optimized_vs_multihead": by["optimized-multiquery"][b] / max(by["multihead"][b], 1),
        }
        for b in batches
    }
    return _dump_json({
        "torus": {"x": torus.x, "y": torus.y, "z": torus.z},
        "hbm_bytes": cfg.chip.hbm_bytes,
        "reserve_frac": args.reserve,
        "rows": rows,
        "ratios": ratios,
    })


def cmd_crossover(args: argparse.Namespace, cfg: RunConfig) -> str:
    model = _presets(args, cfg, default="fig4")[0]
    if args.weights:
        model = model.with_weights(args.weights[0])
    torus = _tori(args, cfg, model)[0]
    if args.per_octave < 1 or args.min_log2 > args.max_log2:
        raise UsageError("--per-octave must be >= 1 and --min-log2 <= --max-log2")
    n_steps = (args.max_log2 - args.min_log2) * args.per_octave
    grid = sorted({round(2 ** (args.min_log2 + i / args.per_octave)) for i in range(n_steps + 1)})
    rows = layout_sweep(model, cfg.chip, torus, grid)
    if args.output == "csv":
        kinds = list(rows[0].times)
        out = []
        for r in rows:
            rec: dict[str, Any] = {"tokens": r.tokens, "best": r.best.kind.value}
            rec.update({f"time_{k}": v for k, v in r.times.items()})
            rec.update({f"volume_{k}": v for k, v in r.volumes.items()})
            out.append(rec)
        cols = ["tokens", "best"] + [f"time_{k}" for k in kinds] + [f"volume_{k}" for k in kinds]
        return _dump_csv(out, cols)
    return _dump_json({
        "model": model.name,
        "torus": {"x": torus.x, "y": torus.y, "z": torus.z},
        "regimes": [{"from_tokens": t, "layout": k} for t, k in crossovers(rows)],
        "points": [
            {"tokens": r.tokens, "best": r.best.label, "time_s": r.times, "volume_bytes": r.volumes} for r in rows
        ],
    })


def cmd_compare(args: argparse.Namespace, cfg: RunConfig) -> str:
    models = _presets(args, cfg)
    if len(models) < 2:
        raise UsageError("--preset: compare needs at least two comma-separated presets")
    batches = args.batch or ([cfg.workload.batch] if cfg.workload else [4, 8, 16, 32, 64, 128, 256, 512, 1024])
    overlap, attn_flops = _options(args, cfg)
    rows = []
    for b in batches:
        for base in models:
            for model in _with_weights(args, base):
                torus = _tori(args, cfg, model)[0]
                w = _workload(args, cfg, batch=b)
                res = estimate(model, cfg.chip, torus, w, overlap, attn_flops)
                pre = res.get(Phase.PREFILL)
                dec = res.get(Phase.DECODE)
                pre_s = pre[1].total_s if pre else 0.0
                dec_s = dec[1].total_s if dec else 0.0
                total = pre_s + dec_s
                tokens = b * (w.input_len + w.gen_len)
                flops = 2.0 * model.n_params * tokens
                feasible = all(c.feasible for _, c in res.values())
                rows.append({
                    "model": model.name, "weight_bytes": model.weight_bytes, "n_chips": torus.n_chips,
                    "batch": b, "input_len": w.input_len, "gen_len": w.gen_len,
                    "prefill_s": pre_s, "prefill_mfu": pre[1].mfu if pre else 0.0,
                    "decode_s": dec_s, "decode_mfu": dec[1].mfu if dec else 0.0,
                    "total_s": total, "total_mfu": flops / (total * torus.n_chips * cfg.chip.peak_flops),
                    "feasible": feasible,
                })
    if args.output == "csv":
        return _dump_csv(rows, list(rows[0]))
    return _dump_json(rows)


COMMANDS = {
    "estimate": cmd_estimate,
    "sweep": cmd_sweep,
    "pareto": cmd_pareto,
    "max-context": cmd_max_context,
    "crossover": cmd_crossover,
    "compare": cmd_compare,
}


def run(argv: Sequence[str] | None = None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        out = COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(f"torusplan {args.command}: error: {exc}", file=stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"torusplan {args.command}: config error: {exc}", file=stderr)
        return EXIT_CONFIG
    stdout.write(out)
    return 0


def main() -> None:
    sys.exit(run())
