import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import stepwise_decode
from strategies import models, tori, workloads
from torusplan.attention_layouts import AttnSharding
from torusplan.collectives import TPU_V4, ChipSpec, Torus
from torusplan.cost_engine import (
    LayoutPlan,
    OverlapPolicy,
    cost_per_token,
    memory_per_chip,
    mfu,
    phase_latency,
    sum_max_linear,
)
from torusplan.ffn_layouts import FfnKind, FfnLayout, ws2d_layout
from torusplan.model import Attention, Block, Phase, Workload, get_preset
from torusplan.optimizer import plan

PALM = get_preset("palm-540b")
PADDED = get_preset("palm-540b-padded")
CUBE = Torus(4, 4, 4)


def decode_plan(model, torus):
    attn = AttnSharding.BATCH if model.attention is Attention.MULTIQUERY else AttnSharding.HEAD
    return LayoutPlan(ws2d_layout(model, torus), attn)


def run_oracle(model, chip, torus, w, p, alpha=0.0, attention_flops=False):
    return stepwise_decode(
        n_params=model.n_params, n_layers=model.n_layers, d_model=model.d_model, d_ff=model.d_ff,
        n_heads=model.n_heads, d_head=model.d_head, multiquery=model.attention is Attention.MULTIQUERY,
        serial=model.block is Block.SERIAL, weight_bytes=model.weight_bytes, act_bytes=model.activation_bytes,
        peak_flops=chip.peak_flops, hbm_bytes=chip.hbm_bytes, hbm_bw=chip.hbm_bw,
        interconnect_bw=chip.interconnect_bw, shape=torus.shape, batch=w.batch, input_len=w.input_len,
        gen_len=w.gen_len, batch_sharded=p.attn is AttnSharding.BATCH, alpha=alpha, attention_flops=attention_flops,
    )


class TestMfuAndCost:
    def test_decode_example(self):
        assert mfu(PALM, 512 * 64, 6.0, 64, TPU_V4) == pytest.approx(0.335, abs=5e-4)

    def test_prefill_example(self):
        assert mfu(PALM, 512 * 2048, 85.2, 64, TPU_V4) == pytest.approx(0.756, abs=1e-3)

    def test_at_peak(self):
        wall = 2 * PALM.n_params * 1000 / (64 * TPU_V4.peak_flops)
        assert mfu(PALM, 1000, wall, 64, TPU_V4) == pytest.approx(1.0, rel=1e-15)

    @pytest.mark.parametrize("wall", [0.0, -1.0])
    def test_nonpositive_wall(self, wall):
        with pytest.raises(ValueError):
            mfu(PALM, 10, wall, 64, TPU_V4)

    def test_cost_examples(self):
        assert cost_per_token(64, 85.2, 1_048_576) == pytest.approx(5.20e-3, rel=1e-3)
        assert cost_per_token(1, 1.0, 1) == 1.0
        with pytest.raises(ValueError):
            cost_per_token(1, 1.0, 0)

    @settings(max_examples=1000)
    @given(models, tori, workloads(), st.floats(0, 1), st.booleans())
    def test_cost_times_mfu_identity(self, model, torus, wp, alpha, attn_flops):
        w, phase = wp
        p = plan(model, TPU_V4, torus, w)[phase]
        c = phase_latency(model, TPU_V4, torus, w, phase, p, OverlapPolicy(alpha), attn_flops)
        target = 2 * model.n_params / TPU_V4.peak_flops
        assert c.cost_chipsec_per_token * c.mfu == pytest.approx(target, rel=1e-12)


class TestBreakdown:
    def test_weight_load_lower_bound_example(self):
        m = PADDED.with_weights(1)
        w = Workload(64, 2048, 1)
        c = phase_latency(m, TPU_V4, CUBE, w, Phase.DECODE, decode_plan(m, CUBE))
        assert c.weight_load_s == pytest.approx(5.58e11 / (64 * 1.2e12), rel=1e-12)
        assert c.weight_load_s == pytest.approx(7.27e-3, rel=1e-3)
        assert c.total_s <= 28.5e-3

    def test_no_comm_no_memory_is_compute(self):
        free_hbm = ChipSpec(275e12, 32 * 2**30, 1e30, 270e9)
        w = Workload(8, 128, 0)
        c = phase_latency(PALM, free_hbm, Torus(1, 1, 1), w, Phase.PREFILL,
                          LayoutPlan(ws2d_layout(PALM, Torus(1, 1, 1)), AttnSharding.HEAD))
        assert c.comm_s == 0
        assert c.total_s == c.compute_s

    def test_serial_doubles_comm(self):
        w = Workload(512, 2048, 64)
        par = dataclasses.replace(PADDED, block=Block.PARALLEL)
        ser = dataclasses.replace(PADDED, block=Block.SERIAL)
        p = decode_plan(par, CUBE)
        a = phase_latency(par, TPU_V4, CUBE, w, Phase.DECODE, p)
        b = phase_latency(ser, TPU_V4, CUBE, w, Phase.DECODE, p)
        assert b.comm_s == 2 * a.comm_s
        assert a.total_s < b.total_s < 2 * a.total_s

    def test_phase_needs_its_tokens(self):
        p = decode_plan(PALM, CUBE)
        with pytest.raises(ValueError):
            phase_latency(PALM, TPU_V4, CUBE, Workload(1, 0, 4), Phase.PREFILL, p)
        with pytest.raises(ValueError):
            phase_latency(PALM, TPU_V4, CUBE, Workload(1, 16, 0), Phase.DECODE, p)

    def test_infeasible_reported_not_raised(self):
        w = Workload(1, 16, 1)
        c = phase_latency(PALM, TPU_V4, Torus(1, 1, 1), w, Phase.DECODE, decode_plan(PALM, Torus(1, 1, 1)))
        assert not c.feasible and c.total_s > 0

    def test_to_dict_is_si_plain(self):
        c = phase_latency(PALM, TPU_V4, CUBE, Workload(4, 16, 2), Phase.DECODE, decode_plan(PALM, CUBE))
        d = c.to_dict()
        assert d["phase"] == "decode" and d["steps"] == 2 and isinstance(d["total_s"], float)

    @settings(max_examples=1000)
    @given(models, tori, workloads(), st.booleans())
    def test_total_bounds_components(self, model, torus, wp, attn_flops):
        w, phase = wp
        p = plan(model, TPU_V4, torus, w)[phase]
        c = phase_latency(model, TPU_V4, torus, w, phase, p, include_attention_flops=attn_flops)
        assert c.total_s >= max(c.compute_s, c.weight_load_s + c.kv_load_s) * (1 - 1e-12)
        # per-step maxima summed over decode steps can exceed the max of the sums, never the plain sum
        assert c.total_s <= (c.compute_s + c.weight_load_s + c.kv_load_s + c.comm_s) * (1 + 1e-12)
        assert 0 < c.mfu <= 1 + 1e-12

    @settings(max_examples=1000)
    @given(models, tori, workloads(), st.floats(0, 1), st.floats(0, 1))
    def test_alpha_monotone(self, model, torus, wp, a1, a2):
        w, phase = wp
        lo, hi = sorted((a1, a2))
        p = plan(model, TPU_V4, torus, w)[phase]
        t_lo = phase_latency(model, TPU_V4, torus, w, phase, p, OverlapPolicy(lo)).total_s
        t_hi = phase_latency(model, TPU_V4, torus, w, phase, p, OverlapPolicy(hi)).total_s
        assert t_hi <= t_lo

    @settings(max_examples=1000)
    @given(models, tori, workloads(), st.floats(1e9, 1e13), st.floats(1e9, 1e13))
    def test_bandwidth_monotone(self, model, torus, wp, b1, b2):
        w, phase = wp
        lo, hi = sorted((b1, b2))
        slow = dataclasses.replace(TPU_V4, interconnect_bw=lo)
        fast = dataclasses.replace(TPU_V4, interconnect_bw=hi)
        p = plan(model, TPU_V4, torus, w)[phase]
        assert phase_latency(model, fast, torus, w, phase, p).comm_s <= phase_latency(model, slow, torus, w, phase, p).comm_s

    @settings(max_examples=1000)
    @given(st.sampled_from(["palm-8b", "palm-62b", "palm-540b", "mtnlg-530b"]), tori, workloads())
    def test_serial_is_twice_parallel_comm(self, name, torus, wp):
        w, phase = wp
        base = get_preset(name)
        par = dataclasses.replace(base, block=Block.PARALLEL)
        ser = dataclasses.replace(base, block=Block.SERIAL)
        p = plan(par, TPU_V4, torus, w)[phase]
        assert phase_latency(ser, TPU_V4, torus, w, phase, p).comm_s == 2 * phase_latency(par, TPU_V4, torus, w, phase, p).comm_s

    @settings(max_examples=500)
    @given(st.sampled_from(["palm-62b", "palm-540b"]), tori, workloads())
    def test_int8_changes_only_weights(self, name, torus, wp):
        w, phase = wp
        bf16, int8 = get_preset(name), get_preset(name).with_weights(1)
        p = plan(bf16, TPU_V4, torus, w)[phase]
        a = phase_latency(bf16, TPU_V4, torus, w, phase, p)
        b = phase_latency(int8, TPU_V4, torus, w, phase, p)
        assert a.compute_s == b.compute_s and a.kv_load_s == b.kv_load_s
        assert b.weight_load_s == pytest.approx(a.weight_load_s / 2, rel=1e-15)
        if not p.ffn.kind.weight_gathered:
            assert a.comm_s == b.comm_s

    @settings(max_examples=500)
    @given(models, st.sampled_from([FfnKind.WS2D, FfnKind.WG_X, FfnKind.WG_XY, FfnKind.WG_XYZ]),
           tori, st.sampled_from(["x", "y", "z"]), workloads())
    def test_feasibility_monotone_in_chips(self, model, kind, torus, axis, wp):
        w, phase = wp
        bigger = dataclasses.replace(torus, **{axis: getattr(torus, axis) * 2})
        attn = AttnSharding.BATCH if model.attention is Attention.MULTIQUERY else AttnSharding.HEAD

        def layout(t):
            return ws2d_layout(model, t) if kind is FfnKind.WS2D else FfnLayout.weight_gathered(kind, t)

        small = memory_per_chip(model, torus, w, phase, LayoutPlan(layout(torus), attn))
        large = memory_per_chip(model, bigger, w, phase, LayoutPlan(layout(bigger), attn))
        assert large <= small * (1 + 1e-12)


class TestDecodeSummation:
    def test_sum_max_linear_matches_loop(self):
        for a1, b1, a2, b2 in [(0, 1, 5, 0), (5, 0, 0, 1), (1, 1, 1, 1), (3, 2, 1, 2.5), (0, 0, 0, 0)]:
            for steps in (0, 1, 2, 7, 64):
                loop = sum(max(a1 + b1 * t, a2 + b2 * t) for t in range(steps))
                assert sum_max_linear(a1, b1, a2, b2, steps) == pytest.approx(loop, rel=1e-12, abs=1e-300)

    def test_single_step_equals_oracle(self):
        w = Workload(64, 2048, 1)
        p = decode_plan(PADDED, CUBE)
        c = phase_latency(PADDED, TPU_V4, CUBE, w, Phase.DECODE, p)
        total, steps = run_oracle(PADDED, TPU_V4, CUBE, w, p)
        assert len(steps) == 1
        assert c.total_s == pytest.approx(total, rel=1e-12)

    def test_context_growth_monotone(self):
        w = Workload(256, 0, 2)
        p = decode_plan(PALM, CUBE)
        _, steps = run_oracle(PALM, TPU_V4, CUBE, w, p)
        assert steps[1] >= steps[0]

    @settings(max_examples=1000)
    @given(models, tori, workloads(Phase.DECODE), st.floats(0, 1), st.booleans())
    def test_closed_form_matches_stepwise(self, model, torus, wp, alpha, attn_flops):
        w, _ = wp
        p = decode_plan(model, torus)
        c = phase_latency(model, TPU_V4, torus, w, Phase.DECODE, p, OverlapPolicy(alpha), attn_flops)
        total, _ = run_oracle(model, TPU_V4, torus, w, p, alpha, attn_flops)
        assert c.total_s == pytest.approx(total, rel=1e-9)
