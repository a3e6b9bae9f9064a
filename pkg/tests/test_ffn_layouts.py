import dataclasses
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_best_layout, brute_force_regimes, brute_force_split, layout_time
from torusplan.collectives import TPU_V4, Torus
from torusplan.ffn_layouts import (
    FfnKind,
    FfnLayout,
    best_ffn_layout,
    candidate_layouts,
    crossovers,
    divisors,
    ffn_layer_time,
    ffn_layer_volume,
    layout_sweep,
    wg_closed_form_time,
    wg_comm_terms,
    wg_comm_time,
    wg_optimal_gather,
    ws1d_comm_time,
    ws2d_closed_form_time,
    ws2d_comm_time,
    ws2d_layout,
    ws2d_optimal_split,
)
from torusplan.model import Phase, get_preset

E, F = 18432, 73728
BW = 270e9
FIG4 = get_preset("fig4")
CUBE = Torus(4, 4, 4)


class TestWs1d:
    def test_example(self):
        assert ws1d_comm_time(64, E, 2, BW) == pytest.approx(1.75e-5, rel=2e-3)

    def test_zero_tokens(self):
        assert ws1d_comm_time(0, E, 2, BW) == 0

    def test_exact_factor(self):
        assert ws1d_comm_time(64, E, 2, BW, n_chips=4) == ws1d_comm_time(64, E, 2, BW) * 0.75


class TestWs2d:
    def test_example(self):
        assert ws2d_comm_time(64, E, F, 4, 16, 2, BW) == pytest.approx(8.74e-6, rel=2e-3)

    @pytest.mark.parametrize("n", [4, 16, 64, 256, 1024])
    def test_closed_form_at_optimum(self, n):
        x, yz = ws2d_optimal_split(n, E, 4 * E)
        assert ws2d_comm_time(64, E, 4 * E, x, yz, 2, BW) == pytest.approx(
            ws2d_closed_form_time(64, E, n, 2, BW), rel=1e-12)

    def test_equals_ws1d_at_sixteen(self):
        x, yz = ws2d_optimal_split(16, E, 4 * E)
        assert (x, yz) == (2, 8)
        assert ws2d_comm_time(64, E, 4 * E, x, yz, 2, BW) == ws1d_comm_time(64, E, 2, BW)

    def test_infeasible_split(self):
        with pytest.raises(ValueError):
            ws2d_comm_time(64, E, F, 0, 16, 2, BW)
        with pytest.raises(ValueError):
            ws2d_comm_time(64, E, F, 4, 8, 2, BW, n_chips=64)

    @pytest.mark.parametrize("n,expected", [(64, (4, 16)), (16, (2, 8)), (1, (1, 1))])
    def test_optimal_split_examples(self, n, expected):
        assert ws2d_optimal_split(n, E, 4 * E) == expected

    def test_square_split_when_f_equals_e(self):
        assert ws2d_optimal_split(64, E, E) == (8, 8)

    def test_split_restricted_to_torus_axes(self):
        # on 2x2x16 the extents available to X are 1, 2, 4, 16, 32, 64
        x, yz = ws2d_optimal_split(64, E, E, Torus(2, 2, 16))
        assert x in (4, 16) and x * yz == 64

    @pytest.mark.parametrize("n", [2, 3, 12, 36, 96, 360, 1000])
    def test_split_matches_enumeration(self, n):
        assert ws2d_optimal_split(n, E, F)[0] == brute_force_split(n, E, F)[0]

    def test_divisors(self):
        assert divisors(36) == [1, 2, 3, 4, 6, 9, 12, 18, 36]
        assert divisors(1) == [1]


class TestWeightGathered:
    def test_terms_balance_at_continuous_optimum(self):
        bl, n = 1_048_576, 64
        n_star = wg_optimal_gather(bl, n, F)
        w, a = wg_comm_terms(bl, E, F, n_star, n, 2, 2, BW)
        assert w == pytest.approx(a, rel=1e-12)
        assert w + a == pytest.approx(wg_closed_form_time(bl, E, F, n, 2, BW), rel=1e-12)

    def test_example_evaluates_both_neighbours(self):
        bl, n = 1_048_576, 64
        n_star = wg_optimal_gather(bl, n, F)
        assert n_star == pytest.approx(30.17, abs=0.01)
        t16 = wg_comm_time(bl, E, F, 16, n, 2, 2, BW)
        t64 = wg_comm_time(bl, E, F, 64, n, 2, 2, BW)
        assert t16 < t64
        # hand values: E*(F/2 + BL/8) and E*(2F + BL/32), in units of 2 bytes * 2 / bw
        assert t16 == pytest.approx(4 * E * (F / 2 + bl / 8) / 2 / BW, rel=1e-12)
        assert t64 == pytest.approx(4 * E * (2 * F + bl / 32) / 2 / BW, rel=1e-12)
        assert min(t16, t64) >= wg_closed_form_time(bl, E, F, n, 2, BW)

    def test_invalid_gather(self):
        with pytest.raises(ValueError):
            wg_comm_time(1024, E, F, 0, 64, 2, 2, BW)
        with pytest.raises(ValueError):
            wg_comm_time(1024, E, F, 128, 64, 2, 2, BW)

    def test_doubling_law_continuous(self):
        for bl in (2048, 65536, 1_048_576):
            assert wg_closed_form_time(4 * bl, E, F, 64, 2, BW) == pytest.approx(
                2 * wg_closed_form_time(bl, E, F, 64, 2, BW), rel=1e-12)

    @settings(max_examples=1000)
    @given(st.integers(1, 2**22), st.sampled_from([8, 16, 32, 64, 128, 256, 512]), st.sampled_from([1, 2]))
    def test_unimodal_and_min_adjacent_to_optimum(self, bl, n, wb):
        ns = [2**k for k in range(int(math.log2(n)) + 1)]
        times = [wg_comm_time(bl, E, F, g, n, wb, 2, BW) for g in ns]
        i_min = min(range(len(ns)), key=times.__getitem__)
        assert all(times[i] >= times[i + 1] * (1 - 1e-12) for i in range(i_min))
        assert all(times[i] <= times[i + 1] * (1 + 1e-12) for i in range(i_min, len(ns) - 1))
        # the continuous optimum with unequal byte widths scales by sqrt(act / weight)
        n_star = wg_optimal_gather(bl, n, F) * math.sqrt(2 / wb)
        lo = max([g for g in ns if g <= n_star], default=ns[0])
        hi = min([g for g in ns if g >= n_star], default=ns[-1])
        assert ns[i_min] in (lo, hi) or math.isclose(times[i_min], min(
            wg_comm_time(bl, E, F, lo, n, wb, 2, BW), wg_comm_time(bl, E, F, hi, n, wb, 2, BW)), rel_tol=1e-12)


class TestTorusLayouts:
    def test_layout_labels(self):
        assert ws2d_layout(FIG4, CUBE).label == "WS2D(X=4,YZ=16)"
        assert FfnLayout.weight_gathered(FfnKind.WG_XY, CUBE).label == "WG_XY(N=16)"

    def test_candidates_order(self):
        kinds = [l.kind for l in candidate_layouts(FIG4, CUBE, include_ws1d=True)]
        assert kinds == [FfnKind.WS1D, FfnKind.WS2D, FfnKind.WG_X, FfnKind.WG_XY, FfnKind.WG_XYZ]

    def test_decode_always_ws2d(self):
        for tokens in (1, 512, 2**20):
            layout, _ = best_ffn_layout(Phase.DECODE, tokens, FIG4, TPU_V4, CUBE)
            assert layout.kind is FfnKind.WS2D

    def test_prefill_small_and_large(self):
        assert best_ffn_layout(Phase.PREFILL, 2048, FIG4, TPU_V4, CUBE)[0].kind is FfnKind.WS2D
        assert best_ffn_layout(Phase.PREFILL, 10**6, FIG4, TPU_V4, CUBE)[0].kind.weight_gathered

    def test_volume_reported_alongside_time(self):
        layout = ws2d_layout(FIG4, CUBE)
        assert ffn_layer_volume(layout, 4096, FIG4, CUBE) > 0
        assert ffn_layer_time(layout, 4096, FIG4, TPU_V4, CUBE) > 0

    @pytest.mark.parametrize("kind", ["WS1D", "WS2D", "WG_X", "WG_XY", "WG_XYZ"])
    @pytest.mark.parametrize("shape", [(4, 4, 4), (2, 4, 8), (1, 1, 8), (1, 1, 1), (3, 5, 2)])
    def test_layer_time_matches_exact_oracle(self, kind, shape):
        torus = Torus(*shape)
        layout = next(l for l in candidate_layouts(FIG4, torus, include_ws1d=True) if l.kind.value == kind)
        got = ffn_layer_time(layout, 8192, FIG4, TPU_V4, torus)
        want = float(layout_time(kind, shape, 8192, FIG4.d_model, FIG4.d_ff, 2, 2, TPU_V4.interconnect_bw))
        assert got == pytest.approx(want, rel=1e-12, abs=0)

    @settings(max_examples=300)
    @given(
        st.sampled_from([(4, 4, 4), (2, 4, 8), (2, 2, 4), (1, 4, 4), (8, 8, 4)]),
        st.integers(1, 2**22), st.sampled_from([1, 2]),
    )
    def test_prefill_choice_matches_oracle(self, shape, tokens, wb):
        model = FIG4.with_weights(wb)
        got = best_ffn_layout(Phase.PREFILL, tokens, model, TPU_V4, Torus(*shape))[0].kind.value
        want = brute_force_best_layout(shape, tokens, model.d_model, model.d_ff, 2, wb, TPU_V4.interconnect_bw)
        assert got == want


def test_fig4_regimes_match_oracle():
    grid = [2**k for k in range(11, 21)]
    rows = layout_sweep(FIG4, TPU_V4, CUBE, grid)
    got = crossovers(rows)
    want = brute_force_regimes((4, 4, 4), grid, 16384, 65536, 2, 2, TPU_V4.interconnect_bw)
    assert got == want
    assert got[0][1] == "WS2D"
