"""Feedforward partitioning layouts and their per-layer communication cost.

Two views are provided. The closed-form functions (``ws1d_comm_time`` and
friends) take a single scalar bandwidth and drop the ``(K-1)/K`` factor, which
is the back-of-envelope form. ``ffn_collectives`` lists
the actual collectives each layout issues on a concrete torus; those are priced
exactly, with per-axis bandwidth, and are what layout selection uses.

Weights of every layout are stored as ``E_x F_yz`` so prefill and decode can
share them: weight-stationary layouts compute in place, weight-gathered layouts
all-gather them over ``x``, ``xy`` or ``xyz`` just before the matmuls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .collectives import AXES, ChipSpec, Collective, Torus
from .model import ModelConfig, Phase


TIE_RTOL = 1e-12


class FfnKind(str, Enum):
    WS1D = "WS1D"
    WS2D = "WS2D"
    WG_X = "WG_X"
    WG_XY = "WG_XY"
    WG_XYZ = "WG_XYZ"

    @property
    def weight_gathered(self) -> bool:
        return self.value.startswith("WG")


_WG_AXES = {
    FfnKind.WG_X: ("x",),
    FfnKind.WG_XY: ("x", "y"),
    FfnKind.WG_XYZ: ("x", "y", "z"),
}


@dataclass(frozen=True)
class FfnLayout:
    """A feedforward layout bound to a torus.

    ``axes`` is the ``X`` axis group of a 2D weight-stationary split, or the
    axes weights are gathered over for weight-gathered layouts.
    """

    kind: FfnKind
    axes: tuple[str, ...]
    x: int = 1
    yz: int = 1
    gather: int = 1

    @classmethod
    def ws1d(cls, torus: Torus) -> "FfnLayout":
        return cls(FfnKind.WS1D, (), x=1, yz=torus.n_chips)

    @classmethod
    def ws2d(cls, torus: Torus, x_axes: Sequence[str]) -> "FfnLayout":
        x = torus.extent(x_axes)
        return cls(FfnKind.WS2D, tuple(x_axes), x=x, yz=torus.n_chips // x)

    @classmethod
    def weight_gathered(cls, kind: FfnKind, torus: Torus) -> "FfnLayout":
        if not kind.weight_gathered:
            raise ValueError(f"{kind.value} is not a weight-gathered layout")
        axes = _WG_AXES[kind]
        return cls(kind, axes, gather=torus.extent(axes))

    @property
    def label(self) -> str:
        if self.kind is FfnKind.WS2D:
            return f"WS2D(X={self.x},YZ={self.yz})"
        if self.kind.weight_gathered:
            return f"{self.kind.value}(N={self.gather})"
        return self.kind.value


# -- closed forms -----------------------------------------------------------


def ws1d_comm_time(tokens: float, d_model: int, act_bytes: int, bw: float, n_chips: int | None = None) -> float:
    """One all-gather and one reduce-scatter of the full ``BLE`` activations.

    Independent of the chip count; pass ``n_chips`` to apply the exact
    ``(K-1)/K`` factor.
    """
    t = 2.0 * tokens * d_model * act_bytes / bw
    if n_chips is not None:
        t *= (n_chips - 1) / n_chips
    return t


def ws2d_comm_time(
    tokens: float,
    d_model: int,
    d_ff: int,
    x: int,
    yz: int,
    act_bytes: int,
    bw: float,
    n_chips: int | None = None,
) -> float:
    if x < 1 or yz < 1:
        raise ValueError(f"infeasible split X={x}, YZ={yz}")
    if n_chips is not None and x * yz != n_chips:
        raise ValueError(f"split X={x}, YZ={yz} does not multiply to {n_chips} chips")
    return 2.0 * tokens * act_bytes * (d_model / x + d_ff / yz) / bw


def ws2d_closed_form_time(tokens: float, d_model: int, n_chips: int, act_bytes: int, bw: float) -> float:
    """Optimal 2D weight-stationary time assuming ``d_ff = 4 d_model`` and a free split."""
    return 8.0 * tokens * d_model * act_bytes / (math.sqrt(n_chips) * bw)


def divisors(n: int) -> list[int]:
    small, large = [], []
    i = 1
    while i * i <= n:
        if n % i == 0:
            small.append(i)
            if i * i != n:
                large.append(n // i)
        i += 1
    return small + large[::-1]


def ws2d_optimal_split(n_chips: int, d_model: int, d_ff: int, torus: Torus | None = None) -> tuple[int, int]:
    """Communication-minimizing ``(X, YZ)`` split.

    Without a torus every divisor pair of ``n_chips`` is feasible; with one, ``X``
    must be the extent of some group of physical axes. Ties go to the smaller X.
    The continuous optimum is ``X = sqrt(n_chips * d_model / d_ff)``.
    """
    if torus is not None:
        if torus.n_chips != n_chips:
            raise ValueError(f"torus {torus} has {torus.n_chips} chips, not {n_chips}")
        candidates = sorted({torus.extent(g) for g in torus.axis_groups()})
    else:
        candidates = divisors(n_chips)
    best_x = min(candidates, key=lambda x: (d_model / x + d_ff / (n_chips // x), x))
    return best_x, n_chips // best_x


def wg_comm_time(
    tokens: float,
    d_model: int,
    d_ff: int,
    n_gather: int,
    n_chips: int,
    weight_bytes: int,
    act_bytes: int,
    bw: float,
) -> float:
    """Weight all-gather over ``n_gather`` chips plus the remaining activation traffic."""
    return sum(wg_comm_terms(tokens, d_model, d_ff, n_gather, n_chips, weight_bytes, act_bytes, bw))


def wg_comm_terms(
    tokens: float,
    d_model: int,
    d_ff: int,
    n_gather: float,
    n_chips: int,
    weight_bytes: int,
    act_bytes: int,
    bw: float,
) -> tuple[float, float]:
    """``(weight_time, activation_time)``; ``n_gather`` may be fractional for the continuous optimum."""
    if not 1 <= n_gather <= n_chips:
        raise ValueError(f"gather extent {n_gather} outside [1, {n_chips}]")
    weights = 2.0 * d_model * d_ff * weight_bytes * n_gather / (n_chips * bw)
    acts = 2.0 * tokens * d_model * act_bytes / (n_gather * bw)
    return weights, acts


def wg_optimal_gather(tokens: float, n_chips: int, d_ff: int) -> float:
    """Continuous gather extent balancing weight and activation traffic."""
    return math.sqrt(tokens * n_chips / d_ff)


def wg_closed_form_time(tokens: float, d_model: int, d_ff: int, n_chips: int, bytes_per_elem: int, bw: float) -> float:
    return 4.0 * d_model * bytes_per_elem * math.sqrt(tokens * d_ff) / (math.sqrt(n_chips) * bw)


# -- exact collectives on a torus ------------------------------------------


def ffn_collectives(layout: FfnLayout, tokens: float, model: ModelConfig, torus: Torus) -> list[Collective]:
    """Collectives one feedforward layer issues under ``layout``."""
    e, f, a = model.d_model, model.d_ff, model.activation_bytes
    n = torus.n_chips
    if layout.kind is FfnKind.WS1D:
        full = tokens * e * a
        return [Collective("all_gather", full, AXES), Collective("reduce_scatter", full, AXES)]
    if layout.kind is FfnKind.WS2D:
        x_axes = layout.axes
        yz_axes = torus.complement(x_axes)
        x = torus.extent(x_axes)
        yz = n // x
        e_part = tokens * e / x * a
        f_part = tokens * f / yz * a
        return [
            Collective("all_gather", e_part, yz_axes),
            Collective("reduce_scatter", f_part, x_axes),
            Collective("all_gather", f_part, x_axes),
            Collective("reduce_scatter", e_part, yz_axes),
        ]
    gathered = layout.axes
    rest = torus.complement(gathered)
    g = torus.extent(gathered)
    w = e * f * g / n * model.weight_bytes
    act = tokens * e / g * a
    return [
        Collective("all_gather", w, gathered),
        Collective("all_gather", w, gathered),
        Collective("all_gather", act, rest),
        Collective("reduce_scatter", act, rest),
    ]


def ffn_layer_time(layout: FfnLayout, tokens: float, model: ModelConfig, chip: ChipSpec, torus: Torus) -> float:
    return sum(c.time(chip, torus) for c in ffn_collectives(layout, tokens, model, torus))


def ffn_layer_volume(layout: FfnLayout, tokens: float, model: ModelConfig, torus: Torus) -> float:
    return sum(c.volume(torus) for c in ffn_collectives(layout, tokens, model, torus))


def ws2d_layout(model: ModelConfig, torus: Torus) -> FfnLayout:
    x, _ = ws2d_optimal_split(torus.n_chips, model.d_model, model.d_ff, torus)
    axes = next(g for g in torus.axis_groups() if torus.extent(g) == x)
    return FfnLayout.ws2d(torus, axes)


def candidate_layouts(model: ModelConfig, torus: Torus, include_ws1d: bool = False) -> list[FfnLayout]:
    """WS2D first so that ties resolve toward it, then WG by increasing gather extent."""
    layouts = [FfnLayout.ws1d(torus)] if include_ws1d else []
    layouts.append(ws2d_layout(model, torus))
    layouts.extend(FfnLayout.weight_gathered(k, torus) for k in (FfnKind.WG_X, FfnKind.WG_XY, FfnKind.WG_XYZ))
    return layouts


def best_ffn_layout(
    phase: Phase, tokens: float, model: ModelConfig, chip: ChipSpec, torus: Torus
) -> tuple[FfnLayout, float]:
    """Layout with the least feedforward communication for one forward pass.

    Decode always stays 2D weight-stationary. Prefill picks among WS2D and the
    weight-gathered variants; a candidate displaces an earlier one only when it
    is cheaper beyond float noise, so exact ties keep WS2D or the smaller gather.
    """
    ws2d = ws2d_layout(model, torus)
    if Phase(phase) is Phase.DECODE:
        return ws2d, ffn_layer_time(ws2d, tokens, model, chip, torus)
    best, best_t = None, math.inf
    for layout in candidate_layouts(model, torus):
        t = ffn_layer_time(layout, tokens, model, chip, torus)
        if t < best_t and not math.isclose(t, best_t, rel_tol=TIE_RTOL):
            best, best_t = layout, t
    assert best is not None
    return best, best_t


@dataclass(frozen=True)
class LayoutRow:
    tokens: int
    best: FfnLayout
    times: dict[str, float]
    volumes: dict[str, float]


def layout_sweep(model: ModelConfig, chip: ChipSpec, torus: Torus, token_grid: Sequence[int]) -> list[LayoutRow]:
    """Per-layer time and volume of every layout at each token count."""
    rows = []
    layouts = candidate_layouts(model, torus, include_ws1d=True)
    for tokens in token_grid:
        best, _ = best_ffn_layout(Phase.PREFILL, tokens, model, chip, torus)
        times = {l.kind.value: ffn_layer_time(l, tokens, model, chip, torus) for l in layouts}
        volumes = {l.kind.value: ffn_layer_volume(l, tokens, model, torus) for l in layouts}
        rows.append(LayoutRow(int(tokens), best, times, volumes))
    return rows


def crossovers(rows: Sequence[LayoutRow]) -> list[tuple[int, str]]:
    """``(first token count, layout kind)`` for each regime in a layout sweep."""
    out: list[tuple[int, str]] = []
    for row in rows:
        if not out or out[-1][1] != row.best.kind.value:
            out.append((row.tokens, row.best.kind.value))
    return out
