"""Bandwidth-only cost model for collectives on a 3D torus.

Every collective is priced as ``D / bw * (K - 1) / K`` where ``D`` is the
per-chip buffer size in bytes and ``K`` the number of participating chips.
Per-axis link bandwidth is a third of the chip's total interconnect rate, and
a collective spanning ``m`` torus axes gets ``m`` times that.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable

AXES = ("x", "y", "z")


@dataclass(frozen=True)
class Torus:
    """An ``x * y * z`` torus of chips."""

    x: int
    y: int
    z: int

    def __post_init__(self) -> None:
        for name in AXES:
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"torus axis {name} must be a positive integer, got {value!r}")

    @property
    def n_chips(self) -> int:
        return self.x * self.y * self.z

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)

    def extent(self, axes: Iterable[str]) -> int:
        """Number of chips spanned by a group of axes."""
        n = 1
        for axis in normalize_axes(axes):
            n *= getattr(self, axis)
        return n

    def axis_groups(self) -> list[tuple[str, ...]]:
        """All axis subsets, empty set first, in canonical order."""
        groups: list[tuple[str, ...]] = []
        for r in range(len(AXES) + 1):
            groups.extend(combinations(AXES, r))
        return groups

    def complement(self, axes: Iterable[str]) -> tuple[str, ...]:
        used = set(normalize_axes(axes))
        return tuple(a for a in AXES if a not in used)

    def __str__(self) -> str:
        return f"{self.x}x{self.y}x{self.z}"

    @classmethod
    def parse(cls, text: str) -> "Torus":
        parts = text.lower().split("x")
        if len(parts) != 3:
            raise ValueError(f"torus shape must look like 4x4x4, got {text!r}")
        try:
            x, y, z = (int(p) for p in parts)
        except ValueError:
            raise ValueError(f"torus shape must look like 4x4x4, got {text!r}") from None
        return cls(x, y, z)


@dataclass(frozen=True)
class ChipSpec:
    """Per-chip hardware rates.

    ``interconnect_bw`` is the total torus bandwidth of one chip summed over
    all three axes.
    """

    peak_flops: float
    hbm_bytes: float
    hbm_bw: float
    interconnect_bw: float

    def __post_init__(self) -> None:
        for name in ("peak_flops", "hbm_bytes", "hbm_bw", "interconnect_bw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def axis_bw(self) -> float:
        return self.interconnect_bw / len(AXES)


# 275 TFLOPS bf16, 32 GiB HBM at 1200 GB/s, 270 GB/s interconnect.
TPU_V4 = ChipSpec(
    peak_flops=275e12,
    hbm_bytes=32 * 2**30,
    hbm_bw=1200e9,
    interconnect_bw=270e9,
)


def normalize_axes(axes: Iterable[str]) -> tuple[str, ...]:
    """Canonical ordering of an axis subset; rejects unknown or repeated names."""
    if isinstance(axes, str):
        axes = tuple(axes)
    seen = tuple(axes)
    for axis in seen:
        if axis not in AXES:
            raise ValueError(f"unknown torus axis {axis!r}")
    if len(set(seen)) != len(seen):
        raise ValueError(f"repeated torus axis in {seen!r}")
    return tuple(a for a in AXES if a in seen)


def effective_bw(chip: ChipSpec, axes: Iterable[str]) -> float:
    """Bandwidth available to a collective spanning ``axes``."""
    group = normalize_axes(axes)
    if not group:
        raise ValueError("collective needs at least one torus axis")
    return chip.axis_bw * len(group)


def _check(nbytes: float, partitions: int, bw: float) -> None:
    if nbytes < 0:
        raise ValueError(f"byte count must be nonnegative, got {nbytes}")
    if partitions < 1:
        raise ValueError(f"partition count must be >= 1, got {partitions}")
    if not bw > 0:
        raise ValueError(f"bandwidth must be positive, got {bw}")


def all_gather_time(out_bytes_per_chip: float, partitions: int, bw: float, exact: bool = True) -> float:
    """Time to all-gather into a per-chip output of ``out_bytes_per_chip``.

    With ``exact=False`` the ``(K-1)/K`` factor is approximated as 1, except
    that ``K = 1`` still costs nothing.
    """
    _check(out_bytes_per_chip, partitions, bw)
    if partitions == 1:
        return 0.0
    t = out_bytes_per_chip / bw
    if exact:
        t *= (partitions - 1) / partitions
    return t


def reduce_scatter_time(in_bytes_per_chip: float, partitions: int, bw: float, exact: bool = True) -> float:
    """Same cost as all-gather, with the size taken from the (larger) input buffer."""
    return all_gather_time(in_bytes_per_chip, partitions, bw, exact)


def all_reduce_time(nbytes: float, partitions: int, bw: float, exact: bool = True) -> float:
    return 2.0 * all_gather_time(nbytes, partitions, bw, exact)


def all_to_all_time(bytes_per_chip: float, partitions: int, bw: float, exact: bool = True) -> float:
    # Conservative: priced like a reduce-scatter on the per-chip data.
    return all_gather_time(bytes_per_chip, partitions, bw, exact)


_KINDS = {
    "all_gather": all_gather_time,
    "reduce_scatter": reduce_scatter_time,
    "all_reduce": all_reduce_time,
    "all_to_all": all_to_all_time,
}


@dataclass(frozen=True)
class Collective:
    """One collective over a group of torus axes."""

    kind: str
    nbytes: float
    axes: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown collective kind {self.kind!r}")
        object.__setattr__(self, "axes", normalize_axes(self.axes))

    def partitions(self, torus: Torus) -> int:
        return torus.extent(self.axes)

    def link_axes(self, torus: Torus) -> tuple[str, ...]:
        """Axes of the group that actually have links (extent > 1)."""
        return tuple(a for a in self.axes if getattr(torus, a) > 1)

    def time(self, chip: ChipSpec, torus: Torus) -> float:
        k = self.partitions(torus)
        if k == 1 or self.nbytes == 0:
            return 0.0
        return _KINDS[self.kind](self.nbytes, k, effective_bw(chip, self.link_axes(torus)))

    def volume(self, torus: Torus) -> float:
        """Bytes moved per chip, i.e. time multiplied back by bandwidth."""
        k = self.partitions(torus)
        factor = 2.0 if self.kind == "all_reduce" else 1.0
        return factor * self.nbytes * (k - 1) / k
