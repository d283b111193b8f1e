"""Finite 1+1 dimensional spacetime lattice and its discrete causal structure.

Time runs along axis 0 (``n_t`` slices), space along axis 1 (``n_x`` sites,
periodic).  Causality is the leapfrog stencil cone: a cell ``(t', x')`` lies in
the causal future of ``(t, x)`` iff ``t' >= t`` and the circular distance
between ``x`` and ``x'`` is at most ``t' - t``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from typing import Iterable

import numpy as np


class RegionError(ValueError):
    """Raised for invalid or empty regions passed to causal operations."""


@dataclass(frozen=True)
class Lattice:
    """Periodic spacetime grid with ``n_t`` time slices and ``n_x`` sites."""

    n_t: int
    n_x: int
    dt: float = 0.5
    dx: float = 1.0

    def __post_init__(self):
        if int(self.n_t) != self.n_t or int(self.n_x) != self.n_x:
            raise ValueError("lattice sizes must be integers")
        if self.n_t < 3 or self.n_x < 3:
            raise ValueError(f"lattice too small: n_t={self.n_t}, n_x={self.n_x} (need >= 3)")
        if not (self.dt > 0 and self.dx > 0):
            raise ValueError("dt and dx must be positive")
        if self.dt / self.dx > 1.0 + 1e-12:
            raise ValueError(f"Courant condition violated: dt/dx = {self.dt / self.dx:g} > 1")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_t, self.n_x)

    @property
    def cell_volume(self) -> float:
        return self.dt * self.dx

    def region(self, cells: Iterable[tuple[int, int]]) -> "Region":
        mask = np.zeros(self.shape, dtype=bool)
        for t, x in cells:
            if not 0 <= t < self.n_t:
                raise RegionError(f"time index {t} out of range [0, {self.n_t})")
            mask[t, x % self.n_x] = True
        return Region(self, mask)

    def empty(self) -> "Region":
        return Region(self, np.zeros(self.shape, dtype=bool))

    def full(self) -> "Region":
        return Region(self, np.ones(self.shape, dtype=bool))

    def slices(self, t_start: int, t_stop: int) -> "Region":
        """Full time slices ``t_start <= t < t_stop``."""
        mask = np.zeros(self.shape, dtype=bool)
        mask[max(t_start, 0):min(t_stop, self.n_t)] = True
        return Region(self, mask)

    def box(self, t_start: int, t_stop: int, x_start: int, x_stop: int) -> "Region":
        """Rectangle of cells; the spatial range wraps modulo ``n_x``."""
        if not (0 <= t_start < t_stop <= self.n_t):
            raise RegionError(f"bad time range [{t_start}, {t_stop})")
        mask = np.zeros(self.shape, dtype=bool)
        xs = np.arange(x_start, x_stop) % self.n_x
        mask[t_start:t_stop, xs] = True
        return Region(self, mask)

    def to_dict(self) -> dict:
        return {"n_t": self.n_t, "n_x": self.n_x, "dt": self.dt, "dx": self.dx}


class Region:
    """An immutable set of lattice cells, stored as a boolean mask."""

    __slots__ = ("lattice", "mask")

    def __init__(self, lattice: Lattice, mask):
        mask = np.array(mask, dtype=bool)
        if mask.shape != lattice.shape:
            raise RegionError(f"mask shape {mask.shape} does not match lattice {lattice.shape}")
        mask.setflags(write=False)
        object.__setattr__(self, "lattice", lattice)
        object.__setattr__(self, "mask", mask)

    def __setattr__(self, name, value):
        raise AttributeError("Region is immutable")

    def _check(self, other: "Region"):
        if other.lattice != self.lattice:
            raise RegionError("regions live on different lattices")

    def __or__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.lattice, self.mask | other.mask)

    def __and__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.lattice, self.mask & other.mask)

    def __sub__(self, other: "Region") -> "Region":
        self._check(other)
        return Region(self.lattice, self.mask & ~other.mask)

    def __invert__(self) -> "Region":
        return Region(self.lattice, ~self.mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return self.lattice == other.lattice and bool(np.array_equal(self.mask, other.mask))

    def __hash__(self) -> int:
        return hash((self.lattice, self.mask.tobytes()))

    def __len__(self) -> int:
        return int(self.mask.sum())

    def __contains__(self, cell) -> bool:
        t, x = cell
        return 0 <= t < self.lattice.n_t and bool(self.mask[t, x % self.lattice.n_x])

    def __repr__(self) -> str:
        return f"Region({len(self)} cells on {self.lattice.n_t}x{self.lattice.n_x})"

    @property
    def is_empty(self) -> bool:
        return not self.mask.any()

    def issubset(self, other: "Region") -> bool:
        self._check(other)
        return not (self.mask & ~other.mask).any()

    def isdisjoint(self, other: "Region") -> bool:
        self._check(other)
        return not (self.mask & other.mask).any()

    def cells(self) -> list[tuple[int, int]]:
        """Sorted list of ``(t, x)`` cells."""
        ts, xs = np.nonzero(self.mask)
        return [(int(t), int(x)) for t, x in zip(ts, xs)]

    def time_extent(self) -> tuple[int, int]:
        """``(t_min, t_max)`` of occupied slices."""
        ts = np.nonzero(self.mask.any(axis=1))[0]
        if ts.size == 0:
            raise RegionError("empty region")
        return int(ts[0]), int(ts[-1])

    def full_slices(self) -> np.ndarray:
        """Indices of time slices entirely contained in the region."""
        return np.nonzero(self.mask.all(axis=1))[0]

    def to_json(self) -> str:
        return json.dumps({"lattice": self.lattice.to_dict(), "cells": self.cells()})

    @classmethod
    def from_json(cls, text: str) -> "Region":
        payload = json.loads(text)
        lattice = Lattice(**payload["lattice"])
        return lattice.region(tuple(c) for c in payload["cells"])


def _require_nonempty(region: Region):
    if region.is_empty:
        raise RegionError("empty region")


def _dilate(row: np.ndarray) -> np.ndarray:
    return row | np.roll(row, 1) | np.roll(row, -1)


def _sweep(mask: np.ndarray, forward: bool) -> np.ndarray:
    out = np.zeros_like(mask)
    reach = np.zeros(mask.shape[1], dtype=bool)
    order = range(mask.shape[0]) if forward else range(mask.shape[0] - 1, -1, -1)
    for t in order:
        reach = _dilate(reach) | mask[t]
        out[t] = reach
    return out


def causal_future(s: Region) -> Region:
    """Discrete J+(s): every cell reachable from ``s`` by the unit-speed cone."""
    _require_nonempty(s)
    return Region(s.lattice, _sweep(s.mask, forward=True))


def causal_past(s: Region) -> Region:
    """Discrete J-(s), the time reflection of :func:`causal_future`."""
    _require_nonempty(s)
    return Region(s.lattice, _sweep(s.mask, forward=False))


def causal_shadow(s: Region) -> Region:
    """J(s) = J+(s) | J-(s)."""
    return causal_future(s) | causal_past(s)


def causal_complement(k: Region) -> Region:
    """``M \\ J(k)``: cells joined to ``k`` by no causal path."""
    return ~causal_shadow(k)


def double_complement(k: Region) -> Region:
    """K-perp-perp.  An empty K-perp has the whole lattice as its complement."""
    perp = causal_complement(k)
    if perp.is_empty:
        return k.lattice.full()
    return causal_complement(perp)


def causal_hull(k: Region) -> Region:
    """J+(k) & J-(k); the smallest causally convex region containing ``k``."""
    return causal_future(k) & causal_past(k)


def is_causally_convex(k: Region) -> bool:
    if k.is_empty:
        return True
    return causal_hull(k) == k


def in_out_regions(k: Region) -> tuple[Region, Region]:
    """Return ``(M_plus, M_minus)`` with ``M_pm = M \\ J_mp(k)``.

    Both must contain a full time slice, which fails exactly when ``k``
    reaches the first or last slice of the lattice.
    """
    _require_nonempty(k)
    t_min, t_max = k.time_extent()
    if t_min == 0 or t_max == k.lattice.n_t - 1:
        raise RegionError("coupling region touches temporal boundary")
    m_plus = ~causal_past(k)
    m_minus = ~causal_future(k)
    return m_plus, m_minus


class Ordering(str, enum.Enum):
    """Result of :func:`causal_orderability`."""

    DISJOINT = "disjoint"
    K2_NOT_IN_PAST_OF_K1 = "k2-not-in-past-of-k1"
    K1_NOT_IN_PAST_OF_K2 = "k1-not-in-past-of-k2"
    NOT_ORDERABLE = "not-orderable"


def causal_orderability(k1: Region, k2: Region) -> Ordering:
    """Classify how two regions may be causally ordered.

    ``K2_NOT_IN_PAST_OF_K1`` means ``J-(k1) & k2`` is empty, so ``k2`` can be
    regarded as later than ``k1``.  Cells on each other's light cone count as
    causally related.
    """
    _require_nonempty(k1)
    _require_nonempty(k2)
    if k2.issubset(causal_complement(k1)):
        return Ordering.DISJOINT
    if causal_past(k1).isdisjoint(k2):
        return Ordering.K2_NOT_IN_PAST_OF_K1
    if causal_past(k2).isdisjoint(k1):
        return Ordering.K1_NOT_IN_PAST_OF_K2
    return Ordering.NOT_ORDERABLE


def cone_wraps(k: Region, direction: str = "both") -> bool:
    """True if the cone of some cell of ``k`` wraps around the spatial circle.

    A cell at distance ``d`` from the temporal boundary in the given direction
    has a cone of width ``2 d + 1`` on the boundary slice; it wraps when that
    exceeds ``n_x``.
    """
    if direction not in ("future", "past", "both"):
        raise ValueError(f"unknown direction {direction!r}")
    if k.is_empty:
        return False
    lat = k.lattice
    ts = np.nonzero(k.mask.any(axis=1))[0]
    wraps = False
    if direction in ("future", "both"):
        wraps |= 2 * (lat.n_t - 1 - int(ts.min())) + 1 > lat.n_x
    if direction in ("past", "both"):
        wraps |= 2 * int(ts.max()) + 1 > lat.n_x
    return bool(wraps)
