from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fieldprobe.lattice import (
    Lattice,
    Ordering,
    Region,
    RegionError,
    causal_complement,
    causal_future,
    causal_hull,
    causal_orderability,
    causal_past,
    cone_wraps,
    double_complement,
    in_out_regions,
    is_causally_convex,
)


def bfs_future(lat, cells, sign=1):
    """Reachability along (t, x) -> (t + sign, x + {-1, 0, 1})."""
    seen = set(cells)
    todo = deque(cells)
    while todo:
        t, x = todo.popleft()
        t2 = t + sign
        if not 0 <= t2 < lat.n_t:
            continue
        for dx in (-1, 0, 1):
            c = (t2, (x + dx) % lat.n_x)
            if c not in seen:
                seen.add(c)
                todo.append(c)
    return seen


@st.composite
def small_region(draw, min_cells=1):
    n_t = draw(st.integers(3, 9))
    n_x = draw(st.integers(3, 9))
    lat = Lattice(n_t, n_x)
    bits = draw(st.lists(st.booleans(), min_size=n_t * n_x, max_size=n_t * n_x))
    mask = np.array(bits).reshape(n_t, n_x)
    if mask.sum() < min_cells:
        mask[draw(st.integers(0, n_t - 1)), draw(st.integers(0, n_x - 1))] = True
    return Region(lat, mask)


def test_lattice_validation():
    with pytest.raises(ValueError, match="Courant"):
        Lattice(8, 8, dt=1.5, dx=1.0)
    with pytest.raises(ValueError):
        Lattice(2, 8)
    with pytest.raises(ValueError):
        Lattice(8, 8, dt=-0.5)
    assert Lattice(8, 8).cell_volume == 0.5


def test_region_algebra_and_json():
    lat = Lattice(6, 7)
    a = lat.box(1, 3, 2, 5)
    b = lat.region([(2, 4), (5, 0)])
    assert len(a) == 6 and (2, 4) in a and (0, 0) not in a
    assert (a | b) - b == a - b
    assert (a & b).cells() == [(2, 4)]
    assert ~~a == a
    assert Region.from_json(a.to_json()) == a
    assert a.time_extent() == (1, 2)
    with pytest.raises(ValueError):
        a.mask[0, 0] = True


def test_empty_region_errors():
    lat = Lattice(5, 5)
    with pytest.raises(RegionError, match="empty region"):
        causal_future(lat.empty())
    with pytest.raises(RegionError, match="empty region"):
        causal_past(lat.empty())


@given(small_region())
def test_future_and_past_match_bfs(k):
    lat = k.lattice
    assert set(causal_future(k).cells()) == bfs_future(lat, k.cells(), +1)
    assert set(causal_past(k).cells()) == bfs_future(lat, k.cells(), -1)


@given(small_region())
def test_cone_closure_properties(k):
    jp = causal_future(k)
    assert k.issubset(jp)
    assert causal_future(jp) == jp
    perp = causal_complement(k)
    assert perp.isdisjoint(causal_future(k) | causal_past(k))
    assert k.issubset(double_complement(k))


@given(small_region(), small_region())
def test_hull_is_smallest_convex_superset(k, extra):
    if extra.lattice != k.lattice:
        extra = k
    hull = causal_hull(k)
    assert k.issubset(hull)
    assert is_causally_convex(hull)
    # any convex superset contains the hull
    other = causal_hull(k | extra)
    assert hull.issubset(other)


def test_hull_matches_exhaustive_convex_supersets():
    # all convex supersets of k on a 4 x 3 lattice, by enumeration
    lat = Lattice(4, 3)
    k = lat.region([(0, 0), (3, 1)])
    base = k.mask.ravel()
    best = np.ones(12, dtype=bool)
    for code in range(1 << 12):
        bits = np.array([(code >> i) & 1 for i in range(12)], dtype=bool)
        if np.any(base & ~bits):
            continue
        r = Region(lat, bits.reshape(lat.shape))
        if is_causally_convex(r):
            best &= bits
    assert Region(lat, best.reshape(lat.shape)) == causal_hull(k)


def test_in_out_regions():
    lat = Lattice(10, 20)
    k = lat.box(4, 6, 8, 11)
    m_plus, m_minus = in_out_regions(k)
    assert m_plus.isdisjoint(causal_past(k))
    assert lat.slices(6, 10).issubset(m_plus)
    assert lat.slices(0, 4).issubset(m_minus)
    with pytest.raises(RegionError, match="temporal boundary"):
        in_out_regions(lat.box(0, 2, 3, 5))
    with pytest.raises(RegionError, match="temporal boundary"):
        in_out_regions(lat.box(8, 10, 3, 5))


def test_orderability_cases():
    lat = Lattice(20, 40)
    early = lat.box(3, 5, 10, 12)
    late = lat.box(9, 11, 10, 12)
    far = lat.box(4, 6, 30, 32)
    assert causal_orderability(early, late) is Ordering.K2_NOT_IN_PAST_OF_K1
    assert causal_orderability(late, early) is Ordering.K1_NOT_IN_PAST_OF_K2
    assert causal_orderability(early, far) is Ordering.DISJOINT
    tall = lat.box(2, 12, 10, 11)
    assert causal_orderability(tall, lat.box(6, 7, 11, 12)) is Ordering.NOT_ORDERABLE


def test_cone_wraps_formula():
    lat = Lattice(16, 16)
    assert not cone_wraps(lat.box(9, 10, 0, 1), "future")
    assert cone_wraps(lat.box(7, 8, 0, 1), "future")
    assert not cone_wraps(lat.box(7, 8, 0, 1), "past")
    assert cone_wraps(lat.box(8, 9, 0, 1), "past")
    assert not cone_wraps(lat.empty())
    # the cone of a wrapping cell covers its whole boundary slice
    c = lat.box(7, 8, 0, 1)
    assert causal_future(c).mask[-1].all()
