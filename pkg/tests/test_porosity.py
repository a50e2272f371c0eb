import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from percolab.errors import ParameterError
from percolab.mcube import CubeAddress, Cone, child_offsets, cone_contains
from percolab.porosity import (OccupiedSet, annular_porosity_at, box_dimension, conical_central_cube,
                               hole_meeting_children, level_set, porosity_at, scale_grid,
                               upor_lpor_estimate)
from percolab.sampler import PercolationConfig, condition_on_nonextinction, tree_from_levels


def full_set(M, d, k):
    side = M**k
    return OccupiedSet(child_offsets(side, d), k, M)


def test_full_cube_has_no_holes():
    occ = full_set(2, 2, 6)
    assert porosity_at(occ, (0.5, 0.5), 0.25).rho == 0
    # radii that keep the ball inside the unit cube; larger ones see the empty exterior
    up, lo, _ = upor_lpor_estimate(occ, (0.5, 0.5), scale_grid(2, 2, 6, j_min=2))
    assert up == lo == 0
    up, _, _ = upor_lpor_estimate(occ, (0.5, 0.5))
    # best exterior ball at r = sqrt(2)/2 sits on an axis: radius (r - 1/2) / 2
    assert up == pytest.approx(0.5 * (1 - 0.5 / (math.sqrt(2) / 2)), abs=0.01)


def test_half_space_hole():
    occ = OccupiedSet([[0]], 1, 2)
    v = porosity_at(occ, [0.5], 0.2, g=8)
    assert v.error == pytest.approx(2**-9 / 0.2)
    assert abs(v.rho - 0.5) <= v.error
    assert v.center[0] == pytest.approx(0.6, abs=2**-9)


def test_gap_between_two_cubes():
    occ = OccupiedSet([[0], [3]], 2, 2)
    v = porosity_at(occ, [0.25], 0.5, g=8)
    assert abs(v.rho - 0.5) <= v.error


def test_annular_examples():
    assert annular_porosity_at(OccupiedSet([[0]], 2, 2), [0.125], 1.0) == pytest.approx(0.875)
    assert annular_porosity_at(full_set(2, 2, 3), (0.5, 0.5), 0.2) == 0
    occ = OccupiedSet([[5, 5]], 4, 2)
    r = 10.0
    x = (5.5 / 16, 5.5 / 16)
    assert annular_porosity_at(occ, x, r) == pytest.approx(1 - math.sqrt(2) / 32 / r)


def test_query_errors():
    occ = full_set(2, 1, 2)
    with pytest.raises(ParameterError):
        porosity_at(occ, [0.5], 0)
    with pytest.raises(ParameterError):
        annular_porosity_at(occ, [0.5], -1)
    with pytest.raises(ParameterError):
        porosity_at(occ, [1.5], 0.1)
    with pytest.raises(ParameterError):
        porosity_at(occ, [0.5, 0.5], 0.1)


def test_exterior_counts_as_empty():
    occ = full_set(2, 2, 4)
    v = porosity_at(occ, (0.0, 0.5), 0.25, g=4)
    assert abs(v.rho - 0.5) <= v.error


def test_half_space_profile_is_flat():
    occ = OccupiedSet([[0, 0], [0, 1]], 1, 2)
    up, lo, prof = upor_lpor_estimate(occ, (0.5, 0.3), scale_grid(2, 2, 1, g=9), g=9)
    for v, e in zip(prof.values, prof.errors):
        assert 0.5 - e <= v <= 0.5
    assert len(prof.scales) >= 3


def test_estimate_preconditions():
    occ = OccupiedSet([[0]], 1, 2)
    with pytest.raises(ParameterError):
        upor_lpor_estimate(occ, [0.25], [0.2, 0.1])
    with pytest.raises(ParameterError):
        upor_lpor_estimate(occ, [0.25], [0.1, 0.2, 0.05])
    with pytest.raises(ParameterError):
        upor_lpor_estimate(occ, [0.9], [0.2, 0.1, 0.05])


def test_scale_grid_presets():
    g = scale_grid(2, 2, 8, g=4)
    assert g[0] == pytest.approx(math.sqrt(2) / 2)
    assert all(math.sqrt(2) * 2**-12 / r <= 0.05 for r in g)
    assert scale_grid(2, 1, 10, preset="T2", N=2)[:2] == pytest.approx([0.125, 0.5 / 16])
    assert scale_grid(3, 1, 6, preset="T3", N=1)[0] == pytest.approx(1 / 9)
    with pytest.raises(ParameterError):
        scale_grid(2, 1, 5, preset="nope")


cells = st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), min_size=2, max_size=40, unique=True)


@settings(max_examples=1000, deadline=None)
@given(cells, st.data())
def test_porosity_monotone_under_shrinkage(cs, data):
    big = np.array(cs)
    drop = data.draw(st.lists(st.booleans(), min_size=len(cs), max_size=len(cs)))
    keep = ~np.array(drop)
    keep[0] = True
    small = big[keep]
    x = (big[0] + 0.5) / 8
    r = data.draw(st.sampled_from([0.5, 0.25, 0.125, 0.7]))
    a = porosity_at(OccupiedSet(big, 3, 2), x, r, g=3)
    b = porosity_at(OccupiedSet(small, 3, 2), x, r, g=3)
    assert b.rho >= a.rho - 1e-12
    assert 0 <= a.rho <= 0.5 and a.raw - a.error <= 0.5 + 1e-12


@settings(max_examples=200, deadline=None)
@given(cells, st.floats(0.05, 1.0))
def test_annular_zero_when_sphere_hits_a_cube(cs, r):
    big = np.array(cs)
    x = (big[0] + 0.5) / 8
    occ = OccupiedSet(big, 3, 2)
    lo = np.sqrt((np.maximum(np.abs(x - occ.centers) - 1 / 16, 0) ** 2).sum(1))
    hi = np.sqrt(((np.abs(x - occ.centers) + 1 / 16) ** 2).sum(1))
    if np.any((lo <= r) & (hi >= r)):
        assert annular_porosity_at(occ, x, r) == 0


# ---------------------------------------------------------------- dimension


def test_box_dimension_examples():
    lv = list(range(1, 9))
    assert box_dimension([4.0**j for j in lv], lv, 2).slope == pytest.approx(2.0, abs=1e-12)
    assert box_dimension([2.0**j for j in lv], lv, 2).slope == pytest.approx(1.0, abs=1e-12)
    deg = box_dimension([1, 1, 1], [1, 2, 3], 2)
    assert deg.slope == 0 and deg.degenerate
    with pytest.raises(ParameterError):
        box_dimension([1, 2], [1, 2], 2)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 3), st.floats(0.1, 10), st.sampled_from([2, 3, 5]))
def test_box_dimension_recovers_synthetic_slope(s, c, M):
    lv = list(range(1, 7))
    assert box_dimension([c * M ** (s * j) for j in lv], lv, M).slope == pytest.approx(s, abs=1e-9)


# ---------------------------------------------------------------- holes


def _tree(M, d, levels, surv):
    cfg = PercolationConfig(M, d, len(levels) - 1, p=0.9)
    return tree_from_levels(cfg, levels, [np.zeros(len(c), dtype=np.int64) for c in levels],
                            np.zeros(1, dtype=np.uint64), surv, 0.1)


def test_hole_example_d1():
    t = _tree(2, 1, [np.array([[0]]), np.array([[0]])], [np.array([True]), np.array([True])])
    res = hole_meeting_children(t, CubeAddress.root(1), 1)
    assert res.cubes.tolist() == [[0]] and not res.fallback


def test_hole_precondition():
    t = _tree(2, 1, [np.array([[0]]), np.array([[0], [1]])], [np.array([True]), np.array([True, True])])
    with pytest.raises(ParameterError):
        hole_meeting_children(t, CubeAddress.root(1), 1)


@pytest.mark.parametrize("seed", range(8))
def test_hole_cubes_meet_empty_balls(seed):
    M, d, N = 2, 2, 3
    t = condition_on_nonextinction(PercolationConfig(M, d, 6, p=0.7, seed=seed))
    kids = t.surviving_coords(1)
    if len(kids) in (0, M**d):
        return
    res = hole_meeting_children(t, CubeAddress.root(d), N)
    occ1 = OccupiedSet(kids, 1, M)
    deep = OccupiedSet(t.surviving_coords(t.depth), t.depth, M)
    offs = child_offsets(M, d)
    h = M**-1
    bound = 1 / (2 * (1 + math.sqrt(d) * M ** (1 - N)))
    for c, w in zip(res.cubes, res.witnesses):
        center = (offs[w] + 0.5) * h
        assert occ1.distance(center[None])[0] >= h / 2 - 1e-15
        lo, hi = c / M**N, (c + 1) / M**N
        gap = np.maximum(np.maximum(lo - center, center - hi), 0)
        if not res.fallback:
            assert np.sqrt((gap**2).sum()) <= h / 2 + 1e-15
            x = (c + 0.5) / M**N
            v = porosity_at(deep, x, h + math.sqrt(d) * M**-N, g=4)
            assert v.rho >= bound - v.error


# ---------------------------------------------------------------- level sets


def test_level_set_trivial_thresholds():
    t = condition_on_nonextinction(PercolationConfig(2, 1, 10, p=0.8, seed=3))
    a = level_set(t, 0.5, "upor<=", level=5)
    assert a.member_fraction == 1.0
    b = level_set(t, 0.0, "lpor>=", level=5)
    assert b.member_fraction == 1.0
    surv = {tuple(c) for c in t.surviving_coords(5)}
    assert all(tuple(c) in surv for c in a.members)
    with pytest.raises(ParameterError):
        level_set(t, 0.3, "upor<")


def test_level_set_empty():
    t = condition_on_nonextinction(PercolationConfig(2, 1, 10, p=0.8, seed=3))
    e = level_set(t, -1.0, "upor<=", level=5)
    assert len(e.members) == 0 and e.beta is None


# ---------------------------------------------------------------- conical density


def _ring():
    cells = [(i, j) for i in range(8) for j in range(8) if max(abs(i - 4), abs(j - 4)) == 3]
    return np.array([(4, 4)] + cells)


def test_conical_ring_finds_center():
    cubes = _ring()
    res = conical_central_cube(cubes, 2, 3, net=720)
    assert res.found and res.approximate
    assert tuple(cubes[res.index]) == (4, 4)
    # re-check every witness against the cone from each sampled point
    corners = child_offsets(2, 2)
    for s, x in enumerate(res.samples):
        for k, theta in enumerate(res.directions):
            w = cubes[res.witnesses[s, k]]
            cone = Cone(tuple(x), tuple(theta), 0.8)
            assert all(cone_contains(cone, tuple((w + c) / 8)) for c in corners)


def test_conical_single_cube_not_found():
    assert not conical_central_cube(np.array([[1, 1]]), 2, 2).found
