import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gsos.lattice import (HORIZONTAL, VERTICAL, DualBond, annulus_ladder, boundary_sets, build_region,
                          dual_of, rectangle, site_coordinates, square, vertex_bonds, vertex_sites)


def test_region_sizes():
    assert square(1).n_sites == 9
    assert rectangle(2, 1).n_sites == 15
    assert square(3).n_sites == 49


def test_region_order_and_membership():
    reg = rectangle(2, 1)
    sites = reg.sites
    assert sites[0] == (-2, -1) and sites[1] == (-1, -1) and sites[-1] == (2, 1)
    assert all(reg.index(s) == k for k, s in enumerate(sites))
    assert (3, 0) not in reg and (0, 2) not in reg and (2, 1) in reg
    assert np.array_equal(site_coordinates(reg), np.array(sites))


def test_region_errors():
    with pytest.raises(ValueError):
        build_region("rectangle", -1, 2)
    with pytest.raises(ValueError):
        build_region("hexagon", 1)
    with pytest.raises(ValueError):
        build_region("square", 3000)


def test_arbitrary_region():
    reg = build_region("arbitrary", sites=[(0, 0), (2, 1), (0, 0)])
    assert reg.n_sites == 2 and (2, 1) in reg and (1, 0) not in reg


def test_boundary_counts():
    b0 = boundary_sets(square(0))
    assert len(b0.external) == 4 and len(b0.bonds) == 4
    assert b0.starred == {(0, 0)}
    assert len(boundary_sets(square(1)).external) == 12


def test_starred_boundary_against_distance_scan():
    reg = square(2)
    ext = np.array(sorted(boundary_sets(reg).external))
    expect = set()
    for x, y in reg.sites:
        d = ext - np.array([x, y])
        dist = np.hypot(d[:, 0], d[:, 1])
        if np.any(np.isclose(dist, 1.0)):
            expect.add((x, y))
        diag = np.isclose(dist, math.sqrt(2)) & (d[:, 0] == d[:, 1])  # SW or NE
        if diag.any():
            expect.add((x, y))
    assert boundary_sets(reg).starred == expect


def test_bonds_touch_region():
    reg = rectangle(2, 1)
    bs = boundary_sets(reg)
    assert all(s in reg or t in reg for s, t in bs.bonds)
    # every interior bond counted once, every boundary bond once
    assert len(bs.bonds) == 2 * reg.n_sites + (2 * 2 + 1) + (2 * 1 + 1)
    assert not (bs.external & set(reg.sites))


def test_annulus_l10():
    (a,) = annulus_ladder(10, 1)
    expect = {(x, y) for x in range(-10, 11) for y in range(-10, 11) if max(abs(x), abs(y)) > 7}
    assert set(a.outer.sites) == expect
    widths = {max(abs(x), abs(y)) for x, y in a.middle.sites}
    assert widths == {9}


def _min_dist(r1, r2):
    p = np.array(r1.sites, dtype=float)
    q = np.array(r2.sites, dtype=float)
    d = p[:, None, :] - q[None, :, :]
    return np.sqrt((d ** 2).sum(-1)).min()


def test_annulus_l20_distances():
    ann = annulus_ladder(20, 2)
    assert _min_dist(ann[0].middle, ann[1].middle) >= 3
    assert not (set(ann[0].outer.sites) & set(ann[1].outer.sites))


def test_annulus_too_many():
    with pytest.raises(ValueError):
        annulus_ladder(5, 3)


@given(st.integers(-20, 20), st.integers(-20, 20), st.sampled_from([(1, 0), (0, 1), (-1, 0), (0, -1)]))
def test_dual_of_round_trip(x, y, d):
    b = dual_of((x, y), (x + d[0], y + d[1]))
    s, t = b.separated_sites()
    assert {s, t} == {(x, y), (x + d[0], y + d[1])}
    assert dual_of(s, t) == b
    (u, v), (u2, v2) = b.endpoints
    assert abs(u2 - u) + abs(v2 - v) == 1
    # midpoint of the dual bond is the midpoint of the lattice bond
    assert b.midpoint() == ((2 * x + d[0]) / 2, (2 * y + d[1]) / 2)


@given(st.integers(-10, 10), st.integers(-10, 10))
def test_vertex_bonds_and_sites(i, j):
    bonds = vertex_bonds(i, j)
    assert all((i, j) in b.endpoints for b in bonds.values())
    assert bonds["E"].orient == HORIZONTAL and bonds["N"].orient == VERTICAL
    sites = vertex_sites(i, j)
    for s in sites.values():
        assert math.isclose(math.hypot(s.x - (i + 0.5), s.y - (j + 0.5)), math.sqrt(0.5))


def test_dual_of_rejects_non_neighbours():
    with pytest.raises(ValueError):
        dual_of((0, 0), (1, 1))


@given(st.integers(0, 3), st.integers(0, 3))
def test_rectangle_count_property(L, M):
    reg = rectangle(L, M)
    assert reg.n_sites == (2 * L + 1) * (2 * M + 1)
    bs = boundary_sets(reg)
    assert not (bs.external & set(reg.sites))
    assert bs.starred <= set(reg.sites)
