import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alloyloc.lattice import (Box, BoxCover, as_site, box_distance, box_sites,
                              build_cover, one_norm, sup_norm)


def brute_distance(b1, b2):
    s1, s2 = b1.sites(), b2.sites()
    return int(np.abs(s1[:, None, :] - s2[None, :, :]).max(axis=-1).min())


@pytest.mark.parametrize("n, expected", [((0, 0), 0), ((3, -5), 5), ((-2, 2, 1), 2)])
def test_sup_norm(n, expected):
    assert sup_norm(n) == expected


@pytest.mark.parametrize("n, expected", [((0, 0), 0), ((3, -5), 8), ((1, 1, 1), 3)])
def test_one_norm(n, expected):
    assert one_norm(n) == expected


def test_norms_rowwise():
    rows = np.array([[3, -5], [0, 0], [-1, 2]])
    assert sup_norm(rows).tolist() == [5, 0, 2]
    assert one_norm(rows).tolist() == [8, 0, 3]


def test_as_site_promotion_and_errors():
    assert as_site(4) == (4,)
    assert as_site(4, dim=3) == (4, 4, 4)
    assert as_site(np.array([1, 2])) == (1, 2)
    with pytest.raises(ValueError):
        as_site((1.5, 2))
    with pytest.raises(ValueError):
        as_site((1, 2), dim=3)


@pytest.mark.parametrize("center, radius, dim, expected", [
    ((0, 0), 0, 2, [(0, 0)]),
    ((0,), 1, 1, [(-1,), (0,), (1,)]),
    ((2,), 1, 1, [(1,), (2,), (3,)]),
])
def test_box_sites(center, radius, dim, expected):
    b = Box(center, radius)
    assert b.dim == dim
    assert box_sites(b) == expected


def test_box_rejects_negative_radius():
    with pytest.raises(ValueError):
        Box((0,), -1)


def test_box_distance_examples():
    b = Box((0,), 2)
    assert box_distance(b, b) == 0
    assert box_distance(Box((0,), 2), Box((10,), 2)) == 6
    assert box_distance(Box((0, 0), 3), Box((7, 0), 3)) == 1


def test_box_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        box_distance(Box((0,), 1), Box((0, 0), 1))


@given(st.lists(st.integers(-6, 6), min_size=2, max_size=2),
       st.lists(st.integers(-6, 6), min_size=2, max_size=2),
       st.integers(0, 3), st.integers(0, 3))
def test_box_distance_matches_brute_force(c1, c2, r1, r2):
    b1, b2 = Box(tuple(c1), r1), Box(tuple(c2), r2)
    assert box_distance(b1, b2) == brute_distance(b1, b2)


@given(st.integers(1, 3), st.integers(0, 3), st.data())
def test_index_map_roundtrip(dim, radius, data):
    center = tuple(data.draw(st.lists(st.integers(-5, 5), min_size=dim, max_size=dim)))
    b = Box(center, radius)
    imap = b.index_map()
    sites = b.sites()
    idx = imap.index(sites)
    assert idx.tolist() == list(range(b.size))
    assert np.array_equal(imap.site(idx), sites)
    assert imap.site(0) == tuple(int(v) for v in b.lower)


def test_index_map_rejects_outside():
    imap = Box((0,), 1).index_map()
    with pytest.raises(KeyError):
        imap.index(np.array([2]))


def test_box_serialization_roundtrip():
    b = Box((1, -2), 3)
    assert Box.from_dict(b.to_dict()) == b
    assert b.shifted((1, 1)) == Box((2, -1), 3)
    assert b.grown(2).radius == 5


def brute_cover_check(cover):
    """Independent check of covering, overlap and separation rules."""
    region = cover.region
    covered = set()
    for blk in cover.blocks():
        pts = set(box_sites(blk))
        assert pts <= set(box_sites(region))
        covered |= pts
    assert covered == set(box_sites(region))
    N = cover.N
    for a, b in itertools.combinations(cover.blocks(), 2):
        sa, sb = set(box_sites(a)), set(box_sites(b))
        inter = sa & sb
        if inter:
            arr = np.array(sorted(inter))
            per_axis = arr.max(axis=0) - arr.min(axis=0) + 1
            assert per_axis.min() >= N / 2
        else:
            assert brute_distance(a, b) >= N / 4
        for c, blk in ((b.center, a), (a.center, b)):
            d = int(np.abs(blk.sites() - np.asarray(c)).max(axis=-1).min())
            assert d >= N / 5


def test_cover_81_27_exhaustive():
    cover = build_cover(81, 27)
    assert cover.violations() == []
    brute_cover_check(cover)
    assert cover.labels == {(-2,): (-54,), (-1,): (-18,), (0,): (18,), (1,): (54,)}


@pytest.mark.parametrize("N1, N", [(40, 10), (60, 12), (100, 20), (33, 7)])
def test_cover_invariants_1d(N1, N):
    cover = build_cover(N1, N)
    assert cover.violations() == []
    brute_cover_check(cover)


def test_cover_invariants_2d():
    cover = build_cover(30, 8, dim=2)
    assert cover.violations() == []
    brute_cover_check(cover)


def test_cover_half_scale_still_covers():
    cover = build_cover(40, 20)
    covered = set()
    for blk in cover.blocks():
        covered |= set(box_sites(blk))
    assert covered == set(box_sites(cover.region))


@given(st.integers(4, 30), st.floats(0.1, 0.4))
def test_cover_property(N, frac):
    N1 = max(N + 1, int(N / frac))
    cover = build_cover(N1, N)
    region = cover.region
    covered = np.zeros(region.size, dtype=bool)
    imap = region.index_map()
    for blk in cover.blocks():
        assert np.all(region.contains(blk.sites()))
        covered[imap.index(blk.sites())] = True
    assert covered.all()


def test_cover_labels_map_centers():
    cover = build_cover(81, 27, origin=(100,))
    assert cover.region == Box((100,), 81)
    assert cover.center_of(0) == (118,)
    assert cover.center_of((-2,)) == (46,)
    assert isinstance(cover, BoxCover)
    assert len(cover.to_dict()["labels"]) == len(cover.centers)
