"""Lattice geometry on Z^d.

Sites are integer vectors, boxes are sup-norm balls ``[-N, N]^d + k`` and
every box carries a lexicographic index map that fixes the row/column layout
of all matrices assembled on it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "as_site",
    "sup_norm",
    "one_norm",
    "Box",
    "IndexMap",
    "box_sites",
    "box_distance",
    "BoxCover",
    "build_cover",
]


def as_site(n, dim=None):
    """Return ``n`` as a tuple of Python ints.

    Scalars are promoted to 1-tuples, or to ``dim``-tuples if ``dim`` is given
    and ``n`` is a scalar.
    """
    arr = np.atleast_1d(np.asarray(n))
    if arr.ndim != 1:
        raise ValueError(f"site must be a flat integer vector, got shape {arr.shape}")
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError(f"site coordinates must be integers, got {n!r}")
    site = tuple(int(v) for v in arr)
    if dim is not None and len(site) != dim:
        if len(site) == 1 and np.ndim(n) == 0:
            return site * dim
        raise ValueError(f"site {site} does not have dimension {dim}")
    if len(site) < 1:
        raise ValueError("sites need at least one coordinate")
    return site


def sup_norm(n):
    """Max norm ``max_i |n_i|``. Works row-wise on 2D arrays."""
    arr = np.asarray(n)
    if arr.ndim <= 1:
        return int(np.max(np.abs(np.atleast_1d(arr))))
    return np.max(np.abs(arr), axis=-1)


def one_norm(n):
    """Sum norm ``sum_i |n_i|``. Works row-wise on 2D arrays."""
    arr = np.asarray(n)
    if arr.ndim <= 1:
        return int(np.sum(np.abs(np.atleast_1d(arr))))
    return np.sum(np.abs(arr), axis=-1)


@dataclass(frozen=True)
class Box:
    """Sup-norm box ``Lambda_N(k) = [-N, N]^d + k``.

    Parameters
    ----------
    center : tuple of int
        The center ``k``.
    radius : int
        Half side length ``N >= 0``.
    """

    center: tuple
    radius: int

    def __post_init__(self):
        object.__setattr__(self, "center", as_site(self.center))
        if int(self.radius) != self.radius or self.radius < 0:
            raise ValueError(f"radius must be a nonnegative integer, got {self.radius}")
        object.__setattr__(self, "radius", int(self.radius))

    @classmethod
    def centered(cls, radius, dim):
        return cls((0,) * dim, radius)

    @property
    def dim(self):
        return len(self.center)

    @property
    def side(self):
        return 2 * self.radius + 1

    @property
    def size(self):
        return self.side ** self.dim

    @property
    def lower(self):
        return np.asarray(self.center) - self.radius

    @property
    def upper(self):
        return np.asarray(self.center) + self.radius

    def sites(self):
        """All sites as an ``(size, dim)`` int array in lexicographic order."""
        axes = [np.arange(c - self.radius, c + self.radius + 1) for c in self.center]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    def contains(self, n):
        """Membership test; accepts one site or an ``(m, dim)`` array."""
        arr = np.asarray(n)
        inside = np.abs(arr - np.asarray(self.center)) <= self.radius
        return bool(np.all(inside)) if arr.ndim == 1 else np.all(inside, axis=-1)

    def index_map(self):
        return IndexMap(self)

    def shifted(self, offset):
        return Box(tuple(np.asarray(self.center) + np.asarray(as_site(offset, self.dim))), self.radius)

    def grown(self, amount):
        return Box(self.center, self.radius + int(amount))

    def to_dict(self):
        return {"center": list(self.center), "radius": self.radius, "dim": self.dim}

    @classmethod
    def from_dict(cls, data):
        box = cls(tuple(data["center"]), int(data["radius"]))
        if "dim" in data and int(data["dim"]) != box.dim:
            raise ValueError("box dim does not match its center")
        return box


@dataclass(frozen=True)
class IndexMap:
    """Lexicographic bijection between the sites of a box and ``0..size-1``."""

    box: Box
    _strides: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        side = self.box.side
        strides = tuple(side ** (self.box.dim - 1 - i) for i in range(self.box.dim))
        object.__setattr__(self, "_strides", strides)

    def index(self, n):
        """Linear index of one site, or of each row of an ``(m, dim)`` array."""
        arr = np.asarray(n)
        offset = arr - self.box.lower
        if np.any(offset < 0) or np.any(offset >= self.box.side):
            raise KeyError(f"site(s) outside {self.box}")
        idx = offset @ np.asarray(self._strides)
        return int(idx) if arr.ndim == 1 else idx.astype(np.int64)

    def site(self, i):
        """Inverse of :meth:`index`."""
        i = np.asarray(i)
        if np.any(i < 0) or np.any(i >= self.box.size):
            raise KeyError(f"index {i} outside 0..{self.box.size - 1}")
        coords = [(i // s) % self.box.side for s in self._strides]
        out = np.stack(coords, axis=-1) + self.box.lower
        return tuple(int(c) for c in out) if out.ndim == 1 else out

    def __len__(self):
        return self.box.size


def box_sites(b):
    """Sites of ``b`` as a list of tuples, in index-map order."""
    return [tuple(int(c) for c in row) for row in b.sites()]


def box_distance(b1, b2):
    """Smallest sup-norm distance between a site of ``b1`` and one of ``b2``."""
    if b1.dim != b2.dim:
        raise ValueError(f"dimension mismatch: {b1.dim} vs {b2.dim}")
    gap = np.abs(np.asarray(b1.center) - np.asarray(b2.center)) - b1.radius - b2.radius
    return int(max(0, gap.max()))


@dataclass(frozen=True)
class BoxCover:
    """Cover of ``Lambda_{N1}(origin)`` by boxes of radius ``N``.

    ``labels`` maps integer label vectors to block centers; the label grid
    tracks the ideal spacing ``5N/4``.
    """

    N1: int
    N: int
    origin: tuple
    centers: tuple
    labels: dict

    @property
    def dim(self):
        return len(self.origin)

    @property
    def region(self):
        return Box(self.origin, self.N1)

    def blocks(self):
        return [Box(c, self.N) for c in self.centers]

    def center_of(self, label):
        return self.labels[as_site(label, self.dim)]

    def violations(self):
        """Brute-force check of the cover invariants; returns messages."""
        out = []
        region = self.region
        covered = np.zeros(region.size, dtype=bool)
        imap = region.index_map()
        for c in self.centers:
            blk = Box(c, self.N)
            if not np.all(region.contains(blk.sites())):
                out.append(f"block at {c} leaves the region")
            pts = blk.sites()
            pts = pts[region.contains(pts)]
            covered[imap.index(pts)] = True
        if not covered.all():
            out.append(f"{int((~covered).sum())} sites of the region are uncovered")
        half = self.N / 2
        for a, b in itertools.combinations(self.centers, 2):
            delta = np.abs(np.asarray(a) - np.asarray(b))
            overlap = 2 * self.N + 1 - delta
            if np.all(overlap > 0):
                if overlap.min() < half:
                    out.append(f"blocks {a},{b} overlap by {overlap.min()} < N/2")
            else:
                dist = int(max(0, (delta - 2 * self.N).max()))
                if dist < self.N / 4:
                    out.append(f"disjoint blocks {a},{b} at distance {dist} < N/4")
            sep = max(0, int((delta - self.N).max()))
            if sep < self.N / 5:
                out.append(f"center {b} is {sep} < N/5 from block at {a}")
        return out

    def to_dict(self):
        return {
            "N1": self.N1,
            "N": self.N,
            "origin": list(self.origin),
            "labels": [[list(k), list(v)] for k, v in sorted(self.labels.items())],
        }


def _axis_positions(N1, N):
    """Evenly spread block centers on ``[-(N1-N), N1-N]`` for one axis."""
    span = N1 - N
    if span <= 0:
        return [0]
    min_gap = N + math.ceil(N / 5)
    max_gap = 2 * N + 1 - math.ceil(N / 2)
    ideal = 2 * span / (1.25 * N)

    def layout(g):
        return [int(round(-span + 2 * span * i / g)) for i in range(g + 1)]

    feasible = []
    for g in range(1, 2 * span + 1):
        pos = layout(g)
        gaps = np.diff(pos)
        if gaps.min() >= min_gap and gaps.max() <= max_gap:
            feasible.append(g)
        if gaps.max() < min_gap:
            break
    if feasible:
        g = min(feasible, key=lambda g: (abs(g - ideal), g))
        return layout(g)
    # No layout meets every separation rule (e.g. N = N1/2). Keep the
    # sparsest layout that still covers and let BoxCover.violations()
    # report the rest.
    g = next(g for g in range(1, 2 * span + 1) if np.diff(layout(g)).max() <= 2 * N + 1)
    return layout(g)


def build_cover(N1, N, dim=1, origin=None):
    """Cover ``Lambda_{N1}(origin)`` by boxes ``Lambda_N(k)``.

    Per axis, centers are spread evenly between ``-(N1-N)`` and ``N1-N`` with
    the gap count closest to the ideal spacing ``5N/4`` among layouts that
    keep consecutive overlaps ``>= N/2`` and separations ``>= N/5``. Every
    block lies inside the region. Labels are consecutive integers aligned
    with ``position / (5N/4)``.

    Parameters
    ----------
    N1, N : int
        Region and block radii, ``1 <= N <= N1``.
    dim : int
        Lattice dimension.
    origin : sequence of int, optional
        Region center, default the origin.
    """
    if N < 1 or N > N1:
        raise ValueError(f"need 1 <= N <= N1, got N={N}, N1={N1}")
    origin = as_site(origin if origin is not None else (0,) * dim, dim)
    pos = _axis_positions(int(N1), int(N))
    spacing = 1.25 * N
    offset = int(round(float(np.mean(np.asarray(pos) / spacing - np.arange(len(pos))))))
    axis_labels = [i + offset for i in range(len(pos))]
    labels = {}
    centers = []
    for combo in itertools.product(range(len(pos)), repeat=dim):
        lab = tuple(axis_labels[i] for i in combo)
        ctr = tuple(int(origin[a] + pos[i]) for a, i in enumerate(combo))
        labels[lab] = ctr
        centers.append(ctr)
    return BoxCover(int(N1), int(N), origin, tuple(centers), labels)
