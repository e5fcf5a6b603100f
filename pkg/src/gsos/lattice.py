"""Square-lattice and dual-lattice geometry.

Sites are integer pairs ``(x, y)``.  A dual vertex is stored by the integer
pair ``(i, j)`` of its south-west site, i.e. it sits at ``(i + 1/2, j + 1/2)``.
A dual bond is stored by its smaller endpoint and an orientation flag, so that
tuple ordering of :class:`DualBond` is the canonical dual-bond order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

MAX_SITES = 4_000_000

HORIZONTAL = 0
VERTICAL = 1

NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1))


class Site(NamedTuple):
    x: int
    y: int


class DualBond(NamedTuple):
    """Dual bond starting at dual vertex ``(x + 1/2, y + 1/2)``.

    Horizontal bonds end at ``(x + 3/2, y + 1/2)``, vertical ones at
    ``(x + 1/2, y + 3/2)``.
    """

    x: int
    y: int
    orient: int

    @property
    def endpoints(self) -> tuple[tuple[int, int], tuple[int, int]]:
        if self.orient == HORIZONTAL:
            return (self.x, self.y), (self.x + 1, self.y)
        return (self.x, self.y), (self.x, self.y + 1)

    def separated_sites(self) -> tuple[Site, Site]:
        """The two sites at distance 1/2, ordered (smaller, larger)."""
        if self.orient == HORIZONTAL:
            return Site(self.x + 1, self.y), Site(self.x + 1, self.y + 1)
        return Site(self.x, self.y + 1), Site(self.x + 1, self.y + 1)

    def midpoint(self) -> tuple[float, float]:
        if self.orient == HORIZONTAL:
            return (self.x + 1.0, self.y + 0.5)
        return (self.x + 0.5, self.y + 1.0)


def dual_of(a: tuple[int, int], b: tuple[int, int]) -> DualBond:
    """Dual bond crossed by the lattice bond ``ab``."""
    (x1, y1), (x2, y2) = sorted(((int(a[0]), int(a[1])), (int(b[0]), int(b[1]))))
    if y1 == y2 and x2 == x1 + 1:
        return DualBond(x1, y1 - 1, VERTICAL)
    if x1 == x2 and y2 == y1 + 1:
        return DualBond(x1 - 1, y1, HORIZONTAL)
    raise ValueError(f"{a} and {b} are not nearest neighbours")


def lattice_bond(a: tuple[int, int], b: tuple[int, int]) -> tuple[Site, Site]:
    """Lattice bond oriented from the smaller to the larger endpoint."""
    s, t = sorted((Site(*a), Site(*b)))
    return s, t


def vertex_bonds(i: int, j: int) -> dict[str, DualBond]:
    """The four dual bonds incident to dual vertex ``(i, j)`` keyed by compass direction."""
    return {
        "E": DualBond(i, j, HORIZONTAL),
        "W": DualBond(i - 1, j, HORIZONTAL),
        "N": DualBond(i, j, VERTICAL),
        "S": DualBond(i, j - 1, VERTICAL),
    }


def vertex_sites(i: int, j: int) -> dict[str, Site]:
    return {
        "SW": Site(i, j),
        "SE": Site(i + 1, j),
        "NW": Site(i, j + 1),
        "NE": Site(i + 1, j + 1),
    }


@dataclass(frozen=True, eq=False)
class Region:
    """Finite set of sites stored as a boolean mask over its bounding box.

    ``mask[y - y0, x - x0]`` is True for sites in the region.  For the
    rectangle kinds ``L`` and ``M`` are the half-side lengths.
    """

    kind: str
    x0: int
    y0: int
    mask: np.ndarray
    L: int | None = None
    M: int | None = None
    _index: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        index = np.full(mask.shape, -1, dtype=np.int64)
        index[mask] = np.arange(int(mask.sum()))
        index.setflags(write=False)
        object.__setattr__(self, "_index", index)

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape

    @property
    def n_sites(self) -> int:
        return int(self.mask.sum())

    def __len__(self) -> int:
        return self.n_sites

    @property
    def sites(self) -> list[Site]:
        ys, xs = np.nonzero(self.mask)
        return [Site(int(x) + self.x0, int(y) + self.y0) for y, x in zip(ys, xs)]

    def __iter__(self) -> Iterator[Site]:
        return iter(self.sites)

    def __contains__(self, site) -> bool:
        x, y = site
        r, c = y - self.y0, x - self.x0
        if 0 <= r < self.mask.shape[0] and 0 <= c < self.mask.shape[1]:
            return bool(self.mask[r, c])
        return False

    def index(self, site) -> int:
        """Row-major position of ``site`` in :attr:`sites`, or -1."""
        x, y = site
        r, c = y - self.y0, x - self.x0
        if 0 <= r < self.mask.shape[0] and 0 <= c < self.mask.shape[1]:
            return int(self._index[r, c])
        return -1

    @property
    def is_rectangle(self) -> bool:
        return bool(self.mask.all())

    def __eq__(self, other) -> bool:
        if not isinstance(other, Region):
            return NotImplemented
        return (self.x0, self.y0) == (other.x0, other.y0) and np.array_equal(self.mask, other.mask)

    def __hash__(self) -> int:
        return hash((self.x0, self.y0, self.mask.shape, self.mask.tobytes()))


def build_region(kind: str, L: int = 0, M: int | None = None, sites: Iterable | None = None,
                 max_sites: int = MAX_SITES) -> Region:
    """Build ``square`` Λ_L, ``rectangle`` Λ_{L,M}, or an ``arbitrary`` finite site set."""
    if kind == "arbitrary":
        pts = sorted({(int(x), int(y)) for x, y in sites or ()}, key=lambda s: (s[1], s[0]))
        if not pts:
            raise ValueError("arbitrary region needs at least one site")
        if len(pts) > max_sites:
            raise ValueError(f"region has {len(pts)} sites, above the cap of {max_sites}")
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        x0, y0 = min(xs), min(ys)
        mask = np.zeros((max(ys) - y0 + 1, max(xs) - x0 + 1), dtype=bool)
        for x, y in pts:
            mask[y - y0, x - x0] = True
        return Region("arbitrary", x0, y0, mask)
    if kind == "square":
        M = L
    elif kind != "rectangle":
        raise ValueError(f"unknown region kind {kind!r}")
    if M is None:
        raise ValueError("rectangle needs both L and M")
    if L < 0 or M < 0:
        raise ValueError("half-sides must be nonnegative")
    n = (2 * L + 1) * (2 * M + 1)
    if n > max_sites:
        raise ValueError(f"region has {n} sites, above the cap of {max_sites}")
    mask = np.ones((2 * M + 1, 2 * L + 1), dtype=bool)
    return Region(kind, -L, -M, mask, L=L, M=M)


def square(L: int) -> Region:
    return build_region("square", L)


def rectangle(L: int, M: int) -> Region:
    return build_region("rectangle", L, M)


@dataclass(frozen=True)
class BoundarySets:
    external: frozenset  # ∂Λ
    starred: frozenset  # ∂_*Λ
    bonds: tuple  # B_Λ, lattice bonds (smaller, larger), sorted


def external_boundary(region: Region) -> set[Site]:
    out = set()
    for x, y in region.sites:
        for dx, dy in NEIGHBOURS:
            s = Site(x + dx, y + dy)
            if s not in region:
                out.add(s)
    return out


def boundary_sets(region: Region) -> BoundarySets:
    """External boundary, starred boundary and bond set of ``region``."""
    if region.n_sites == 0:
        raise ValueError("empty region")
    ext = external_boundary(region)
    starred = set()
    bonds = set()
    for x, y in region.sites:
        for dx, dy in NEIGHBOURS:
            nb = (x + dx, y + dy)
            bonds.add(lattice_bond((x, y), nb))
            if nb in ext:
                starred.add(Site(x, y))
        # diagonal partners only in the SW and NE directions
        if (x - 1, y - 1) in ext or (x + 1, y + 1) in ext:
            starred.add(Site(x, y))
    return BoundarySets(frozenset(ext), frozenset(starred), tuple(sorted(bonds)))


@dataclass(frozen=True)
class Annulus:
    index: int
    outer: Region  # three nested annuli of width ``index``
    middle: Region


def _ring(outer: int, inner: int) -> Region:
    """Λ_outer \\ Λ_inner (Λ_k empty for k < 0)."""
    size = 2 * outer + 1
    mask = np.ones((size, size), dtype=bool)
    if inner >= 0:
        off = outer - inner
        mask[off:off + 2 * inner + 1, off:off + 2 * inner + 1] = False
    return Region("arbitrary", -outer, -outer, mask)


def annulus_ladder(L: int, N: int) -> list[Annulus]:
    """Nested annuli used to place the i-th level line, i = 1..N."""
    ell = [i * (i + 1) // 2 for i in range(N + 1)]
    if N < 1 or 3 * ell[N] >= L:
        raise ValueError(f"N={N} too large for L={L}: need 3*l_N = {3 * ell[N]} < L")
    out = []
    for i in range(1, N + 1):
        outer = _ring(L - 3 * ell[i - 1], L - 3 * ell[i])
        middle = _ring(L - 3 * ell[i - 1] - i, L - 3 * ell[i] + i)
        out.append(Annulus(i, outer, middle))
    return out


def site_coordinates(region: Region) -> np.ndarray:
    """Integer coordinates (n, 2) of the region's sites in row-major order."""
    ys, xs = np.nonzero(region.mask)
    return np.stack([xs + region.x0, ys + region.y0], axis=1)
