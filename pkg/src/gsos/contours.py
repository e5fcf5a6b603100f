"""Level-set contours and the cluster decomposition of height fields.

A dual vertex ``(i, j)`` sits at ``(i + 1/2, j + 1/2)``; its four bonds are
named E, W, N, S.  Where four contour bonds meet, the linked pairs are
{E, S} and {N, W}: the two sides of the slope +1 line, which keeps SW-NE
diagonal neighbours on the same side of the curve.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .exact import ConstraintSet
from .lattice import HORIZONTAL, VERTICAL, DualBond, Region, Site, dual_of, vertex_bonds, vertex_sites
from .model import STANDARD, BondWeightRule, HeightField, ModelParams, bond_energy

LINKED = ({"E", "S"}, {"N", "W"})
_OPPOSITE = {"E": "W", "W": "E", "N": "S", "S": "N"}
_STEP = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}


def bond_direction(bond: DualBond, vertex: tuple[int, int]) -> str:
    """Compass direction in which ``bond`` leaves ``vertex``."""
    for d, b in vertex_bonds(*vertex).items():
        if b == bond:
            return d
    raise ValueError(f"{bond} does not touch vertex {vertex}")


def is_linked(d1: str, d2: str) -> bool:
    return {d1, d2} in LINKED


@dataclass(frozen=True)
class GeometricContour:
    """Dual-bond path; ``vertices[k]`` and ``vertices[k + 1]`` bound ``bonds[k]``.

    Closed contours have ``vertices[0] == vertices[-1]``.  ``interior`` is
    Λ_γ for closed contours.
    """

    bonds: tuple
    vertices: tuple
    closed: bool
    interior: frozenset = frozenset()

    @property
    def length(self) -> int:
        return len(set(self.bonds))

    @property
    def area(self) -> int:
        return len(self.interior)

    def turns(self):
        """(vertex, incoming direction reversed, outgoing direction) at each interior vertex."""
        n = len(self.bonds)
        idx = range(n) if self.closed else range(1, n)
        for k in idx:
            v = self.vertices[k]
            a = bond_direction(self.bonds[k - 1], v)
            b = bond_direction(self.bonds[k], v)
            yield v, a, b

    def to_record(self) -> dict:
        return {
            "closed": self.closed,
            "length": self.length,
            "vertices": [[i + 0.5, j + 0.5] for i, j in self.vertices],
            "interior_size": self.area if self.closed else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def interior_sites(bonds) -> frozenset:
    """Sites enclosed by a closed dual-bond curve, by ray parity.

    A ray from site (x, y) towards +x crosses the vertical dual bond
    ``(i, y - 1)`` iff ``i >= x``.
    """
    verts = [b for b in bonds if b.orient == VERTICAL]
    if not verts:
        return frozenset()
    rows: dict[int, list[int]] = {}
    for b in set(verts):
        rows.setdefault(b.y + 1, []).append(b.x)
    out = set()
    for y, xs in rows.items():
        xs = sorted(xs)
        # parity flips after each crossing going left to right: inside between pairs
        for k in range(0, len(xs) - 1, 2):
            for x in range(xs[k] + 1, xs[k + 1] + 1):
                out.add(Site(x, y))
    return frozenset(out)


@dataclass(frozen=True)
class ContourDecoration:
    delta: frozenset
    plus: frozenset
    minus: frozenset


def _delta(contour: GeometricContour) -> set:
    out = set()
    for b in contour.bonds:
        out.update(b.separated_sites())
    for v, a, b in contour.turns():
        if a != _OPPOSITE[b] and not is_linked(a, b):
            out.update(vertex_sites(*v).values())
    return out


def decorations(contour: GeometricContour) -> ContourDecoration:
    """Δ_γ: sites separated by a bond of γ, plus the four sites around each
    vertex where γ turns through a non-linked corner."""
    if not contour.closed:
        raise ValueError("decorations need a closed contour; use open_contour for open ones")
    d = frozenset(_delta(contour))
    plus = d & contour.interior
    return ContourDecoration(d, plus, d - plus)


# ----------------------------------------------------------------------------
# level-set tracing


def _boundary_bonds(S: np.ndarray, x0: int, y0: int) -> set:
    """Dual bonds between cells of ``S`` (indexed [y - y0, x - x0]) with different membership."""
    out = set()
    rs, cs = np.nonzero(S[:, 1:] != S[:, :-1])
    for r, c in zip(rs, cs):
        out.add(dual_of((c + x0, r + y0), (c + 1 + x0, r + y0)))
    rs, cs = np.nonzero(S[1:, :] != S[:-1, :])
    for r, c in zip(rs, cs):
        out.add(dual_of((c + x0, r + y0), (c + x0, r + 1 + y0)))
    return out


def _pairing(bonds: set, dangling_ok: bool = False) -> dict:
    """Map (vertex, direction) -> direction of the partner bond at that vertex."""
    at: dict = {}
    for b in bonds:
        for v in b.endpoints:
            at.setdefault(v, []).append(bond_direction(b, v))
    pair = {}
    for v, ds in at.items():
        if len(ds) == 2:
            pair[v, ds[0]], pair[v, ds[1]] = ds[1], ds[0]
        elif len(ds) == 4:
            for p in LINKED:
                a, b = sorted(p)
                pair[v, a], pair[v, b] = b, a
        elif len(ds) != 1 or not dangling_ok:
            raise ValueError(f"dual vertex {v} has odd degree {len(ds)}")
    return pair


def _walk(start_vertex, start_dir, pair, stop=None):
    """Follow bonds from ``start_vertex`` leaving along ``start_dir``."""
    bonds, verts = [], [start_vertex]
    v, d = start_vertex, start_dir
    while True:
        b = vertex_bonds(*v)[d]
        bonds.append(b)
        dx, dy = _STEP[d]
        v = (v[0] + dx, v[1] + dy)
        verts.append(v)
        if (stop is not None and v == stop) or (v == start_vertex and pair[v, _OPPOSITE[d]] == start_dir):
            return bonds, verts
        d = pair[v, _OPPOSITE[d]]


def _cycles(bonds: set) -> list[tuple[list, list]]:
    pair = _pairing(bonds)
    seen = set()
    out = []
    for b in sorted(bonds):
        if b in seen:
            continue
        v = b.endpoints[0]
        bs, vs = _walk(v, bond_direction(b, v), pair)
        seen.update(bs)
        out.append((bs, vs))
    return out


@dataclass
class ContourScan:
    """Result of a level-set scan: h-contours plus curves that failed the test."""

    h: int
    contours: list
    excluded: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.contours)

    def __len__(self):
        return len(self.contours)


def _level_set(field: HeightField, h: int) -> tuple[np.ndarray, int, int]:
    S = np.zeros((field.grid.shape[0] + 2, field.grid.shape[1] + 2), dtype=bool)
    S[1:-1, 1:-1] = field.grid >= h
    return S, field.x0 - 1, field.y0 - 1


def is_h_contour(contour: GeometricContour, phi, h: int) -> bool:
    """φ ≥ h on Δ⁺ and φ ≤ h - 1 on Δ⁻; ``phi`` maps sites to heights."""
    dec = decorations(contour)
    return all(phi(s) >= h for s in dec.plus) and all(phi(s) <= h - 1 for s in dec.minus)


def extract_h_contours(field: HeightField, h: int) -> ContourScan:
    """All closed h-contours of ``field``, outermost first.

    Boundary curves of {φ ≥ h} that fail the h-contour test (hole boundaries)
    or that touch the cells outside the stored grid are put in ``excluded``.
    """
    S, x0, y0 = _level_set(field, h)
    ny, nx = S.shape
    good, bad = [], []
    for bonds, verts in _cycles(_boundary_bonds(S, x0, y0)):
        c = GeometricContour(tuple(bonds), tuple(verts), True, interior_sites(bonds))
        edge = any(not (x0 + 1 <= s.x < x0 + nx - 1 and y0 + 1 <= s.y < y0 + ny - 1)
                   for b in bonds for s in b.separated_sites())
        if not edge and is_h_contour(c, field.__getitem__, h):
            good.append(c)
        else:
            bad.append(c)
    good.sort(key=lambda c: (-c.area, c.bonds))
    return ContourScan(h, good, bad)


def open_contour(field: HeightField) -> tuple[GeometricContour, ContourDecoration]:
    """The open 1-contour of a field under an n=1 staircase.

    It runs from (-L-1/2, a-1/2) to (L+1/2, b-1/2).  Δ± are taken from the
    closure γ' that continues east along the right wall, around the top of the
    box and back along the left wall, intersected with Λ.
    """
    bc = field.bc
    if bc.kind != "staircase" or len(bc.a) != 1:
        raise ValueError("open_contour needs an n=1 staircase boundary condition")
    reg = field.region
    L, M = reg.L, reg.M
    if L is None or not reg.is_rectangle:
        raise ValueError("open_contour needs a rectangular region Λ_{L,M}")
    a, b = bc.a[0], bc.b[0]
    pad = 2
    X0, Y0 = -L - pad, -M - pad
    W, Hh = 2 * L + 1 + 2 * pad, 2 * M + 1 + 2 * pad
    S = np.zeros((Hh, W), dtype=bool)
    ys = np.arange(Y0, Y0 + Hh)
    S[:, : pad] = (ys >= a)[:, None]  # left wall extended
    S[:, -pad:] = (ys >= b)[:, None]
    S[ys > M, pad:-pad] = True
    inner = field.heights >= 1
    S[pad:-pad, pad:-pad] = inner
    bonds = _boundary_bonds(S, X0, Y0)
    pair = _pairing(bonds, dangling_ok=True)  # the walls are cut at the array edge
    start, stop = (-L - 1, a - 1), (L, b - 1)
    if (start, "W") not in pair:
        raise ValueError("no crossing contour at the left wall")
    bs, vs = _walk(start, pair[start, "W"], pair, stop=stop)
    if vs[-1] != stop:
        raise ValueError("no crossing contour joins the two walls")
    gamma = GeometricContour(tuple(bs), tuple(vs), False)
    closure_b, closure_v = _closure(vs, L, M, a, b)
    loop = GeometricContour(tuple(bs) + tuple(closure_b), tuple(vs) + tuple(closure_v[1:]), True,
                            interior_sites(list(bs) + list(closure_b)))
    dec = decorations(loop)
    keep = frozenset(s for s in dec.delta if s in reg)
    plus = dec.plus & keep
    return gamma, ContourDecoration(keep, plus, keep - plus)


def _closure(vs, L, M, a, b):
    """Dual path from (L, b-1) east, north above the box, west and back to (-L-1, a-1)."""
    path = [vs[-1]]

    def go(d, n):
        for _ in range(n):
            dx, dy = _STEP[d]
            v = path[-1]
            path.append((v[0] + dx, v[1] + dy))

    top = M + 1
    go("E", 1)
    go("N", top - (b - 1))
    go("W", 2 * L + 3)
    go("S", top - (a - 1))
    go("E", 1)
    bonds = []
    for u, v in zip(path, path[1:]):
        d = next(k for k, s in _STEP.items() if (u[0] + s[0], u[1] + s[1]) == v)
        bonds.append(vertex_bonds(*u)[d])
    return bonds, path


def open_contour_delta(field: HeightField) -> ConstraintSet:
    """ConstraintSet Δ± with the tilted rule marking the open contour's bonds."""
    gamma, dec = open_contour(field)
    return ConstraintSet.from_delta(dec.plus, dec.minus, tilt=BondWeightRule(frozenset(gamma.bonds)))


# ----------------------------------------------------------------------------
# clusters


def gradient(phi, bond: DualBond) -> int:
    """φ(larger) - φ(smaller) across the lattice bond crossed by ``bond``."""
    s, t = bond.separated_sites()
    return int(phi(t) - phi(s))


@dataclass(frozen=True)
class Cluster:
    """Connected support Γ with one nonzero gradient per bond, in bond order."""

    support: tuple
    gradients: tuple

    def __post_init__(self):
        if len(self.support) != len(self.gradients):
            raise ValueError("one gradient per support bond")
        if list(self.support) != sorted(set(self.support)):
            raise ValueError("support must be sorted and distinct")

    @functools.cached_property
    def vertices(self) -> frozenset:
        return frozenset(v for b in self.support for v in b.endpoints)

    def surface(self) -> dict:
        """Φ(X) on the sites it touches (zero elsewhere); raises if inconsistent."""
        return _integrate(dict(zip(self.support, self.gradients)))

    def interior(self) -> frozenset:
        return frozenset(s for s, v in _face_labels(self.support).items() if v > 0)

    def external_boundary(self) -> frozenset:
        lab = _face_labels(self.support)
        return frozenset(s for s, v in lab.items() if v == 0
                         and any(lab.get(n, 0) > 0 for n in _nbrs(s)))

    def to_record(self) -> dict:
        return {"support": [list(b) for b in self.support], "gradients": list(self.gradients)}


def _nbrs(s):
    x, y = s
    return ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1))


def _bbox(bonds):
    pts = [s for b in bonds for s in b.separated_sites()]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    return min(xs) - 1, min(ys) - 1, max(xs) + 1, max(ys) + 1


def _face_labels(bonds) -> dict:
    """Label sites in the bounding box (plus a ring) by face; 0 is the unbounded face.

    Faces are components of a doubled grid whose even cells are sites and
    whose odd cells are lattice bonds, blocked where a support bond crosses.
    """
    x0, y0, x1, y1 = _bbox(bonds)
    W, H = x1 - x0 + 1, y1 - y0 + 1
    fine = np.zeros((2 * H - 1, 2 * W - 1), dtype=bool)
    fine[::2, ::2] = True
    fine[::2, 1::2] = True
    fine[1::2, ::2] = True
    for b in bonds:
        s, t = b.separated_sites()
        fine[s.y + t.y - 2 * y0, s.x + t.x - 2 * x0] = False
    lab, _ = ndimage.label(fine)
    sites = lab[::2, ::2]
    # renumber by first appearance, the corner (unbounded face) first
    _, first, inv = np.unique(sites.ravel(), return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    ids = rank[inv].reshape(sites.shape)
    return {(x0 + c, y0 + r): int(ids[r, c]) for r in range(H) for c in range(W)}


def _integrate(grads: dict) -> dict:
    """Surface with the given gradients on support bonds and zero elsewhere, Φ = 0 outside.

    Integrates along the bottom row and then up the columns, and checks that
    every bond gradient is reproduced.
    """
    x0, y0, x1, y1 = _bbox(grads)
    W, H = x1 - x0 + 1, y1 - y0 + 1
    gx = np.zeros((H, W - 1), dtype=np.int64)  # φ(x+1, y) - φ(x, y)
    gy = np.zeros((H - 1, W), dtype=np.int64)  # φ(x, y+1) - φ(x, y)
    for b, g in grads.items():
        s, _ = b.separated_sites()
        if b.orient == VERTICAL:
            gx[s.y - y0, s.x - x0] = g
        else:
            gy[s.y - y0, s.x - x0] = g
    phi = np.zeros((H, W), dtype=np.int64)
    phi[0, 1:] = np.cumsum(gx[0])
    phi[1:] = phi[0] + np.cumsum(gy, axis=0)
    if not (np.array_equal(np.diff(phi, axis=1), gx) and np.array_equal(np.diff(phi, axis=0), gy)):
        raise ValueError("gradients are not integrable (not a cluster of a surface)")
    if phi[0].any() or phi[-1].any() or phi[:, 0].any() or phi[:, -1].any():
        raise ValueError("surface does not vanish outside the support")
    rs, cs = np.nonzero(phi)
    return {Site(int(c) + x0, int(r) + y0): int(phi[r, c]) for r, c in zip(rs, cs)}


@dataclass
class ClusterConfig:
    clusters: list

    @property
    def compatible(self) -> bool:
        seen = set()
        for c in self.clusters:
            vs = c.vertices
            if seen & vs:
                return False
            seen |= vs
        return True

    def to_record(self) -> dict:
        return {"clusters": [c.to_record() for c in self.clusters], "compatible": self.compatible}

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def cluster_decompose(field: HeightField) -> ClusterConfig:
    """Split the nonzero-gradient dual bonds into vertex-connected clusters.

    Components are found by labelling a doubled dual grid whose even cells
    are dual vertices and whose odd cells are dual bonds.
    """
    if field.bc.kind not in ("zero",) and not (field.bc.kind == "constant" and field.bc.value == 0):
        raise ValueError("cluster decomposition needs zero boundary condition")
    g = field.grid
    X0, Y0 = field.x0, field.y0
    H, W = g.shape
    dx = g[:, 1:] - g[:, :-1]
    dy = g[1:, :] - g[:-1, :]
    fine = np.zeros((2 * H + 1, 2 * W + 1), dtype=bool)
    hr, hc = np.nonzero(dx)
    vr, vc = np.nonzero(dy)
    fine[2 * hr + 1, 2 * hc + 2] = True
    fine[2 * hr, 2 * hc + 2] = True
    fine[2 * hr + 2, 2 * hc + 2] = True
    fine[2 * vr + 2, 2 * vc + 1] = True
    fine[2 * vr + 2, 2 * vc] = True
    fine[2 * vr + 2, 2 * vc + 2] = True
    lab, n = ndimage.label(fine)
    groups: list = [[] for _ in range(n)]
    for r, c in zip(hr, hc):
        b = DualBond(int(X0 + c), int(Y0 + r - 1), VERTICAL)
        groups[lab[2 * r + 1, 2 * c + 2] - 1].append((b, int(dx[r, c])))
    for r, c in zip(vr, vc):
        b = DualBond(int(X0 + c - 1), int(Y0 + r), HORIZONTAL)
        groups[lab[2 * r + 2, 2 * c + 1] - 1].append((b, int(dy[r, c])))
    clusters = []
    for grp in groups:
        grp.sort()
        clusters.append(Cluster(tuple(b for b, _ in grp), tuple(v for _, v in grp)))
    clusters.sort(key=lambda c: c.support)
    return ClusterConfig(clusters)


def reconstruct(config: ClusterConfig, region: Region) -> HeightField:
    """Φ = Σ Φ(X_i) restricted to ``region`` (zero bc)."""
    if not config.compatible:
        raise ValueError("incompatible cluster configuration")
    f = HeightField(region, 0)
    for c in config.clusters:
        for s, v in c.surface().items():
            if s not in region:
                raise ValueError(f"cluster surface is nonzero at {s}, outside the region")
            f[s] = f[s] + v
    return f


def is_legal(cluster: Cluster, constraints: ConstraintSet | None) -> bool:
    """Φ(X) ≥ 0 on Δ⁺ and ≤ 0 on Δ⁻."""
    phi = cluster.surface()
    if constraints is None:
        return True
    return (all(phi.get(s, 0) >= 0 for s in constraints.plus)
            and all(phi.get(s, 0) <= 0 for s in constraints.minus))


def weight_product(config: ClusterConfig, params: ModelParams, rule: BondWeightRule = STANDARD) -> float:
    """log of the product of cluster weights: -β Σ bond costs of the recorded gradients."""
    if not config.compatible:
        raise ValueError("incompatible cluster configuration")
    total = 0.0
    for c in config.clusters:
        marked = np.array([b in rule.marked for b in c.support], dtype=bool)
        total += float(np.sum(bond_energy(np.array(c.gradients), params.p, marked)))
    return -params.beta * total


# ----------------------------------------------------------------------------
# independent cluster enumeration on a rectangle's dual grid


def enumerate_clusters(region: Region, window=(-1, 1), constraints: ConstraintSet | None = None):
    return _enumerate_clusters(region, window, constraints)[0]


@numba.njit(cache=True)
def _leafless_connected(n_edges, ends, n_vertices):
    """Bit masks of nonempty edge sets with no degree-1 vertex and one component."""
    inc = np.zeros(n_vertices, dtype=np.int64)
    for k in range(n_edges):
        inc[ends[k, 0]] |= 1 << k
        inc[ends[k, 1]] |= 1 << k
    out = []
    for m in range(1, 1 << n_edges):
        ok = True
        for v in range(n_vertices):
            x = m & inc[v]
            if x != 0 and (x & (x - 1)) == 0:
                ok = False
                break
        if not ok:
            continue
        # flood over edges sharing a vertex, starting from the lowest edge
        low = m & -m
        seen = low
        grow = True
        while grow:
            grow = False
            for k in range(n_edges):
                bit = 1 << k
                if (m & bit) and not (seen & bit):
                    if (seen & inc[ends[k, 0]]) or (seen & inc[ends[k, 1]]):
                        seen |= bit
                        grow = True
        if seen == m:
            out.append(m)
    return out


@functools.lru_cache(maxsize=8)
def _support_table(nx: int, ny: int):
    """Supports of an nx-by-ny box (origin at 0) with their face labels.

    Sites are the box plus a one-site ring, indexed row-major in that
    (ny+2, nx+2) array; faces are numbered with 0 the unbounded face.
    """
    vi = [(i, j) for j in range(-1, ny) for i in range(-1, nx)]
    vid = {v: k for k, v in enumerate(vi)}
    edges = []
    for (i, j) in vi:
        if (i + 1, j) in vid:
            edges.append(DualBond(i, j, HORIZONTAL))
        if (i, j + 1) in vid:
            edges.append(DualBond(i, j, VERTICAL))
    edges.sort()
    E = len(edges)
    if E > 26:
        raise ValueError("dual grid too large for subset enumeration")
    ends = np.array([[vid[v] for v in b.endpoints] for b in edges], dtype=np.int64)
    masks = np.array(_leafless_connected(E, ends, len(vi)), dtype=np.int64)
    ring_v = np.array([v[0] in (-1, nx - 1) or v[1] in (-1, ny - 1) for v in vi])
    touches = np.array([(ring_v[ends[k]]).any() for k in range(E)])
    # doubled site grid over the box plus ring; site (x, y) at [2(y+1), 2(x+1)]
    Hs, Ws = ny + 2, nx + 2
    base = np.zeros((2 * Hs - 1, 2 * Ws - 1), dtype=bool)
    base[::2, ::2] = True
    base[::2, 1::2] = True
    base[1::2, ::2] = True
    sep = np.empty((E, 2), dtype=np.int64)
    block = np.empty((E, 2), dtype=np.int64)
    for k, b in enumerate(edges):
        s, t = b.separated_sites()
        sep[k] = ((s.y + 1) * Ws + s.x + 1, (t.y + 1) * Ws + t.x + 1)
        block[k] = (s.y + t.y + 2, s.x + t.x + 2)
    table = []
    for m in masks:
        on = np.flatnonzero((m >> np.arange(E)) & 1)
        fine = base.copy()
        fine[block[on, 0], block[on, 1]] = False
        lab, _ = ndimage.label(fine)
        sites = lab[::2, ::2].ravel()
        _, first, inv = np.unique(sites, return_index=True, return_inverse=True)
        faces = np.argsort(np.argsort(first))[inv]  # corner site (unbounded face) gets 0
        table.append((on, faces, bool(touches[on].any())))
    return edges, sep, table


@functools.lru_cache(maxsize=64)
def _face_values(lo: int, hi: int, n_faces: int) -> np.ndarray:
    """Every assignment of lo..hi to faces 1..n_faces; face 0 (outside) is 0."""
    hs = np.arange(lo, hi + 1)
    grids = np.stack(np.meshgrid(*([hs] * n_faces), indexing="ij"), -1).reshape(-1, n_faces)
    return np.concatenate([np.zeros((len(grids), 1), dtype=np.int64), grids], axis=1)


@functools.lru_cache(maxsize=8)
def _all_clusters(nx: int, ny: int, x0: int, y0: int, hmin: int, hmax: int):
    """Every cluster of the box with its surface as a (n_clusters, n_sites) array."""
    edges, sep, table = _support_table(nx, ny)
    inside = np.zeros((ny + 2, nx + 2), dtype=bool)
    inside[1:-1, 1:-1] = True
    inside = np.flatnonzero(inside.ravel())  # row-major = region site order
    out, surfaces = [], []
    for on, faces, touches_ring in table:
        n_faces = int(faces.max())
        span = (hmin, hmax) if touches_ring else (hmin - hmax, hmax - hmin)
        val = _face_values(*span, n_faces)
        f = faces[sep[on]]
        grads = val[:, f[:, 1]] - val[:, f[:, 0]]
        keep = np.all(grads != 0, axis=1)
        bonds = tuple(DualBond(edges[k].x + x0, edges[k].y + y0, edges[k].orient) for k in on)
        out.extend(Cluster(bonds, tuple(row)) for row in grads[keep].tolist())
        surfaces.append(val[keep][:, faces[inside]])
    return tuple(out), np.concatenate(surfaces)


def _enumerate_clusters(region: Region, window=(-1, 1), constraints: ConstraintSet | None = None):
    if not region.is_rectangle:
        raise ValueError("enumerate_clusters needs a rectangle")
    ny, nx = region.shape
    clusters, surf = _all_clusters(nx, ny, region.x0, region.y0, *window)
    if constraints is None:
        return list(clusters), list(surf)
    sites = region.sites
    plus = np.array([s in constraints.plus for s in sites])
    minus = np.array([s in constraints.minus for s in sites])
    keep = np.all(surf[:, plus] >= 0, axis=1) & np.all(surf[:, minus] <= 0, axis=1)
    return [c for c, k in zip(clusters, keep) if k], list(surf[keep])


def compatible_configs(clusters, region: Region, window=(-1, 1), surfaces=None):
    """Yield (cluster indices, surface) for every vertex-disjoint subset of
    ``clusters`` whose summed surface lies in ``window`` on ``region``.

    Branches on the lowest free dual vertex: either no chosen cluster uses it,
    or it is the lowest vertex of exactly one chosen cluster.
    """
    hmin, hmax = window
    sites = region.sites
    pos = {s: k for k, s in enumerate(sites)}
    verts = sorted({v for c in clusters for v in c.vertices})
    vid = {v: k for k, v in enumerate(verts)}
    by_low: dict = {}
    for n, c in enumerate(clusters):
        m = 0
        for v in c.vertices:
            m |= 1 << vid[v]
        if surfaces is not None:
            surf = np.asarray(surfaces[n], dtype=np.int64)
        else:
            surf = np.zeros(len(sites), dtype=np.int64)
            for s, h in c.surface().items():
                surf[pos[s]] = h
        by_low.setdefault((m & -m).bit_length() - 1, []).append((m, n, surf))

    def rec(avail, chosen, surf):
        if avail == 0:
            if surf.min() >= hmin and surf.max() <= hmax:
                yield tuple(chosen), surf
            return
        low = (avail & -avail).bit_length() - 1
        yield from rec(avail & ~(1 << low), chosen, surf)
        for m, n, s in by_low.get(low, ()):
            if m & avail == m:
                chosen.append(n)
                yield from rec(avail & ~m, chosen, surf + s)
                chosen.pop()

    yield from rec((1 << len(verts)) - 1, [], np.zeros(len(sites), dtype=np.int64))


def cluster_partition_sum(region: Region, params: ModelParams, window=(-1, 1),
                          constraints: ConstraintSet | None = None,
                          rule: BondWeightRule = STANDARD) -> tuple[float, int, set]:
    """log Σ over compatible configs of legal clusters of Π cluster weights.

    Also returns the number of configs and the set of reconstructed surfaces
    (as height tuples), so injectivity can be checked by comparing sizes.
    """
    clusters, surfs = _enumerate_clusters(region, window, constraints)
    logw = np.array([-params.beta * float(np.sum(bond_energy(
        np.array(c.gradients), params.p, np.array([b in rule.marked for b in c.support]))))
        for c in clusters])
    terms, surfaces, count = [], set(), 0
    for chosen, surf in compatible_configs(clusters, region, window, surfs):
        terms.append(float(logw[list(chosen)].sum()))
        surfaces.add(tuple(int(v) for v in surf))
        count += 1
    return float(np.logaddexp.reduce(terms)), count, surfaces
