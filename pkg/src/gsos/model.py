"""Height fields, boundary conditions and the |∇φ|^p Hamiltonian."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .lattice import (
    HORIZONTAL,
    VERTICAL,
    DualBond,
    Region,
    Site,
    boundary_sets,
    dual_of,
    rectangle,
)


@dataclass(frozen=True)
class ModelParams:
    """Exponent ``p`` in [1, inf] and inverse temperature ``beta``.

    ``p = math.inf`` selects the restricted model, where a gradient ``a``
    costs ``|a|`` if ``|a| <= 1`` and is forbidden otherwise.
    """

    p: float
    beta: float

    def __post_init__(self):
        if not (self.p >= 1):
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not (self.beta > 0):
            raise ValueError(f"beta must be > 0, got {self.beta}")

    @property
    def restricted(self) -> bool:
        return math.isinf(self.p)


def bond_energy(a, p: float, tilted=False):
    """Cost of a gradient ``a`` across one bond; vectorised over ``a`` and ``tilted``.

    The tilted rule ``(1 + a)^p - 1`` applies to bonds crossing a marked dual
    bond.  Forbidden gradients get ``inf``.
    """
    a = np.abs(np.asarray(a, dtype=float))
    tilted = np.asarray(tilted, dtype=bool)
    if math.isinf(p):
        std = np.where(a <= 1, a, np.inf)
        tlt = np.where(a == 0, 0.0, np.inf)
    else:
        std = a ** p
        tlt = (1.0 + a) ** p - 1.0
    out = np.where(tilted, tlt, std)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class BondWeightRule:
    """Standard weights, or tilted weights on bonds crossing ``marked`` dual bonds."""

    marked: frozenset = frozenset()

    @classmethod
    def standard(cls) -> "BondWeightRule":
        return cls()

    @classmethod
    def tilted(cls, dual_bonds: Iterable[DualBond]) -> "BondWeightRule":
        return cls(frozenset(DualBond(*b) for b in dual_bonds))

    @property
    def is_tilted(self) -> bool:
        return bool(self.marked)

    def is_marked(self, a, b) -> bool:
        return bool(self.marked) and dual_of(a, b) in self.marked

    def masks(self, x0: int, y0: int, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        """Marked flags for the bonds of a grid whose cell ``[0, 0]`` is site ``(x0, y0)``.

        Returns ``(hmask, vmask)``: ``hmask[r, c]`` is the bond between cells
        ``[r, c]`` and ``[r, c + 1]``, ``vmask[r, c]`` between ``[r, c]`` and ``[r + 1, c]``.
        """
        ny, nx = shape
        hmask = np.zeros((ny, nx - 1), dtype=bool)
        vmask = np.zeros((ny - 1, nx), dtype=bool)
        for b in self.marked:
            s, t = b.separated_sites()
            r, c = s.y - y0, s.x - x0
            if b.orient == VERTICAL:  # crosses a horizontal lattice bond
                if 0 <= r < ny and 0 <= c < nx - 1:
                    hmask[r, c] = True
            elif 0 <= r < ny - 1 and 0 <= c < nx:
                vmask[r, c] = True
        return hmask, vmask


STANDARD = BondWeightRule()


@dataclass(frozen=True)
class BoundaryCondition:
    """Heights τ outside the region.

    kinds: ``zero``, ``constant`` (``value``), ``staircase`` (``a``, ``b``, ``L``,
    ``M``) and ``explicit`` (``mapping`` site -> height, ``value`` elsewhere).
    """

    kind: str = "zero"
    value: float = 0
    a: tuple = ()
    b: tuple = ()
    L: int | None = None
    M: int | None = None
    mapping: Mapping | None = field(default=None, compare=False)

    @property
    def n_steps(self) -> int:
        return len(self.a)

    def __call__(self, x: int, y: int):
        if self.kind == "zero":
            return 0
        if self.kind == "constant":
            return self.value
        if self.kind == "staircase":
            if abs(x) <= self.L:
                if y >= self.M + 1:
                    return self.n_steps
                return 0
            steps = self.a if x < 0 else self.b
            return sum(1 for s in steps if s <= y)
        if self.kind == "explicit":
            return self.mapping.get((x, y), self.value)
        raise ValueError(f"unknown boundary kind {self.kind!r}")

    def shifted(self, c) -> "BoundaryCondition":
        if self.kind == "zero":
            return constant_bc(c)
        if self.kind == "constant":
            return constant_bc(self.value + c)
        if self.kind == "explicit":
            return explicit_bc({k: v + c for k, v in self.mapping.items()}, self.value + c)
        raise ValueError("staircase boundary conditions cannot be shifted; use an explicit map")

    def token(self) -> str:
        """Short text form used in field files and on the command line."""
        if self.kind == "zero":
            return "zero"
        if self.kind == "constant":
            return f"constant:{self.value:g}"
        if self.kind == "staircase":
            return "staircase:" + ",".join(map(str, self.a)) + "/" + ",".join(map(str, self.b))
        raise ValueError("explicit boundary conditions have no text form")


ZERO_BC = BoundaryCondition()


def constant_bc(c) -> BoundaryCondition:
    return BoundaryCondition("constant", value=c)


def explicit_bc(mapping: Mapping, default=0) -> BoundaryCondition:
    return BoundaryCondition("explicit", value=default, mapping=dict(mapping))


def staircase_bc(n: int, a: Iterable[int], b: Iterable[int], L: int, M: int) -> BoundaryCondition:
    """Boundary heights stepping from 0 (bottom row) to n (top row).

    The left wall ``u = -L-1`` has height i for a_i <= v < a_{i+1}, the right
    wall likewise with ``b``.
    """
    a, b = tuple(int(v) for v in a), tuple(int(v) for v in b)
    if len(a) != n or len(b) != n:
        raise ValueError(f"need {n} step positions on each wall, got {len(a)} and {len(b)}")
    for name, steps in (("a", a), ("b", b)):
        if any(s > t for s, t in zip(steps, steps[1:])):
            raise ValueError(f"{name} must be nondecreasing, got {steps}")
        if steps and (steps[0] < -M or steps[-1] > M):
            raise ValueError(f"{name} must lie in [-M, M] = [{-M}, {M}], got {steps}")
    if n == 0:
        return BoundaryCondition("staircase", L=L, M=M)
    return BoundaryCondition("staircase", a=a, b=b, L=L, M=M)


def parse_bc(token: str, L: int | None = None, M: int | None = None) -> BoundaryCondition:
    """Inverse of :meth:`BoundaryCondition.token`."""
    kind, _, rest = token.partition(":")
    if kind == "zero":
        return ZERO_BC
    if kind == "constant":
        return constant_bc(int(rest) if rest.lstrip("-").isdigit() else float(rest))
    if kind == "staircase":
        left, sep, right = rest.partition("/")
        if not sep:
            raise ValueError(f"staircase needs 'a1,a2/b1,b2', got {rest!r}")
        a = [int(v) for v in left.split(",") if v]
        b = [int(v) for v in right.split(",") if v]
        return staircase_bc(len(a), a, b, L, M)
    raise ValueError(f"unknown boundary condition {token!r}")


class HeightField:
    """Integer heights on a region, boundary heights outside.

    ``grid`` covers the region's bounding box plus a one-cell ring; cells not
    in the region hold the boundary value, so every bond of B_Λ lives inside
    the grid.  ``grid[y - y0 + 1, x - x0 + 1]`` is the height at ``(x, y)``.
    """

    def __init__(self, region: Region, heights=None, bc: BoundaryCondition = ZERO_BC):
        self.region = region
        self.bc = bc
        ny, nx = region.shape
        grid = np.zeros((ny + 2, nx + 2), dtype=np.int64)
        inside = np.zeros_like(grid, dtype=bool)
        inside[1:-1, 1:-1] = region.mask
        if bc.kind in ("zero", "constant"):
            if bc.value != int(bc.value):
                raise ValueError("height fields need integer boundary values")
            grid[~inside] = int(bc.value)
        for r in range(ny + 2) if bc.kind not in ("zero", "constant") else ():
            for c in range(nx + 2):
                if not inside[r, c]:
                    v = bc(c - 1 + region.x0, r - 1 + region.y0)
                    if v != int(v):
                        raise ValueError("height fields need integer boundary values")
                    grid[r, c] = int(v)
        self.inside = inside
        self.grid = grid
        if heights is not None:
            self.set_heights(heights)

    @property
    def x0(self) -> int:
        return self.region.x0 - 1

    @property
    def y0(self) -> int:
        return self.region.y0 - 1

    def set_heights(self, heights) -> None:
        h = np.asarray(heights)
        if h.ndim == 0:
            self.grid[self.inside] = int(h)
        elif h.ndim == 1:
            if len(h) != self.region.n_sites:
                raise ValueError("height vector length does not match the region")
            self.grid[self.inside] = h
        else:
            if h.shape != self.region.shape:
                raise ValueError(f"height array shape {h.shape} != region shape {self.region.shape}")
            inner = self.grid[1:-1, 1:-1]
            inner[self.region.mask] = h[self.region.mask]

    @property
    def heights(self) -> np.ndarray:
        """Bounding-box view (rows = y ascending); cells outside the region hold τ."""
        return self.grid[1:-1, 1:-1]

    def site_heights(self) -> np.ndarray:
        """Heights in row-major site order."""
        return self.grid[self.inside].copy()

    def __getitem__(self, site):
        x, y = site
        r, c = y - self.y0, x - self.x0
        if 0 <= r < self.grid.shape[0] and 0 <= c < self.grid.shape[1]:
            return int(self.grid[r, c])
        return self.bc(x, y)

    def __setitem__(self, site, value) -> None:
        if site not in self.region:
            raise KeyError(f"{site} is not in the region")
        x, y = site
        self.grid[y - self.y0, x - self.x0] = int(value)

    def copy(self) -> "HeightField":
        new = HeightField.__new__(HeightField)
        new.region, new.bc, new.inside = self.region, self.bc, self.inside
        new.grid = self.grid.copy()
        return new

    def __eq__(self, other) -> bool:
        return (isinstance(other, HeightField) and self.region == other.region
                and np.array_equal(self.grid, other.grid))

    def __repr__(self) -> str:
        return f"HeightField(region={self.region.kind}{self.region.shape}, bc={self.bc.kind})"


def _bond_arrays(field: HeightField, rule: BondWeightRule):
    g = field.grid
    ins = field.inside
    dh = np.abs(np.diff(g, axis=1))
    dv = np.abs(np.diff(g, axis=0))
    in_h = ins[:, :-1] | ins[:, 1:]
    in_v = ins[:-1, :] | ins[1:, :]
    hm, vm = rule.masks(field.x0, field.y0, g.shape)
    return (dh[in_h], hm[in_h]), (dv[in_v], vm[in_v])


def energy(field: HeightField, params: ModelParams, rule: BondWeightRule = STANDARD) -> float:
    """Σ over B_Λ of the bond costs; ``inf`` when a restricted-model gradient exceeds 1."""
    total = 0.0
    for grads, marked in _bond_arrays(field, rule):
        total += float(np.sum(bond_energy(grads, params.p, marked)))
    return total


def energy_delta(field: HeightField, site, new_height: int, params: ModelParams,
                 rule: BondWeightRule = STANDARD) -> float:
    """Energy change from setting ``site`` to ``new_height``, from its four bonds."""
    if site not in field.region:
        raise KeyError(f"{site} is not in the region")
    x, y = site
    old = field[site]
    before = after = 0.0
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = (x + dx, y + dy)
        hn = field[nb]
        marked = rule.is_marked(site, nb)
        before += bond_energy(old - hn, params.p, marked)
        after += bond_energy(new_height - hn, params.p, marked)
    if math.isinf(before) and math.isinf(after):
        return 0.0 if old == new_height else math.nan
    return after - before


@dataclass(frozen=True)
class FKGReport:
    passed: bool
    n_checked: int
    violation: tuple | None = None  # (tilted, a, b, c, d, lhs, rhs)


def check_fkg_lattice(p: float, lo: int = -3, hi: int = 3, tilted=(False, True)) -> FKGReport:
    """Exhaustively test the four-point max/min inequality on [lo, hi]^4.

    h(|max(a,c) - max(b,d)|) + h(|min(a,c) - min(b,d)|) <= h(|a-b|) + h(|c-d|)
    """
    if isinstance(tilted, bool):
        tilted = (tilted,)
    vals = np.arange(lo, hi + 1)
    a, b, c, d = (g.ravel() for g in np.meshgrid(vals, vals, vals, vals, indexing="ij"))
    n = 0
    for t in tilted:
        lhs = bond_energy(np.maximum(a, c) - np.maximum(b, d), p, t) + bond_energy(
            np.minimum(a, c) - np.minimum(b, d), p, t)
        rhs = bond_energy(a - b, p, t) + bond_energy(c - d, p, t)
        with np.errstate(invalid="ignore"):
            slack = np.where(np.isinf(rhs), 0.0, 1e-12 * (1.0 + np.abs(rhs)))
        bad = ~(lhs <= rhs + slack)
        n += len(a)
        if bad.any():
            i = int(np.argmax(bad))
            return FKGReport(False, n, (t, int(a[i]), int(b[i]), int(c[i]), int(d[i]),
                                        float(lhs[i]), float(rhs[i])))
    return FKGReport(True, n)


def _format_p(p: float) -> str:
    return "inf" if math.isinf(p) else repr(float(p))


def format_field(field: HeightField, params: ModelParams) -> str:
    """Text form of a rectangular field: header ``L M p beta bc`` then rows, y ascending."""
    reg = field.region
    if not reg.is_rectangle or reg.L is None:
        raise ValueError("only rectangles centred at the origin can be saved")
    lines = [f"{reg.L} {reg.M} {_format_p(params.p)} {params.beta!r} {field.bc.token()}"]
    lines += [" ".join(str(int(v)) for v in row) for row in field.heights]
    return "\n".join(lines) + "\n"


def save_field(field: HeightField, params: ModelParams, path) -> None:
    Path(path).write_text(format_field(field, params))


def load_field(path) -> tuple[HeightField, ModelParams]:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 5:
        raise ValueError(f"{path}: header must be 'L M p beta bc-kind'")
    L, M = int(rows[0][0]), int(rows[0][1])
    params = ModelParams(float(rows[0][2]), float(rows[0][3]))
    bc = parse_bc(rows[0][4], L, M)
    heights = np.array([[int(v) for v in r] for r in rows[1:]], dtype=np.int64)
    if heights.shape != (2 * M + 1, 2 * L + 1):
        raise ValueError(f"{path}: expected {2 * M + 1} rows of {2 * L + 1} heights")
    return HeightField(rectangle(L, M), heights, bc), params


def all_fields(region: Region, values: Iterable[int], bc: BoundaryCondition = ZERO_BC):
    """Every height field on ``region`` with heights drawn from ``values``."""
    values = list(values)
    base = HeightField(region, 0, bc)
    for combo in itertools.product(values, repeat=region.n_sites):
        f = base.copy()
        f.grid[f.inside] = combo
        yield f

