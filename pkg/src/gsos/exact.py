"""Exact partition functions and probabilities on truncated height windows.

Two independent routes:

* :func:`enumerate_partition` sums over every configuration, computing each
  energy from a batch of padded grids (the brute-force oracle);
* :func:`transfer_matrix` sweeps a rectangle row by row, applying the
  vertical-bond operator one column at a time as a tensor contraction.

All values are carried as logarithms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from .lattice import Region, dual_of, rectangle
from .model import (
    STANDARD,
    ZERO_BC,
    BondWeightRule,
    BoundaryCondition,
    HeightField,
    ModelParams,
    bond_energy,
    explicit_bc,
    staircase_bc,
)

ENUMERATION_CAP = 10 ** 8
TRANSFER_CAP = 2 * 10 ** 6
_CHUNK = 1 << 16


class CapExceeded(RuntimeError):
    """State space larger than the configured cap."""


@dataclass(frozen=True)
class TruncationWindow:
    hmin: int
    hmax: int

    def __post_init__(self):
        if not (self.hmin <= 0 <= self.hmax):
            raise ValueError(f"window [{self.hmin}, {self.hmax}] must contain 0")

    @property
    def size(self) -> int:
        return self.hmax - self.hmin + 1

    @property
    def heights(self) -> np.ndarray:
        return np.arange(self.hmin, self.hmax + 1)

    @classmethod
    def for_staircase(cls, n: int) -> "TruncationWindow":
        return cls(-4, n + 4)


def as_window(window) -> TruncationWindow:
    if isinstance(window, TruncationWindow):
        return window
    lo, hi = window
    return TruncationWindow(int(lo), int(hi))


@dataclass(frozen=True)
class ConstraintSet:
    """Sign constraints φ ≥ 0 on ``plus`` and φ ≤ 0 on ``minus``, plus optional bounds.

    ``lower``/``upper`` map sites to extra bounds (floors, ceilings, pinned
    values).  ``tilt`` optionally marks dual bonds carrying the tilted weight.
    """

    plus: frozenset = frozenset()
    minus: frozenset = frozenset()
    lower: Mapping = field(default_factory=dict)
    upper: Mapping = field(default_factory=dict)
    tilt: BondWeightRule | None = None

    @classmethod
    def from_delta(cls, plus: Iterable = (), minus: Iterable = (), tilt=None) -> "ConstraintSet":
        return cls(frozenset(map(tuple, plus)), frozenset(map(tuple, minus)), tilt=tilt)

    @classmethod
    def floor(cls, region: Region, h: int) -> "ConstraintSet":
        return cls(lower={tuple(s): h for s in region.sites})

    def bounds(self, site) -> tuple[float, float]:
        site = tuple(site)
        lo, hi = -math.inf, math.inf
        if site in self.plus:
            lo = 0
        if site in self.minus:
            hi = 0
        lo = max(lo, self.lower.get(site, -math.inf))
        hi = min(hi, self.upper.get(site, math.inf))
        return lo, hi

    def __and__(self, other: "ConstraintSet") -> "ConstraintSet":
        lower = dict(self.lower)
        for k, v in other.lower.items():
            lower[k] = max(v, lower.get(k, v))
        upper = dict(self.upper)
        for k, v in other.upper.items():
            upper[k] = min(v, upper.get(k, v))
        return ConstraintSet(self.plus | other.plus, self.minus | other.minus, lower, upper,
                             self.tilt or other.tilt)


NO_CONSTRAINTS = ConstraintSet()


def pin(site, h: int) -> ConstraintSet:
    site = tuple(site)
    return ConstraintSet(lower={site: h}, upper={site: h})


def at_least(site, h: int) -> ConstraintSet:
    return ConstraintSet(lower={tuple(site): h})


@dataclass(frozen=True)
class PartitionValue:
    logZ: float
    window: TruncationWindow
    method: str
    exact: bool = True
    params: ModelParams | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def to_record(self) -> dict:
        rec = {
            "logZ": self.logZ,
            "window": [self.window.hmin, self.window.hmax],
            "method": self.method,
            "exact": self.exact,
        }
        if self.params is not None:
            rec["params"] = {"p": _json_p(self.params.p), "beta": self.params.beta}
        rec.update(self.meta)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _json_p(p: float):
    return "inf" if math.isinf(p) else p


def _resolve_rule(rule, constraints) -> BondWeightRule:
    if rule is not None:
        return rule
    if constraints is not None and constraints.tilt is not None:
        return constraints.tilt
    return STANDARD


def _check_bc_window(region: Region, bc: BoundaryCondition, window: TruncationWindow) -> None:
    vals = set()
    for x, y in region.sites:
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if (x + dx, y + dy) not in region:
                vals.add(bc(x + dx, y + dy))
    if vals and (min(vals) < window.hmin or max(vals) > window.hmax):
        raise ValueError(f"boundary values {sorted(vals)} fall outside window "
                         f"[{window.hmin}, {window.hmax}]")


# ----------------------------------------------------------------------------
# enumeration


class _Enumerator:
    """Chunked iteration over every configuration of a small region."""

    def __init__(self, region, bc, params, window, constraints, rule, cap):
        self.region = region
        self.window = window
        self.params = params
        K, N = window.size, region.n_sites
        self.n_states = K ** N
        if self.n_states > cap:
            raise CapExceeded(f"{K}^{N} = {self.n_states} states exceeds the enumeration cap "
                              f"{cap}; use transfer_matrix for strips")
        ny, nx = region.shape
        grid = np.zeros((ny + 2, nx + 2))
        inside = np.zeros((ny + 2, nx + 2), dtype=bool)
        inside[1:-1, 1:-1] = region.mask
        for r in range(ny + 2):
            for c in range(nx + 2):
                if not inside[r, c]:
                    grid[r, c] = bc(c - 1 + region.x0, r - 1 + region.y0)
        self.grid, self.inside = grid, inside
        self.in_h = inside[:, :-1] | inside[:, 1:]
        self.in_v = inside[:-1, :] | inside[1:, :]
        self.mark_h, self.mark_v = rule.masks(region.x0 - 1, region.y0 - 1, grid.shape)
        cons = constraints or NO_CONSTRAINTS
        b = np.array([cons.bounds(s) for s in region.sites], dtype=float).reshape(-1, 2)
        self.lo, self.hi = b[:, 0], b[:, 1]
        self.powers = K ** np.arange(N - 1, -1, -1, dtype=np.int64)

    def chunks(self):
        K = self.window.size
        beta, p = self.params.beta, self.params.p
        for start in range(0, self.n_states, _CHUNK):
            idx = np.arange(start, min(start + _CHUNK, self.n_states), dtype=np.int64)
            h = (idx[:, None] // self.powers[None, :]) % K + self.window.hmin
            g = np.broadcast_to(self.grid, (len(idx),) + self.grid.shape).copy()
            g[:, self.inside] = h
            e = np.zeros(len(idx))
            dh = g[:, :, 1:] - g[:, :, :-1]
            dv = g[:, 1:, :] - g[:, :-1, :]
            e += bond_energy(dh[:, self.in_h], p, self.mark_h[self.in_h]).sum(axis=1)
            e += bond_energy(dv[:, self.in_v], p, self.mark_v[self.in_v]).sum(axis=1)
            legal = np.all((h >= self.lo) & (h <= self.hi), axis=1)
            with np.errstate(invalid="ignore"):
                logw = np.where(legal & np.isfinite(e), -beta * e, -np.inf)
            yield g[:, 1:-1, 1:-1], logw


def _accumulate(chunks, observable=None, event=None):
    """Streaming log-sum-exp of weights, weighted observable sums and event mass."""
    m = -np.inf
    s0 = s1 = 0.0
    for heights, logw in chunks:
        cm = logw.max()
        if cm == -np.inf:
            continue
        if cm > m:
            scale = math.exp(m - cm) if m > -np.inf else 0.0
            s0 *= scale
            s1 *= scale
            m = cm
        w = np.exp(logw - m)
        s0 += w.sum()
        if event is not None:
            s1 += w[np.asarray(event(heights), dtype=bool)].sum()
        elif observable is not None:
            s1 += float(np.dot(w, np.asarray(observable(heights), dtype=float)))
    return m, s0, s1


def enumerate_partition(region: Region, bc: BoundaryCondition, params: ModelParams, window,
                        constraints: ConstraintSet | None = None, rule: BondWeightRule | None = None,
                        cap: int = ENUMERATION_CAP) -> PartitionValue:
    """log Z by summing over all heights in ``window`` on every site."""
    window = as_window(window)
    en = _Enumerator(region, bc, params, window, constraints, _resolve_rule(rule, constraints), cap)
    m, s0, _ = _accumulate(en.chunks())
    logZ = m + math.log(s0) if s0 > 0 else -math.inf
    return PartitionValue(logZ, window, "enumerate", params=params,
                          meta={"n_sites": region.n_sites})


def exact_expectation(observable: Callable, region: Region, bc: BoundaryCondition,
                      params: ModelParams, window, constraints: ConstraintSet | None = None,
                      rule: BondWeightRule | None = None, cap: int = ENUMERATION_CAP) -> float:
    """Gibbs average of a vectorised observable.

    ``observable`` receives heights of shape ``(batch, ny, nx)`` over the
    region's bounding box (cells outside the region hold τ).
    """
    window = as_window(window)
    en = _Enumerator(region, bc, params, window, constraints, _resolve_rule(rule, constraints), cap)
    _, s0, s1 = _accumulate(en.chunks(), observable=observable)
    if s0 == 0:
        raise ValueError("no legal configuration in the window")
    return s1 / s0


def exact_probability(event: Callable, region: Region, bc: BoundaryCondition, params: ModelParams,
                      window, constraints: ConstraintSet | None = None,
                      rule: BondWeightRule | None = None, cap: int = ENUMERATION_CAP) -> float:
    """Probability of a vectorised event predicate (see :func:`exact_expectation`)."""
    window = as_window(window)
    en = _Enumerator(region, bc, params, window, constraints, _resolve_rule(rule, constraints), cap)
    _, s0, s1 = _accumulate(en.chunks(), event=event)
    if s0 == 0:
        raise ValueError("no legal configuration in the window")
    return min(1.0, s1 / s0)


def exact_ground_state(region: Region, bc: BoundaryCondition, params: ModelParams, window,
                       constraints: ConstraintSet | None = None,
                       rule: BondWeightRule | None = None,
                       cap: int = ENUMERATION_CAP) -> HeightField:
    """Lowest-energy configuration (first in enumeration order on ties)."""
    window = as_window(window)
    en = _Enumerator(region, bc, params, window, constraints, _resolve_rule(rule, constraints), cap)
    best, best_h = -np.inf, None
    for heights, logw in en.chunks():
        i = int(np.argmax(logw))
        if logw[i] > best:
            best, best_h = logw[i], heights[i].copy()
    if best_h is None:
        raise ValueError("no legal configuration in the window")
    return HeightField(region, best_h.astype(np.int64), bc)


def site_at_least(site, h: int, region: Region) -> Callable:
    r, c = site[1] - region.y0, site[0] - region.x0
    return lambda H: H[:, r, c] >= h


def site_value(site, region: Region) -> Callable:
    r, c = site[1] - region.y0, site[0] - region.x0
    return lambda H: H[:, r, c]


def min_at_least(h: int, region: Region) -> Callable:
    mask = region.mask
    return lambda H: H[:, mask].min(axis=1) >= h


def everything(H):
    return np.ones(len(H), dtype=bool)


# ----------------------------------------------------------------------------
# transfer matrix


def _row_instance(L, M, bc, params, window, constraints, rule):
    """Per-site and per-bond energy tables on Λ_{L,M}.

    Returns ``site_e`` (ny, nx, K), ``h_e`` (ny, nx-1, K, K) for bonds inside a
    row and ``v_e`` (ny-1, nx, K, K) for bonds between rows.  Boundary bonds
    are folded into ``site_e``; constraint violations are ``inf`` there.
    """
    p = params.p
    hs = window.heights.astype(float)
    K = len(hs)
    ny, nx = 2 * M + 1, 2 * L + 1
    x0, y0 = -L, -M
    # marked flags on the padded grid (cell [0, 0] is site (x0-1, y0-1))
    mh, mv = rule.masks(x0 - 1, y0 - 1, (ny + 2, nx + 2))
    cons = constraints or NO_CONSTRAINTS
    site_e = np.zeros((ny, nx, K))
    for r in range(ny):
        for c in range(nx):
            x, y = x0 + c, y0 + r
            e = np.zeros(K)
            if c == 0:
                e += bond_energy(hs - bc(x - 1, y), p, mh[r + 1, c])
            if c == nx - 1:
                e += bond_energy(hs - bc(x + 1, y), p, mh[r + 1, c + 1])
            if r == 0:
                e += bond_energy(hs - bc(x, y - 1), p, mv[r, c + 1])
            if r == ny - 1:
                e += bond_energy(hs - bc(x, y + 1), p, mv[r + 1, c + 1])
            lo, hi = cons.bounds((x, y))
            e[(hs < lo) | (hs > hi)] = np.inf
            site_e[r, c] = e
    diff = hs[:, None] - hs[None, :]
    std = bond_energy(diff, p, False)
    tlt = bond_energy(diff, p, True)
    h_e = np.empty((ny, max(nx - 1, 0), K, K))
    for r in range(ny):
        for c in range(nx - 1):
            h_e[r, c] = tlt if mh[r + 1, c + 1] else std
    v_e = np.empty((max(ny - 1, 0), nx, K, K))
    for r in range(ny - 1):
        for c in range(nx):
            v_e[r, c] = tlt if mv[r + 1, c + 1] else std
    return site_e, h_e, v_e


def _row_weight(site_e_row, h_e_row, beta):
    """exp(-β E) of one row as a tensor with one axis per site."""
    nx, K = site_e_row.shape
    logw = np.zeros((K,) * nx)
    for c in range(nx):
        shape = [1] * nx
        shape[c] = K
        logw = logw - beta * site_e_row[c].reshape(shape)
    for c in range(nx - 1):
        shape = [1] * nx
        shape[c] = shape[c + 1] = K
        logw = logw - beta * h_e_row[c].reshape(shape)
    with np.errstate(invalid="ignore"):
        return np.exp(logw)


def _sweep(site_e, h_e, v_e, beta):
    ny, nx, K = site_e.shape
    vec = _row_weight(site_e[0], h_e[0], beta)
    logZ = 0.0
    for r in range(1, ny):
        s = vec.sum()
        if s == 0:
            return -math.inf
        logZ += math.log(s)
        vec = vec / s
        for c in range(nx):
            t = np.exp(-beta * v_e[r - 1, c])
            vec = np.moveaxis(np.tensordot(vec, t, axes=([c], [0])), -1, c)
        vec = vec * _row_weight(site_e[r], h_e[r], beta)
    s = vec.sum()
    return logZ + math.log(s) if s > 0 else -math.inf


def _transpose_bc(bc):
    return lambda x, y: bc(y, x)


def _transpose_cons(cons: ConstraintSet | None):
    if cons is None:
        return None
    sw = lambda d: {(y, x): v for (x, y), v in d.items()}
    return ConstraintSet(frozenset((y, x) for x, y in cons.plus),
                         frozenset((y, x) for x, y in cons.minus),
                         sw(cons.lower), sw(cons.upper))


def _transpose_rule(rule: BondWeightRule) -> BondWeightRule:


    out = []
    for b in rule.marked:
        s, t = b.separated_sites()
        out.append(dual_of((s.y, s.x), (t.y, t.x)))
    return BondWeightRule.tilted(out)


def transfer_matrix(L: int, M: int, bc: BoundaryCondition, params: ModelParams, window,
                    constraints: ConstraintSet | None = None, rule: BondWeightRule | None = None,
                    axis: str = "rows", cap: int = TRANSFER_CAP) -> PartitionValue:
    """log Z on Λ_{L,M} by row-to-row transfer.

    With ``axis="rows"`` the state is one horizontal row of 2L+1 heights and
    the sweep runs bottom to top, so the left/right walls enter each row's
    weight.  ``axis="columns"`` transposes the geometry first (state = column
    of 2M+1 heights), which gives a second exact route on the same box.
    """
    window = as_window(window)
    rule = _resolve_rule(rule, constraints)
    if axis == "columns":
        bc_t = _transpose_bc(bc)
        res = transfer_matrix(M, L, bc_t, params, window, _transpose_cons(constraints),
                              _transpose_rule(rule), axis="rows", cap=cap)
        return PartitionValue(res.logZ, window, "transfer-columns", params=params,
                              meta={"L": L, "M": M})
    if axis != "rows":
        raise ValueError(f"axis must be 'rows' or 'columns', got {axis!r}")
    n_states = window.size ** (2 * L + 1)
    if n_states > cap:
        raise CapExceeded(f"row state count {window.size}^{2 * L + 1} = {n_states} exceeds the "
                          f"transfer cap {cap}")
    site_e, h_e, v_e = _row_instance(L, M, bc, params, window, constraints, rule)
    logZ = _sweep(site_e, h_e, v_e, params.beta)
    return PartitionValue(logZ, window, "transfer", params=params, meta={"L": L, "M": M})


def transfer_probability(event: ConstraintSet, L: int, M: int, bc: BoundaryCondition,
                         params: ModelParams, window, constraints: ConstraintSet | None = None,
                         rule: BondWeightRule | None = None) -> float:
    """Probability of an event expressed as extra site bounds, via two transfer sweeps."""
    base = transfer_matrix(L, M, bc, params, window, constraints, rule).logZ
    both = event if constraints is None else constraints & event
    restricted = transfer_matrix(L, M, bc, params, window, both, _resolve_rule(rule, constraints)).logZ
    return math.exp(restricted - base)


def transfer_marginal(site, L: int, M: int, bc: BoundaryCondition, params: ModelParams, window,
                      constraints: ConstraintSet | None = None,
                      rule: BondWeightRule | None = None) -> np.ndarray:
    """Distribution of φ(site) over the window heights."""
    window = as_window(window)
    rule = _resolve_rule(rule, constraints)
    base = transfer_matrix(L, M, bc, params, window, constraints, rule).logZ
    out = np.empty(window.size)
    for k, h in enumerate(window.heights):
        c = pin(site, int(h)) if constraints is None else constraints & pin(site, int(h))
        out[k] = math.exp(transfer_matrix(L, M, bc, params, window, c, rule).logZ - base)
    return out


# ----------------------------------------------------------------------------
# staircase ensembles


def staircase_logZ(a: Sequence[int], b: Sequence[int], L: int, M: int, params: ModelParams,
                   window=None) -> float:
    n = len(a)
    window = as_window(window) if window is not None else TruncationWindow.for_staircase(n)
    return transfer_matrix(L, M, staircase_bc(n, a, b, L, M), params, window).logZ


@dataclass(frozen=True)
class StaircaseRatio:
    a: tuple
    b: tuple
    L: int
    M_list: tuple
    log_ratios: tuple  # log[Z(a;b;L,M) / Z_Λ] for each M
    converged: bool
    tol: float

    @property
    def value(self) -> float:
        return self.log_ratios[-1]

    @property
    def last_change(self) -> float:
        if len(self.log_ratios) < 2:
            return math.inf
        return abs(self.log_ratios[-1] - self.log_ratios[-2])


def staircase_ratio(a: Sequence[int], b: Sequence[int], L: int, M_list: Iterable[int],
                    params: ModelParams, window=None, tol: float = 1e-6) -> StaircaseRatio:
    """log of Z(a; b; L, M) / Z_{Λ_{L,M}} along increasing M.

    The last value stands in for the M → ∞ limit; ``converged`` records whether
    the last two values differ by less than ``tol``.
    """
    a, b = tuple(a), tuple(b)
    n = len(a)
    window = as_window(window) if window is not None else TruncationWindow.for_staircase(n)
    M_list = tuple(sorted(M_list))
    out = []
    for M in M_list:
        if n == 0:
            out.append(0.0)
            continue
        num = staircase_logZ(a, b, L, M, params, window)
        den = transfer_matrix(L, M, ZERO_BC, params, window).logZ
        out.append(num - den)
    converged = len(out) >= 2 and abs(out[-1] - out[-2]) < tol
    return StaircaseRatio(a, b, L, M_list, tuple(out), converged, tol)


def _psi(x, c, params: ModelParams):
    """-β d/ds |x - c(s)|^p for c(s) = c0 + s."""
    d = x - c
    if params.p == 1:
        return params.beta * np.sign(d)
    return params.beta * params.p * np.abs(d) ** (params.p - 1) * np.sign(d)


def shift_log_ratio(a: Sequence[int], b: Sequence[int], L: int, M: int, params: ModelParams,
                    window=None, nodes: int = 16) -> tuple[float, float]:
    """log Z^τ / Z^τ' for the top step raised by one, computed two ways.

    τ' moves the last step of both walls up by one.  Returns ``(integral,
    direct)``: the thermodynamic integral over the interpolating boundary value
    at the two wall sites, and the difference of two transfer sweeps.
    """
    if math.isinf(params.p):
        raise ValueError("the interpolation needs finite p")
    a, b = tuple(a), tuple(b)
    n = len(a)
    if n == 0:
        raise ValueError("need at least one step")
    a2 = a[:-1] + (a[-1] + 1,)
    b2 = b[:-1] + (b[-1] + 1,)
    window = as_window(window) if window is not None else TruncationWindow.for_staircase(n)
    tau = staircase_bc(n, a, b, L, M)
    tau2 = staircase_bc(n, a2, b2, L, M)
    direct = (transfer_matrix(L, M, tau, params, window).logZ
              - transfer_matrix(L, M, tau2, params, window).logZ)
    z, zp = (-L - 1, a[-1]), (L + 1, b[-1])
    w, wp = (-L, a[-1]), (L, b[-1])
    base = {}
    for u in range(-L - 1, L + 2):
        for v in range(-M - 1, M + 2):
            if abs(u) == L + 1 or abs(v) == M + 1:
                base[(u, v)] = tau(u, v)
    s_nodes, s_weights = np.polynomial.legendre.leggauss(nodes)
    s_nodes = 0.5 * (s_nodes + 1.0)
    s_weights = 0.5 * s_weights
    hs = as_window(window).heights
    total = 0.0
    for s, wt in zip(s_nodes, s_weights):
        c = n - 1 + s
        mapping = dict(base)
        mapping[z] = mapping[zp] = c
        bc_s = explicit_bc(mapping)
        pw = transfer_marginal(w, L, M, bc_s, params, window)
        pwp = transfer_marginal(wp, L, M, bc_s, params, window)
        psi = _psi(hs, c, params)
        total += wt * (float(pw @ psi) + float(pwp @ psi))
    return total, direct
