"""Heat-bath Monte Carlo for the SOS Gibbs measures.

Every uniform is a pure function of ``(seed, chain, sweep, site)`` (a chain of
splitmix64 finalisers), so runs are reproducible and two chains sharing a
seed and chain id see the same randomness: that is the monotone coupling.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .exact import TruncationWindow, as_window
from .lattice import Region
from .model import STANDARD, ZERO_BC, BondWeightRule, BoundaryCondition, HeightField, ModelParams, bond_energy

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31, _S11 = np.uint64(30), np.uint64(27), np.uint64(31), np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True)
def splitmix64(x):
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def uniform(seed, chain, sweep, site):
    """Uniform in [0, 1) keyed by the four counters."""
    h = splitmix64(np.uint64(seed))
    h = splitmix64(h ^ np.uint64(chain))
    h = splitmix64(h ^ np.uint64(sweep))
    h = splitmix64(h ^ np.uint64(site))
    return float(h >> _S11) * _TWO53


@numba.njit(cache=True)
def _conditional(grid, r, c, lo, hi, tab_h, tab_v, mark_h, mark_v, beta, out):
    """Fill ``out[: hi-lo+1]`` with normalised heat-bath probabilities; return the count.

    Tables are indexed by ``|Δ|`` with row 0 standard and row 1 tilted.
    """
    n = hi - lo + 1
    best = -np.inf
    for k in range(n):
        h = lo + k
        e = 0.0
        d = abs(h - grid[r, c + 1])
        e += tab_h[mark_h[r, c], d]
        d = abs(h - grid[r, c - 1])
        e += tab_h[mark_h[r, c - 1], d]
        d = abs(h - grid[r + 1, c])
        e += tab_v[mark_v[r, c], d]
        d = abs(h - grid[r - 1, c])
        e += tab_v[mark_v[r - 1, c], d]
        lw = -beta * e
        out[k] = lw
        if lw > best:
            best = lw
    if best == -np.inf:
        return 0
    total = 0.0
    for k in range(n):
        w = math.exp(out[k] - best)
        out[k] = w
        total += w
    for k in range(n):
        out[k] /= total
    return n


@numba.njit(cache=True)
def _sweep(grid, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, sweep, buf):
    """One systematic heat-bath sweep; returns -1 on success or the failing site index."""
    for s in range(rows.shape[0]):
        r, c = rows[s], cols[s]
        n = _conditional(grid, r, c, lo[s], hi[s], tab, tab, mark_h, mark_v, beta, buf)
        if n == 0:
            return s
        u = uniform(seed, chain, sweep, s)
        acc = 0.0
        k = n - 1
        for j in range(n):
            acc += buf[j]
            if u < acc:
                k = j
                break
        grid[r, c] = lo[s] + k
    return -1


@numba.njit(cache=True)
def _run(grid, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, sweep0, n_sweeps,
         track, values, minima, sums):
    buf = np.empty(hi.max() - lo.min() + 1)
    for t in range(n_sweeps):
        bad = _sweep(grid, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, sweep0 + t, buf)
        if bad >= 0:
            return bad
        m = grid[rows[0], cols[0]]
        tot = 0
        for s in range(rows.shape[0]):
            v = grid[rows[s], cols[s]]
            tot += v
            if v < m:
                m = v
        minima[t] = m
        sums[t] = tot
        for j in range(track.shape[0]):
            values[t, j] = grid[rows[track[j]], cols[track[j]]]
    return -1


@numba.njit(cache=True)
def _sandwich(top, bot, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, n_sweeps):
    """Returns (first coalescence sweep or -1, first order violation sweep or -1, failure site)."""
    buf = np.empty(hi.max() - lo.min() + 1)
    same = True
    for s in range(rows.shape[0]):
        if top[rows[s], cols[s]] != bot[rows[s], cols[s]]:
            same = False
    if same:
        return 0, -1, -1
    for t in range(n_sweeps):
        b1 = _sweep(top, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, t, buf)
        b2 = _sweep(bot, rows, cols, lo, hi, tab, mark_h, mark_v, beta, seed, chain, t, buf)
        if b1 >= 0 or b2 >= 0:
            return -1, -1, max(b1, b2)
        same = True
        for s in range(rows.shape[0]):
            a, b = top[rows[s], cols[s]], bot[rows[s], cols[s]]
            if a < b:
                return -1, t + 1, -1
            if a != b:
                same = False
        if same:
            return t + 1, -1, -1
    return -1, -1, -1


class EmptySupport(RuntimeError):
    """A site has no allowed height (window and floor contradict)."""


@dataclass
class ChainState:
    """One Markov chain: a field it owns, its RNG key and its sweep counter.

    ``floor``/``ceiling`` are per-site bounds over the region's bounding box
    (or scalars); the window bounds apply as well.
    """

    field: HeightField
    seed: int
    chain_id: int = 0
    sweep: int = 0
    floor: np.ndarray | int | None = None
    ceiling: np.ndarray | int | None = None
    rule: BondWeightRule = STANDARD

    def bounds(self, window: TruncationWindow) -> tuple[np.ndarray, np.ndarray]:
        reg = self.field.region
        lo = np.full(reg.shape, window.hmin, dtype=np.int64)
        hi = np.full(reg.shape, window.hmax, dtype=np.int64)
        if self.floor is not None:
            lo = np.maximum(lo, self.floor)
        if self.ceiling is not None:
            hi = np.minimum(hi, self.ceiling)
        return lo[reg.mask], hi[reg.mask]


@dataclass
class _Kernel:
    rows: np.ndarray
    cols: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    tab: np.ndarray
    mark_h: np.ndarray
    mark_v: np.ndarray


def _kernel(chain: ChainState, params: ModelParams, window: TruncationWindow) -> _Kernel:
    f = chain.field
    rows, cols = np.nonzero(f.inside)
    lo, hi = chain.bounds(window)
    if np.any(lo > hi):
        s = int(np.argmax(lo > hi))
        raise EmptySupport(f"site {f.region.sites[s]} has empty support [{lo[s]}, {hi[s]}]")
    g = f.grid
    span = int(max(hi.max(), g.max()) - min(lo.min(), g.min()))
    d = np.arange(span + 1)
    tab = np.stack([bond_energy(d, params.p, False), bond_energy(d, params.p, True)])
    hm, vm = chain.rule.masks(f.x0, f.y0, g.shape)
    return _Kernel(rows.astype(np.int64), cols.astype(np.int64), lo, hi, tab,
                   hm.astype(np.int64), vm.astype(np.int64))


def conditional_distribution(field: HeightField, site, params: ModelParams, window,
                             rule: BondWeightRule = STANDARD, floor: int | None = None,
                             ceiling: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Heights and heat-bath probabilities used when resampling ``site``."""
    window = as_window(window)
    chain = ChainState(field, 0, floor=floor, ceiling=ceiling, rule=rule)
    k = _kernel(chain, params, window)
    s = field.region.index(site)
    out = np.empty(int(k.hi[s] - k.lo[s] + 1))
    n = _conditional(field.grid, k.rows[s], k.cols[s], k.lo[s], k.hi[s], k.tab, k.tab,
                     k.mark_h, k.mark_v, params.beta, out)
    if n == 0:
        raise EmptySupport(f"no allowed height at {site}")
    return np.arange(k.lo[s], k.hi[s] + 1), out


@dataclass
class ChainTrace:
    values: np.ndarray  # (n_sweeps, n_tracked) heights at the tracked sites
    minima: np.ndarray  # (n_sweeps,) min over the region
    sums: np.ndarray  # (n_sweeps,) total height
    track: list


def run_chain(chain: ChainState, params: ModelParams, window, n_sweeps: int,
              track=()) -> ChainTrace:
    """Advance ``chain`` by ``n_sweeps`` sweeps, recording per-sweep observables."""
    window = as_window(window)
    k = _kernel(chain, params, window)
    reg = chain.field.region
    tr = np.array([reg.index(s) for s in track], dtype=np.int64)
    if np.any(tr < 0):
        raise KeyError("tracked site outside the region")
    values = np.empty((n_sweeps, len(tr)), dtype=np.int64)
    minima = np.empty(n_sweeps, dtype=np.int64)
    sums = np.empty(n_sweeps, dtype=np.int64)
    bad = _run(chain.field.grid, k.rows, k.cols, k.lo, k.hi, k.tab, k.mark_h, k.mark_v,
               float(params.beta), np.uint64(chain.seed), np.uint64(chain.chain_id),
               np.uint64(chain.sweep), n_sweeps, tr, values, minima, sums)
    if bad >= 0:
        raise EmptySupport(f"no allowed height at {reg.sites[bad]}")
    chain.sweep += n_sweeps
    return ChainTrace(values, minima, sums, list(track))


def heat_bath_sweep(chain: ChainState, params: ModelParams, window) -> ChainState:
    """One systematic sweep resampling each site from its exact conditional law."""
    run_chain(chain, params, window, 1)
    return chain


def batch_means(x, n_batches: int = 32) -> tuple[float, float]:
    """Mean and batch-means standard error."""
    x = np.asarray(x, dtype=float)
    n = len(x) // n_batches
    if n == 0:
        raise ValueError(f"need at least {n_batches} samples, got {len(x)}")
    b = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(x.mean()), float(b.std(ddof=1) / math.sqrt(n_batches))


@dataclass
class EstimateRecord:
    value: float
    std_error: float
    n_samples: int
    seed: int
    method: str
    params: ModelParams
    meta: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        p = self.params.p
        rec = {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "method": self.method,
            "params": {"p": "inf" if math.isinf(p) else p, "beta": self.params.beta},
        }
        rec.update(self.meta)
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


@dataclass
class SampleRun:
    """Output of a long run: post-burn-in traces plus periodic snapshots."""

    trace: ChainTrace
    final: HeightField
    snapshots: list
    seed: int
    burn_in: int

    def mean(self, j: int = 0) -> tuple[float, float]:
        return batch_means(self.trace.values[:, j])

    def probability(self, predicate) -> tuple[float, float]:
        return batch_means(predicate(self.trace.values).astype(float))


def sample(region: Region, params: ModelParams, window, n_sweeps: int, seed: int,
           bc: BoundaryCondition = ZERO_BC, track=((0, 0),), floor=None, ceiling=None,
           rule: BondWeightRule = STANDARD, burn_in: float = 0.2, snapshot_every: int | None = None,
           start=None, chain_id: int = 0) -> SampleRun:
    """Run one chain, discard the first ``burn_in`` fraction, keep traces."""
    window = as_window(window)
    if start is None:
        start = 0
        if floor is not None:
            start = np.max(floor)
        start = int(np.clip(start, window.hmin, window.hmax))
    f = start.copy() if isinstance(start, HeightField) else HeightField(region, start, bc)
    chain = ChainState(f, seed, chain_id, floor=floor, ceiling=ceiling, rule=rule)
    n_burn = int(burn_in * n_sweeps)
    run_chain(chain, params, window, n_burn, track)
    snaps = []
    if snapshot_every:
        parts = []
        left = n_sweeps - n_burn
        while left > 0:
            step = min(snapshot_every, left)
            parts.append(run_chain(chain, params, window, step, track))
            snaps.append(chain.field.copy())
            left -= step
        trace = ChainTrace(np.concatenate([p.values for p in parts]),
                           np.concatenate([p.minima for p in parts]),
                           np.concatenate([p.sums for p in parts]), list(track))
    else:
        trace = run_chain(chain, params, window, n_sweeps - n_burn, track)
    return SampleRun(trace, chain.field, snaps, seed, n_burn)


def conditioned_sample(region: Region, params: ModelParams, window, n_sweeps: int, seed: int,
                       **kwargs) -> SampleRun:
    """Sample the measure conditioned on φ ≥ 0 on the region (floor 0 at every site)."""
    window = as_window(window)
    if window.hmax < 0:
        raise EmptySupport("window lies below the floor")
    return sample(region, params, window, n_sweeps, seed, floor=0, **kwargs)


@dataclass(frozen=True)
class SandwichReport:
    coalesced_at: int | None
    violation_at: int | None
    n_sweeps: int


def monotone_sandwich(region: Region, params: ModelParams, window, seed: int,
                      max_sweeps: int = 1000, bc: BoundaryCondition = ZERO_BC,
                      rule: BondWeightRule = STANDARD, top=None, bottom=None,
                      floor=None) -> SandwichReport:
    """Run maximal and minimal chains with shared randomness until they meet.

    Pathwise order top >= bottom is checked after every sweep.
    """
    window = as_window(window)
    top = HeightField(region, window.hmax if top is None else top, bc)
    bot = HeightField(region, window.hmin if bottom is None else bottom, bc)
    if floor is not None:
        bot.grid[bot.inside] = np.maximum(bot.grid[bot.inside], floor)
    chain = ChainState(top, seed, floor=floor, rule=rule)
    k = _kernel(chain, params, window)
    c, v, bad = _sandwich(top.grid, bot.grid, k.rows, k.cols, k.lo, k.hi, k.tab, k.mark_h,
                          k.mark_v, float(params.beta), np.uint64(seed), np.uint64(0), max_sweeps)
    if bad >= 0:
        raise EmptySupport(f"no allowed height at {region.sites[bad]}")
    return SandwichReport(None if c < 0 else int(c), None if v < 0 else int(v), max_sweeps)


@dataclass(frozen=True)
class SplittingSchedule:
    """Floors -K < ... < -1 < 0; level k is the event min φ >= -k."""

    K: int

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")

    @property
    def levels(self) -> list[int]:
        return list(range(self.K, -1, -1))


def estimate_positivity(region: Region, params: ModelParams, window, schedule, budget: int,
                        seed: int, bc: BoundaryCondition = ZERO_BC, burn_in: float = 0.2,
                        substeps: int | str = 1) -> EstimateRecord:
    """Multilevel-splitting estimate of log P(φ ≥ 0 on the region).

    log P = log P(min ≥ -K) + Σ_k log P(min ≥ -(k-1) | min ≥ -k), each factor
    from its own chain floored at -k, ``budget`` sweeps per chain.  With
    ``substeps > 1`` each factor is split further by raising the floor on
    successive blocks of sites; the product still telescopes exactly.
    ``substeps="rows"`` uses one block per row of the region.
    """
    window = as_window(window)
    if isinstance(schedule, int):
        schedule = SplittingSchedule(schedule)
    K = schedule.K
    factors = []
    log_p = 0.0
    var = 0.0
    n_total = 0
    mask = region.mask
    if substeps == "rows":
        substeps = mask.shape[0]
    order = np.flatnonzero(mask.ravel())
    blocks = np.array_split(order, substeps)

    chain_id = 0
    # top factor: P(min >= -K) without floor
    if window.hmin < -K:
        run = sample(region, params, window, budget, seed, bc=bc, track=(), burn_in=burn_in,
                     chain_id=chain_id)
        ind = (run.trace.minima >= -K).astype(float)
        m, se = batch_means(ind)
        factors.append({"level": K, "floor": None, "p": m, "se": se})
        n_total += len(ind)
        if m == 0:
            return _failed(params, seed, factors, n_total)
        log_p += math.log(m)
        var += (se / m) ** 2
    chain_id += 1
    for k in range(K, 0, -1):
        if window.hmin >= -(k - 1):
            continue  # window already enforces the event
        floor = np.full(region.shape, -k, dtype=np.int64)
        for j, blk in enumerate(blocks):
            blk_sites = np.zeros(mask.size, dtype=bool)
            blk_sites[blk] = True
            blk_sites = blk_sites.reshape(mask.shape)
            chain = ChainState(HeightField(region, np.clip(0, window.hmin, window.hmax), bc), seed,
                               chain_id, floor=floor.copy())
            chain_id += 1
            n_burn = int(burn_in * budget)
            track = [s for s in region.sites if blk_sites[s[1] - region.y0, s[0] - region.x0]]
            run_chain(chain, params, window, n_burn, ())
            tr = run_chain(chain, params, window, budget - n_burn, track)
            ind = (tr.values.min(axis=1) >= -(k - 1)).astype(float)
            m, se = batch_means(ind)
            factors.append({"level": k, "block": j, "p": m, "se": se})
            n_total += len(ind)
            if m == 0:
                return _failed(params, seed, factors, n_total)
            log_p += math.log(m)
            var += (se / m) ** 2
            floor[blk_sites] = -(k - 1)
    return EstimateRecord(log_p, math.sqrt(var), n_total, seed, "multilevel-splitting", params,
                          {"K": K, "substeps": substeps, "budget": budget, "factors": factors,
                           "ok": True})


def _failed(params, seed, factors, n_total) -> EstimateRecord:
    return EstimateRecord(-math.inf, math.inf, n_total, seed, "multilevel-splitting", params,
                          {"factors": factors, "ok": False,
                           "error": "a level estimate is zero; increase the budget"})


def run_manifest(seed: int, params: ModelParams, window, schedule=None, **config) -> dict:
    """Manifest for a run: inputs plus a content hash of the canonical config."""
    window = as_window(window)
    body = {
        "seed": int(seed),
        "params": {"p": "inf" if math.isinf(params.p) else params.p, "beta": params.beta},
        "window": [window.hmin, window.hmax],
        "schedule": None if schedule is None else getattr(schedule, "K", schedule),
    }
    body.update(config)
    text = json.dumps(body, sort_keys=True, default=_jsonable)
    body["hash"] = hashlib.sha1(text.encode()).hexdigest()[:12]
    return body
