"""Measured quantities: repulsion height, growth fits, circuits, surface
tension, staircase monotonicity and the positivity rate."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, optimize

from .exact import TRANSFER_CAP, TruncationWindow, as_window, staircase_ratio, transfer_marginal
from .contours import _boundary_bonds, _walk, bond_direction
from .lattice import square, vertex_sites
from .model import ZERO_BC, HeightField, ModelParams
from .sampler import batch_means, conditioned_sample, estimate_positivity, sample


# ----------------------------------------------------------------------------
# repulsion height


@dataclass
class RepulsionEstimate:
    L: int
    H: int
    heights: np.ndarray  # h = 0, 1, ...
    prob: np.ndarray  # P̂(φ(0) ≥ h)
    err: np.ndarray
    threshold: float
    method: str
    proxy: str
    stable: bool | None = None
    warning: str | None = None


def height_from_curve(heights, prob, threshold: float) -> int:
    """max{h ≥ 1 : P(φ(0) ≥ h) ≥ threshold}, or 0 when no h ≥ 1 qualifies."""
    ok = [int(h) for h, p in zip(heights, prob) if h >= 1 and p >= threshold]
    return max(ok) if ok else 0


def central_tail_exact(params: ModelParams, window=(-4, 8), proxy_L: int = 2, proxy_M: int = 8):
    """P(φ(0) ≥ h) for h = 0..hmax at the centre of Λ_{proxy_L, proxy_M}, zero bc."""
    window = as_window(window)
    m = transfer_marginal((0, 0), proxy_L, proxy_M, ZERO_BC, params, window)
    hs = window.heights
    tail = np.array([m[hs >= h].sum() for h in range(0, window.hmax + 1)])
    return np.arange(window.hmax + 1), tail


def compute_H(L: int, params: ModelParams, method: str = "exact", window=None, *,
              proxy_L: int | None = None, proxy_M: int | None = None, n_sweeps: int = 20000,
              seed: int = 0, tail=None) -> RepulsionEstimate:
    """Repulsion height at the threshold 5β/L.

    ``exact`` uses a transfer-matrix marginal on a strip Λ_{proxy_L, proxy_M}
    (default: the widest strip within the transfer cap, at most 2L wide);
    ``mcmc`` samples Λ_{2L} with zero bc.  A precomputed ``tail`` (heights,
    probabilities) can be passed to skip the measurement.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    thr = 5 * params.beta / L
    if method == "exact":
        window = as_window(window if window is not None else (-4, 8))
        if proxy_L is None:
            widest = int((math.log(TRANSFER_CAP) / math.log(window.size) - 1) // 2)
            proxy_L = max(0, min(2 * L, widest))
        proxy_M = min(2 * L, 8) if proxy_M is None else proxy_M
        proxy = f"Lambda_{{{proxy_L},{proxy_M}}} zero bc, transfer matrix, window {window.hmin}..{window.hmax}"
        if tail is None:
            tail = central_tail_exact(params, window, proxy_L, proxy_M)
        hs, prob = tail
        err = np.zeros_like(prob)
        stable = True
    elif method == "mcmc":
        window = as_window(window if window is not None else (-6, 6))
        proxy = f"Lambda_{2 * L} zero bc, heat-bath, {n_sweeps} sweeps"
        if tail is None:
            run = sample(square(2 * L), params, window, n_sweeps, seed)
            v = run.trace.values[:, 0]
            hs = np.arange(0, window.hmax + 1)
            stats = [batch_means((v >= h).astype(float)) for h in hs]
            prob = np.array([s[0] for s in stats])
            err = np.array([s[1] for s in stats])
        else:
            hs, prob, err = tail
        stable = None
    else:
        raise ValueError(f"unknown method {method!r}")
    warn = None
    if thr > 1:
        warn = f"threshold 5*beta/L = {thr:.3g} > 1: no height qualifies, H = 0"
        warnings.warn(warn)
    H = height_from_curve(hs, prob, thr)
    if method == "mcmc":
        lo = height_from_curve(hs, prob - 3 * err, thr)
        hi = height_from_curve(hs, prob + 3 * err, thr)
        stable = lo == hi
    return RepulsionEstimate(L, H, np.asarray(hs), np.asarray(prob), np.asarray(err), thr, method,
                             proxy, stable, warn)


def typical_height(L: int, params: ModelParams, n_sweeps: int, seed: int, window=(0, 8)) -> dict:
    """Central height under the positivity-conditioned measure on Λ_L."""
    run = conditioned_sample(square(L), params, window, n_sweeps, seed)
    v = run.trace.values[:, 0]
    mean, err = batch_means(v)
    return {"L": L, "median": float(np.median(v)), "mean": mean, "err": err, "n": len(v)}


# ----------------------------------------------------------------------------
# Table-1 growth forms


TABLE1_FORMS = {
    "log": lambda L, c: c * np.log(L),
    "power": None,  # 1 < p < 2, filled per p
    "loglog": lambda L, c: np.sqrt(np.clip(c * np.log(L) * np.log(np.log(L)), 0, None)),
    "sqrt": lambda L, c: np.sqrt(np.clip(c * np.log(L), 0, None)),
}


def table1_form(p: float):
    """Growth form of H_p(L) and its name."""
    if p == 1:
        return "log", TABLE1_FORMS["log"]
    if 1 < p < 2:
        return "power", lambda L, c: np.clip(c * np.log(L), 0, None) ** (1 / p)
    if p == 2:
        return "loglog", TABLE1_FORMS["loglog"]
    return "sqrt", TABLE1_FORMS["sqrt"]


@dataclass
class Table1Fit:
    p: float
    form: str
    c: float
    c_err: float
    residuals: np.ndarray


def fit_table1(L, H, p: float) -> Table1Fit:
    """Least-squares fit of H(L) to the growth form for ``p``."""
    L = np.asarray(L, dtype=float)
    H = np.asarray(H, dtype=float)
    if len(L) < 4:
        raise ValueError("need H at four or more values of L")
    if np.all(H == H[0]):
        raise ValueError("all H values are equal; nothing to fit")
    if np.any(L <= (math.e if p == 2 else 1)):
        raise ValueError("L too small for the growth form")
    name, f = table1_form(p)
    (c,), cov = optimize.curve_fit(f, L, H, p0=[max(H.max(), 1) / np.log(L.max())])
    err = float(np.sqrt(cov[0, 0])) if np.isfinite(cov).all() else float("nan")
    return Table1Fit(p, name, float(c), err, H - f(L, c))


# ----------------------------------------------------------------------------
# circuits


@dataclass
class CircuitReport:
    delta: float
    K: int
    H: int
    found: bool
    circuit: list = field(default_factory=list)
    inner: int = 0  # Λ' = Λ_inner


def _outer_walk(R: np.ndarray) -> list[tuple[int, int]]:
    """Closed walk of 4-adjacent cells hugging the outside of the 8-connected,
    hole-free set ``R`` (cells as (x, y) = (col, row)); R must not touch the border.

    Walks the dual-bond boundary of R, pairing bonds at 4-valent vertices so
    the curve wraps around the non-R cells, and lists the outside cell of each
    bond, adding the corner cell at convex turns.
    """
    inside = lambda s: bool(R[s[1], s[0]])  # noqa: E731
    bonds = _boundary_bonds(R, 0, 0)
    at: dict = {}
    for bd in bonds:
        for v in bd.endpoints:
            at.setdefault(v, []).append(bond_direction(bd, v))
    pair = {}
    for v, ds in at.items():
        if len(ds) == 2:
            pair[v, ds[0]], pair[v, ds[1]] = ds[1], ds[0]
        else:
            sw = inside(vertex_sites(*v)["SW"])
            groups = (("E", "S"), ("N", "W")) if sw else (("E", "N"), ("S", "W"))
            for d1, d2 in groups:
                pair[v, d1], pair[v, d2] = d2, d1
    first = min(bonds)
    v0 = first.endpoints[0]
    path, _ = _walk(v0, bond_direction(first, v0), pair)
    if len(path) != len(bonds):
        raise RuntimeError("outer boundary is not a single curve")
    outs = [next(s for s in bd.separated_sites() if not inside(s)) for bd in path]
    cells = []
    for o1, o2 in zip(outs, outs[1:] + outs[:1]):
        cells.append(tuple(o1))
        if abs(o1[0] - o2[0]) == 1 and abs(o1[1] - o2[1]) == 1:
            for c in ((o1[0], o2[1]), (o2[0], o1[1])):
                if not inside(c):
                    cells.append(c)
    walk = [c for k, c in enumerate(cells) if c != cells[k - 1]]
    return walk


def detect_circuit(field_: HeightField, delta: float, K: int, H: int) -> CircuitReport:
    """Innermost 4-connected circuit of sites with φ ≥ H - K in Λ_L \\ Λ_{(1-δ)L}
    surrounding Λ_{(1-δ)L}.

    Bad annulus sites *-connected to Λ' are flooded; a circuit exists iff the
    flood stays off the outer ring of Λ_L, and it is then the outer boundary
    of the flooded set.
    """
    reg = field_.region
    L = reg.L
    if L is None or not reg.is_rectangle or reg.L != reg.M:
        raise ValueError("detect_circuit needs a square region Λ_L")
    inner = int(math.floor((1 - delta) * L))
    rep = CircuitReport(delta, K, H, False, [], inner)
    if inner >= L:
        return rep
    phi = field_.heights
    n = 2 * L + 1
    yy, xx = np.mgrid[-L:L + 1, -L:L + 1]
    core = (np.abs(xx) <= inner) & (np.abs(yy) <= inner)
    good = (phi >= H - K) & ~core
    lab, _ = ndimage.label(~good, structure=np.ones((3, 3)))
    ids = np.unique(lab[core])
    R = np.isin(lab, ids[ids > 0])
    ring = np.zeros((n, n), dtype=bool)
    ring[[0, -1], :] = True
    ring[:, [0, -1]] = True
    if (R & ring).any():
        return rep
    R = np.pad(ndimage.binary_fill_holes(R), 1)
    walk = _outer_walk(R)
    rep.found = True
    rep.circuit = [(int(x) - L - 1, int(y) - L - 1) for x, y in walk]
    return rep


def verify_circuit(rep: CircuitReport, field_: HeightField) -> bool:
    """Re-check a reported circuit: closed 4-connected walk, height bound, and
    that it separates Λ' from the outside of Λ_L."""
    if not rep.found:
        return False
    cyc = rep.circuit
    L = field_.region.L
    for (x1, y1), (x2, y2) in zip(cyc, cyc[1:] + cyc[:1]):
        if abs(x1 - x2) + abs(y1 - y2) != 1:
            return False
    for x, y in cyc:
        if max(abs(x), abs(y)) > L or max(abs(x), abs(y)) <= rep.inner:
            return False
        if field_[(x, y)] < rep.H - rep.K:
            return False
    # flood from outside Λ_L through non-circuit sites; Λ' must stay unreached
    n = 2 * L + 3
    block = np.zeros((n, n), dtype=bool)
    for x, y in cyc:
        block[y + L + 1, x + L + 1] = True
    lab, _ = ndimage.label(~block)
    outside = lab[0, 0]
    core = lab[L + 1 - rep.inner:L + 2 + rep.inner, L + 1 - rep.inner:L + 2 + rep.inner]
    return bool(np.all(core != outside))


# ----------------------------------------------------------------------------
# surface tension


@dataclass
class SurfaceTensionEstimate:
    theta: float
    tau: float
    tau_err: float
    L_list: list
    tau_L: np.ndarray
    logZ: np.ndarray
    converged: list
    slope: float = float("nan")

    @property
    def all_converged(self) -> bool:
        return all(self.converged)


def estimate_tau(theta: float, params: ModelParams, L_list, window=None, M_list=None,
                 tol: float = 1e-8) -> SurfaceTensionEstimate:
    """τ_L = -cos θ/(2βL) log 𝒵(a; b; L) and the c0 + c1/L extrapolation.

    The step runs from a = -round(L tan θ) to b = +round(L tan θ).
    """
    taus, logs, conv = [], [], []
    for L in L_list:
        s = round(L * math.tan(theta))
        a, b = (-s,), (s,)
        Ms = M_list if M_list is not None else list(range(max(3, abs(s) + 2), max(3, abs(s) + 2) + 5))
        r = staircase_ratio(a, b, L, Ms, params, window, tol=tol)
        logs.append(r.value)
        conv.append(r.converged)
        taus.append(-math.cos(theta) / (2 * params.beta * L) * r.value)
    taus = np.array(taus)
    x = 1 / np.asarray(L_list, dtype=float)
    if len(L_list) >= 3:
        coef, cov = np.polyfit(x, taus, 1, cov=True)
        c1, c0 = coef
        err = float(np.sqrt(cov[1, 1]))
    elif len(L_list) == 2:
        c1, c0 = np.polyfit(x, taus, 1)
        err = float("nan")
    else:
        c0, c1, err = taus[0], float("nan"), float("nan")
    return SurfaceTensionEstimate(theta, float(c0), err, list(L_list), taus, np.array(logs), conv,
                                  float(c1))


# ----------------------------------------------------------------------------
# staircase monotonicity


@dataclass
class MarginEntry:
    family: str  # "product" or "shift"
    a: tuple
    b: tuple
    M: int
    lhs: float
    rhs: float
    converged: bool

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass
class MonotonicityReport:
    entries: list

    @property
    def worst(self) -> float:
        m = [e.margin for e in self.entries if e.converged]
        return max(m) if m else float("nan")

    def holds(self, tol: float = 1e-9) -> bool:
        return all(e.margin <= tol for e in self.entries if e.converged)

    @property
    def n_unconverged(self) -> int:
        return sum(not e.converged for e in self.entries)


def check_monotonicity(a_lists, b_lists, L: int, M_list, params: ModelParams, window=None,
                       conv_tol: float = 1e-6) -> MonotonicityReport:
    """Margins (log scale) for the product inequality and the top-step shift.

    product: log 𝒵(a; b) - Σ_i log 𝒵(a_i; b_i)
    shift:   log 𝒵(a; b) - log 𝒵(a with a_n+1; b with b_n+1)

    ``conv_tol`` is the M-convergence tolerance; margins of unconverged
    instances are reported but not judged.
    """
    cache: dict = {}

    def Z(a, b):
        key = (tuple(a), tuple(b))
        if key not in cache:
            w = window if window is not None else TruncationWindow.for_staircase(len(a))
            w = as_window(w)
            lo = min(w.hmin, min(a + b, default=0))
            cache[key] = staircase_ratio(a, b, L, M_list, params, (lo, max(w.hmax, len(a) + 1)),
                                         tol=conv_tol)
        return cache[key]

    entries = []
    for a, b in zip(a_lists, b_lists):
        a, b = tuple(a), tuple(b)
        full = Z(a, b)
        singles = [Z((ai,), (bi,)) for ai, bi in zip(a, b)]
        entries.append(MarginEntry("product", a, b, full.M_list[-1], full.value,
                                   sum(s.value for s in singles),
                                   full.converged and all(s.converged for s in singles)))
        a2, b2 = a[:-1] + (a[-1] + 1,), b[:-1] + (b[-1] + 1,)
        if max(a2[-1], b2[-1]) <= min(M_list):
            shifted = Z(a2, b2)
            entries.append(MarginEntry("shift", a, b, full.M_list[-1], full.value, shifted.value,
                                       full.converged and shifted.converged))
    return MonotonicityReport(entries)


# ----------------------------------------------------------------------------
# positivity rate


@dataclass
class RateEstimate:
    L: int
    beta: float
    logP: float
    logP_err: float
    H: int
    rate: float | None
    rate_err: float | None
    beta_tau: float | None
    note: str = ""

    @property
    def defined(self) -> bool:
        return self.rate is not None


def estimate_rate(L_list, params: ModelParams, window, budget: int, seed: int, K: int = 3,
                  substeps="rows", H: dict | None = None, tau: float | None = None,
                  H_method: str = "exact") -> list[RateEstimate]:
    """rate(L) = -log P̂(φ ≥ 0 on Λ_L) / (8 L H(L)); undefined when H = 0.

    ``H`` may map L to a height to override compute_H; ``tau`` is the
    zero-tilt surface tension used for the comparison value β·τ.
    """
    out = []
    for L in L_list:
        rec = estimate_positivity(square(L), params, window, K, budget, seed, substeps=substeps)
        if H is not None and L in H:
            h, note = int(H[L]), "H supplied"
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                est = compute_H(L, params, H_method, seed=seed)
            h, note = est.H, est.proxy
        bt = None if tau is None else params.beta * tau
        if not rec.meta.get("ok", True):
            out.append(RateEstimate(L, params.beta, rec.value, rec.std_error, h, None, None, bt,
                                    "splitting failed: " + rec.meta.get("error", "")))
        elif h == 0:
            out.append(RateEstimate(L, params.beta, rec.value, rec.std_error, h, None, None, bt,
                                    "H = 0: rate undefined"))
        else:
            r = -rec.value / (8 * L * h)
            out.append(RateEstimate(L, params.beta, rec.value, rec.std_error, h, r,
                                    rec.std_error / (8 * L * h), bt, note))
    return out


# ----------------------------------------------------------------------------
# CSV writers


def _write(path, header, rows):
    """Write to a path, or to an open text stream."""
    if hasattr(path, "write"):
        w = csv.writer(path, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        return
    with open(path, "w", newline="") as fh:
        _write(fh, header, rows)


def write_repulsion_csv(path, estimates) -> None:
    rows = [(e.L, int(h), float(p), float(s)) for e in estimates
            for h, p, s in zip(e.heights, e.prob, e.err)]
    _write(path, ["L", "h", "P", "err"], rows)


def write_tension_csv(path, est: SurfaceTensionEstimate) -> None:
    rows = [(L, float(t), est.tau) for L, t in zip(est.L_list, est.tau_L)]
    _write(path, ["L", "tau_L", "extrapolant"], rows)


def write_monotonicity_csv(path, report: MonotonicityReport) -> None:
    rows = [(f"{e.family}:{','.join(map(str, e.a))}/{','.join(map(str, e.b))}", e.M, e.margin)
            for e in report.entries]
    _write(path, ["staircase", "M", "margin"], rows)


def write_rate_csv(path, estimates) -> None:
    rows = [(e.L, e.logP, e.H, "" if e.rate is None else e.rate,
             "" if e.beta_tau is None else e.beta_tau) for e in estimates]
    _write(path, ["L", "logP", "H", "rate", "beta_tau"], rows)
