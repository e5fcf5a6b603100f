"""Property suites shared by the command line and the test-suite."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import check_monotonicity
from .contours import cluster_decompose, cluster_partition_sum, open_contour, open_contour_delta, reconstruct, weight_product
from .exact import enumerate_partition, transfer_matrix
from .lattice import rectangle, square
from .model import STANDARD, ZERO_BC, HeightField, ModelParams, check_fkg_lattice, energy, staircase_bc

FKG_PS = (1.0, 1.5, 2.0, 3.0, math.inf)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    lines: list = field(default_factory=list)
    counterexample: object = None
    seconds: float = 0.0

    def report(self) -> str:
        head = f"{self.name}: {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f} s)"
        body = [f"  {ln}" for ln in self.lines]
        if self.counterexample is not None:
            body.append(f"  counterexample: {self.counterexample}")
        return "\n".join([head] + body)


def _timed(fn):
    def run(*args, **kwargs):
        t = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t
        return res
    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


@_timed
def verify_fkg(lo: int = -5, hi: int = 5, ps=FKG_PS) -> SuiteResult:
    """Four-point lattice condition on [lo, hi]^4, standard and tilted weights."""
    lines, bad = [], None
    ok = True
    for p in ps:
        r = check_fkg_lattice(p, lo, hi, (False, True))
        lines.append(f"p={p}: {r.n_checked} quadruples, {'ok' if r.passed else 'violated'}")
        if not r.passed and bad is None:
            ok, bad = False, (p,) + r.violation
    return SuiteResult("fkg", ok, lines, bad)


def tilt_examples(L: int = 1, limit: int | None = None):
    """Distinct (field, Δ± constraint set) pairs from open contours of {0,1}
    fields under every n=1 staircase with a, b in {-1, 0, 1}."""
    reg = square(L)
    seen = {}
    for a, b in itertools.product((-1, 0, 1), repeat=2):
        bc = staircase_bc(1, [a], [b], L, L)
        for vals in itertools.product((0, 1), repeat=reg.n_sites):
            f = HeightField(reg, np.array(vals), bc)
            try:
                gamma, dec = open_contour(f)
            except ValueError:
                continue
            key = (dec.plus, dec.minus, frozenset(gamma.bonds))
            if key not in seen:
                seen[key] = f
    out = [(f, open_contour_delta(f)) for f in seen.values()]
    # spread the picks over distinct constraint sizes
    out.sort(key=lambda fc: (len(fc[1].plus), len(fc[1].minus), len(fc[1].tilt.marked)))
    if limit is not None and len(out) > limit:
        idx = np.linspace(0, len(out) - 1, limit).round().astype(int)
        out = [out[i] for i in idx]
    return out


@_timed
def verify_bijection(params=ModelParams(1.0, 1.0), n_constrained: int = 3, tol: float = 1e-10) -> SuiteResult:
    """Decompose/reconstruct identity and weights on all 3x3 fields in {-1,0,1};
    cluster sums against enumeration without and with open-contour Δ±."""
    reg = square(1)
    window = (-1, 1)
    examples = tilt_examples(1, limit=max(n_constrained, 1))
    tilt_rule = examples[len(examples) // 2][1].tilt
    lines, bad = [], None
    base = HeightField(reg, 0)
    n = mismatches = 0
    worst_w = 0.0
    for vals in itertools.product((-1, 0, 1), repeat=9):
        f = base.copy()
        f.set_heights(np.array(vals))
        cfg = cluster_decompose(f)
        if reconstruct(cfg, reg) != f:
            mismatches += 1
            bad = bad or ("reconstruct", vals)
        for rule in (None, tilt_rule):
            w = weight_product(cfg, params, rule or STANDARD)
            e = energy(f, params, rule or STANDARD)
            d = abs(w + params.beta * e)
            worst_w = max(worst_w, d)
            if d > tol:
                bad = bad or ("weight", vals, w, -params.beta * e)
        n += 1
    lines.append(f"{n} fields: {mismatches} reconstruction mismatches, max |log weight + beta H| = {worst_w:.2e}")
    ok = mismatches == 0 and worst_w <= tol
    cases = [(None, None)] + [(c, c.tilt) for _, c in examples[:n_constrained]]
    for cons, rule in cases:
        lz, count, surfaces = cluster_partition_sum(reg, params, window, cons, rule or STANDARD)
        ez = enumerate_partition(reg, ZERO_BC, params, window, constraints=cons).logZ
        rel = abs(lz - ez) / max(abs(ez), 1e-300)
        inj = count == len(surfaces)
        tag = "no constraints" if cons is None else f"|D+|={len(cons.plus)} |D-|={len(cons.minus)} tilted={len(rule.marked)}"
        lines.append(f"{tag}: {count} configs, injective={inj}, cluster logZ={lz:.15g}, "
                     f"enumeration logZ={ez:.15g}, rel diff={rel:.1e}")
        if rel > tol or not inj:
            ok = False
            bad = bad or ("cluster sum", tag, lz, ez)
    return SuiteResult("bijection", ok, lines, bad)


def oracle_instances():
    """(L, M, bc, params, window) instances small enough for full enumeration."""
    out = []
    for p in (1.0, 2.0, math.inf):
        P = ModelParams(p, 1.0 if p != 2.0 else 0.8)
        out += [
            (0, 1, ZERO_BC, P, (-2, 2)),
            (0, 2, ZERO_BC, P, (-2, 2)),
            (0, 3, staircase_bc(1, [0], [0], 0, 3), P, (-2, 2)),
            (0, 4, ZERO_BC, P, (-1, 2)),
            (0, 4, staircase_bc(2, [-1, 0], [0, 1], 0, 4), P, (-1, 2)),
            (1, 1, ZERO_BC, P, (-1, 2)),
            (1, 1, staircase_bc(1, [0], [1], 1, 1), P, (-1, 2)),
            (1, 1, staircase_bc(2, [0, 0], [-1, 1], 1, 1), P, (0, 2)),
        ]
    return out


@_timed
def verify_oracle(tol: float = 1e-10) -> SuiteResult:
    """Enumeration against row and column transfer matrices."""
    lines, bad = [], None
    ok = True
    worst = 0.0
    for L, M, bc, P, w in oracle_instances():
        e = enumerate_partition(rectangle(L, M), bc, P, w).logZ
        for axis in ("rows", "columns"):
            t = transfer_matrix(L, M, bc, P, w, axis=axis).logZ
            rel = abs(e - t) / max(abs(e), 1e-300)
            worst = max(worst, rel)
            if rel > tol:
                ok = False
                bad = bad or (L, M, bc.token(), P, w, axis, e, t)
    lines.append(f"{len(oracle_instances())} instances x 2 transfer orientations, max rel diff {worst:.1e}")
    return SuiteResult("oracle", ok, lines, bad)


def monotonicity_inputs(values=(-1, 0, 1)):
    pairs = [(x, y) for x in values for y in values if x <= y]
    A, B = [], []
    for a in pairs:
        for b in pairs:
            A.append(a)
            B.append(b)
    return A, B


@_timed
def verify_monotonicity(L: int = 2, beta: float = 2.0, ps=(1.0, 2.0), M_list=(3, 4, 5, 6, 7),
                        tol: float = 1e-9) -> SuiteResult:
    """Product and shift inequalities over all n=2 staircases with steps in {-1,0,1}."""
    A, B = monotonicity_inputs()
    lines, bad = [], None
    ok = True
    for p in ps:
        rep = check_monotonicity(A, B, L, list(M_list), ModelParams(p, beta))
        fam = {}
        for e in rep.entries:
            fam.setdefault(e.family, []).append(e.margin)
        desc = ", ".join(f"{k}: {len(v)} checks, max margin {max(v):.3e}" for k, v in fam.items())
        lines.append(f"p={p}: {desc}; unconverged {rep.n_unconverged}")
        if not rep.holds(tol) or rep.n_unconverged:
            ok = False
            worst = max(rep.entries, key=lambda e: e.margin)
            bad = bad or (p, worst.family, worst.a, worst.b, worst.margin)
    return SuiteResult("monotonicity", ok, lines, bad)


SUITES = {
    "fkg": verify_fkg,
    "bijection": verify_bijection,
    "oracle": verify_oracle,
    "monotonicity": verify_monotonicity,
}


def run_suites(name: str) -> list[SuiteResult]:
    names = list(SUITES) if name == "all" else [name]
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)} or all")
    return [SUITES[n]() for n in names]
