"""Acceptance criteria, one PASS/FAIL line each.

Run with pytest (lines appear in the terminal summary) or directly with
``python tests/test_acceptance.py``.
"""

import math
import sys
import time

import numpy as np
import pytest

from gsos.analysis import central_tail_exact, compute_H, estimate_tau, fit_table1, typical_height
from gsos.exact import ConstraintSet, exact_expectation, exact_probability, min_at_least, site_at_least, site_value
from gsos.lattice import square
from gsos.model import ZERO_BC, ModelParams
from gsos.sampler import estimate_positivity, monotone_sandwich, sample, conditioned_sample
from gsos.verify import oracle_instances, verify_bijection, verify_fkg, verify_monotonicity, verify_oracle

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []


def report(n, ok, text, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text} ({seconds:.1f} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def test_criterion_1_fkg():
    t = time.perf_counter()
    res = verify_fkg(-5, 5)
    dt = time.perf_counter() - t
    ok = res.passed and dt < 1.0
    report(1, ok, f"FKG lattice condition on [-5,5]^4, p in {{1,1.5,2,3,inf}}, both rules: "
                  f"{'no violations' if res.passed else res.counterexample}", dt)
    assert res.passed, res.counterexample
    assert dt < 1.0


def test_criterion_2_bijection():
    t = time.perf_counter()
    res = verify_bijection()
    dt = time.perf_counter() - t
    ok = res.passed and dt < 30
    report(2, ok, "cluster bijection on the 3x3 box: " + "; ".join(res.lines[:2]), dt)
    assert res.passed, res.report()
    assert dt < 30


def test_criterion_3_oracle():
    inst = oracle_instances()
    assert len(inst) >= 20
    for L, M, bc, P, w in inst:
        assert L <= 1 and M <= 4 and w[1] - w[0] + 1 <= 5 and P.p in (1.0, 2.0, math.inf)
    assert {i[2].kind for i in inst} == {"zero", "staircase"}
    t = time.perf_counter()
    res = verify_oracle(1e-10)
    dt = time.perf_counter() - t
    ok = res.passed and dt < 60
    report(3, ok, f"enumeration vs transfer, {res.lines[0]}", dt)
    assert res.passed, res.report()
    assert dt < 60


SWEEPS_4 = 10 ** 6


def test_criterion_4_sampler():
    t = time.perf_counter()
    reg = square(1)
    w = (-1, 1)
    parts, ok = [], True
    for p in (1.0, 2.0):
        P = ModelParams(p, 1.5)
        exact_p = exact_probability(site_at_least((0, 0), 1, reg), reg, ZERO_BC, P, w)
        exact_m = exact_expectation(site_value((0, 0), reg), reg, ZERO_BC, P, w,
                                    constraints=ConstraintSet.floor(reg, 0))
        run = sample(reg, P, w, SWEEPS_4, seed=1)
        ph, pse = run.probability(lambda v: v[:, 0] >= 1)
        crun = conditioned_sample(reg, P, w, SWEEPS_4, seed=2)
        mh, mse = crun.mean(0)
        zp, zm = abs(ph - exact_p) / pse, abs(mh - exact_m) / mse
        sand = monotone_sandwich(reg, P, w, seed=3, max_sweeps=1000)
        ok &= zp < 3 and zm < 3 and sand.violation_at is None
        parts.append(f"p={p:g}: P(phi0>=1) {ph:.5f} vs {exact_p:.5f} ({zp:.1f} se), "
                     f"cond. mean {mh:.5f} vs {exact_m:.5f} ({zm:.1f} se), "
                     f"sandwich coalesced at {sand.coalesced_at}, violations {sand.violation_at}")
    dt = time.perf_counter() - t
    report(4, ok and dt < 120, "sampler vs exact on Lambda_1, beta=1.5, 1e6 sweeps; " + "; ".join(parts), dt)
    assert ok
    assert dt < 120


def test_criterion_5_splitting():
    t = time.perf_counter()
    reg = square(1)
    P = ModelParams(1.0, 1.5)
    w = (-2, 2)
    exact = math.log(exact_probability(min_at_least(0, reg), reg, ZERO_BC, P, w))
    z = []
    for seed in range(20):
        rec = estimate_positivity(reg, P, w, 2, 8000, seed=seed)
        z.append(abs(rec.value - exact) / rec.std_error)
    hits = sum(v < 3 for v in z)
    dt = time.perf_counter() - t
    ok = hits >= 18 and dt < 300
    report(5, ok, f"splitting log P(phi>=0) on Lambda_1 (p=1, beta=1.5, K=2): {hits}/20 seeds within 3 sigma "
                  f"of exact {exact:.5f}, max |z| {max(z):.2f}", dt)
    assert hits >= 18
    assert dt < 300


def test_criterion_6_monotonicity():
    t = time.perf_counter()
    res = verify_monotonicity(L=2, beta=2.0, ps=(1.0, 2.0), M_list=(3, 4, 5, 6, 7), tol=1e-9)
    dt = time.perf_counter() - t
    ok = res.passed and dt < 600
    report(6, ok, "staircase product/shift inequalities, L=2, beta=2, n=2: " + "; ".join(res.lines), dt)
    assert res.passed, res.report()
    assert dt < 600


def test_criterion_7_tension():
    t = time.perf_counter()
    L_list = [2, 3, 4, 5, 6]
    est = estimate_tau(0.0, ModelParams(1.0, 3.0), L_list, window=(0, 1), M_list=[2, 3, 4, 5, 6, 7, 8])
    dt = time.perf_counter() - t
    diffs = np.diff(est.tau_L)
    monotone = bool(np.all(diffs <= est.tau_err))
    ok = 0.8 <= est.tau <= 1.2 and monotone and est.all_converged and dt < 600
    report(7, ok, f"tau(theta=0), p=1, beta=3: extrapolated {est.tau:.4f} +- {est.tau_err:.4f}; "
                  f"tau_L = {np.round(est.tau_L, 4).tolist()} (L=2..6), monotone={monotone}, "
                  f"converged={est.all_converged}", dt)
    assert ok


def test_criterion_8_repulsion():
    t = time.perf_counter()
    medians = []
    for i, L in enumerate((8, 16, 32)):
        medians.append(typical_height(L, ModelParams(1.0, 0.75), 20000, seed=10 + i)["median"])
    trend = all(a <= b for a, b in zip(medians, medians[1:])) and medians[-1] >= 1
    P1 = ModelParams(1.0, 1.0)
    tail = central_tail_exact(P1)
    Ls = [2 ** k for k in range(4, 21)]
    Hs = [compute_H(L, P1, "exact", tail=tail).H for L in Ls]
    fit = fit_table1(Ls, Hs, 1.0)
    ratio = fit.c / (1 / (4 * P1.beta))
    dt = time.perf_counter() - t
    ok = trend and 0.5 <= ratio <= 2 and dt < 1800
    report(8, ok, f"conditioned median phi(0) at beta=0.75 for L=8,16,32: {medians}; "
                  f"H(beta=1) over L=2^4..2^20 = {Hs}; fitted c = {fit.c:.3f} "
                  f"(1/(4 beta) = 0.25, ratio {ratio:.2f})", dt)
    assert ok


RATE_L = (4, 6, 8)
RATE_BETA = (0.75, 1.5)
_rate_cache: dict = {}


def _rates():
    if not _rate_cache:
        from gsos.analysis import estimate_rate
        t = time.perf_counter()
        for beta in RATE_BETA:
            for e in estimate_rate(list(RATE_L), ModelParams(1.0, beta), (-3, 6), 8000, seed=2, K=3):
                _rate_cache[beta, e.L] = e
        _rate_cache["time"] = time.perf_counter() - t
    return _rate_cache


def test_criterion_9_rate_and_L_direction():
    r = _rates()
    defined = [e for k, e in r.items() if k != "time" and e.defined]
    rate_ok = all(e.rate > 0 for e in defined)
    neg = {k: -e.logP for k, e in r.items() if k != "time"}
    L_ok = all(neg[b, L1] < neg[b, L2] for b in RATE_BETA for L1, L2 in zip(RATE_L, RATE_L[1:]))
    beta_ok = all(neg[RATE_BETA[0], L] < neg[RATE_BETA[1], L] for L in RATE_L)
    table = ", ".join(f"beta={b}: " + "/".join(f"{neg[b, L]:.2f}" for L in RATE_L) for b in RATE_BETA)
    note = f"rate defined for {len(defined)}/{len(RATE_L) * len(RATE_BETA)} (H=0 elsewhere)"
    report(9, rate_ok and L_ok and beta_ok and r["time"] < 1800,
           f"-log P(phi>=0) on Lambda_4,6,8 [{table}]; {note}; rate>0 where defined: {rate_ok}; "
           f"increasing in L: {L_ok}; increasing in beta: {beta_ok}", r["time"])
    assert rate_ok and L_ok
    assert r["time"] < 1800


@pytest.mark.xfail(strict=True, reason="P(phi >= 0) rises towards 1 as beta grows (the flat ground state "
                                       "satisfies the event), so -log P decreases in beta at fixed L")
def test_criterion_9_beta_direction():
    r = _rates()
    assert all(-r[RATE_BETA[0], L].logP < -r[RATE_BETA[1], L].logP for L in RATE_L)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
