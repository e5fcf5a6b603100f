import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsos.analysis import (check_monotonicity, compute_H, detect_circuit, estimate_rate, estimate_tau,
                           fit_table1, height_from_curve, table1_form, typical_height, verify_circuit,
                           write_monotonicity_csv, write_rate_csv, write_repulsion_csv, write_tension_csv)
from gsos.exact import staircase_ratio
from gsos.lattice import square
from gsos.model import HeightField, ModelParams


def test_H_degenerate_threshold():
    with pytest.warns(UserWarning, match="threshold"):
        est = compute_H(2, ModelParams(1.0, 1.0), "exact", proxy_L=1, proxy_M=2, window=(-2, 3))
    assert est.H == 0 and est.threshold == 2.5


def test_H_matches_independent_threshold_scan():
    P = ModelParams(1.0, 1.0)
    est = compute_H(32, P, "exact", window=(-3, 4), proxy_L=1, proxy_M=4)
    thr = 5 * P.beta / 32
    scan = 0
    for h in range(1, len(est.prob)):
        if est.prob[h] >= thr:
            scan = h
    assert est.H == scan and est.stable
    assert np.all(np.diff(est.prob) <= 1e-15) and math.isclose(est.prob[0], np.sum(est.prob[:1]))


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8), st.floats(0.001, 1))
def test_height_from_curve_property(probs, thr):
    probs = sorted(probs, reverse=True)
    H = height_from_curve(range(len(probs)), probs, thr)
    assert H == 0 or probs[H] >= thr
    assert all(p < thr for p in probs[H + 1:])


def test_fit_recovers_log_form():
    L = 2.0 ** np.arange(3, 11)
    H = 0.25 * np.log(L)
    fit = fit_table1(L, H, 1.0)
    assert fit.form == "log" and abs(fit.c - 0.25) < 0.0025


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_fit_recovers_planted_constant(p):
    L = 2.0 ** np.arange(3, 12)
    _, f = table1_form(p)
    H = f(L, 0.7)
    fit = fit_table1(L, H, p)
    assert abs(fit.c - 0.7) < 0.05 * 0.7


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_table1([8, 16, 32], [1, 2, 3], 1.0)
    with pytest.raises(ValueError):
        fit_table1([8, 16, 32, 64], [1, 1, 1, 1], 1.0)


def test_table1_forms():
    assert table1_form(1)[0] == "log"
    assert table1_form(1.5)[0] == "power"
    assert table1_form(2)[0] == "loglog"
    assert table1_form(math.inf)[0] == "sqrt"


def test_circuit_trivial_cases():
    L = 6
    f = HeightField(square(L), 3)
    rep = detect_circuit(f, 0.25, 0, 3)
    assert rep.found and verify_circuit(rep, f)
    z = HeightField(square(L), 0)
    assert not detect_circuit(z, 0.25, 1, 2).found


def test_circuit_with_gap():
    L = 8
    h = np.full((17, 17), 2)
    h[8, 13:] = 0  # a cut from the core boundary to the edge (x = 5..8)
    f = HeightField(square(L), h)
    assert not detect_circuit(f, 0.5, 0, 2).found
    h[8, 13] = 2  # close the cut next to the core
    f = HeightField(square(L), h)
    rep = detect_circuit(f, 0.5, 0, 2)
    assert rep.found and verify_circuit(rep, f)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_reported_circuits_verify(seed):
    rng = np.random.default_rng(seed)
    L = 6
    f = HeightField(square(L), (rng.random((13, 13)) < 0.8).astype(int))
    rep = detect_circuit(f, 0.5, 0, 1)
    if rep.found:
        assert verify_circuit(rep, f)
        assert all(f[s] >= 1 for s in rep.circuit)


def test_tau_low_temperature():
    P = ModelParams(1.0, 3.0)
    est = estimate_tau(0.0, P, [2, 3, 4], window=(0, 1), M_list=[2, 3, 4, 5])
    # leading order: a straight step across 2L + 1 columns
    for L, t in zip(est.L_list, est.tau_L):
        assert abs(t - (2 * L + 1) / (2 * L)) < 0.02
    assert np.all(np.diff(est.tau_L) < 0) and est.all_converged


def test_n0_staircase_trivial():
    r = staircase_ratio((), (), 2, [3, 4], ModelParams(1.0, 1.0))
    assert r.value == 0.0


def test_monotonicity_single_step_is_equality():
    rep = check_monotonicity([(0,)], [(0,)], 1, [3, 4, 5], ModelParams(1.0, 2.0))
    prod = [e for e in rep.entries if e.family == "product"]
    assert prod[0].margin == 0.0


def test_monotonicity_small():
    rep = check_monotonicity([(0, 0), (-1, 1)], [(0, 0), (0, 1)], 1, [3, 4, 5, 6], ModelParams(1.0, 2.0))
    assert rep.holds(1e-9) and rep.n_unconverged == 0
    buf = io.StringIO()
    write_monotonicity_csv(buf, rep)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["staircase", "M", "margin"] and len(rows) == len(rep.entries) + 1


def test_rate_undefined_and_supplied():
    P = ModelParams(1.0, 1.5)
    (e,) = estimate_rate([2], P, (-3, 3), 2000, seed=1, K=2)
    assert e.H == 0 and e.rate is None and not e.defined
    (e2,) = estimate_rate([2], P, (-3, 3), 2000, seed=1, K=2, H={2: 1}, tau=1.0)
    assert e2.defined and e2.rate > 0 and e2.beta_tau == 1.5
    assert e2.logP == e.logP
    buf = io.StringIO()
    write_rate_csv(buf, [e, e2])
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[1][3] == "" and float(rows[2][3]) > 0


def test_repulsion_and_tension_csv():
    P = ModelParams(1.0, 1.0)
    est = compute_H(40, P, "exact", window=(-2, 3), proxy_L=1, proxy_M=2)
    buf = io.StringIO()
    write_repulsion_csv(buf, [est])
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert rows[0] == ["L", "h", "P", "err"] and len(rows) == 1 + len(est.prob)
    t = estimate_tau(0.0, ModelParams(1.0, 3.0), [2, 3], window=(0, 1), M_list=[2, 3, 4])
    buf = io.StringIO()
    write_tension_csv(buf, t)
    assert buf.getvalue().splitlines()[0] == "L,tau_L,extrapolant"


def test_mcmc_H_and_typical_height():
    P = ModelParams(1.0, 1.0)
    est = compute_H(8, P, "mcmc", n_sweeps=2000, seed=1)
    assert est.H == 0 and est.stable is not None
    t = typical_height(4, ModelParams(1.0, 0.75), 2000, seed=2)
    assert t["median"] >= 0 and t["n"] == 1600
