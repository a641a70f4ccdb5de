"""One test per acceptance criterion; each prints a single PASS/FAIL line."""
from __future__ import annotations

import time

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES

from begswap.chains import binomial_walk, tempering_kernel
from begswap.checks import run_checks
from begswap.landscape import (
    K_TRICRITICAL,
    LOG4,
    a_max_points,
    beta_c1_of_k,
    beta_c2_of_k,
    choose_epsilon,
    critical_points,
    k1_critical,
    k2_critical,
    log_stripe_mass_ratio,
)
from begswap.model import LadderSpec
from begswap.partition import aggregated_swap_chain
from begswap.simulate import simulate_metropolis, simulate_swapping
from begswap.spectral import conductance, spectral_gap


def record(number, ok, detail, runtime, limit):
    ok = bool(ok) and runtime < limit
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail} [{runtime:.3g}s, limit {limit:g}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def fit(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    return slope, 1.0 - (resid ** 2).sum() / ((y - y.mean()) ** 2).sum()


def n_maxima(beta, k):
    return sum(c.kind == "maximum" for c in critical_points((beta, k)))


def checks_pass(names, **cfg):
    res = run_checks(cfg, names=names)
    assert {r.name for r in res} == set(names)
    return all(r.passed for r in res), {r.name: r.failures for r in res if not r.passed}


def test_criterion_01_tricritical_point():
    t0 = time.perf_counter()
    kc = k2_critical(LOG4)
    dt = time.perf_counter() - t0
    ok = abs(kc - 1.08202) <= 1e-3 and abs(kc - 1.0820) <= 1e-3 and abs(kc - 3 / (2 * np.log(4))) <= 1e-12
    record(1, ok, f"k2_critical(log 4) = {kc:.12f}", dt, 1e-3)


def test_criterion_02_second_order_curve():
    t0 = time.perf_counter()
    bad = []
    for beta in np.linspace(LOG4 / 20, LOG4, 20):
        kc = k2_critical(beta)
        if not (n_maxima(beta, kc - 1e-6) == 1 and n_maxima(beta, kc + 1e-6) >= 2):
            bad.append(float(beta))
    beta = 1.0
    kc = k2_critical(beta)
    deltas = np.logspace(-2, -6, 9)
    zs = []
    for d in deltas:
        _, pair = a_max_points((beta, kc + d))
        zs.append(pair[1].a_plus - pair[1].a_minus)
    zs = np.array(zs)
    expo, _ = fit(np.log(deltas), np.log(zs))
    ok = not bad and np.all(np.diff(zs) < 0) and zs[-1] < 1e-2
    record(2, ok, f"flip brackets K_c2 at 20 betas (failures {bad}); off-center distance "
                  f"{zs[-1]:.2e} at dK=1e-6, fitted exponent {expo:.3f}",
           time.perf_counter() - t0, 60)


def test_criterion_03_first_order_curve():
    t0 = time.perf_counter()
    betas = np.linspace(LOG4 + 1e-4, 50.0, 200)
    vals = np.array([k1_critical(b) for b in betas])
    near = vals[0] - K_TRICRITICAL
    tail = abs(vals[-1] - vals[-2])
    # monotone up to the bisection tolerance of the solver
    rise = float(np.diff(vals).max())
    ok = rise <= 1e-9 and abs(near) <= 1e-4 and tail < 1e-4
    record(3, ok, f"max rise {rise:.2e}; k1 - K_c = {near:.2e} at beta = log 4 + 1e-4; "
                  f"last step {tail:.2e}; K_low trend k1(50) = {vals[-1]:.9f}",
           time.perf_counter() - t0, 300)


def test_criterion_04_at_most_three_interior_maxima():
    t0 = time.perf_counter()
    rng = np.random.default_rng(20240604)
    betas = 10.0 * (1.0 - rng.random(1000))
    ks = 3.0 * (1.0 - rng.random(1000))
    too_many, near_edge, outside, worst = 0, 0, 0, np.inf
    for beta, k in zip(betas, ks):
        maxima = [c for c in critical_points((beta, k)) if c.kind == "maximum"]
        too_many += len(maxima) > 3
        for c in maxima:
            d = float(min(c.a.as_array()))
            worst = min(worst, d)
            near_edge += d <= 1e-9
            outside += d <= 0.0
    record(4, too_many == 0 and near_edge == 0,
           f"{too_many} points with > 3 maxima; {outside} maxima on or outside the boundary; "
           f"{near_edge} maxima within 1e-9 of it (closest {worst:.2e})", time.perf_counter() - t0, 300)


def test_criterion_05_torpid_tempering():
    t0 = time.perf_counter()
    k = 1.05
    beta = 1.2 * beta_c1_of_k(k)
    eps = choose_epsilon(k)
    ns = [8, 12, 16, 20, 24]
    gaps, phis, bound_ok = [], [], True
    for n in ns:
        _, _, comp = tempering_kernel(LadderSpec(beta, n), k, n)
        gaps.append(spectral_gap(comp).gap)
        s = np.array([lab[0][0] for lab in comp.labels])
        stripe = np.abs(s) <= eps * n
        phi = conductance(comp, stripe)
        pi = comp.pi
        bound_ok &= phi <= pi[stripe & (np.abs(s) > eps * n - 2)].sum() / pi[stripe].sum() + 1e-12
        phis.append(phi)
    slope, r2 = fit(ns, np.log(gaps))
    pslope, pr2 = fit(ns, np.log(phis))
    ok = slope <= -0.05 and r2 >= 0.95 and pslope < 0 and np.all(np.diff(np.log(phis)) < 0) and bound_ok
    record(5, ok, f"log Gap slope {slope:.4f} (R2 {r2:.4f}); log Phi_S slope {pslope:.4f} "
                  f"(R2 {pr2:.4f}), edge-mass bound {'holds' if bound_ok else 'violated'}",
           time.perf_counter() - t0, 1800)


def test_criterion_06_stripe_ratio():
    t0 = time.perf_counter()
    k = 1.05
    beta = 1.2 * beta_c1_of_k(k)
    eps = choose_epsilon(k)
    ns = np.arange(20, 201)
    lr = [log_stripe_mass_ratio((beta, k), int(n), eps) for n in ns]
    slope, r2 = fit(ns, lr)
    record(6, slope < 0 and r2 >= 0.99, f"log ratio slope {slope:.5f}, R2 {r2:.5f}",
           time.perf_counter() - t0, 60)


@pytest.mark.slow
def test_criterion_07_rapid_regime():
    t0 = time.perf_counter()
    k = 1.2
    beta = 1.5 * beta_c2_of_k(k)
    parts = {}
    # (a) aggregated swap chain
    qa = []
    for n in (4, 6, 8):
        g = spectral_gap(aggregated_swap_chain(LadderSpec(beta, n), k, n)).gap
        qa.append(g >= np.exp(-beta * (k + 1) * n / n) / (4 * n * n))
    parts["a"] = all(qa)
    # (b) binomial walk
    parts["b"] = all(1 / m - 1e-12 <= spectral_gap(binomial_walk(m)).gap <= 2 / m + 1e-12
                     for m in range(2, 513))
    # (c) trace walks on real partition weights
    parts["c"], _ = checks_pass(["rw_bounds"])
    # (d) basin visits at N = M = 200
    n = 200
    _, pair = a_max_points((beta, k))
    z = pair[1].a_plus - pair[1].a_minus
    sw = simulate_swapping(LadderSpec(beta, n), k, n, 12345, 10**7, z, stop_visits=10)
    met = simulate_metropolis((beta, k), n, 12345, 10**7, z)
    parts["d"] = min(sw.visits_plus, sw.visits_minus) >= 10 and met.basins_visited == 1
    record(7, all(parts.values()),
           f"parts {parts}; swapping visits +{sw.visits_plus}/-{sw.visits_minus} in {sw.sweeps} sweeps, "
           f"Metropolis basins {met.basins_visited} in {met.sweeps} sweeps",
           time.perf_counter() - t0, 3600)


def test_criterion_08_lemma_suite():
    t0 = time.perf_counter()
    names = ["cps", "aba", "power_gap", "poincare", "conductance_sandwich", "dirichlet",
             "tbar_bound", "t2_bound", "product_gap", "detailed_balance"]
    ok, failures = checks_pass(names, random_chains=100, tbar_n=[10, 20, 30, 40], t2_n=[4, 6, 8, 10, 12])
    record(8, ok, f"{len(names)} checks, failures {failures}", time.perf_counter() - t0, 900)


def test_criterion_09_lumpability():
    t0 = time.perf_counter()
    ok, failures = checks_pass(["lumpability"], lumpability_n=[2, 3, 4, 5, 6, 7, 8])
    record(9, ok, f"microstate aggregation vs lumped kernel for n <= 8, failures {failures}",
           time.perf_counter() - t0, 120)


def test_criterion_10_coloring_coupling():
    t0 = time.perf_counter()
    res = run_checks({"coupling_n": [10, 20, 40], "coupling_trials": 200}, names=["coloring_coupling"])[0]
    means = {n: res.details[n]["mean"] for n in (10, 20, 40)}
    record(10, res.passed, f"mean coupling times {means}, exponent {res.details.get('exponent', 0):.3f}",
           time.perf_counter() - t0, 300)


def test_criterion_11_overlap():
    t0 = time.perf_counter()
    res = run_checks({"overlap_n": [20, 40, 80]}, names=["ladder_overlap"])[0]
    desc = "; ".join(f"{lab}: {np.round(v['values'], 4).tolist()} spread {v['relative_spread']:.3f}"
                     for lab, v in res.details.items())
    record(11, res.passed, desc, time.perf_counter() - t0, 60)

