from __future__ import annotations

from itertools import permutations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import brute_configs

from begswap.chains import (
    ColoringState,
    Kernel,
    ReplicaState,
    all_configs,
    base_proposal,
    binomial_walk,
    class_configs,
    class_two_step_kernel,
    coloring_step,
    coupled_coloring_step,
    coupling_time,
    lumped_metropolis,
    lumped_swapping_kernel,
    metropolis_step,
    microstate_metropolis,
    microstate_swapping_kernel,
    product_chain,
    replica_rng,
    rw2_gap,
    rw_hat_kernels,
    swap_acceptance,
    swapping_step,
    tempering_kernel,
)
from begswap.errors import ContractError, SizeError
from begswap.landscape import beta_c1_of_k
from begswap.model import LadderSpec, SpinConfig, hamiltonian, macro_gibbs, macro_index
from begswap.simulate import simulate_metropolis, simulate_swapping
from begswap.spectral import PartitionSpec, aggregate, spectral_gap


def dense_gap(kernel):
    """Independent gap: eigenvalues of the dense similarity transform D^{1/2} P D^{-1/2}."""
    pi = np.exp(kernel.log_pi)
    a = np.sqrt(pi)[:, None] * kernel.dense() / np.sqrt(pi)[None, :]
    ev = np.sort(np.linalg.eigvalsh(0.5 * (a + a.T)))
    return 1.0 - max(abs(ev[0]), ev[-2])


# --- base proposal and Metropolis step --------------------------------------

def test_base_proposal_single_site():
    rng = np.random.default_rng(1)
    draws = 200_000
    out = np.array([base_proposal(SpinConfig([0]), rng).spins[0] for _ in range(draws)])
    for val, p in ((0, 0.5), (1, 0.25), (-1, 0.25)):
        freq = np.mean(out == val)
        assert abs(freq - p) <= 3 * np.sqrt(p * (1 - p) / draws)


def test_base_proposal_frequencies():
    rng = np.random.default_rng(2)
    n, draws = 3, 1_000_000
    x = np.array([1, 0, -1], dtype=np.int8)
    counts = {}
    for _ in range(draws):
        y = base_proposal(x, rng)
        diff = np.flatnonzero(y != x)
        assert diff.size <= 1
        key = (int(diff[0]), int(y[diff[0]])) if diff.size else None
        counts[key] = counts.get(key, 0) + 1
    p = 1 / (4 * n)
    assert len(counts) == 2 * n + 1
    for key, c in counts.items():
        if key is not None:
            assert abs(c / draws - p) <= 3 * np.sqrt(p * (1 - p) / draws)


def test_metropolis_step_accepts_flat_and_infinite_temperature():
    # +1 -> -1 at the only nonzero site keeps H fixed when the sum stays zero in square
    x = SpinConfig([1, 0])
    rng = np.random.default_rng(3)
    for _ in range(2000):
        y = metropolis_step(x, (5.0, 1.0), rng)
        if not np.array_equal(y.spins, x.spins):
            assert hamiltonian(y, 1.0) >= hamiltonian(x, 1.0) or y.spins.tolist() == [-1, 0]
    # beta = 0: every proposal accepted, so one step from identical streams equals the proposal
    z = np.array([1, -1, 0, 1], dtype=np.int8)
    for t in range(500):
        a = metropolis_step(z, (0.0, 1.3), replica_rng(7, 0, t))
        assert np.array_equal(a, base_proposal(z, replica_rng(7, 0, t)))
        z = a


def test_metropolis_step_histogram():
    n, p = 6, (1.0, 1.0)
    rng = np.random.default_rng(4)
    mi = macro_index(n)
    x = np.zeros(n, dtype=np.int8)
    hist = np.zeros(len(mi))
    steps = 300_000
    for _ in range(steps):
        x = metropolis_step(x, p, rng)
        hist[mi.lookup(int(x.sum()), int(np.count_nonzero(x)))] += 1
    assert 0.5 * np.abs(hist / steps - macro_gibbs(p, n)).sum() < 0.03


def test_compiled_metropolis_magnetisation_law():
    # 10^7 single-site steps; the s-marginal of the exact lumped law is the target
    n, beta, k = 6, 1.0, 1.0
    res = simulate_metropolis((beta, k), n, seed=5, max_sweeps=10**7 // n, z=0.5, init="zero")
    mi = macro_index(n)
    target = np.bincount(mi.s + n, weights=macro_gibbs((beta, k), n), minlength=2 * n + 1)
    emp = np.bincount(res.s_top + n, minlength=2 * n + 1) / res.sweeps
    assert 0.5 * np.abs(emp - target).sum() < 0.01


# --- lumped Metropolis ------------------------------------------------------

def test_lumped_metropolis_single_spin():
    beta, k = 1.3, 0.7
    kern = lumped_metropolis((beta, k), 1)
    mi = macro_index(1)
    p = kern.dense()[mi.lookup(0, 0), mi.lookup(1, 1)]
    assert p == pytest.approx(0.25 * min(1.0, np.exp(beta * (k - 1))))
    assert kern.n_states == 3


@pytest.mark.parametrize("n", [1, 7, 50, 200])
def test_lumped_metropolis_rows_and_balance(n):
    kern = lumped_metropolis((2.0, 1.2), n)
    assert kern.row_sum_error() <= 1e-12
    assert kern.detailed_balance_error() <= 1e-9
    assert np.allclose(kern.pi, macro_gibbs((2.0, 1.2), n), atol=1e-14)


@pytest.mark.parametrize("n", [3, 5, 8])
def test_lumpability_certificate(n):
    p = (1.4, 1.2)
    micro = microstate_metropolis(p, n)
    lumped = lumped_metropolis(p, n)
    mi = macro_index(n)
    conf = all_configs(n)
    assign = np.array([mi.lookup(int(c.sum()), int(np.count_nonzero(c))) for c in conf])
    agg = aggregate(micro, PartitionSpec(assign, len(mi)))
    assert np.abs(agg.dense() - lumped.dense()).max() <= 1e-12
    # strong lumpability: every microstate of a class has the same class-level row
    dense = micro.dense()
    ind = np.zeros((conf.shape[0], len(mi)))
    ind[np.arange(conf.shape[0]), assign] = 1.0
    rows = dense @ ind
    assert np.abs(rows - lumped.dense()[assign]).max() <= 1e-12
    assert spectral_gap(micro).gap == pytest.approx(spectral_gap(lumped).gap, abs=1e-10)


# --- tempering ----------------------------------------------------------------

def test_tempering_flat_ladder_accepts_everything():
    q, _, _ = tempering_kernel(LadderSpec(0.0, 1), 1.2, 4)
    nm = len(macro_index(4))
    d = q.dense()
    assert np.allclose(np.diag(d[:nm, nm:]), 1.0 / 4)


def test_tempering_kernel_invariants_and_dense_oracle():
    q, p_st, comp = tempering_kernel(LadderSpec(2.0, 10), 1.05, 10)
    for kern in (q, p_st, comp):
        assert kern.row_sum_error() <= 1e-12
        assert kern.detailed_balance_error() <= 1e-9
    assert comp.n_states == 66 * 11
    assert spectral_gap(comp).gap == pytest.approx(dense_gap(comp), abs=1e-10)


# --- swapping -------------------------------------------------------------------

def test_swap_acceptance_examples():
    lad = LadderSpec(2.0, 4)
    assert swap_acceptance(-3.0, -3.0, lad) == 1.0
    assert swap_acceptance(-1.0, -5.0, lad) == 1.0
    assert swap_acceptance(-5.0, -1.0, lad) == pytest.approx(np.exp(-0.5 * 4))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 30), st.floats(0.1, 4.0), st.floats(0.0, 3.0), st.data())
def test_swap_acceptance_lower_bound(n, beta, k, data):
    lad = LadderSpec(beta, n)
    xs = [data.draw(st.lists(st.integers(-1, 1), min_size=n, max_size=n)) for _ in range(2)]
    acc = swap_acceptance(hamiltonian(np.array(xs[0]), k), hamiltonian(np.array(xs[1]), k), lad)
    assert acc >= np.exp(-beta * (k + 1) * n / n) - 1e-15


def test_swapping_step_q_phase():
    rng = np.random.default_rng(6)
    lad = LadderSpec(1.0, 1)
    single = ReplicaState([[1, 0, -1]])
    for _ in range(20):
        assert swapping_step(single, lad, 1.2, rng, "Q").replicas[0] == single.replicas[0]
    lad = LadderSpec(2.0, 3)
    x = ReplicaState([[1, 1, 1], [0, 0, 1], [-1, 0, 1], [0, 0, 0]])
    for _ in range(200):
        y = swapping_step(x, lad, 1.2, rng, "Q")
        assert sorted(y.energies(1.2)) == sorted(x.energies(1.2))
        x = swapping_step(y, lad, 1.2, rng, "P")
    with pytest.raises(ValueError):
        swapping_step(x, lad, 1.2, rng, "X")


def test_swapping_simulation_product_law():
    lad, k, n = LadderSpec(1.5, 2), 1.2, 4
    res = simulate_swapping(lad, k, n, seed=7, max_sweeps=10**7, z=0.5, init="zero",
                            class_histogram=True)
    h = res.extra["class_histogram"] / res.sweeps
    pis = [macro_gibbs((b, k), n) for b in lad.betas]
    prod = np.einsum("a,b,c->cba", *pis).ravel()
    assert 0.5 * np.abs(h - prod).sum() < 0.02


def test_lumped_swapping_small():
    q, p, comp = lumped_swapping_kernel(LadderSpec(1.0, 1), 1.2, 2)
    assert comp.n_states == 36
    for kern in (q, p, comp):
        assert kern.row_sum_error() <= 1e-12
    assert q.detailed_balance_error() <= 1e-9
    with pytest.raises(SizeError):
        lumped_swapping_kernel(LadderSpec(1.0, 6), 1.2, 10)


def test_lumped_swapping_is_exact_aggregation():
    lad, k, n = LadderSpec(1.3, 1), 1.1, 3
    mq, mp, mc = microstate_swapping_kernel(lad, k, n)
    lq, lp, lc = lumped_swapping_kernel(lad, k, n)
    mi = macro_index(n)
    cls = np.array([mi.lookup(int(c.sum()), int(np.count_nonzero(c))) for c in all_configs(n)])
    d = len(all_configs(n))
    digits = np.array(np.unravel_index(np.arange(d * d), (d, d))).T
    assign = cls[digits[:, 0]] * len(mi) + cls[digits[:, 1]]
    parts = PartitionSpec(assign, len(mi) ** 2)
    for micro, lumped in ((mq, lq), (mp, lp), (mc, lc)):
        assert np.abs(aggregate(micro, parts).dense() - lumped.dense()).max() <= 1e-12


@pytest.mark.xfail(strict=True, reason="per-step swapping gap is below the Metropolis gap "
                   "at beta_M on these torpid instances (ratio 0.4-0.8)")
def test_swapping_not_slower_on_torpid_instance():
    k = 1.05
    beta = 1.2 * beta_c1_of_k(k)
    ratios = []
    for n in (4, 6, 8):
        _, _, comp = lumped_swapping_kernel(LadderSpec(beta, 1), k, n)
        ratios.append(spectral_gap(comp).gap / spectral_gap(lumped_metropolis((beta, k), n)).gap)
    assert min(ratios) >= 1.0


# --- auxiliary walks ---------------------------------------------------------

def test_binomial_walk():
    assert spectral_gap(binomial_walk(1)).gap == pytest.approx(1.0, abs=1e-14)
    g = spectral_gap(binomial_walk(64)).gap
    assert 1 / 64 <= g <= 2 / 64
    from scipy.stats import binom
    assert np.allclose(binomial_walk(30).pi, binom.pmf(np.arange(31), 30, 0.5), atol=1e-12)


def test_rw_hat_uniform_weights():
    m, i_c = 6, 2
    rw1, rw2 = rw_hat_kernels(np.full(m + 1, 0.5), i_c, m)
    assert spectral_gap(rw2).gap == pytest.approx(rw2_gap(i_c, m), abs=1e-12)
    assert rw2_gap(i_c, m) == pytest.approx(1 / (m - i_c + 1))
    assert rw1.detailed_balance_error() <= 1e-9 and rw1.min_diagonal() >= 0.5 - 1e-12


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.5, 0.9999), min_size=2, max_size=8))
def test_rw_bounds_on_random_profiles(weights):
    # the path comparison needs A_g masses nondecreasing along the ladder and at least 1/2
    weights = sorted(weights)
    m = len(weights)
    pi_hat = np.concatenate([[1.0], weights])
    rw1, rw2 = rw_hat_kernels(pi_hat, 1, m)
    g1, g2 = spectral_gap(rw1).gap, spectral_gap(rw2).gap
    assert g2 == pytest.approx(1 / m, abs=1e-10)
    assert g1 >= g2 / (4 * m * m + 2 * m)


def test_rw_hat_rejects_pinned_weights():
    with pytest.raises(ValueError):
        rw_hat_kernels(np.array([1.0, 1.0, 0.5]), 1, 2)


# --- coloring chain ------------------------------------------------------------

class _FixedRng:
    def __init__(self, vals):
        self.vals = list(vals)

    def integers(self, n):
        return self.vals.pop(0)


def test_coloring_equal_indices_identity():
    x = ColoringState([1, 0, -1, 1])
    assert np.array_equal(coloring_step(x, _FixedRng([2, 2])).coloring, x.coloring)


def test_coloring_counts_preserved():
    rng = np.random.default_rng(8)
    x = ColoringState(rng.integers(-1, 2, 15))
    c0 = x.counts
    for _ in range(100_000):
        x = coloring_step(x, rng)
    assert x.counts == c0


def test_coloring_uniform_law():
    rng = np.random.default_rng(9)
    x = ColoringState([-1, 0, 0, 1, 1])
    words = sorted(set(permutations([-1, 0, 0, 1, 1])))
    assert len(words) == 30
    index = {w: i for i, w in enumerate(words)}
    hist = np.zeros(30)
    steps = 400_000
    for _ in range(steps):
        x = coloring_step(x, rng)
        hist[index[tuple(int(v) for v in x.coloring)]] += 1
    assert 0.5 * np.abs(hist / steps - 1 / 30).sum() < 0.02


def test_coupled_identical_states_stay_coupled():
    rng = np.random.default_rng(10)
    x = ColoringState([1, 0, -1, 0, 1])
    y = ColoringState(x.coloring)
    for _ in range(1000):
        x, y, psi = coupled_coloring_step(x, y, rng)
        assert psi == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**31))
def test_coupling_psi_monotone(n, seed):
    rng = np.random.default_rng(seed)
    base = rng.integers(-1, 2, n)
    steps, psi = coupling_time(ColoringState(rng.permutation(base)),
                               ColoringState(rng.permutation(base)), rng)
    assert psi[-1] == 0 and psi.size == steps + 1
    assert np.all(np.diff(psi) <= 0)


def test_coupled_marginal_is_coloring_chain():
    # the second copy alone must move by uniform transpositions too
    rng = np.random.default_rng(11)
    x = ColoringState([1, -1, 0, 0, 1])
    y = ColoringState([0, 1, 1, -1, 0])
    words = sorted(set(permutations([1, -1, 0, 0, 1])))
    index = {w: i for i, w in enumerate(words)}
    hist = np.zeros(len(words))
    for _ in range(200_000):
        x, y, _ = coupled_coloring_step(x, y, rng)
        hist[index[tuple(int(v) for v in y.coloring)]] += 1
    assert 0.5 * np.abs(hist / hist.sum() - 1 / len(words)).sum() < 0.02


# --- class two-step chain --------------------------------------------------------

def test_class_configs_enumeration():
    conf = class_configs(1, 3, 5)
    assert conf.shape == (10 * 3, 5)
    assert np.all(conf.sum(axis=1) == 1) and np.all(np.count_nonzero(conf, axis=1) == 3)


def test_class_two_step_matches_microstate_square():
    n, s, r, p = 4, 0, 2, (1.3, 1.1)
    kern = class_two_step_kernel(p, n, s, r)
    micro = microstate_metropolis(p, n).dense()
    t2 = micro @ micro
    conf = brute_configs(n)
    idx = [i for i, c in enumerate(conf) if c.sum() == s and np.count_nonzero(c) == r]
    sub = t2[np.ix_(idx, idx)]
    off = ~np.eye(len(idx), dtype=bool)
    assert np.abs(sub[off] - kern.dense()[off]).max() <= 1e-14
    assert kern.row_sum_error() <= 1e-12 and kern.detailed_balance_error() <= 1e-9
    assert np.allclose(kern.pi, 1 / len(idx))


# --- product chain and kernel plumbing -------------------------------------------

def test_product_chain_gap_identity():
    ks = [binomial_walk(3), binomial_walk(4)]
    g = spectral_gap(product_chain(ks)).gap
    assert g == pytest.approx(min(spectral_gap(k).gap for k in ks) / 2, abs=1e-12)


def test_corrupted_kernel_fails_detailed_balance():
    kern = lumped_metropolis((1.5, 1.2), 6)
    mat = kern.matrix.tolil()
    i, j = 3, int(kern.matrix[3].indices[-1])
    mat[i, j] *= 1.5
    mat[i, i] -= mat[i, j] / 3
    bad = Kernel(sp.csr_matrix(mat), kern.log_pi, name="corrupted")
    assert bad.detailed_balance_error() > 1e-9
    with pytest.raises(ContractError):
        bad.validate()


def test_kernel_export_roundtrip(tmp_path):
    kern = lumped_metropolis((1.0, 1.0), 3)
    coo, header = kern.export(tmp_path / "k")
    data = np.loadtxt(coo, delimiter=",", skiprows=1)
    rebuilt = sp.csr_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                            shape=kern.matrix.shape)
    assert np.abs((rebuilt - kern.matrix).toarray()).max() == 0.0
    assert header.exists()


def test_replica_rng_deterministic():
    a = replica_rng(3, 1, 4).random(5)
    b = replica_rng(3, 1, 4).random(5)
    c = replica_rng(3, 1, 5).random(5)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
