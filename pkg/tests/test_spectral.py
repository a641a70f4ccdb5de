from __future__ import annotations

from itertools import combinations

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from begswap.chains import Kernel, binomial_walk, lumped_metropolis, lumped_swapping_kernel, tempering_kernel
from begswap.checks import random_reversible_kernel
from begswap.errors import ContractError, DomainError, PositivityError
from begswap.landscape import beta_c1_of_k
from begswap.model import LadderSpec
from begswap.spectral import (
    PartitionSpec,
    aba_check,
    aggregate,
    conductance,
    cps_check,
    dirichlet_comparison,
    mixing_profile,
    poincare_bound,
    positive_sqrt,
    power_gap_check,
    restrict,
    spectral_gap,
    sqrt_sandwich,
)


def kern_of(mat, pi=None, lazy=False):
    mat = np.asarray(mat, dtype=float)
    pi = np.full(mat.shape[0], 1.0 / mat.shape[0]) if pi is None else np.asarray(pi)
    return Kernel(sp.csr_matrix(mat), np.log(pi), lazy=lazy)


seeds = st.integers(0, 2**32 - 1)


# --- spectral gap -------------------------------------------------------------

def test_two_state_gap():
    assert spectral_gap(kern_of([[0.5, 0.5], [0.5, 0.5]])).gap == pytest.approx(1.0, abs=1e-14)


def test_sparse_and_dense_paths_agree():
    _, _, comp = tempering_kernel(LadderSpec(2.0, 6), 1.05, 8)
    dense = spectral_gap(comp, method="dense")
    sparse = spectral_gap(comp, method="sparse-iterative")
    assert sparse.gap == pytest.approx(dense.gap, abs=1e-10)
    assert sparse.lambda_min == pytest.approx(dense.lambda_min, abs=1e-10)


def test_gap_rejects_nonreversible():
    cyc = kern_of([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    with pytest.raises(ContractError):
        spectral_gap(cyc)


@pytest.mark.parametrize("m", [1, 2, 5, 64, 300])
def test_binomial_sandwich(m):
    g = spectral_gap(binomial_walk(m)).gap
    assert 1.0 / m - 1e-12 <= g <= 2.0 / m + 1e-12


# --- conductance ------------------------------------------------------------------

def test_conductance_disconnected_cut():
    mat = np.zeros((4, 4))
    mat[:2, :2] = 0.5
    mat[2:, 2:] = 0.5
    assert conductance(kern_of(mat), [0, 1]) == 0.0
    with pytest.raises(DomainError):
        conductance(kern_of(mat), [0, 1, 2, 3])


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_cheeger_sandwich(seed):
    rng = np.random.default_rng(seed)
    kern = random_reversible_kernel(int(rng.integers(2, 8)), rng)
    pi = kern.pi
    phi = min(conductance(kern, list(sub)) for size in range(1, kern.n_states)
              for sub in combinations(range(kern.n_states), size) if pi[list(sub)].sum() <= 0.5)
    gap = spectral_gap(kern).relaxation_gap
    assert phi ** 2 / 2 <= gap + 1e-12
    assert gap <= 2 * phi + 1e-12


# --- aggregation and restriction --------------------------------------------------

def test_aggregate_trivial_partition():
    kern = lumped_metropolis((1.0, 1.1), 6)
    agg = aggregate(kern, PartitionSpec(np.zeros(kern.n_states, dtype=int), 1))
    assert agg.dense() == pytest.approx(np.array([[1.0]]))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_aggregate_is_reversible_with_block_masses(seed):
    rng = np.random.default_rng(seed)
    kern = random_reversible_kernel(int(rng.integers(3, 10)), rng)
    blocks = int(rng.integers(1, kern.n_states + 1))
    assign = np.concatenate([np.arange(blocks), rng.integers(0, blocks, kern.n_states - blocks)])
    agg = aggregate(kern, PartitionSpec(assign, blocks))
    assert agg.pi.sum() == pytest.approx(1.0)
    assert np.allclose(agg.pi, np.bincount(assign, weights=kern.pi))
    assert agg.row_sum_error() < 1e-12 and agg.detailed_balance_error() < 1e-9


def test_restrict_whole_and_single():
    kern = lumped_metropolis((1.0, 1.1), 5)
    whole = restrict(kern, np.ones(kern.n_states, dtype=bool))
    assert np.abs(whole.dense() - kern.dense()).max() < 1e-15
    single = restrict(kern, [3])
    assert single.dense() == pytest.approx(np.array([[1.0]]))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_cps_inequality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 9))
    q = random_reversible_kernel(n, rng, lazy=True)
    w = rng.random((n, n))
    prop = (w + w.T) / (2 * (w + w.T).sum(axis=1).max())
    acc = np.exp(np.minimum(0.0, q.log_pi[None, :] - q.log_pi[:, None]))
    off = prop * acc
    np.fill_diagonal(off, 0.0)
    p = Kernel(sp.csr_matrix(off + np.diag(1 - off.sum(axis=1))), q.log_pi)
    blocks = int(rng.integers(2, 4))
    assign = np.concatenate([np.arange(blocks), rng.integers(0, blocks, n - blocks)])
    holds, lhs, rhs = cps_check(q, p, PartitionSpec(assign, blocks))
    assert holds and lhs >= rhs - 1e-10


# --- square roots and lemma checks -----------------------------------------------------

def test_positive_sqrt_identity_and_spectrum():
    ident = kern_of(np.eye(3))
    assert np.allclose(positive_sqrt(ident), np.eye(3))
    walk = binomial_walk(6)
    lazy = Kernel(0.5 * (walk.matrix + sp.identity(7)), walk.log_pi, lazy=True)
    root = positive_sqrt(lazy)
    ev_p = np.sort(np.linalg.eigvals(lazy.dense()).real)
    ev_r = np.sort(np.linalg.eigvals(root).real)
    assert np.allclose(ev_r, np.sqrt(np.clip(ev_p, 0, None)), atol=1e-10)


def test_positive_sqrt_rejects_negative_spectrum():
    with pytest.raises(PositivityError):
        positive_sqrt(kern_of([[0.0, 1.0], [1.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_positive_sqrt_reconstruction(seed):
    rng = np.random.default_rng(seed)
    kern = random_reversible_kernel(int(rng.integers(2, 12)), rng, lazy=True)
    root = positive_sqrt(kern)
    assert np.abs(root @ root - kern.dense()).max() <= 1e-9


@settings(max_examples=100, deadline=None)
@given(seeds, st.sampled_from([1, 2, 3, 5]))
def test_power_gap(seed, m):
    rng = np.random.default_rng(seed)
    assert power_gap_check(random_reversible_kernel(int(rng.integers(2, 10)), rng), m)


def test_power_gap_equality_and_lumped():
    kern = lumped_metropolis((1.4, 1.1), 8)
    assert power_gap_check(kern, 1)
    assert power_gap_check(kern, 3)


def test_aba_identity_and_swapping():
    q, p, _ = lumped_swapping_kernel(LadderSpec(1.5, 1), 1.2, 2)
    ident = Kernel(sp.identity(p.n_states, format="csr"), p.log_pi)
    sand = Kernel(ident.matrix @ p.matrix @ ident.matrix, p.log_pi)
    assert spectral_gap(sand).gap == pytest.approx(spectral_gap(p).gap, abs=1e-14)
    assert aba_check(ident, p)
    assert aba_check(q, p) and aba_check(q, p, sqrt=True)
    assert sqrt_sandwich(q, p).row_sum_error() < 1e-9


# --- comparison bounds ----------------------------------------------------------------

def test_poincare_complete_chain_is_tight():
    n = 6
    mat = (np.ones((n, n)) - np.eye(n)) / (n - 1)
    kern = kern_of(mat)
    paths = {(x, y): [x, y] for x in range(n) for y in range(n) if x != y}
    big_a = poincare_bound(kern, paths)
    assert big_a == pytest.approx((n - 1) / n)
    assert 1 / big_a == pytest.approx(spectral_gap(kern).relaxation_gap)


def test_poincare_rejects_bad_paths():
    kern = kern_of([[0.5, 0.5, 0.0], [0.25, 0.5, 0.25], [0.0, 0.5, 0.5]])
    with pytest.raises(ContractError):
        poincare_bound(kern, {(0, 2): [0, 2]})


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_poincare_validity(seed):
    from begswap.checks import _bfs_paths
    rng = np.random.default_rng(seed)
    kern = random_reversible_kernel(int(rng.integers(2, 8)), rng)
    assert 1 / poincare_bound(kern, _bfs_paths(kern)) <= spectral_gap(kern).relaxation_gap + 1e-9


def test_dirichlet_identical():
    kern = lumped_metropolis((1.0, 1.0), 5)
    big_a, small_a, ok = dirichlet_comparison(kern, kern)
    assert big_a == pytest.approx(1.0) and small_a == pytest.approx(1.0) and ok


# --- mixing profile -------------------------------------------------------------------

def test_mixing_profile_trivial_and_two_state():
    tau, curve, _ = mixing_profile(kern_of([[1.0]]), 0, 0.1)
    assert tau == 0 and curve[0] == 0.0
    p = 0.3
    kern = kern_of([[1 - p, p], [p, 1 - p]])
    tau, curve, bound = mixing_profile(kern, 0, 1e-3)
    assert np.allclose(curve, 0.5 * (1 - 2 * p) ** np.arange(curve.size), atol=1e-15)
    assert tau == int(np.ceil(np.log(2e-3) / np.log(1 - 2 * p)))
    assert tau <= bound


def test_mixing_time_grows_exponentially_on_torpid_tempering():
    # with M = N the ladder walk alone costs ~N^2; the remaining factor must grow geometrically
    k = 1.05
    beta = 1.2 * beta_c1_of_k(k)
    ns = np.array([12, 16, 20, 24])
    taus = []
    for n in ns:
        _, _, comp = tempering_kernel(LadderSpec(beta, int(n)), k, int(n))
        start = int(np.argmax(comp.log_pi))
        tau, _, bound = mixing_profile(comp, start, 0.25)
        assert tau <= bound
        taus.append(tau)
    excess = np.log(np.array(taus) / ns ** 2)
    assert np.all(np.diff(excess) > 0)
    slope, icpt = np.polyfit(ns, excess, 1)
    resid = excess - (slope * ns + icpt)
    assert slope > 0
    assert 1 - (resid ** 2).sum() / ((excess - excess.mean()) ** 2).sum() >= 0.95
