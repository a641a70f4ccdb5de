"""Markov kernels for the BEG model and auxiliary chains.

Two families live here:

* spin-level steps (:func:`base_proposal`, :func:`metropolis_step`,
  :func:`swapping_step`, the coloring chain) used for simulation, and
* exact transition matrices on lumped state spaces (:func:`lumped_metropolis`,
  :func:`tempering_kernel`, :func:`lumped_swapping_kernel`, ...) bundled as
  :class:`Kernel` objects for spectral analysis.

Gibbs weights follow ``pi ∝ exp(+beta H)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.special import gammaln, logsumexp

from .config import DEFAULT
from .errors import ContractError, SizeError
from .model import (
    LadderSpec,
    PhasePoint,
    SpinConfig,
    _bk,
    hamiltonian,
    log_partition,
    macro_index,
    macro_log_gibbs,
)

__all__ = [
    "Kernel",
    "ReplicaState",
    "ColoringState",
    "macro_flat_index",
    "base_proposal",
    "metropolis_step",
    "lumped_metropolis",
    "microstate_metropolis",
    "tempering_kernel",
    "swap_acceptance",
    "swapping_step",
    "lumped_swapping_kernel",
    "microstate_swapping_kernel",
    "product_chain",
    "binomial_walk",
    "rw_hat_kernels",
    "rw2_gap",
    "coloring_step",
    "coupled_coloring_step",
    "coupling_time",
    "class_two_step_kernel",
    "replica_rng",
]


# ---------------------------------------------------------------------------
# Kernel container
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Row-stochastic sparse matrix with its stationary law in log domain.

    Parameters
    ----------
    matrix : scipy.sparse.csr_matrix
        Transition probabilities ``P[x, y]``.
    log_pi : ndarray
        Normalised log stationary weights.
    labels : list, optional
        Semantic label of every state (macrostate, ``(macrostate, rung)``,
        replica tuple, ...).
    lazy : bool
        Declares that every diagonal entry is at least 1/2.
    """

    matrix: sp.csr_matrix
    log_pi: np.ndarray
    labels: list | None = None
    lazy: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        mat = sp.csr_matrix(self.matrix)
        mat.sum_duplicates()
        mat.sort_indices()
        object.__setattr__(self, "matrix", mat)
        lp = np.asarray(self.log_pi, dtype=float)
        if lp.shape != (mat.shape[0],) or mat.shape[0] != mat.shape[1]:
            raise ContractError("matrix must be square and match log_pi")
        object.__setattr__(self, "log_pi", lp - logsumexp(lp))

    @property
    def n_states(self) -> int:
        return self.matrix.shape[0]

    @property
    def pi(self) -> np.ndarray:
        return np.exp(self.log_pi)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    # -- invariants ---------------------------------------------------------

    def row_sum_error(self) -> float:
        return float(np.max(np.abs(np.asarray(self.matrix.sum(axis=1)).ravel() - 1.0)))

    def detailed_balance_error(self) -> float:
        """Largest ``|log pi(x) P(x,y) - log pi(y) P(y,x)|`` over stored pairs.

        Returns ``inf`` when some transition has no reverse transition.
        """
        P = self.matrix.copy()
        P.data[P.data <= 0] = 0.0
        P.eliminate_zeros()
        pattern = (P > 0).astype(np.int8)
        if (pattern != pattern.T).nnz:
            return float("inf")
        coo = P.tocoo()
        flux = sp.csr_matrix(
            (self.log_pi[coo.row] + np.log(coo.data) + 1000.0, (coo.row, coo.col)),
            shape=P.shape,
        )
        # shift by a constant so no logged flux is exactly zero
        diff = (flux - flux.T).tocoo()
        return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0

    def is_irreducible(self) -> bool:
        n_comp, _ = connected_components(self.matrix, directed=True, connection="strong")
        return n_comp == 1

    def min_diagonal(self) -> float:
        return float(self.matrix.diagonal().min())

    def validate(self, tol=DEFAULT, irreducible: bool = True) -> "Kernel":
        """Raise :class:`ContractError` unless all kernel invariants hold."""
        if np.any(self.matrix.data < -1e-15):
            raise ContractError(f"{self.name}: negative transition probability")
        err = self.row_sum_error()
        if err > tol.row_sum:
            raise ContractError(f"{self.name}: row sums off by {err:.3e}")
        db = self.detailed_balance_error()
        if db > tol.detailed_balance:
            raise ContractError(f"{self.name}: detailed balance violated ({db:.3e})")
        if self.lazy and self.min_diagonal() < 0.5 - 1e-12:
            raise ContractError(f"{self.name}: declared lazy but diagonal < 1/2")
        if irreducible and not self.is_irreducible():
            raise ContractError(f"{self.name}: support graph is not strongly connected")
        return self

    # -- export -------------------------------------------------------------

    def export(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.coo.csv`` (row,col,value) and ``<prefix>.json`` header."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        coo = self.matrix.tocoo()
        coo_path = prefix.with_suffix(".coo.csv")
        with open(coo_path, "w") as fh:
            fh.write("row,col,value\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{i},{j},{float(v)!r}\n")
        header = {
            "name": self.name,
            "n_states": self.n_states,
            "lazy": self.lazy,
            "labels": [list(lab) if isinstance(lab, tuple) else lab for lab in self.labels]
            if self.labels is not None else None,
            "log_pi": self.log_pi.tolist(),
            "meta": self.meta,
        }
        json_path = prefix.with_suffix(".json")
        json_path.write_text(json.dumps(header, default=_json_default))
        return coo_path, json_path


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


def _finish(rows, cols, vals, n, log_pi, **kw) -> Kernel:
    """Assemble off-diagonal entries and complete rows with holding mass."""
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    off.setdiag(0.0)
    off.eliminate_zeros()
    hold = 1.0 - np.asarray(off.sum(axis=1)).ravel()
    return Kernel(off + sp.diags(hold), log_pi, **kw)


# ---------------------------------------------------------------------------
# Spin-level steps
# ---------------------------------------------------------------------------

def replica_rng(seed: int, replica: int, sweep: int) -> np.random.Generator:
    """Counter-based stream for ``(seed, replica, sweep)`` (Philox keyed by a seed sequence)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, replica, sweep])))


def _spins(sigma) -> np.ndarray:
    return sigma.spins if isinstance(sigma, SpinConfig) else np.asarray(sigma, dtype=np.int8)


def _propose(spins: np.ndarray, rng) -> tuple[int, int] | None:
    """Site and new value of a base proposal, or ``None`` for the holding branch."""
    if rng.random() < 0.5:
        return None
    n = spins.size
    j = int(rng.integers(n))
    # the two values different from spins[j], chosen with equal probability
    v = int(spins[j]) + 1 + int(rng.integers(1, 3))
    return j, (v % 3) - 1


def base_proposal(sigma, rng):
    """Hold with probability 1/2, otherwise respell one uniform site to one of its two other values."""
    spins = _spins(sigma)
    move = _propose(spins, rng)
    out = spins.copy()
    if move is not None:
        out[move[0]] = move[1]
    return SpinConfig(out) if isinstance(sigma, SpinConfig) else out


def _delta_h(spins: np.ndarray, j: int, v: int, k: float) -> float:
    n = spins.size
    s = int(spins.sum(dtype=np.int64))
    old = int(spins[j])
    s2 = s - old + v
    return -(v * v - old * old) + k * (s2 * s2 - s * s) / n


def metropolis_step(sigma, p, rng):
    """One Metropolis step for ``pi ∝ exp(beta H)`` driven by :func:`base_proposal`."""
    beta, k = _bk(p)
    spins = _spins(sigma)
    out = spins.copy()
    move = _propose(spins, rng)
    if move is not None:
        j, v = move
        dh = _delta_h(spins, j, v, k)
        if dh >= 0 or rng.random() < np.exp(beta * dh):
            out[j] = v
    return SpinConfig(out) if isinstance(sigma, SpinConfig) else out


# ---------------------------------------------------------------------------
# Lumped Metropolis
# ---------------------------------------------------------------------------

def macro_flat_index(s, r):
    """Canonical index of macrostate ``(s, r)``: ``r`` ascending, then ``s`` ascending."""
    return r * (r + 1) // 2 + (s + r) // 2


# (which count, ds, dr) for the six single-spin respellings v -> v'
_MOVES = (
    ("plus", -1, -1),   # +1 -> 0
    ("plus", -2, 0),    # +1 -> -1
    ("minus", +1, -1),  # -1 -> 0
    ("minus", +2, 0),   # -1 -> +1
    ("zero", +1, +1),   # 0 -> +1
    ("zero", -1, +1),   # 0 -> -1
)


def _lumped_offdiag(beta: float, k: float, n: int, offset: int = 0):
    mi = macro_index(n)
    s, r = mi.s, mi.r
    counts = {"plus": (r + s) // 2, "minus": (r - s) // 2, "zero": n - r}
    energy = -r + k * s * s / n
    src = np.arange(len(mi))
    rows, cols, vals = [], [], []
    for which, ds, dr in _MOVES:
        c = counts[which]
        mask = c > 0
        s2, r2 = s[mask] + ds, r[mask] + dr
        dh = (-r2 + k * s2 * s2 / n) - energy[mask]
        rows.append(src[mask] + offset)
        cols.append(macro_flat_index(s2, r2) + offset)
        vals.append(c[mask] / (4.0 * n) * np.exp(np.minimum(0.0, beta * dh)))
    return rows, cols, vals


def lumped_metropolis(p, n: int) -> Kernel:
    """Exact Metropolis kernel on the ``(n+1)(n+2)/2`` macrostates.

    From ``(s, r)`` each respelling ``v -> v'`` of one of the ``n_v`` spins
    of value ``v`` is proposed with mass ``n_v / (4n)`` and accepted with
    ``min(1, exp(beta * dH))``; the remainder is holding.
    """
    beta, k = _bk(p)
    rows, cols, vals = _lumped_offdiag(beta, k, n)
    mi = macro_index(n)
    return _finish(rows, cols, vals, len(mi), macro_log_gibbs(beta, k, n),
                   labels=mi.labels(), lazy=True, name="lumped_metropolis",
                   meta={"beta": beta, "k": k, "n": n})


def all_configs(n: int) -> np.ndarray:
    """All ``3**n`` configurations; row ``i`` is the base-3 expansion of ``i`` (digit d -> d-1)."""
    return np.array(list(product((-1, 0, 1), repeat=n)), dtype=np.int8)


def microstate_metropolis(p, n: int) -> Kernel:
    """Metropolis kernel on all ``3**n`` configurations (small ``n`` only)."""
    beta, k = _bk(p)
    if n > 10:
        raise SizeError("microstate kernel limited to n <= 10")
    conf = all_configs(n)
    energy = np.array([hamiltonian(c, k) for c in conf])
    n_states = conf.shape[0]
    weights = 3 ** np.arange(n - 1, -1, -1)
    codes = (conf.astype(np.int64) + 1) @ weights
    rows, cols, vals = [], [], []
    for j in range(n):
        for shift in (1, 2):
            new_digit = (conf[:, j].astype(np.int64) + 1 + shift) % 3
            tgt = codes + (new_digit - (conf[:, j] + 1)) * weights[j]
            dh = energy[tgt] - energy
            rows.append(codes)
            cols.append(tgt)
            vals.append(np.exp(np.minimum(0.0, beta * dh)) / (4.0 * n))
    log_w = beta * energy
    return _finish(rows, cols, vals, n_states, log_w,
                   labels=[tuple(c) for c in conf.tolist()], lazy=True,
                   name="microstate_metropolis", meta={"beta": beta, "k": k, "n": n})


# ---------------------------------------------------------------------------
# Simulated tempering
# ---------------------------------------------------------------------------

def tempering_kernel(ladder: LadderSpec, k: float, n: int):
    """Exact ``(Q, P_st, Q P_st Q)`` on macrostates x rungs.

    State ``(m, i)`` has index ``i * n_macro + m``.  ``Q`` proposes
    ``i -> i +/- 1`` with mass ``1/(2(M+1))`` and accepts with
    ``min(1, pi_j(sigma)/pi_i(sigma))`` using exact partition functions.
    ``P_st`` is the lumped Metropolis kernel at the current rung.
    """
    mi = macro_index(n)
    nm = len(mi)
    m_rungs = ladder.m
    n_states = nm * (m_rungs + 1)
    energy = -mi.r + k * mi.s * mi.s / n
    log_z = np.array([log_partition((b, k), n) for b in ladder.betas])
    log_pi = np.concatenate([macro_log_gibbs(b, k, n) for b in ladder.betas]) - np.log(m_rungs + 1)
    labels = [(lab, i) for i in range(m_rungs + 1) for lab in mi.labels()]
    meta = {"beta": ladder.beta, "m": m_rungs, "k": k, "n": n}

    rate = 1.0 / (2 * (m_rungs + 1))
    base = np.arange(nm)
    rows, cols, vals = [], [], []
    for i in range(m_rungs + 1):
        for j in (i - 1, i + 1):
            if 0 <= j <= m_rungs:
                log_ratio = (ladder.betas[j] - ladder.betas[i]) * energy - (log_z[j] - log_z[i])
                rows.append(base + i * nm)
                cols.append(base + j * nm)
                vals.append(rate * np.exp(np.minimum(0.0, log_ratio)))
    q = _finish(rows, cols, vals, n_states, log_pi, labels=labels, lazy=True,
                name="tempering_Q", meta=meta)

    rows, cols, vals = [], [], []
    for i, b in enumerate(ladder.betas):
        r_, c_, v_ = _lumped_offdiag(b, k, n, offset=i * nm)
        rows += r_
        cols += c_
        vals += v_
    p_st = _finish(rows, cols, vals, n_states, log_pi, labels=labels, lazy=True,
                   name="tempering_P", meta=meta)
    comp = Kernel(q.matrix @ p_st.matrix @ q.matrix, log_pi, labels=labels,
                  name="tempering_QPQ", meta=meta)
    return q, p_st, comp


# ---------------------------------------------------------------------------
# Swapping
# ---------------------------------------------------------------------------

def swap_acceptance(h_i: float, h_j: float, ladder: LadderSpec) -> float:
    """``min(1, exp((beta/M)(h_i - h_j)))`` for exchanging rungs ``i`` and ``i+1``."""
    return float(np.exp(min(0.0, ladder.spacing * (h_i - h_j))))


@dataclass
class ReplicaState:
    """Configurations ``x_0, ..., x_M``; replica ``i`` sits at ``beta_i``."""

    replicas: list

    def __post_init__(self):
        self.replicas = [r if isinstance(r, SpinConfig) else SpinConfig(r) for r in self.replicas]
        if len({r.n for r in self.replicas}) > 1:
            raise ValueError("all replicas must have the same size")

    @property
    def m(self) -> int:
        return len(self.replicas) - 1

    def energies(self, k: float) -> np.ndarray:
        return np.array([hamiltonian(r, k) for r in self.replicas])


def swapping_step(state: ReplicaState, ladder: LadderSpec, k: float, rng, phase: str) -> ReplicaState:
    """Apply one ``P`` (single-replica Metropolis) or ``Q`` (adjacent swap) move."""
    reps = list(state.replicas)
    m = len(reps) - 1
    if phase == "P":
        if rng.random() < 0.5:
            return ReplicaState(reps)
        i = int(rng.integers(m + 1))
        reps[i] = metropolis_step(reps[i], (ladder.betas[i], k), rng)
        return ReplicaState(reps)
    if phase == "Q":
        if m == 0 or rng.random() < 0.5:
            return ReplicaState(reps)
        i = int(rng.integers(m))
        acc = swap_acceptance(hamiltonian(reps[i], k), hamiltonian(reps[i + 1], k), ladder)
        if acc >= 1.0 or rng.random() < acc:
            reps[i], reps[i + 1] = reps[i + 1], reps[i]
        return ReplicaState(reps)
    raise ValueError("phase must be 'P' or 'Q'")


def _swapping_from_components(comps: list[Kernel], energies: np.ndarray, ladder: LadderSpec,
                              cap: int, name: str):
    """Exact ``(Q, P, QPQ)`` on the product of identical component spaces.

    ``comps[i]`` is the single-replica kernel at ``beta_i`` and ``energies``
    the energy of every component state.
    """
    m = ladder.m
    d = comps[0].n_states
    n_states = d ** (m + 1)
    if n_states > cap:
        raise SizeError(f"product space has {n_states} states (> cap {cap}); use simulation")
    digits = np.array(np.unravel_index(np.arange(n_states), (d,) * (m + 1))).T
    log_pi = sum(comps[i].log_pi[digits[:, i]] for i in range(m + 1))

    p_mat = sp.identity(n_states, format="csr") * 0.5
    for i, comp in enumerate(comps):
        left = sp.identity(d ** i, format="csr")
        right = sp.identity(d ** (m - i), format="csr")
        p_mat = p_mat + sp.kron(sp.kron(left, comp.matrix), right, format="csr") / (2 * (m + 1))
    p = Kernel(p_mat, log_pi, lazy=True, name=f"{name}_P")

    rows, cols, vals = [], [], []
    src = np.arange(n_states)
    radix = d ** np.arange(m, -1, -1)
    for i in range(m):
        a, b = digits[:, i], digits[:, i + 1]
        moved = a != b
        tgt = src + (b - a) * radix[i] + (a - b) * radix[i + 1]
        acc = np.exp(np.minimum(0.0, ladder.spacing * (energies[a] - energies[b])))
        rows.append(src[moved])
        cols.append(tgt[moved])
        vals.append(acc[moved] / (2 * m))
    q = _finish(rows, cols, vals, n_states, log_pi, lazy=True, name=f"{name}_Q")
    comp = Kernel(q.matrix @ p.matrix @ q.matrix, log_pi, name=f"{name}_QPQ")
    for kern in (p, q, comp):
        kern.meta.update({"beta": ladder.beta, "m": m})
    return q, p, comp


def lumped_swapping_kernel(ladder: LadderSpec, k: float, n: int, cap: int | None = None):
    """Exact swapping kernels ``(Q, P, QPQ)`` on the product of macrostate spaces.

    Raises :class:`SizeError` when ``n_macro ** (M+1)`` exceeds ``cap``.
    """
    cap = DEFAULT.swap_state_cap if cap is None else cap
    mi = macro_index(n)
    if len(mi) ** (ladder.m + 1) > cap:
        raise SizeError(f"lumped swapping space {len(mi)}^{ladder.m + 1} exceeds cap {cap}; "
                        "use trajectory simulation instead")
    comps = [lumped_metropolis((b, k), n) for b in ladder.betas]
    energies = -mi.r + k * mi.s * mi.s / n
    out = _swapping_from_components(comps, energies, ladder, cap, "lumped_swapping")
    for kern in out:
        kern.meta.update({"k": k, "n": n})
    return out


def microstate_swapping_kernel(ladder: LadderSpec, k: float, n: int, cap: int = 200_000):
    """Swapping kernels on the full configuration product space (tiny cases only)."""
    comps = [microstate_metropolis((b, k), n) for b in ladder.betas]
    conf = all_configs(n)
    energies = np.array([hamiltonian(c, k) for c in conf])
    return _swapping_from_components(comps, energies, ladder, cap, "microstate_swapping")


def product_chain(kernels: list[Kernel], cap: int = 200_000) -> Kernel:
    """Rung-uniform product chain ``(1/(M+1)) sum_i I x .. x P_i x .. x I``."""
    sizes = [kern.n_states for kern in kernels]
    total = int(np.prod(sizes))
    if total > cap:
        raise SizeError(f"product chain has {total} states (> cap {cap})")
    mat = sp.csr_matrix((total, total))
    log_pi = np.zeros(1)
    for i, kern in enumerate(kernels):
        left = sp.identity(int(np.prod(sizes[:i])), format="csr")
        right = sp.identity(int(np.prod(sizes[i + 1:])), format="csr")
        mat = mat + sp.kron(sp.kron(left, kern.matrix), right, format="csr")
        log_pi = (log_pi[:, None] + kern.log_pi[None, :]).ravel()
    return Kernel(mat / len(kernels), log_pi, name="product_chain")


# ---------------------------------------------------------------------------
# Auxiliary chains: binomial walk, trace walks
# ---------------------------------------------------------------------------

def binomial_walk(m: int) -> Kernel:
    """Metropolis chain on ``{0..m}`` for Binomial(m, 1/2) built on the lazy-at-ends walk."""
    if m < 1:
        raise ValueError("m must be >= 1")
    i = np.arange(m + 1)
    log_r = gammaln(m + 1) - gammaln(i + 1) - gammaln(m - i + 1) - m * np.log(2.0)
    rows, cols, vals = [], [], []
    for step in (-1, 1):
        src = i[(i + step >= 0) & (i + step <= m)]
        tgt = src + step
        rows.append(src)
        cols.append(tgt)
        vals.append(0.5 * np.exp(np.minimum(0.0, log_r[tgt] - log_r[src])))
    return _finish(rows, cols, vals, m + 1, log_r, labels=list(range(m + 1)),
                   name="binomial_walk", meta={"m": m})


def rw_hat_kernels(pi_hat, i_c: int, m: int, cap: int = 1 << 16, log_mass=None):
    """Trace walks RW1 and RW2 on ``{1}^{i_c-1} x {0,1}^{M-i_c+1}``.

    Parameters
    ----------
    pi_hat : array_like, shape (M+1,)
        ``pi_hat[i]`` is the mass of bit value 1 at rung ``i``; only rungs
        ``i_c..M`` are free.
    i_c, m : int
        First free rung and top rung.

    Returns
    -------
    (Kernel, Kernel)
        RW1 (lazy; Metropolis flip of bit ``i_c`` or Metropolis exchange of
        adjacent free bits, each of the ``M - i_c + 1`` moves with mass
        ``1/(2(M - i_c + 1))``) and RW2 (uniform free rung, exact resampling).
    log_mass : array_like, shape (M+1, 2), optional
        ``(log pi_hat_i(0), log pi_hat_i(1))``; overrides ``pi_hat`` so that
        exponentially small block masses are kept exactly.
    """
    if log_mass is None:
        p1 = np.asarray(pi_hat, dtype=float)[i_c:m + 1]
        if np.any((p1 <= 0) | (p1 >= 1)):
            raise ValueError("free-rung weights must lie strictly in (0, 1)")
        lp1, lp0 = np.log(p1), np.log1p(-p1)
    else:
        lm = np.asarray(log_mass, dtype=float)[i_c:m + 1]
        if not np.all(np.isfinite(lm)):
            raise ValueError("free-rung weights must lie strictly in (0, 1)")
        lp0, lp1 = lm[:, 0], lm[:, 1]
        p1 = np.exp(lp1)
    length = p1.size
    if length < 1 or 2 ** length > cap:
        raise SizeError(f"trace space 2^{length} exceeds cap {cap}")
    n_states = 2 ** length
    bits = ((np.arange(n_states)[:, None] >> np.arange(length - 1, -1, -1)) & 1).astype(np.int64)
    logp = np.where(bits == 1, lp1, lp0)
    log_pi = logp.sum(axis=1)
    radix = 2 ** np.arange(length - 1, -1, -1)
    src = np.arange(n_states)
    mass = 1.0 / (2 * length)

    rows, cols, vals = [], [], []
    flip = src ^ radix[0]
    rows.append(src)
    cols.append(flip)
    vals.append(mass * np.exp(np.minimum(0.0, log_pi[flip] - log_pi)))
    for a in range(length - 1):
        differ = bits[:, a] != bits[:, a + 1]
        tgt = src ^ (radix[a] | radix[a + 1])
        rows.append(src[differ])
        cols.append(tgt[differ])
        vals.append(mass * np.exp(np.minimum(0.0, log_pi[tgt] - log_pi))[differ])
    labels = [tuple([1] * (i_c - 1) + b.tolist()) for b in bits]
    rw1 = _finish(rows, cols, vals, n_states, log_pi, labels=labels, lazy=True, name="RW1")

    rows, cols, vals = [], [], []
    for a in range(length):
        tgt = src ^ radix[a]
        rows.append(src)
        cols.append(tgt)
        vals.append(np.exp(np.where(bits[:, a] == 1, lp0[a], lp1[a])) / length)
    rw2 = _finish(rows, cols, vals, n_states, log_pi, labels=labels, name="RW2")
    return rw1, rw2


def rw2_gap(i_c: int, m: int) -> float:
    """Exact gap of RW2 for any weights: each coordinate is refreshed exactly, so ``1/(M-i_c+1)``."""
    return 1.0 / (m - i_c + 1)


# ---------------------------------------------------------------------------
# Coloring chain and its coupling
# ---------------------------------------------------------------------------

@dataclass
class ColoringState:
    """A word over {-1, 0, +1} whose color counts are preserved by every move."""

    coloring: np.ndarray

    def __post_init__(self):
        self.coloring = np.asarray(self.coloring, dtype=np.int8).copy()

    @property
    def counts(self) -> tuple[int, int, int]:
        c = self.coloring
        return int((c == -1).sum()), int((c == 0).sum()), int((c == 1).sum())


def coloring_step(x: ColoringState, rng) -> ColoringState:
    """Draw two uniform positions; transpose their colors if they differ."""
    n = x.coloring.size
    r1, r2 = int(rng.integers(n)), int(rng.integers(n))
    out = x.coloring.copy()
    if r1 != r2:
        out[r1], out[r2] = out[r2], out[r1]
    return ColoringState(out)


def _coupled_indices(x: np.ndarray, xp: np.ndarray, r1: int, r2: int, rng):
    """Indices transposed in ``x'`` under the coupling, given those used in ``x``."""
    if r1 == r2:
        return r1, r2
    if x[r1] == xp[r1] or x[r2] == xp[r2]:
        return r1, r2
    disagree = np.flatnonzero(x != xp)
    return r1, int(disagree[rng.integers(disagree.size)])


def coupled_coloring_step(x: ColoringState, x_prime: ColoringState, rng):
    """Advance both chains one step with the disagreement-set coupling.

    Returns the two new states and ``psi``, the number of positions where
    they disagree afterwards.
    """
    a, b = x.coloring, x_prime.coloring
    if a.size != b.size or x.counts != x_prime.counts:
        raise ValueError("coupled states must share size and color counts")
    n = a.size
    r1, r2 = int(rng.integers(n)), int(rng.integers(n))
    q1, q2 = _coupled_indices(a, b, r1, r2, rng)
    a2, b2 = a.copy(), b.copy()
    a2[r1], a2[r2] = a[r2], a[r1]
    b2[q1], b2[q2] = b[q2], b[q1]
    return ColoringState(a2), ColoringState(b2), int(np.count_nonzero(a2 != b2))


def coupling_time(x: ColoringState, x_prime: ColoringState, rng, max_steps: int = 10**9):
    """Steps until the coupled chains agree, plus the trajectory of ``psi``."""
    a, b = x.coloring.copy(), x_prime.coloring.copy()
    n = a.size
    psi = [int(np.count_nonzero(a != b))]
    steps = 0
    while psi[-1] > 0 and steps < max_steps:
        r1, r2 = int(rng.integers(n)), int(rng.integers(n))
        q1, q2 = _coupled_indices(a, b, r1, r2, rng)
        a[r1], a[r2] = a[r2], a[r1]
        b[q1], b[q2] = b[q2], b[q1]
        steps += 1
        psi.append(int(np.count_nonzero(a != b)))
    return steps, np.array(psi)


# ---------------------------------------------------------------------------
# Two-step Metropolis restricted to one macrostate class
# ---------------------------------------------------------------------------

def class_configs(s: int, r: int, n: int) -> np.ndarray:
    """All configurations with magnetisation ``s`` and ``r`` nonzero spins."""
    n_plus = (r + s) // 2
    n_minus = r - n_plus
    out = []

    def rec(prefix, p, m, z):
        if p == m == z == 0:
            out.append(prefix)
            return
        if m:
            rec(prefix + (-1,), p, m - 1, z)
        if z:
            rec(prefix + (0,), p, m, z - 1)
        if p:
            rec(prefix + (1,), p - 1, m, z)

    rec((), n_plus, n_minus, n - r)
    return np.array(out, dtype=np.int8).reshape(len(out), n)


def class_two_step_kernel(p, n: int, s: int, r: int) -> Kernel:
    """``T^2`` restricted to the class ``A_{s,r}`` (rejected mass kept as holding).

    ``T`` is the microstate Metropolis chain; each two-step path
    ``sigma -> tau -> sigma'`` with ``sigma, sigma'`` in the class is
    accumulated explicitly from configuration energies.
    """
    beta, k = _bk(p)
    conf = class_configs(s, r, n)
    size = conf.shape[0]
    weights = 3 ** np.arange(n - 1, -1, -1)
    codes = (conf.astype(np.int64) + 1) @ weights  # ascending by construction
    h0 = hamiltonian(conf[0], k)
    rows, cols, vals = [], [], []
    for j in range(n):
        for shift in (1, 2):
            mid = conf.copy()
            mid[:, j] = (conf[:, j] + 1 + shift) % 3 - 1
            mid_s = mid.sum(axis=1, dtype=np.int64)
            mid_h = -np.count_nonzero(mid, axis=1) + k * mid_s * mid_s / n
            first = np.exp(np.minimum(0.0, beta * (mid_h - h0))) / (4 * n)
            second = np.exp(np.minimum(0.0, beta * (h0 - mid_h))) / (4 * n)
            for j2 in range(n):
                if j2 == j:
                    continue
                for shift2 in (1, 2):
                    end = mid.copy()
                    end[:, j2] = (mid[:, j2] + 1 + shift2) % 3 - 1
                    in_class = (end.sum(axis=1) == s) & (np.count_nonzero(end, axis=1) == r)
                    if not in_class.any():
                        continue
                    end_codes = (end[in_class].astype(np.int64) + 1) @ weights
                    rows.append(np.flatnonzero(in_class))
                    cols.append(np.searchsorted(codes, end_codes))
                    vals.append((first * second)[in_class])
    return _finish(rows, cols, vals, size, np.zeros(size),
                   labels=[tuple(c) for c in conf.tolist()], name="class_two_step",
                   meta={"beta": beta, "k": k, "n": n, "s": s, "r": r})
