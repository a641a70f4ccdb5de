"""Mean-field Blume-Emery-Griffiths model: energies, Gibbs weights, lumping.

Sign convention: the Gibbs measure is ``pi_beta(sigma) ∝ exp(+beta * H(sigma))``
with ``H(sigma) = -sum_j sigma_j**2 + (K/N) * (sum_j sigma_j)**2``.  Large ``H``
is therefore *likely*.  Every routine in this package follows that convention.

All weights are kept in the log domain and normalised with log-sum-exp.

Macrostates ``(s, r)`` (magnetisation, number of nonzero spins) are indexed in
a fixed canonical order: ``r`` ascending, then ``s`` ascending.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb, log

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "SpinConfig",
    "Macrostate",
    "TypeVector",
    "PhasePoint",
    "LadderSpec",
    "MacroIndex",
    "macro_index",
    "hamiltonian",
    "macrostate_of",
    "lumped_energy",
    "log_multiplicity",
    "log_partition",
    "macro_gibbs",
    "macro_log_gibbs",
    "free_energy_f",
    "overlap_delta",
    "type_of_macrostate",
]


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpinConfig:
    """Microscopic state: ``n`` spins in {-1, 0, +1}."""

    spins: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.spins, dtype=np.int8)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("spins must be a non-empty 1-d sequence")
        if np.any((arr < -1) | (arr > 1)):
            raise ValueError("spins must lie in {-1, 0, +1}")
        object.__setattr__(self, "spins", arr)

    @property
    def n(self) -> int:
        return int(self.spins.size)


@dataclass(frozen=True)
class Macrostate:
    """Lumped state ``(s, r)`` of an ``n``-spin system."""

    s: int
    r: int
    n: int

    def __post_init__(self):
        if not is_valid_macrostate(self.s, self.r, self.n):
            raise ValueError(f"invalid macrostate (s={self.s}, r={self.r}, n={self.n})")

    @property
    def n_plus(self) -> int:
        return (self.r + self.s) // 2

    @property
    def n_minus(self) -> int:
        return (self.r - self.s) // 2

    @property
    def n_zero(self) -> int:
        return self.n - self.r


@dataclass(frozen=True)
class TypeVector:
    """Empirical type ``(a_minus, a_zero, a_plus)`` on the 2-simplex."""

    a_minus: float
    a_zero: float
    a_plus: float

    def __post_init__(self):
        vals = (self.a_minus, self.a_zero, self.a_plus)
        if min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-12:
            raise ValueError(f"not a point of the simplex: {vals}")

    def as_array(self) -> np.ndarray:
        return np.array([self.a_minus, self.a_zero, self.a_plus])


@dataclass(frozen=True)
class PhasePoint:
    """Inverse temperature ``beta`` and coupling ``k``."""

    beta: float
    k: float

    def __post_init__(self):
        if not self.beta > 0 or not self.k > 0:
            raise ValueError("PhasePoint needs beta > 0 and k > 0")


@dataclass(frozen=True)
class LadderSpec:
    """Evenly spaced ladder ``beta_i = i * beta / m`` for ``i = 0..m``."""

    beta: float
    m: int
    betas: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("ladder needs at least one step (m >= 1)")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "betas", np.arange(self.m + 1) * (self.beta / self.m))

    @property
    def spacing(self) -> float:
        return self.beta / self.m


def is_valid_macrostate(s: int, r: int, n: int) -> bool:
    return n >= 1 and 0 <= r <= n and abs(s) <= r and (r - s) % 2 == 0


# ---------------------------------------------------------------------------
# Canonical macrostate indexing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MacroIndex:
    """Arrays describing all ``(n+1)(n+2)/2`` macrostates in canonical order."""

    n: int
    s: np.ndarray
    r: np.ndarray
    index: dict

    def __len__(self) -> int:
        return int(self.s.size)

    def lookup(self, s: int, r: int) -> int:
        return self.index[(int(s), int(r))]

    def labels(self) -> list[tuple[int, int]]:
        return list(zip(self.s.tolist(), self.r.tolist()))


@lru_cache(maxsize=64)
def macro_index(n: int) -> MacroIndex:
    ss, rr = [], []
    for r in range(n + 1):
        for s in range(-r, r + 1, 2):
            ss.append(s)
            rr.append(r)
    s_arr = np.array(ss, dtype=np.int64)
    r_arr = np.array(rr, dtype=np.int64)
    s_arr.setflags(write=False)
    r_arr.setflags(write=False)
    idx = {(s, r): i for i, (s, r) in enumerate(zip(ss, rr))}
    return MacroIndex(n, s_arr, r_arr, idx)


# ---------------------------------------------------------------------------
# Energies and weights
# ---------------------------------------------------------------------------

def hamiltonian(sigma, k: float) -> float:
    """``-sum sigma_j^2 + (k/N) (sum sigma_j)^2``."""
    spins = sigma.spins if isinstance(sigma, SpinConfig) else np.asarray(sigma)
    n = spins.size
    s = int(spins.sum(dtype=np.int64))
    r = int(np.count_nonzero(spins))
    return -r + k * s * s / n


def macrostate_of(sigma) -> Macrostate:
    spins = sigma.spins if isinstance(sigma, SpinConfig) else np.asarray(sigma)
    return Macrostate(int(spins.sum(dtype=np.int64)), int(np.count_nonzero(spins)), int(spins.size))


def lumped_energy(m, k: float, n: int | None = None):
    """Energy shared by every configuration in the class ``(s, r)``.

    Accepts a :class:`Macrostate` or, for vectorised use, arrays ``s`` and
    ``r`` passed as ``m=(s, r)`` together with ``n``.
    """
    if isinstance(m, Macrostate):
        return -m.r + k * m.s * m.s / m.n
    s, r = m
    s = np.asarray(s, dtype=float)
    return -np.asarray(r, dtype=float) + k * s * s / n


def log_multiplicity(m) -> float:
    """``log[C(n, r) C(r, (r+s)/2)]``; exact integer arithmetic for small ``n``."""
    if not isinstance(m, Macrostate):
        raise TypeError("expected a Macrostate")
    n, r, n_plus = m.n, m.r, m.n_plus
    if n <= 60:
        return float(log(comb(n, r) * comb(r, n_plus)))
    return float(gammaln(n + 1) - gammaln(n - r + 1) - gammaln(n_plus + 1) - gammaln(r - n_plus + 1))


def _log_mult_array(n: int) -> np.ndarray:
    mi = macro_index(n)
    n_plus = (mi.r + mi.s) // 2
    n_minus = mi.r - n_plus
    return gammaln(n + 1) - gammaln(n - mi.r + 1) - gammaln(n_plus + 1) - gammaln(n_minus + 1)


@lru_cache(maxsize=256)
def _cached_log_mult(n: int) -> np.ndarray:
    out = _log_mult_array(n)
    out.setflags(write=False)
    return out


def macro_log_weights(beta: float, k: float, n: int) -> np.ndarray:
    """Unnormalised log Gibbs weights of every macrostate (canonical order)."""
    mi = macro_index(n)
    return _cached_log_mult(n) + beta * lumped_energy((mi.s, mi.r), k, n)


def log_partition(p, n: int) -> float:
    """``log Z`` at ``p = PhasePoint`` or a ``(beta, k)`` pair (``beta = 0`` allowed)."""
    beta, k = _bk(p)
    if n < 1:
        raise ValueError("n must be >= 1")
    if beta == 0:
        return n * np.log(3.0)
    return float(logsumexp(macro_log_weights(beta, k, n)))


def macro_log_gibbs(beta: float, k: float, n: int) -> np.ndarray:
    lw = macro_log_weights(beta, k, n)
    return lw - logsumexp(lw)


def macro_gibbs(p, n: int) -> np.ndarray:
    """Gibbs probabilities of all macrostates, indexed as :func:`macro_index`."""
    beta, k = _bk(p)
    return np.exp(macro_log_gibbs(beta, k, n))


def _bk(p) -> tuple[float, float]:
    if isinstance(p, PhasePoint):
        return p.beta, p.k
    beta, k = p
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    return float(beta), float(k)


# ---------------------------------------------------------------------------
# Free energy density
# ---------------------------------------------------------------------------

def _xlogx(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)


def free_energy_f(a, p) -> float:
    """``beta(-a_- - a_+ + K(a_+ - a_-)^2) - sum a_i log a_i`` with ``0 log 0 = 0``.

    Larger values correspond to more likely types.
    """
    beta, k = _bk(p)
    vec = a.as_array() if isinstance(a, TypeVector) else np.asarray(a, dtype=float)
    am, a0, ap = vec
    energy = -am - ap + k * (ap - am) ** 2
    return float(beta * energy - _xlogx(vec).sum())


def type_of_macrostate(m: Macrostate) -> TypeVector:
    n = m.n
    return TypeVector(m.n_minus / n, m.n_zero / n, m.n_plus / n)


# ---------------------------------------------------------------------------
# Adjacent-rung overlap
# ---------------------------------------------------------------------------

def overlap_delta(ladder: LadderSpec, k: float, n: int) -> np.ndarray:
    """``sum_x min(pi_i(x), pi_{i+1}(x))`` for each adjacent ladder pair.

    The sum runs over macrostates; since both measures are constant on a
    class, this equals the microstate sum.
    """
    logp = np.array([macro_log_gibbs(b, k, n) for b in ladder.betas])
    return np.exp(np.minimum(logp[:-1], logp[1:])).sum(axis=1)
