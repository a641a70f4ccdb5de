"""Compiled spin-level trajectories for long runs.

The kernels here perform exactly the moves of :func:`begswap.chains.metropolis_step`
and :func:`begswap.chains.swapping_step` but keep only the counts ``(s, r)``
of every configuration next to the spins, so one step costs O(1).

Uniform variates are drawn in blocks from Philox streams keyed by
``SeedSequence([seed, stream, block])``; a run is a pure function of its
arguments.  Conventions:

* one Metropolis sweep is ``N`` steps;
* one swapping sweep is ``M + 1`` composite ``Q P Q`` steps;
* one tempering sweep is ``M + 1`` composite ``Q P_st Q`` steps;
* a basin visit is an entry of the top-rung magnetisation into
  ``s >= +zN/2`` or ``s <= -zN/2`` after last being in the opposite basin
  (the first entry counts), where ``z`` is the off-center mode of ``f``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import CapError, DomainError
from .model import LadderSpec, log_partition

__all__ = [
    "SimResult",
    "uniform_block",
    "simulate_metropolis",
    "simulate_swapping",
    "simulate_tempering",
    "integrated_autocorr",
]

STREAM_METROPOLIS = 1
STREAM_SWAPPING = 2
STREAM_TEMPERING = 3


@dataclass
class SimResult:
    sweeps: int
    visits_plus: int
    visits_minus: int
    s_top: np.ndarray = field(repr=False)
    final_spins: np.ndarray = field(repr=False)
    extra: dict = field(default_factory=dict)

    @property
    def basins_visited(self) -> int:
        return int(self.visits_plus > 0) + int(self.visits_minus > 0)

    def to_dict(self) -> dict:
        return {"sweeps": self.sweeps, "visits_plus": self.visits_plus,
                "visits_minus": self.visits_minus, "basins_visited": self.basins_visited,
                **{k: v for k, v in self.extra.items() if not isinstance(v, np.ndarray)}}


def uniform_block(seed: int, stream: int, block: int, shape) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, block])))
    return gen.random(shape)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _flip(spins, c, s_arr, r_arr, beta, k, n, u_move, u_acc):
    """Base proposal plus Metropolis acceptance on configuration ``c``; ``u_move`` encodes hold/site/value."""
    if u_move < 0.5:
        return
    idx = int((u_move - 0.5) * 4 * n)
    if idx >= 2 * n:
        idx = 2 * n - 1
    j = idx // 2
    old = spins[c, j]
    new = (old + 2 + (idx % 2)) % 3 - 1
    s = s_arr[c]
    s2 = s - old + new
    dh = -(new * new - old * old) + k * (s2 * s2 - s * s) / n
    if dh >= 0 or u_acc < np.exp(beta * dh):
        spins[c, j] = new
        s_arr[c] = s2
        r_arr[c] += new * new - old * old


@njit(cache=True)
def _update_basin(s, thr, state, counts):
    if s >= thr and state[0] != 1:
        state[0] = 1
        counts[0] += 1
    elif s <= -thr and state[0] != -1:
        state[0] = -1
        counts[1] += 1


@njit(cache=True)
def _metropolis_chunk(spins, s_arr, r_arr, beta, k, u, n_sweeps, thr, state, counts, s_rec, rec0):
    n = spins.shape[1]
    t = 0
    for sw in range(n_sweeps):
        for _ in range(n):
            _flip(spins, 0, s_arr, r_arr, beta, k, n, u[t, 0], u[t, 1])
            t += 1
            _update_basin(s_arr[0], thr, state, counts)
        s_rec[rec0 + sw] = s_arr[0]


@njit(cache=True)
def _energy(s, r, k, n):
    return -r + k * s * s / n


@njit(cache=True)
def _swap_q(pos, s_arr, r_arr, spacing, k, n, m, u_pick, u_acc):
    if m == 0 or u_pick < 0.5:
        return
    i = int((u_pick - 0.5) * 2 * m)
    if i >= m:
        i = m - 1
    a, b = pos[i], pos[i + 1]
    d = spacing * (_energy(s_arr[a], r_arr[a], k, n) - _energy(s_arr[b], r_arr[b], k, n))
    if d >= 0 or u_acc < np.exp(d):
        pos[i] = b
        pos[i + 1] = a


@njit(cache=True)
def _swapping_chunk(spins, s_arr, r_arr, pos, betas, k, u, n_sweeps, thr, state, counts,
                    s_rec, rec0, stop_visits, gl_table, gl_occ, hist):
    m = betas.size - 1
    n = spins.shape[1]
    n_macro = (n + 1) * (n + 2) // 2
    spacing = betas[m] / m if m > 0 else 0.0
    t = 0
    done = 0
    for sw in range(n_sweeps):
        for _ in range(m + 1):
            _swap_q(pos, s_arr, r_arr, spacing, k, n, m, u[t, 0], u[t, 1])
            if u[t, 2] >= 0.5:
                i = int((u[t, 2] - 0.5) * 2 * (m + 1))
                if i > m:
                    i = m
                _flip(spins, pos[i], s_arr, r_arr, betas[i], k, n, u[t, 3], u[t, 4])
            _swap_q(pos, s_arr, r_arr, spacing, k, n, m, u[t, 5], u[t, 6])
            t += 1
            top = pos[m]
            _update_basin(s_arr[top], thr, state, counts)
        top = pos[m]
        s_rec[rec0 + sw] = s_arr[top]
        if gl_table.shape[0] > 0:
            for i in range(m + 1):
                c = pos[i]
                s = s_arr[c]
                if s < 0:
                    s = -s
                gl_occ[i] += gl_table[i, r_arr[c] * (r_arr[c] + 1) // 2 + (s + r_arr[c]) // 2]
        if hist.size > 0:
            code = 0
            for i in range(m, -1, -1):
                c = pos[i]
                code = code * n_macro + r_arr[c] * (r_arr[c] + 1) // 2 + (s_arr[c] + r_arr[c]) // 2
            hist[code] += 1
        done = sw + 1
        if stop_visits > 0 and counts[0] >= stop_visits and counts[1] >= stop_visits:
            break
    return done


@njit(cache=True)
def _tempering_chunk(spins, s_arr, r_arr, rung, betas, log_z, k, u, n_sweeps, thr, state, counts,
                     s_rec, rec0, eps_n, stripe_hits, rung_occ):
    m = betas.size - 1
    n = spins.shape[1]
    mass = 1.0 / (2 * (m + 1))
    t = 0
    for sw in range(n_sweeps):
        for _ in range(m + 1):
            for phase in range(2):
                uq = u[t, 3 * phase]
                ua = u[t, 3 * phase + 1]
                i = rung[0]
                j = -1
                if uq < mass:
                    j = i - 1
                elif uq < 2 * mass:
                    j = i + 1
                if 0 <= j <= m:
                    h = _energy(s_arr[0], r_arr[0], k, n)
                    lr = (betas[j] - betas[i]) * h - (log_z[j] - log_z[i])
                    if lr >= 0 or ua < np.exp(lr):
                        rung[0] = j
                if phase == 0:
                    _flip(spins, 0, s_arr, r_arr, betas[rung[0]], k, n, u[t, 2], u[t, 5])
            t += 1
            if rung[0] == m:
                _update_basin(s_arr[0], thr, state, counts)
                if abs(s_arr[0]) <= eps_n:
                    stripe_hits[0] += 1
        rung_occ[rung[0]] += 1
        s_rec[rec0 + sw] = s_arr[0]


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def _init_spins(n: int, copies: int, init) -> np.ndarray:
    if isinstance(init, str):
        val = {"plus": 1, "minus": -1, "zero": 0}[init]
        return np.full((copies, n), val, dtype=np.int8)
    arr = np.asarray(init, dtype=np.int8)
    return np.broadcast_to(arr, (copies, n)).copy()


def _check_budget(max_sweeps, cap):
    if cap is not None and max_sweeps > cap:
        raise CapError(f"requested {max_sweeps} sweeps exceeds cap {cap}")


def simulate_metropolis(p, n: int, seed: int, max_sweeps: int, z: float, init="plus",
                        chunk_sweeps: int = 20000, cap: float | None = None) -> SimResult:
    """Single-temperature Metropolis for ``max_sweeps`` sweeps, counting basin visits."""
    beta, k = p
    _check_budget(max_sweeps, cap)
    spins = _init_spins(n, 1, init)
    s_arr = spins.sum(axis=1).astype(np.int64)
    r_arr = np.count_nonzero(spins, axis=1).astype(np.int64)
    state = np.zeros(1, dtype=np.int64)
    counts = np.zeros(2, dtype=np.int64)
    s_rec = np.empty(max_sweeps, dtype=np.int64)
    thr = z * n / 2.0
    _update_basin(s_arr[0], thr, state, counts)
    done, block = 0, 0
    while done < max_sweeps:
        todo = min(chunk_sweeps, max_sweeps - done)
        u = uniform_block(seed, STREAM_METROPOLIS, block, (todo * n, 2))
        _metropolis_chunk(spins, s_arr, r_arr, float(beta), float(k), u, todo, thr, state, counts,
                          s_rec, done)
        done += todo
        block += 1
    return SimResult(done, int(counts[0]), int(counts[1]), s_rec[:done], spins[0].copy(),
                     {"beta": beta, "k": k, "n": n, "seed": seed, "threshold": thr})


def simulate_swapping(ladder: LadderSpec, k: float, n: int, seed: int, max_sweeps: int, z: float,
                      init="plus", stop_visits: int = 0, chunk_sweeps: int = 2000,
                      gl_partition=None, cap: float | None = None,
                      class_histogram: bool = False) -> SimResult:
    """Spin-level swapping chain ``Q P Q``; stops early once both basins have ``stop_visits`` entries.

    ``gl_partition`` (a :class:`begswap.partition.GLPartition`) enables
    per-rung ``A_g`` occupation frequencies of the trace.  With
    ``class_histogram`` the joint macrostate classes of all rungs are counted
    once per sweep; the code is ``sum_i c_i L**i`` with ``c_i`` the canonical
    macro index at rung ``i`` and ``L`` the number of macrostates.
    """
    _check_budget(max_sweeps, cap)
    m = ladder.m
    spins = _init_spins(n, m + 1, init)
    s_arr = spins.sum(axis=1).astype(np.int64)
    r_arr = np.count_nonzero(spins, axis=1).astype(np.int64)
    pos = np.arange(m + 1, dtype=np.int64)
    state = np.zeros(1, dtype=np.int64)
    counts = np.zeros(2, dtype=np.int64)
    s_rec = np.empty(max_sweeps, dtype=np.int64)
    thr = z * n / 2.0
    _update_basin(s_arr[m], thr, state, counts)
    if gl_partition is not None:
        table = np.zeros((m + 1, (n + 1) * (n + 2) // 2), dtype=np.int64)
        table[:, gl_partition.graph.nodes] = gl_partition.assignment
    else:
        table = np.zeros((0, 0), dtype=np.int64)
    occ = np.zeros(m + 1, dtype=np.int64)
    hist = np.zeros(((n + 1) * (n + 2) // 2) ** (m + 1) if class_histogram else 0, dtype=np.int64)
    betas = np.ascontiguousarray(ladder.betas, dtype=float)
    done, block = 0, 0
    while done < max_sweeps:
        todo = min(chunk_sweeps, max_sweeps - done)
        u = uniform_block(seed, STREAM_SWAPPING, block, (todo * (m + 1), 7))
        ran = _swapping_chunk(spins, s_arr, r_arr, pos, betas, float(k), u, todo, thr, state,
                              counts, s_rec, done, stop_visits, table, occ, hist)
        done += ran
        block += 1
        if ran < todo:
            break
    extra = {"beta": ladder.beta, "m": m, "k": k, "n": n, "seed": seed, "threshold": thr,
             "stopped_early": done < max_sweeps}
    if gl_partition is not None:
        extra["ag_occupation"] = occ / max(done, 1)
    if class_histogram:
        extra["class_histogram"] = hist
    top = spins[pos[m]].copy()
    res = SimResult(done, int(counts[0]), int(counts[1]), s_rec[:done], top, extra)
    res.extra["replica_spins"] = spins[pos]
    return res


def simulate_tempering(ladder: LadderSpec, k: float, n: int, seed: int, max_sweeps: int, z: float,
                       epsilon: float, init="plus", start_rung: int | None = None,
                       chunk_sweeps: int = 2000, cap: float | None = None) -> SimResult:
    """Simulated tempering ``Q P_st Q`` with exact ``log Z`` ratios.

    Records basin visits and stripe hits ``|s| <= epsilon N`` while at the top rung.
    """
    _check_budget(max_sweeps, cap)
    if not 0 < epsilon < 1:
        raise DomainError("epsilon must lie in (0, 1)")
    m = ladder.m
    spins = _init_spins(n, 1, init)
    s_arr = spins.sum(axis=1).astype(np.int64)
    r_arr = np.count_nonzero(spins, axis=1).astype(np.int64)
    rung = np.array([m if start_rung is None else start_rung], dtype=np.int64)
    log_z = np.array([log_partition((b, k), n) for b in ladder.betas])
    state = np.zeros(1, dtype=np.int64)
    counts = np.zeros(2, dtype=np.int64)
    hits = np.zeros(1, dtype=np.int64)
    occ = np.zeros(m + 1, dtype=np.int64)
    s_rec = np.empty(max_sweeps, dtype=np.int64)
    thr = z * n / 2.0
    if rung[0] == m:
        _update_basin(s_arr[0], thr, state, counts)
    betas = np.ascontiguousarray(ladder.betas, dtype=float)
    done, block = 0, 0
    while done < max_sweeps:
        todo = min(chunk_sweeps, max_sweeps - done)
        u = uniform_block(seed, STREAM_TEMPERING, block, (todo * (m + 1), 6))
        _tempering_chunk(spins, s_arr, r_arr, rung, betas, log_z, float(k), u, todo, thr, state,
                         counts, s_rec, done, epsilon * n, hits, occ)
        done += todo
        block += 1
    return SimResult(done, int(counts[0]), int(counts[1]), s_rec[:done], spins[0].copy(),
                     {"beta": ladder.beta, "m": m, "k": k, "n": n, "seed": seed,
                      "threshold": thr, "stripe_hits": int(hits[0]),
                      "rung_occupation": occ / max(done, 1)})


def integrated_autocorr(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with self-consistent window ``W >= c tau``."""
    x = np.asarray(x, dtype=float)
    x = x - x.mean()
    n = x.size
    if n < 2 or not np.any(x):
        return float("nan")
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    acf /= acf[0]
    tau = 2.0 * np.cumsum(acf) - 1.0
    for w in range(1, n):
        if w >= c * tau[w]:
            return float(tau[w])
    return float(tau[-1])
