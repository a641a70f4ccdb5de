"""State-space decompositions used by the swapping analysis.

* the sign split ``Omega = Omega_+ u Omega_-`` with its tie rule at zero
  magnetisation, replica signatures and the blocks ``Omega_k``;
* the exact aggregated swap chain over ``Omega_0, ..., Omega_M``;
* the temperature-dependent split of the ``s >= 0`` half into a global-mode
  region ``A_g`` and a local-mode region ``A_l``, and the trace map.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .chains import Kernel, ReplicaState, _finish
from .config import DEFAULT, Tolerances
from .errors import DomainError, PartitionError
from .landscape import K_TRICRITICAL, beta_c2_of_k
from .model import LadderSpec, SpinConfig, macro_index, macro_log_gibbs

__all__ = [
    "SignLabel",
    "TraceVector",
    "GLPartition",
    "sign_of",
    "signature",
    "omega_k_index",
    "omega_plus_fraction",
    "omega_plus_mass",
    "omega_k_masses",
    "aggregated_swap_chain",
    "half_space_graph",
    "significant_peaks",
    "critical_rung",
    "build_gl_partition",
    "trace_of",
    "dump_partition",
]


class SignLabel(str, Enum):
    plus = "+"
    minus = "-"


def sign_of(sigma) -> SignLabel:
    """``plus`` for positive sum, the zero vector, or zero sum with first nonzero spin ``+1``."""
    spins = sigma.spins if isinstance(sigma, SpinConfig) else np.asarray(sigma)
    tot = int(spins.sum(dtype=np.int64))
    if tot > 0:
        return SignLabel.plus
    if tot < 0:
        return SignLabel.minus
    nz = np.flatnonzero(spins)
    if nz.size == 0 or spins[nz[0]] > 0:
        return SignLabel.plus
    return SignLabel.minus


def signature(x: ReplicaState) -> tuple[SignLabel, ...]:
    """Signs of replicas ``1..M``; the infinite-temperature replica is left out."""
    return tuple(sign_of(r) for r in x.replicas[1:])


def omega_k_index(x: ReplicaState) -> int:
    return sum(v is SignLabel.plus for v in signature(x))


# ---------------------------------------------------------------------------
# Sign masses and the aggregated swap chain
# ---------------------------------------------------------------------------

def omega_plus_fraction(n: int) -> np.ndarray:
    """Share of each macrostate class lying in ``Omega_+``.

    1 for ``s > 0`` and for the all-zero class, 1/2 for ``s = 0, r > 0``
    (the first-nonzero rule splits those classes evenly by the reflection
    ``sigma -> -sigma``), 0 for ``s < 0``.
    """
    mi = macro_index(n)
    out = np.where(mi.s > 0, 1.0, np.where(mi.s < 0, 0.0, 0.5))
    out[(mi.s == 0) & (mi.r == 0)] = 1.0
    return out


def omega_plus_mass(beta: float, k: float, n: int) -> float:
    """``pi_beta(Omega_+)``; equals ``(1 + 1/Z_beta)/2``."""
    return float(np.exp(macro_log_gibbs(beta, k, n)) @ omega_plus_fraction(n))


def _poisson_binomial(p) -> np.ndarray:
    dist = np.array([1.0])
    for q in p:
        dist = np.convolve(dist, [1.0 - q, q])
    return dist


def omega_k_masses(ladder: LadderSpec, k: float, n: int) -> np.ndarray:
    """``pi(Omega_k)`` for ``k = 0..M``: a Poisson-binomial law over rungs ``1..M``."""
    p = [omega_plus_mass(b, k, n) for b in ladder.betas[1:]]
    return _poisson_binomial(p)


def aggregated_swap_chain(ladder: LadderSpec, k: float, n: int) -> Kernel:
    """Exact aggregation of the swap kernel ``Q`` over ``Omega_0, ..., Omega_M``.

    Only the exchange of replicas 0 and 1 changes the number of ``+`` signs,
    so the block flux factorises as

    ``pi(Omega_j) Qbar(j, j+1) = (1/2M) * F * P(j plus signs among rungs 2..M)``

    with ``F = sum_{x0 in Omega_+, x1 in Omega_-} pi_0(x0) pi_1(x1) rho(x0, x1)``.
    Sums run over macrostates with the class shares of
    :func:`omega_plus_fraction`, which is exact because ``pi_i`` and the
    swap acceptance are constant on classes.
    """
    m = ladder.m
    mi = macro_index(n)
    frac = omega_plus_fraction(n)
    energy = -mi.r + k * mi.s * mi.s / n
    pi0 = np.exp(macro_log_gibbs(ladder.betas[0], k, n))
    pi1 = np.exp(macro_log_gibbs(ladder.betas[1], k, n))
    rho = np.exp(np.minimum(0.0, ladder.spacing * (energy[:, None] - energy[None, :])))
    up = float((pi0 * frac) @ rho @ (pi1 * (1.0 - frac))) / (2 * m)
    down = float((pi0 * (1.0 - frac)) @ rho @ (pi1 * frac)) / (2 * m)
    rest = _poisson_binomial([omega_plus_mass(b, k, n) for b in ladder.betas[2:]])
    mass = omega_k_masses(ladder, k, n)
    j = np.arange(m)
    flux = 0.5 * (up + down) * rest
    kern = _finish([j, j + 1], [j + 1, j], [flux / mass[:-1], flux / mass[1:]], m + 1,
                   np.log(mass), labels=list(range(m + 1)), lazy=True, name="aggregated_swap")
    kern.meta.update({"beta": ladder.beta, "m": m, "k": k, "n": n,
                      "flux_asymmetry": abs(up - down) / max(up, down)})
    return kern


# ---------------------------------------------------------------------------
# Half-space landscape: peaks and monotone reachability
# ---------------------------------------------------------------------------

_MOVES = ((1, 1), (-1, 1), (-1, -1), (1, -1), (2, 0), (-2, 0))


@dataclass(frozen=True)
class HalfGraph:
    """Macrostates with ``s >= 0`` and their single-flip neighbours inside the half."""

    n: int
    nodes: np.ndarray          # canonical macro indices
    labels: list
    neighbours: list           # positions into ``nodes``

    def __len__(self) -> int:
        return int(self.nodes.size)


def half_space_graph(n: int) -> HalfGraph:
    mi = macro_index(n)
    nodes = np.flatnonzero(mi.s >= 0)
    labels = [(int(mi.s[i]), int(mi.r[i])) for i in nodes]
    pos = {lab: j for j, lab in enumerate(labels)}
    nbrs = []
    for s, r in labels:
        nbrs.append([pos[(s + ds, r + dr)] for ds, dr in _MOVES if (s + ds, r + dr) in pos])
    return HalfGraph(n, nodes, labels, nbrs)


def significant_peaks(w: np.ndarray, graph: HalfGraph, threshold: float):
    """Local maxima of ``w`` on ``graph`` filtered by topographic prominence.

    The single-flip lattice turns an oblique ridge of a smooth landscape into
    a string of shallow discrete maxima; these are merged into the peak that
    absorbs them.  Returns ``(kept, owner, ties)`` where ``kept`` lists node
    positions by decreasing height, ``owner`` maps every discrete maximum to
    its kept peak and ``ties`` flags equal-height comparisons.
    """
    order = sorted(range(len(graph)), key=lambda j: (-w[j], graph.labels[j]))
    parent: dict[int, int] = {}
    peak_of: dict[int, int] = {}
    absorbed: dict[int, int] = {}
    prominence: dict[int, float] = {}
    ties = False

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for v in order:
        roots = {find(u) for u in graph.neighbours[v] if u in parent}
        if any(w[u] == w[v] for u in graph.neighbours[v]):
            ties = True
        parent[v] = v
        if not roots:
            peak_of[v] = v
            continue
        ranked = sorted(roots, key=lambda rt: (-w[peak_of[rt]], graph.labels[peak_of[rt]]))
        top = ranked[0]
        parent[v] = top
        for rt in ranked[1:]:
            dead = peak_of[rt]
            prominence[dead] = float(w[dead] - w[v])
            absorbed[dead] = peak_of[top]
            parent[rt] = top
    prominence[peak_of[find(order[0])]] = np.inf
    kept = sorted((p for p, pr in prominence.items() if pr > threshold),
                  key=lambda p: (-w[p], graph.labels[p]))
    owner = {}
    for p in prominence:
        q = p
        while q not in kept:
            q = absorbed[q]
        owner[p] = q
    return kept, owner, ties


def _uphill_reach(w: np.ndarray, graph: HalfGraph, seeds) -> np.ndarray:
    """Nodes having a nondecreasing path into ``seeds``."""
    hit = np.zeros(len(graph), dtype=bool)
    queue = deque(seeds)
    hit[list(seeds)] = True
    while queue:
        v = queue.popleft()
        for u in graph.neighbours[v]:
            if not hit[u] and w[u] <= w[v]:
                hit[u] = True
                queue.append(u)
    return hit


def _steepest_ascent_owner(w, graph, owner) -> np.ndarray:
    dest = np.full(len(graph), -1)
    for start in range(len(graph)):
        path, v = [], start
        while dest[v] < 0 and v not in owner:
            path.append(v)
            best = max(graph.neighbours[v], key=lambda u: (w[u], tuple(-x for x in graph.labels[u])))
            if w[best] <= w[v]:
                break
            v = best
        target = dest[v] if dest[v] >= 0 else owner.get(v, v)
        for u in path + [v]:
            dest[u] = target
    return dest


# ---------------------------------------------------------------------------
# A_g / A_l partition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceVector:
    bits: tuple
    i_c: int

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise ValueError("trace bits must be 0/1")
        if any(b != 1 for b in self.bits[:self.i_c]):
            raise ValueError("bits of rungs 1..i_c are pinned to 1")

    @property
    def m(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class GLPartition:
    """Per-rung split of the ``s >= 0`` half into ``A_g`` (1) and ``A_l`` (0).

    ``assignment[i, j]`` refers to rung ``i`` and node ``j`` of ``graph``;
    ``pi_hat[i]`` is the ``Omega_+``-conditional mass of ``A_g`` at rung ``i``;
    ``log_mass[i] = (log pi_hat_i(0), log pi_hat_i(1))`` keeps both blocks
    resolvable when one of them is exponentially small.
    """

    ladder: LadderSpec
    k: float
    n: int
    i_c: int
    graph: HalfGraph
    assignment: np.ndarray
    pi_hat: np.ndarray
    log_mass: np.ndarray
    peaks: list = field(default_factory=list)
    ties: list = field(default_factory=list)
    first_bimodal: int | None = None

    def block_of(self, rung: int, s: int, r: int) -> int:
        j = self.graph.labels.index((abs(int(s)), int(r)))
        return int(self.assignment[rung, j])

    def free_rungs(self) -> np.ndarray:
        """Rungs whose ``A_g`` mass lies strictly inside (0, 1)."""
        return np.flatnonzero(np.all(np.isfinite(self.log_mass), axis=1))


def critical_rung(ladder: LadderSpec, k: float) -> int:
    """``i_c = max{i : beta_i <= beta_c2(K)}``."""
    if k <= K_TRICRITICAL:
        raise DomainError("the A_g/A_l split needs K > K_c")
    bc2 = beta_c2_of_k(k)
    return int(np.flatnonzero(ladder.betas <= bc2 * (1 + 1e-15)).max())


def build_gl_partition(ladder: LadderSpec, k: float, n: int, threshold: float = 0.05,
                       tol: Tolerances = DEFAULT) -> GLPartition:
    """Dynamic ``A_g``/``A_l`` split along the ladder.

    Rungs ``0..i_c`` are all ``A_g``.  Above, the significant maxima of the
    rung's log weights on the half are located (prominence above
    ``threshold`` nats); with a single peak the whole half is ``A_g``.
    With two peaks a node with no nondecreasing path to ``a_l`` goes to
    ``A_g``, one with no such path to ``a_g`` goes to ``A_l``, and a node
    reaching both keeps its previous-rung block; on the first two-peak rung
    such nodes follow steepest ascent instead.

    Raises
    ------
    PartitionError
        More than two significant maxima on some rung.
    """
    i_c = critical_rung(ladder, k)
    graph = half_space_graph(n)
    frac = omega_plus_fraction(n)[graph.nodes]
    m = ladder.m
    assign = np.ones((m + 1, len(graph)), dtype=np.int8)
    pi_hat = np.ones(m + 1)
    log_mass = np.zeros((m + 1, 2))
    log_mass[:, 0] = -np.inf
    peaks, ties = [None] * (m + 1), [False] * (m + 1)
    first = None
    for i in range(i_c + 1, m + 1):
        w = macro_log_gibbs(ladder.betas[i], k, n)[graph.nodes]
        kept, owner, tie = significant_peaks(w, graph, threshold)
        ties[i] = tie
        if len(kept) > 2:
            raise PartitionError(f"rung {i}: {len(kept)} significant maxima "
                                 f"{[graph.labels[p] for p in kept]}")
        if len(kept) == 1:
            peaks[i] = (graph.labels[kept[0]], None)
            continue
        g, l = kept
        peaks[i] = (graph.labels[g], graph.labels[l])
        seeds_g = [p for p, q in owner.items() if q == g]
        seeds_l = [p for p, q in owner.items() if q == l]
        to_g = _uphill_reach(w, graph, seeds_g)
        to_l = _uphill_reach(w, graph, seeds_l)
        if first is None:
            first = i
            dest = _steepest_ascent_owner(w, graph, owner)
            prev = (dest == g).astype(np.int8)
        else:
            prev = assign[i - 1]
        row = np.where(~to_l, 1, np.where(~to_g, 0, prev)).astype(np.int8)
        assign[i] = row
        lw = w + np.log(frac)
        tot = logsumexp(lw)
        for b in (0, 1):
            log_mass[i, b] = logsumexp(lw[row == b]) - tot if np.any(row == b) else -np.inf
        pi_hat[i] = float(np.exp(log_mass[i, 1]))
    return GLPartition(ladder, k, n, i_c, graph, assign, pi_hat, log_mass, peaks, ties, first)


def trace_of(x, glp: GLPartition) -> TraceVector:
    """Trace bits of rungs ``1..M``.

    ``x`` is a :class:`ReplicaState` or a sequence of ``(s, r)`` pairs, one
    per rung ``0..M``.  Components with negative magnetisation are reflected
    into the half first.
    """
    if isinstance(x, ReplicaState):
        pairs = [(int(c.spins.sum()), int(np.count_nonzero(c.spins))) for c in x.replicas]
    else:
        pairs = [tuple(p) for p in x]
    if len(pairs) != glp.ladder.m + 1:
        raise ValueError("one component per rung 0..M expected")
    bits = tuple(glp.block_of(i, s, r) if i > glp.i_c else 1
                 for i, (s, r) in enumerate(pairs) if i >= 1)
    return TraceVector(bits, glp.i_c)


def dump_partition(glp: GLPartition, path) -> Path:
    """CSV with one row per (rung, macrostate): ``rung, s, r, block, weight``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frac = omega_plus_fraction(glp.n)[glp.graph.nodes]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["rung", "s", "r", "block", "weight"])
        for i, b in enumerate(glp.ladder.betas):
            w = np.exp(macro_log_gibbs(b, glp.k, glp.n)[glp.graph.nodes]) * frac
            w = w / w.sum()
            for j, (s, r) in enumerate(glp.graph.labels):
                wr.writerow([i, s, r, "g" if glp.assignment[i, j] else "l", repr(float(w[j]))])
    return path
