"""Spectral gaps, conductance, aggregation and restriction of reversible kernels.

The gap follows ``Gap(P) = 1 - max{|lambda| : lambda != 1}``; the
relaxation gap ``1 - lambda_2`` is reported alongside.  Both coincide for
lazy kernels, whose spectrum is nonnegative.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from .chains import Kernel
from .config import DEFAULT
from .errors import CapError, ContractError, DomainError, PositivityError, SolverError

__all__ = [
    "GapReport",
    "PartitionSpec",
    "symmetrized",
    "spectral_gap",
    "conductance",
    "aggregate",
    "restrict",
    "positive_sqrt",
    "sqrt_sandwich",
    "poincare_bound",
    "dirichlet_comparison",
    "power_gap_check",
    "aba_check",
    "cps_check",
    "mixing_profile",
    "export_reports",
]


@dataclass(frozen=True)
class GapReport:
    gap: float
    second_eigenvalue_modulus: float
    method: str
    residual: float
    lambda_2: float
    lambda_min: float

    @property
    def relaxation_gap(self) -> float:
        return 1.0 - self.lambda_2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PartitionSpec:
    """Assignment of every state to one of ``blocks`` nonempty blocks."""

    assignment: np.ndarray
    blocks: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.min() < 0 or a.max() >= self.blocks:
            raise ContractError("block index out of range")
        if np.bincount(a, minlength=self.blocks).min() == 0:
            raise ContractError("every block must be nonempty")

    @classmethod
    def from_labels(cls, labels) -> "PartitionSpec":
        _, inv = np.unique(np.asarray(labels), return_inverse=True)
        return cls(inv, int(inv.max()) + 1)


# ---------------------------------------------------------------------------
# Gap
# ---------------------------------------------------------------------------

def _is_operator(kernel: Kernel) -> bool:
    return bool(np.any(kernel.matrix.data < 0))


def symmetrized(kernel: Kernel) -> sp.csr_matrix:
    """``D^{1/2} P D^{-1/2}`` with ``D = diag(pi)``, symmetrised to remove round-off."""
    coo = kernel.matrix.tocoo()
    half = 0.5 * kernel.log_pi
    data = coo.data * np.exp(half[coo.row] - half[coo.col])
    s = sp.csr_matrix((data, (coo.row, coo.col)), shape=coo.shape)
    return ((s + s.T) * 0.5).tocsr()


def _check_reversible(kernel: Kernel, tol) -> None:
    if _is_operator(kernel):
        coo = kernel.matrix.tocoo()
        half = 0.5 * kernel.log_pi
        s = sp.csr_matrix((coo.data * np.exp(half[coo.row] - half[coo.col]), (coo.row, coo.col)),
                          shape=coo.shape)
        err = abs(s - s.T).max() if s.nnz else 0.0
    else:
        err = kernel.detailed_balance_error()
    if err > tol.detailed_balance:
        raise ContractError(f"kernel {kernel.name!r} is not reversible (error {err:.3e})")


def spectral_gap(kernel: Kernel, tol=DEFAULT, method: str | None = None) -> GapReport:
    """Exact spectral gap of a reversible kernel.

    Dense symmetric eigensolve below ``tol.dense_threshold`` states,
    otherwise Lanczos on the symmetrised matrix with the stationary
    direction deflated.

    Raises
    ------
    ContractError
        The kernel fails detailed balance.
    SolverError
        The eigensolver did not reach residual ``tol.eig_residual``.
    """
    _check_reversible(kernel, tol)
    n = kernel.n_states
    if n == 1:
        return GapReport(1.0, 0.0, "dense", 0.0, 0.0, 0.0)
    s = symmetrized(kernel)
    if method is None:
        method = "dense" if n < tol.dense_threshold else "sparse-iterative"
    if method == "dense":
        evals, evecs = la.eigh(s.toarray())
        top = int(np.argmax(evals))
        rest = np.delete(np.arange(n), top)
        i2 = rest[np.argmax(evals[rest])]
        imin = rest[np.argmin(evals[rest])]
        lam2, lmin = float(evals[i2]), float(evals[imin])
        resid = max(float(np.linalg.norm(s @ evecs[:, i] - evals[i] * evecs[:, i])) for i in (i2, imin))
    else:
        v0 = np.exp(0.5 * kernel.log_pi)
        v0 /= np.linalg.norm(v0)

        def deflated(x):
            # the stationary direction is sent from eigenvalue 1 to -1
            x = np.asarray(x).ravel()
            return s @ x - 2.0 * v0 * (v0 @ x)

        def plain(x):
            return s @ np.asarray(x).ravel()

        lam2, lmin, resid = None, None, 0.0
        rng = np.random.default_rng(0)
        for which, mv in (("LA", deflated), ("SA", plain)):
            op = spla.LinearOperator((n, n), matvec=mv, dtype=float)
            try:
                vals, vecs = spla.eigsh(op, k=1, which=which, tol=1e-14, maxiter=100000,
                                        ncv=min(n - 1, 60), v0=rng.standard_normal(n))
            except spla.ArpackNoConvergence as exc:  # pragma: no cover - defensive
                raise SolverError(f"eigsh did not converge ({which})") from exc
            vec = vecs[:, 0]
            resid = max(resid, float(np.linalg.norm(mv(vec) - vals[0] * vec)))
            if which == "LA":
                lam2 = float(vals[0])
            else:
                lmin = float(vals[0])
    if resid > tol.eig_residual:
        raise SolverError(f"eigen-residual {resid:.3e} exceeds {tol.eig_residual}")
    slem = max(abs(lam2), abs(lmin))
    return GapReport(float(1.0 - slem), float(slem), method, float(resid), lam2, lmin)


# ---------------------------------------------------------------------------
# Conductance, aggregation, restriction
# ---------------------------------------------------------------------------

def _mask(subset, n: int) -> np.ndarray:
    subset = np.asarray(subset)
    if subset.dtype == bool:
        if subset.shape != (n,):
            raise ContractError("boolean subset must have one entry per state")
        return subset
    m = np.zeros(n, dtype=bool)
    m[subset.astype(np.int64)] = True
    return m


def conductance(kernel: Kernel, subset) -> float:
    """``sum_{x in S, y notin S} pi(x) P(x,y) / pi(S)``."""
    inside = _mask(subset, kernel.n_states)
    if not inside.any() or inside.all():
        raise DomainError("conductance needs a nonempty proper subset")
    lp = kernel.log_pi[inside]
    w = np.exp(lp - lp.max())
    exit_mass = np.asarray(kernel.matrix[inside][:, ~inside].sum(axis=1)).ravel()
    return float(np.dot(w, exit_mass) / w.sum())


def aggregate(kernel: Kernel, parts: PartitionSpec) -> Kernel:
    """Block chain ``Qbar(i,j) = pi(S_i)^{-1} sum_{x in S_i, y in S_j} pi(x) Q(x,y)``."""
    a = parts.assignment
    if a.shape != (kernel.n_states,):
        raise ContractError("partition does not match the kernel")
    log_block = np.array([logsumexp(kernel.log_pi[a == b]) for b in range(parts.blocks)])
    # weights relative to the block mass keep tiny blocks representable
    w = np.exp(kernel.log_pi - log_block[a])
    ind = sp.csr_matrix((np.ones(a.size), (np.arange(a.size), a)), shape=(a.size, parts.blocks))
    flows = ind.T @ sp.diags(w) @ kernel.matrix @ ind
    return Kernel(flows, log_block, labels=list(range(parts.blocks)),
                  name=f"aggregate({kernel.name})", meta=dict(kernel.meta))


def restrict(kernel: Kernel, block) -> Kernel:
    """Restriction rejecting jumps that leave ``block`` (rejected mass becomes holding)."""
    inside = _mask(block, kernel.n_states)
    if not inside.any():
        raise DomainError("empty block")
    idx = np.flatnonzero(inside)
    sub = kernel.matrix[idx][:, idx]
    leave = 1.0 - np.asarray(sub.sum(axis=1)).ravel()
    mat = sub + sp.diags(leave)
    labels = [kernel.labels[i] for i in idx] if kernel.labels is not None else None
    return Kernel(mat, kernel.log_pi[idx], labels=labels, lazy=kernel.lazy,
                  name=f"restrict({kernel.name})", meta=dict(kernel.meta))


# ---------------------------------------------------------------------------
# Square roots and lemma checks
# ---------------------------------------------------------------------------

def positive_sqrt(kernel: Kernel, tol=DEFAULT) -> np.ndarray:
    """Positive square root of ``P`` as a self-adjoint operator on ``L^2(pi)``.

    Returns the dense matrix ``R`` with ``R @ R == P``.

    Raises
    ------
    PositivityError
        ``P`` has an eigenvalue below ``-tol.positivity``.
    """
    _check_reversible(kernel, tol)
    evals, evecs = la.eigh(symmetrized(kernel).toarray())
    if evals.min() < -tol.positivity:
        raise PositivityError(f"kernel has eigenvalue {evals.min():.3e} < 0")
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    d = np.exp(0.5 * kernel.log_pi)
    return root * (1.0 / d)[:, None] * d[None, :]


def _operator(matrix, log_pi, name: str) -> Kernel:
    return Kernel(sp.csr_matrix(matrix), log_pi, name=name)


def sqrt_sandwich(a: Kernel, b: Kernel, tol=DEFAULT) -> Kernel:
    """The operator ``A^{1/2} B A^{1/2}`` (dense) wrapped as a kernel."""
    root = positive_sqrt(a, tol)
    return _operator(root @ b.dense() @ root, a.log_pi, f"sqrt({a.name}) {b.name} sqrt({a.name})")


def _same_law(a: Kernel, b: Kernel) -> None:
    if a.n_states != b.n_states or np.max(np.abs(a.log_pi - b.log_pi)) > 1e-9:
        raise ContractError("kernels must share state space and stationary law")


def power_gap_check(kernel: Kernel, m: int, tol=DEFAULT) -> bool:
    """``Gap(P) >= Gap(P^m) / m`` within 1e-10."""
    if m < 1:
        raise ValueError("m must be >= 1")
    g1 = spectral_gap(kernel, tol).gap
    pm = kernel.matrix
    for _ in range(m - 1):
        pm = pm @ kernel.matrix
    gm = spectral_gap(Kernel(pm, kernel.log_pi), tol).gap
    return g1 >= gm / m - 1e-10


def aba_check(kernel_a: Kernel, kernel_b: Kernel, sqrt: bool = False, tol=DEFAULT) -> bool:
    """``Gap(ABA) >= Gap(B)``, or ``Gap(A^{1/2} B A^{1/2}) >= Gap(B)`` when ``sqrt``."""
    _same_law(kernel_a, kernel_b)
    if sqrt:
        sandwich = sqrt_sandwich(kernel_a, kernel_b, tol)
    else:
        sandwich = Kernel(kernel_a.matrix @ kernel_b.matrix @ kernel_a.matrix, kernel_a.log_pi)
    return spectral_gap(sandwich, tol).gap >= spectral_gap(kernel_b, tol).gap - 1e-10


def cps_check(kernel_q: Kernel, kernel_p: Kernel, parts: PartitionSpec, tol=DEFAULT):
    """Check ``Gap(Q^{1/2} P Q^{1/2}) >= Gap(Qbar) * min_i Gap(P_i)``.

    Returns ``(holds, lhs, rhs)``.
    """
    _same_law(kernel_q, kernel_p)
    lhs = spectral_gap(sqrt_sandwich(kernel_q, kernel_p, tol), tol).gap
    qbar = spectral_gap(aggregate(kernel_q, parts), tol).gap
    inner = min(spectral_gap(restrict(kernel_p, parts.assignment == b), tol).gap
                for b in range(parts.blocks))
    rhs = qbar * inner
    return lhs >= rhs - 1e-10, lhs, rhs


def _edges_of(path):
    return list(zip(path[:-1], path[1:]))


def poincare_bound(kernel: Kernel, paths: dict) -> float:
    """Canonical-path constant ``A``; guarantees ``1 - lambda_2 >= 1/A``.

    ``paths`` maps every ordered pair ``(x, y)``, ``x != y``, to a vertex
    sequence from ``x`` to ``y`` using support edges, no edge repeated.
    """
    P = kernel.matrix
    pi = kernel.pi
    load: dict = {}
    for (x, y), path in paths.items():
        edges = _edges_of(path)
        if path[0] != x or path[-1] != y:
            raise ContractError(f"path for {(x, y)} has wrong endpoints")
        if len(set(edges)) != len(edges):
            raise ContractError(f"path for {(x, y)} repeats an edge")
        weight = len(edges) * pi[x] * pi[y]
        for e in edges:
            if P[e[0], e[1]] <= 0:
                raise ContractError(f"path for {(x, y)} uses a zero-probability edge {e}")
            load[e] = load.get(e, 0.0) + weight
    return max(v / (pi[e[0]] * P[e[0], e[1]]) for e, v in load.items())


def dirichlet_comparison(kernel_a: Kernel, kernel_b: Kernel, paths: dict | None = None, tol=DEFAULT):
    """Compare ``P~ = kernel_b`` against ``P = kernel_a``.

    Computes ``A`` with ``E~ <= A E`` (from ``paths`` for every transition of
    ``P~``; direct edges when ``paths`` is omitted) and ``a = min pi~/pi``,
    then checks ``Gap(P~) <= (A/a) Gap(P)`` using relaxation gaps.

    Returns
    -------
    (A, a, verified)
    """
    if kernel_a.n_states != kernel_b.n_states:
        raise ContractError("comparison needs a common state space")
    P, Pt = kernel_a.matrix, kernel_b.matrix.tocoo()
    pi, pit = kernel_a.pi, kernel_b.pi
    load: dict = {}
    for x, y, v in zip(Pt.row, Pt.col, Pt.data):
        if x == y or v <= 0:
            continue
        path = paths[(x, y)] if paths is not None else (x, y)
        edges = _edges_of(list(path))
        for e in edges:
            if P[e[0], e[1]] <= 0:
                raise ContractError(f"comparison path uses a non-edge {e}")
            load[e] = load.get(e, 0.0) + len(edges) * pit[x] * v
    big_a = max((val / (pi[e[0]] * P[e[0], e[1]]) for e, val in load.items()), default=0.0)
    small_a = float(np.min(np.exp(kernel_b.log_pi - kernel_a.log_pi)))
    g_a = spectral_gap(kernel_a, tol).relaxation_gap
    g_b = spectral_gap(kernel_b, tol).relaxation_gap
    return big_a, small_a, bool(g_b <= big_a / small_a * g_a + 1e-10)


# ---------------------------------------------------------------------------
# Mixing profile
# ---------------------------------------------------------------------------

def mixing_profile(kernel: Kernel, start: int, eps: float, tol=DEFAULT, cap: int | None = None):
    """Total-variation distance from a point mass, step by step.

    Returns ``(tau, tv_curve, bound)`` where ``tau`` is the first time the
    distance is at most ``eps`` and ``bound = log(1/(pi_min eps)) / Gap``.

    Raises
    ------
    CapError
        ``tau`` exceeds the step cap.
    """
    cap = tol.mixing_step_cap if cap is None else cap
    pi = kernel.pi
    mu = np.zeros(kernel.n_states)
    mu[start] = 1.0
    pt = kernel.matrix.T.tocsr()
    curve = [0.5 * np.abs(mu - pi).sum()]
    while curve[-1] > eps:
        if len(curve) > cap:
            raise CapError(f"no eps-mixing within {cap} steps")
        mu = pt @ mu
        curve.append(0.5 * np.abs(mu - pi).sum())
    gap = spectral_gap(kernel, tol).gap
    bound = np.log(1.0 / (pi.min() * eps)) / gap if gap > 0 else np.inf
    return len(curve) - 1, np.array(curve), float(bound)


def export_reports(records: list[dict], path) -> Path:
    """Write gap/bound records keyed by ``(experiment, beta, k, n, m)`` as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keyed = {}
    for rec in records:
        key = "|".join(str(rec.get(f)) for f in ("experiment", "beta", "k", "n", "m"))
        keyed[key] = rec
    path.write_text(json.dumps(keyed, indent=1, default=float))
    return path
