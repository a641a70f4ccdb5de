"""Critical points of the free energy density and the resulting phase structure.

The free energy ``f(a) = beta(-a_- - a_+ + K (a_+ - a_-)^2) - sum a_i log a_i``
is studied in coordinates ``r = a_+/(a_+ + a_-)``, ``t = a_+ + a_-``.  The
stationarity conditions reduce to

* ``1/t - 1 = e^beta sqrt(r(1-r))``, giving ``t`` as a function of ``r``;
* ``log(r/(1-r)) = 4 beta K t (2r - 1)``.

Off-center solutions are searched in the logit ``x = log(r/(1-r)) > 0`` so
that modes exponentially close to the simplex boundary stay resolvable.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logsumexp

from .config import DEFAULT, Tolerances
from .errors import DomainError, SolverError
from .model import PhasePoint, TypeVector, _bk, macro_index, macro_log_gibbs

LOG4 = float(np.log(4.0))
K_TRICRITICAL = 3.0 / (2.0 * LOG4)

__all__ = [
    "LOG4",
    "K_TRICRITICAL",
    "CriticalPoint",
    "PhaseClassification",
    "StripeSpec",
    "critical_points",
    "k2_critical",
    "beta_c2_of_k",
    "k1_critical",
    "k_low_estimate",
    "beta_c1_of_k",
    "classify_phase",
    "a_max_points",
    "a_max_pair_from_z",
    "choose_epsilon",
    "stripe_unimodal",
    "stripe_profile_slope",
    "stripe_mass_ratio",
    "log_stripe_mass_ratio",
    "phase_rows",
    "export_phase_rows",
]


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriticalPoint:
    """Interior stationary point of ``f``; ``kind`` is ``maximum``, ``saddle`` or ``minimum``."""

    r: float
    t: float
    a: TypeVector
    f_value: float
    kind: str
    logit_r: float = 0.0
    residuals: tuple = (0.0, 0.0)

    @property
    def z(self) -> float:
        """Magnetisation density ``a_+ - a_-``."""
        return self.a.a_plus - self.a.a_minus


@dataclass(frozen=True)
class PhaseClassification:
    n_maxima: int
    order: str
    maxima: list = field(default_factory=list)
    tricritical: bool = False

    @property
    def label(self) -> str:
        return {1: "unimodal", 2: "bimodal", 3: "trimodal"}.get(self.n_maxima, "degenerate")


@dataclass(frozen=True)
class StripeSpec:
    """Central stripe ``|S| <= N eps`` and its edge ``N eps - 1 <= |S| <= N eps``."""

    epsilon: float

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise DomainError("epsilon must lie in (0, 1)")

    def masks(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        s = np.abs(macro_index(n).s)
        inner = s <= n * self.epsilon
        edge = inner & (s >= n * self.epsilon - 1)
        return inner, edge


# ---------------------------------------------------------------------------
# Critical points
# ---------------------------------------------------------------------------

def _log_ebw(x, beta):
    """``log(e^beta sqrt(r(1-r)))`` with ``r = expit(x)``."""
    ax = np.abs(x)
    return beta - (0.5 * ax + np.log1p(np.exp(-ax)))


def _t_of_x(x, beta):
    return expit(-_log_ebw(x, beta))


def _residual(x, beta, k):
    """``h(r) - phi(r)`` written in the logit ``x``."""
    return x - 4.0 * beta * k * np.tanh(0.5 * x) * _t_of_x(x, beta)


def _point(x: float, beta: float, k: float) -> CriticalPoint:
    ax = abs(x)
    lam = float(_log_ebw(ax, beta))
    t = float(expit(-lam))
    a0 = float(expit(lam))
    big = float(expit(ax)) * t
    small = float(expit(-ax)) * t
    # absorb rounding into the largest coordinate so the tiny one keeps its precision
    if a0 >= big:
        a0 = 1.0 - big - small
    else:
        big = 1.0 - a0 - small
    ap, am = (big, small) if x >= 0 else (small, big)
    a = TypeVector(am, a0, ap)
    r = float(expit(x))
    c = 2.0 * beta * k
    det_sign = 1.0 - c * (a0 * t + 4.0 * ap * am)
    hpp_sign = c * ap * a0 - a0 - ap
    if abs(det_sign) < 1e-12:
        kind = "degenerate"
    elif det_sign < 0:
        kind = "saddle"
    elif det_sign > 0:
        kind = "maximum" if hpp_sign < 0 else "minimum"
    else:
        kind = "degenerate"
    eins = 4.0 * beta * k * t * np.tanh(0.5 * x) - x
    zwei = np.log(1.0 / t - 1.0) - lam if 0 < t < 1 else 0.0
    return CriticalPoint(r, t, a, _f_components(am, a0, ap, beta, k), kind,
                         float(x), (float(eins), float(zwei)))


def _f_components(am, a0, ap, beta, k) -> float:
    ent = sum(v * np.log(v) for v in (am, a0, ap) if v > 0)
    return float(beta * (-am - ap + k * (ap - am) ** 2) - ent)


def _scaled_residual(x, beta, k):
    """Residual divided by ``x``; finite at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    half = 0.5 * x
    with np.errstate(invalid="ignore", divide="ignore"):
        u = np.where(np.abs(x) > 1e-8, np.tanh(half) / np.where(x == 0, 1.0, x), 0.5 - x * x / 24.0)
    return 1.0 - 4.0 * beta * k * u * _t_of_x(x, beta)


_NOISE = 1e-13


def _offcenter_roots(beta: float, k: float, tol: Tolerances) -> list[float]:
    """All roots ``x > 0`` of the logit residual (at most two by the landscape analysis).

    Sign changes are read off ``residual(x)/x`` on a geometric-plus-uniform
    grid.  Grid values inside the rounding band around zero carry no sign,
    so a flat degenerate stretch does not produce spurious roots.
    """
    top = 4.0 * beta * k * (1.0 + 1e-12) + 1e-12
    n_geo = tol.scan_points // 5
    grid = np.unique(np.concatenate([
        np.geomspace(top * 1e-13, top * 1e-2, n_geo),
        np.linspace(top * 1e-2, top, tol.scan_points - n_geo),
    ]))
    vals = _scaled_residual(grid, beta, k)
    keep = np.abs(vals) > _NOISE
    g, v = grid[keep], vals[keep]
    roots = []
    for i in np.flatnonzero(np.sign(v[:-1]) != np.sign(v[1:])):
        x = brentq(_residual, g[i], g[i + 1], args=(beta, k), xtol=1e-300,
                   rtol=4 * np.finfo(float).eps, maxiter=500)
        roots.append(float(x))
    return sorted(roots)


def critical_points(p, tol: Tolerances = DEFAULT) -> list[CriticalPoint]:
    """All interior critical points of ``f``: the center and mirrored off-center pairs.

    Off-center roots are bracketed by a sign scan over at least
    ``tol.scan_points`` logit values and polished by Brent's method.
    """
    beta, k = _bk(p)
    center = _point(0.0, beta, k)
    if center.kind == "degenerate":
        # flat to second order: the sign of the profile slope decides
        slope = float(stripe_profile_slope(1e-2, (beta, k)))
        center = replace(center, kind="maximum" if slope < 0 else "saddle")
    pts = [center]
    for x in _offcenter_roots(beta, k, tol):
        pts.append(_point(x, beta, k))
        pts.append(_point(-x, beta, k))
    return pts


def _maxima(p, tol=DEFAULT) -> list[CriticalPoint]:
    return [c for c in critical_points(p, tol) if c.kind == "maximum"]


# ---------------------------------------------------------------------------
# Critical curves
# ---------------------------------------------------------------------------

def k2_critical(beta: float) -> float:
    """Second-order critical coupling ``1/(4 beta e^{-beta}) + 1/(2 beta)`` for ``0 < beta <= log 4``."""
    if not 0 < beta <= LOG4 * (1 + 1e-15):
        raise DomainError("k2_critical is defined for 0 < beta <= log 4")
    return (np.exp(beta) + 2.0) / (4.0 * beta)


def _center_is_max(beta: float, k: float) -> bool:
    return 4.0 * beta * k <= 2.0 + np.exp(beta)


def beta_c2_of_k(k: float) -> float:
    """Inverse of :func:`k2_critical` on ``(0, log 4]``; requires ``k >= K_c``."""
    if k < K_TRICRITICAL:
        raise DomainError("second-order curve only covers k >= K_c")
    if k == K_TRICRITICAL:
        return LOG4
    # (e^b + 2)/(4b) is decreasing on (0, log 4]
    return brentq(lambda b: (np.exp(b) + 2.0) / (4.0 * b) - k, 1e-12, LOG4, xtol=1e-15)


def _height_gap(beta: float, k: float, tol: Tolerances) -> float:
    """Best off-center maximum minus the center value (``-inf`` if none)."""
    side = [c for c in _maxima((beta, k), tol) if c.logit_r > 0]
    if not side:
        return -np.inf
    center = _point(0.0, beta, k).f_value
    return max(c.f_value for c in side) - center


def k1_critical(beta: float, tol: Tolerances = DEFAULT) -> float:
    """Coupling at which the center and off-center maxima have equal height (``beta > log 4``).

    Bisection in ``K`` to ``tol.bisection``.

    Raises
    ------
    SolverError
        No sign change of the height difference could be bracketed.
    """
    if not beta > LOG4:
        raise DomainError("k1_critical requires beta > log 4")
    k_hi = (np.exp(beta) + 2.0) / (4.0 * beta)  # center stops being a maximum here
    k_hi *= 1.0 - 1e-13
    k_lo = min(0.5 * k_hi, 0.9)
    g_hi, g_lo = _height_gap(beta, k_hi, tol), _height_gap(beta, k_lo, tol)
    for _ in range(60):
        if g_lo < 0:
            break
        k_lo *= 0.5
        g_lo = _height_gap(beta, k_lo, tol)
    if not (g_hi > 0 and g_lo < 0):
        raise SolverError(f"no equal-height bracket at beta={beta}: "
                          f"gap({k_lo:.6g})={g_lo:.3g}, gap({k_hi:.6g})={g_hi:.3g}")
    while k_hi - k_lo > tol.bisection:
        mid = 0.5 * (k_lo + k_hi)
        if _height_gap(beta, mid, tol) > 0:
            k_hi = mid
        else:
            k_lo = mid
    return 0.5 * (k_lo + k_hi)


@lru_cache(maxsize=8)
def k_low_estimate(beta_large: float = 50.0) -> float:
    """Numerical stand-in for the large-beta limit of the first-order curve."""
    return k1_critical(beta_large)


def beta_c1_of_k(k: float, tol: Tolerances = DEFAULT, beta_max: float = 50.0) -> float:
    """Inverse of :func:`k1_critical`: the first-order transition temperature at coupling ``k``."""
    k_low = k_low_estimate(beta_max)
    if not k_low < k < K_TRICRITICAL:
        raise DomainError(f"k must lie in ({k_low:.6f}, {K_TRICRITICAL:.6f})")

    def k1_ext(b):
        if b <= LOG4:
            return K_TRICRITICAL
        try:
            return k1_critical(b, tol)
        except SolverError:
            # the two curves merge at the tricritical point; their gap is below resolution here
            return (np.exp(b) + 2.0) / (4.0 * b)

    return brentq(lambda b: k1_ext(b) - k, LOG4, beta_max, xtol=tol.bisection)


def classify_phase(p, tol: Tolerances = DEFAULT) -> PhaseClassification:
    """Count maxima and name the transition order governing ``beta``."""
    beta, k = _bk(p)
    maxima = _maxima((beta, k), tol)
    if beta <= LOG4:
        order = "second"
    else:
        order = "first" if k > k_low_estimate() else "none"
    tri = bool(abs(beta - LOG4) < 1e-9 and abs(k - K_TRICRITICAL) < 1e-9)
    return PhaseClassification(len(maxima), order, maxima, tri)


# ---------------------------------------------------------------------------
# Mode locations
# ---------------------------------------------------------------------------

def a_max_points(p, tol: Tolerances = DEFAULT):
    """Center ``(e^{-b}, 1, e^{-b})/(1 + 2 e^{-b})`` and, when present, the mirrored off-center maxima."""
    beta, k = _bk(p)
    e = np.exp(-beta)
    center = TypeVector(e / (1 + 2 * e), 1.0 - 2 * e / (1 + 2 * e), e / (1 + 2 * e))
    side = [c for c in _maxima((beta, k), tol) if c.logit_r > 0]
    if not side:
        return center, None
    best = max(side, key=lambda c: c.f_value)
    a = best.a
    return center, (TypeVector(a.a_plus, a.a_zero, a.a_minus), a)


def a_max_pair_from_z(beta: float, k: float, z: float) -> TypeVector:
    """``(e^{-2bKz-b}, 1, e^{2bKz-b}) / C`` with ``C = 1 + e^{-2bKz-b} + e^{2bKz-b}``."""
    lo = np.exp(-2 * beta * k * z - beta)
    hi = np.exp(2 * beta * k * z - beta)
    c = 1.0 + lo + hi
    return TypeVector(lo / c, 1.0 - (lo + hi) / c, hi / c)


# ---------------------------------------------------------------------------
# Stripes
# ---------------------------------------------------------------------------

def _fiber_t(z, beta):
    """Maximiser ``t`` of ``f`` on the line ``a_+ - a_- = z``: ``(1-t)^2 = (e^{2b}/4)(t^2 - z^2)``."""
    z = np.asarray(z, dtype=float)
    q = np.exp(2 * beta) / 4.0
    # (q - 1) t^2 + 2 t - (1 + q z^2) = 0, root in (|z|, 1)
    a, b, c = q - 1.0, 2.0, -(1.0 + q * z * z)
    disc = np.sqrt(b * b - 4 * a * c)
    with np.errstate(divide="ignore", invalid="ignore"):
        root = np.where(np.abs(a) > 1e-12, (2 * -c) / (b + disc), -c / b)
    return root


def stripe_profile_slope(z, p):
    """Derivative in ``z`` of ``max {f(a) : a_+ - a_- = z}``: ``2 beta K z - artanh(z/t)``."""
    beta, k = _bk(p)
    z = np.asarray(z, dtype=float)
    t = _fiber_t(z, beta)
    with np.errstate(divide="ignore"):
        return 2 * beta * k * z - np.arctanh(np.clip(z / t, -1.0, 1.0))


def stripe_unimodal(p, epsilon: float, n_grid: int = 4000) -> bool:
    """Whether ``f`` restricted to ``|a_+ - a_-| <= epsilon`` has exactly one local maximum.

    ``f`` is strictly concave on each line of constant magnetisation, so
    local maxima of the restriction are local maxima of the fiber profile;
    the profile is unimodal iff its slope stays negative on ``(0, epsilon]``.
    """
    beta, k = _bk(p)
    if not 0 < epsilon <= 1:
        raise DomainError("epsilon must lie in (0, 1]")
    z = np.linspace(0.0, epsilon, n_grid + 1)[1:]
    z = z[z < 1.0]
    if np.any(stripe_profile_slope(z, (beta, k)) >= 0):
        return False
    if epsilon >= 1.0:
        return True
    off = [c for c in critical_points((beta, k)) if c.logit_r > 0 and c.z <= epsilon]
    return not off


def choose_epsilon(k: float, beta_max: float = 10.0, n_beta: int = 50,
                   tol: Tolerances = DEFAULT) -> float:
    """Stripe half-width usable for every ``beta``.

    Half the smallest off-center magnetisation over a ``beta`` grid on
    ``[beta_c1(k), beta_max]``, shrunk until the stripe is unimodal at
    every grid temperature (including temperatures below the transition).
    """
    if k >= K_TRICRITICAL:
        raise DomainError("no first-order jump for k >= K_c")
    bc1 = beta_c1_of_k(k, tol)
    betas = np.linspace(bc1 * (1 + 1e-6), max(beta_max, bc1 * 1.01), n_beta)
    jumps = []
    for b in betas:
        _, pair = a_max_points((b, k), tol)
        if pair is None:
            raise SolverError(f"no off-center maximum at beta={b:.6g}; k outside first-order window")
        jumps.append(pair[1].a_plus - pair[1].a_minus)
    eps = 0.5 * float(min(jumps))
    if eps <= 0:
        raise SolverError("vanishing magnetisation jump")
    check = np.concatenate([np.linspace(bc1 / n_beta, bc1, n_beta, endpoint=False), betas])
    while not all(stripe_unimodal((b, k), eps) for b in check):
        eps *= 0.8
    return eps


def log_stripe_mass_ratio(p, n: int, epsilon: float) -> float:
    beta, k = _bk(p)
    inner, edge = StripeSpec(epsilon).masks(n)
    if not edge.any():
        raise DomainError("edge of the stripe contains no macrostate")
    lp = macro_log_gibbs(beta, k, n)
    return float(logsumexp(lp[edge]) - logsumexp(lp[inner]))


def stripe_mass_ratio(p, n: int, epsilon: float) -> float:
    """``pi(N_edge) / pi(N)`` from exact macrostate weights."""
    return float(np.exp(log_stripe_mass_ratio(p, n, epsilon)))


# ---------------------------------------------------------------------------
# Phase diagram export
# ---------------------------------------------------------------------------

def phase_rows(betas, ks, tol: Tolerances = DEFAULT) -> list[dict]:
    """One row per grid point: maxima count, order label, maxima heights and ``z_alpha``."""
    rows = []
    for b in betas:
        for k in ks:
            try:
                pc = classify_phase((float(b), float(k)), tol)
                f_vals = sorted((c.f_value for c in pc.maxima), reverse=True)
                z_alpha = max((abs(c.z) for c in pc.maxima), default=0.0)
                rows.append({"beta": float(b), "k": float(k), "n_maxima": pc.n_maxima,
                             "order": pc.order, "tricritical": pc.tricritical,
                             "f_values": f_vals, "z_alpha": z_alpha, "error": ""})
            except (SolverError, DomainError) as exc:
                rows.append({"beta": float(b), "k": float(k), "n_maxima": -1, "order": "",
                             "tricritical": False, "f_values": [], "z_alpha": float("nan"),
                             "error": str(exc)})
    return rows


def export_phase_rows(rows: list[dict], prefix, header: dict | None = None) -> tuple[Path, Path]:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        if header is not None:
            fh.write("# config: " + json.dumps(header, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["beta", "k", "n_maxima", "order", "tricritical", "f_values", "z_alpha", "error"])
        for r in rows:
            w.writerow([repr(r["beta"]), repr(r["k"]), r["n_maxima"], r["order"], int(r["tricritical"]),
                        ";".join(repr(v) for v in r["f_values"]), repr(r["z_alpha"]), r["error"]])
    json_path = prefix.with_suffix(".json")
    json_path.write_text(json.dumps({"config": header or {}, "rows": rows}, indent=1, sort_keys=True))
    return csv_path, json_path
