"""Numerical tolerances and resource caps used throughout the package."""
from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class Tolerances:
    root_residual: float = 1e-12      # |h - phi| after polishing a critical point
    stationarity: float = 1e-10       # residual of both stationarity equations
    bisection: float = 1e-9           # interval width in K or beta
    classification_grid: int = 2000   # per-axis resolution of brute-force grid probes
    scan_points: int = 20000          # sign-scan points for off-center roots
    row_sum: float = 1e-12
    detailed_balance: float = 1e-9
    eig_residual: float = 1e-8
    positivity: float = 1e-10
    dense_threshold: int = 4000       # dense eigensolve below this many states
    swap_state_cap: int = 500_000     # lumped swapping product-space cap
    mixing_step_cap: int = 10_000_000

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT = Tolerances()
