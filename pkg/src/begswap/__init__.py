"""Exact and simulated mixing analysis for the mean-field Blume-Emery-Griffiths model."""
from .model import (
    LadderSpec,
    Macrostate,
    PhasePoint,
    SpinConfig,
    TypeVector,
    free_energy_f,
    hamiltonian,
    log_multiplicity,
    log_partition,
    lumped_energy,
    macro_gibbs,
    macrostate_of,
    overlap_delta,
)

__version__ = "0.1.0"
