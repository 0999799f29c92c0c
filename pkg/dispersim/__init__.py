"""
dispersim

Pseudospectral simulator for scalar and matrix charge transfer Schroedinger
models, with a harness that measures dispersive, weighted, Strichartz and
energy estimates and the asymptotic decomposition of solutions.
"""

__version__ = "1.0.0"
__description__ = "Pseudospectral charge transfer simulator and estimate verification harness"

from .core import (
    ChargeTransferModel,
    ComplexField,
    DispersimError,
    Grid,
    PotentialSpec,
    SpinorField,
    evolve,
    make_grid,
    run_experiment,
)

__all__ = [
    "ChargeTransferModel",
    "ComplexField",
    "DispersimError",
    "Grid",
    "PotentialSpec",
    "SpinorField",
    "evolve",
    "make_grid",
    "run_experiment",
    "__version__",
]
