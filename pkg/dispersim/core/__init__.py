"""
dispersim Core Module

Grids and fields, moving-well models, Galilei symmetries, split-step
propagation, spectral analysis, estimate verification and the experiment
runner.
"""

__version__ = "1.0.0"

from .exceptions import DispersimError, ConfigurationError, PropagationError
from .fieldgrid import Grid, ComplexField, SpinorField, AdmissiblePair, WavePacket, make_grid
from .model import ChargeTransferModel, MatrixChargeTransferModel, PotentialSpec, MatrixPotentialSpec
from .propagate import Trajectory, evolve, evolve_matrix
from .spectral import bound_states, prepare_scattering_state
from .batch import BatchRunner
from .config import get_config, ConfigManager
from .experiment import run_experiment, load_experiment_config

__all__ = [
    "DispersimError",
    "ConfigurationError",
    "PropagationError",
    "Grid",
    "ComplexField",
    "SpinorField",
    "AdmissiblePair",
    "WavePacket",
    "make_grid",
    "ChargeTransferModel",
    "MatrixChargeTransferModel",
    "PotentialSpec",
    "MatrixPotentialSpec",
    "Trajectory",
    "evolve",
    "evolve_matrix",
    "bound_states",
    "prepare_scattering_state",
    "BatchRunner",
    "get_config",
    "ConfigManager",
    "run_experiment",
    "load_experiment_config",
]
