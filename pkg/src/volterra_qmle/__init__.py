"""Small-noise rough Volterra SDEs: simulation, kernel inversion and drift QMLE."""

from .errors import (
    AlignmentError,
    CellError,
    ContractError,
    DomainError,
    FisherSingularError,
    InputError,
    OrderingError,
    RankDeficiencyError,
    RegressionError,
    SimulationDivergedError,
    VolterraError,
    WeightError,
)
from .invert import ReconstructedPath, SampledObservation, invert, invert_batch, reconstruction_error
from .kernel import FractionalKernelParams, GridGeometry, eval_K, eval_L, g_h, integral_bounds, resolvent_convolution
from .mc import CellStats, ExperimentGrid, emit_table, rate_estimator, rate_reconstruction, run_table
from .qmle import BlockData, ContrastConfig, EstimationResult, Weight, asymptotic_std, contrast, estimate, fisher_info
from .sim import Model, SimConfig, SimulatedPath, build_model, linear_affine_model, simulate, simulate_deterministic

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BlockData",
    "CellError",
    "CellStats",
    "ContractError",
    "ContrastConfig",
    "DomainError",
    "EstimationResult",
    "ExperimentGrid",
    "FisherSingularError",
    "FractionalKernelParams",
    "GridGeometry",
    "InputError",
    "Model",
    "OrderingError",
    "RankDeficiencyError",
    "ReconstructedPath",
    "RegressionError",
    "SampledObservation",
    "SimConfig",
    "SimulatedPath",
    "SimulationDivergedError",
    "VolterraError",
    "Weight",
    "WeightError",
    "asymptotic_std",
    "build_model",
    "contrast",
    "emit_table",
    "estimate",
    "eval_K",
    "eval_L",
    "fisher_info",
    "g_h",
    "integral_bounds",
    "invert",
    "invert_batch",
    "linear_affine_model",
    "rate_estimator",
    "rate_reconstruction",
    "reconstruction_error",
    "resolvent_convolution",
    "run_table",
    "simulate",
    "simulate_deterministic",
]
