"""Ghost Gutzwiller embedding with exact, selected-CI and simulated quantum-selected-CI solvers."""

from .errors import ConfigError, EmptyBasis, GgutError, NonConvergence, SingularDensityError
from .fock import FciSolver, solve_fci
from .model import HubbardParams, LatticeSpec, build_generic_aim, discretize_semicircle
from .params import EmbParams, QpParams
from .qsci import HarvestConfig, QsciSolver, qsci_solve
from .sci import SciSolver
from .scloop import LoopConfig, run_loop
from .spectral import FrequencyGrid, gap_metric, low_frequency_peak, qp_dos

__all__ = [
    "ConfigError", "EmbParams", "EmptyBasis", "FciSolver", "FrequencyGrid", "GgutError", "HarvestConfig",
    "HubbardParams", "LatticeSpec", "LoopConfig", "NonConvergence", "QpParams", "QsciSolver", "SciSolver",
    "SingularDensityError", "build_generic_aim", "discretize_semicircle", "gap_metric", "low_frequency_peak", "qp_dos",
    "qsci_solve", "run_loop", "solve_fci",
]
