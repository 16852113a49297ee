"""Semi-implicit Euler simulation of index-1 stochastic differential-algebraic equations."""

from .brownian import BrownianPath, coarsen, generate
from .convergence import ConvergenceReport, pathwise_error, run_sample, run_study
from .errors import SdaeError
from .integrators import DualState, Trajectory, integrate, step_dual, step_primary
from .models import Heat2dSpec, build_heat2d, example3d
from .problem import SdaeProblem, ValidationReport, validate
from .projectors import MatrixFn, ProjectorSet, check_a13, compute_projectors, projector_derivative

__version__ = "0.1.0"
