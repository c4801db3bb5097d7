"""Distributed second-order optimization over unbalanced directed networks."""

from .analysis import (ConvergenceReport, DecayEstimate, MetricsRecord, baseline_fixed_point,
                       compute_metrics, convergence_report, estimate_decay, limit_matrix,
                       second_eigenvalue_modulus)
from .config import SimConfig, parse_config
from .estimator import SurplusConsensusOptimizer
from .exceptions import (ConfigurationError, DivergenceError, OracleError,
                         UnsupportedProjectionError, VerificationError)
from .graph import (SurplusMatrix, WeightedDigraph, build_surplus_matrix, generate, laplacian,
                    max_epsilon, validate_strong_connectivity)
from .objective import (Custom, ObjectiveFamily, OptimalityOracle, Quadratic, Quartic,
                        centralized_optimum, finite_diff_check, project_optimal)
from .protocol import (AgentState, ProtocolParams, StepSchedule, SwarmState, SystemMatrix,
                       Trajectory, build_system_matrix, clipped_gradient, local_step, run,
                       simulate, stacked_step, step_size, to_stacked)

__version__ = "0.1.0"
