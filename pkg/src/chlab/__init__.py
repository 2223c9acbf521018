"""chlab: a desk-scale laboratory for a stochastic fourth-order phase-field
equation driven by space-time white noise.

Simulates the mild-solution dynamics in a Neumann cosine basis, solves the
controlled and zero-noise flows, minimizes the control-energy functional
under terminal constraints, and estimates small-noise decay rates by plain
and tilted Monte Carlo.
"""

__version__ = "0.1.0"

from .config import ConfigError, RunConfig, alpha_ceiling, load_config
from .dynamics import (BlowUpError, CouplingErrorSeries, ModelSpec, SolverConfig,
                       j_decomposition, mild_residual, moment_diagnostic,
                       solve_skeleton, solve_stochastic, step)
from .fields import (ControlPath, Grid, GridField, Trajectory, control_norm_sq,
                     holder_modulus, holder_norm, holder_norm_parts, lp_norm,
                     zero_control)
from .ldp import (EstimateResult, EventSpec, ScalingReport, controlled_limit_study,
                  importance_sample, ldp_scaling_study, mc_event_probability,
                  mean_girsanov_weight, reachable_set_diameter,
                  weak_continuity_study, wilson_interval)
from .noise import (DERIVATION_RULE, NoisePath, SeedSpec, girsanov_log_weight,
                    sample_sheet, shift_increments)
from .rate import (MinimizeOptions, RateCertificate, TerminalBall, TerminalPenalty,
                   adjoint_gradient, admissibility_residual,
                   least_squares_certificate, minimize_rate, objective_value,
                   rate_eval)
from .spectral import (BasisIndex, CosineBasis, GreenIncrementReport,
                       check_green_increments, green_kernel_eval, phi_weights)
