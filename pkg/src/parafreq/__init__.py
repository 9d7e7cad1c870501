"""parafreq: parabolic frequency, heat-kernel Harnack tensors, and 2D Ricci
flow on compact model surfaces, with machine-readable verdicts."""

from .errors import (CflError, ConfigError, DomainError, EigensolverError,
                     ExtinctionError, MeshError, ParameterError,
                     TruncationError)
from .geometry import (Geometry, OperatorPair, ScalarField,
                       build_analytic_geometry, gaussian_curvature,
                       geodesic_distance, icosphere, load_mesh, mesh_geometry,
                       operators)
from .spectral import (HeatKernelField, SpectralBasis, eigenbasis, heat_kernel,
                       reversed_time_solve, solve_heat)
from .harnack import (FittedConstant, PositivityVerdict, TensorField,
                      check_positivity, fit_bound_constant, harnack_tensor,
                      hessian, hessian_log, surface_flow_harnack,
                      theorem_deficit_field)
from .frequency import (FrequencyConfig, MonotonicityVerdict, Trace,
                        build_frequency_config, check_zd_identities,
                        compute_zd, d_lower_bound_diagnostic, frequency_trace,
                        lee_inequality_check, monotonicity_verdict,
                        vanishing_order_bound)
from .ricciflow import (FlowState, FlowTrajectory, JTrace,
                        backward_heat_along_flow, init_flow, j_trace,
                        lambda_r, run_flow, step_flow)
from .cli import ExperimentConfig, RunReport, emit_plot_script, parse_config, run

__version__ = "0.1.0"

__all__ = [
    "Geometry", "OperatorPair", "ScalarField", "build_analytic_geometry",
    "gaussian_curvature", "geodesic_distance", "icosphere", "load_mesh",
    "mesh_geometry", "operators",
    "HeatKernelField", "SpectralBasis", "eigenbasis", "heat_kernel",
    "reversed_time_solve", "solve_heat",
    "FittedConstant", "PositivityVerdict", "TensorField", "check_positivity",
    "fit_bound_constant", "harnack_tensor", "hessian", "hessian_log",
    "surface_flow_harnack", "theorem_deficit_field",
    "FrequencyConfig", "MonotonicityVerdict", "Trace",
    "build_frequency_config", "check_zd_identities", "compute_zd",
    "d_lower_bound_diagnostic", "frequency_trace", "lee_inequality_check",
    "monotonicity_verdict", "vanishing_order_bound",
    "FlowState", "FlowTrajectory", "JTrace", "backward_heat_along_flow",
    "init_flow", "j_trace", "lambda_r", "run_flow", "step_flow",
    "ExperimentConfig", "RunReport", "emit_plot_script", "parse_config", "run",
    "CflError", "ConfigError", "DomainError", "EigensolverError",
    "ExtinctionError", "MeshError", "ParameterError", "TruncationError",
]
