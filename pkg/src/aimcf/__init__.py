"""Weak anisotropic (and crystalline) inverse mean curvature flow.

The flow function v is computed as the p -> 1 limit of anisotropic
p-capacitary potentials on a truncated exterior grid; its sublevel sets
realize the weak flow, whose anisotropic perimeters grow exactly
exponentially. See the README for the pipeline and the verification
suites.
"""

from .anisotropy import (Anisotropy, AnisotropyError, dual_oracle, ell,
                         euclidean, parse_anisotropy, polytope, weighted_ell)
from .grid import (ACTIVE, OMEGA, OUTER, AxisRectangle, DomainError,
                   DomainSpec, Grid2, Polygon, ScalarField, WulffShape,
                   build_grid, dump_field, load_field, read_field_file,
                   write_field_file)
from .imcf import (FlowField, MoserError, MoserReport, PSchedule,
                   barrier_sandwich_limit, harnack_oscillation, log_transform,
                   moser_limit, read_flow, write_flow)
from .levelset import (Contour, LevelSetFamily, PerimeterSeries,
                       anisotropic_perimeter, detect_fattening,
                       extract_sublevel, marching_contour, outward_min_check,
                       perimeter_series)
from .pcap_solver import (Backtracking, FixedStep, SolveReport, SolverConfig,
                          SolverError, barrier, discrete_energy,
                          energy_gradient, pcap_value, solve_pcap)
from .verify import (OracleError, rectangle_solution, run_suite,
                     three_squares_solution, wulff_solution)

__version__ = "0.1.0"
