"""Robin-type p-Laplacian energies and their Dirichlet and Neumann limits."""

__version__ = "0.1.0"

from .asymptotics import (DerivativeCheck, ExpansionRegime, RateFit, SweepTable, VerificationReport,
                          check_derivative_identity, fit_power_law, sweep, verify_expansion)
from .energy import (DiscreteField, EnergyBreakdown, boundary_q_integral, energy, poincare_ratio,
                     residual)
from .exceptions import (CompatibleSource, ConfigError, EmptyWindow, IncompatibleSource,
                         MaxIterationsExceeded, MeshError, NoConvergence, NonfiniteEnergy,
                         RegimeMismatch, RobinError, SourceError)
from .mesh import Mesh, build_interval_mesh, build_rectangle_mesh, import_mesh
from .oracles import OracleSolution, brute_min_g, oracle_1d_general_p, oracle_1d_linear
from .postprocess import (BoundaryFlux, ExpansionConstants, compute_rho_alpha, expansion_constants,
                          dirichlet_expansion_constant, extend_boundary_datum, incompat_constant,
                          min_g, neumann_slope, recover_boundary_flux)
from .problem import Constant, LoadVector, Nodal, Polynomial, ProblemSpec, Regime, assemble_source, classify_regime
from .solvers import (Setting, Solution, SolverConfig, solve_dirichlet, solve_kf,
                      solve_neumann_normalized, solve_robin)
