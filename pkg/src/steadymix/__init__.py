"""Steady compressible reacting-mixture solver with slip walls.

Library + CLI for the regularized Galerkin approximation of a steady,
heat-conducting, chemically reacting compressible mixture in a periodic
channel, solved by Newton continuation over the regularization parameters,
with audits of the thermodynamic identities, entropy balances and a priori
estimate quantities the model guarantees.
"""

from .errors import (ClosureError, ConfigError, DomainError,
                     LinearSolveFailure, NonConvergence, PathStalled,
                     SteadymixError)
from .mixture import (GradientSample, MixtureParameters, StateSample,
                      diffusion_flux, driving_forces, entropy_production,
                      heat_flux, internal_energy, pressure, species_thermo,
                      stress, total_energy)
from .closures import (DiffusionClosure, ReactionClosure, build_matrix,
                       closure_sweep, production_rates, regularized_matrix)
from .mesh import (ChannelMesh, DiscreteSolution, ElementBasis,
                   QuadratureRule, build_mesh, gauss_rule, integrate, norms)
from .approx import (Assembler, RegularizationSchedule, ResidualVector,
                     SourceTerms, assemble_jacobian, assemble_residual,
                     regularized_conductivity, regularized_entropy,
                     regularized_flux, regularized_stress,
                     total_energy_residual)
from .solver import (ContinuationPath, SolveReport, SolverOptions,
                     StageRecord, continue_path, newton_solve)
from .verification import (AuditEntry, AuditReport, RegimeQuery,
                           apriori_monitor, b_functional, classify_regime,
                           density_weight_diagnostic, entropy_equality_113,
                           entropy_residuals_def2, global_energy_audit,
                           mms_convergence, renormalized_check,
                           smooth_truncation, weak_residuals_def1)
from .manufactured import ManufacturedProblem

__version__ = "0.1.0"
