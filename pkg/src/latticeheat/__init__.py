"""latticeheat: desk-scale numerics for heat kernels, box decompositions,
cluster expansions and correlation decay in lattice Schrodinger systems."""

from .lattice import (Box, Polymer, as_site, as_site_set, enumerate_boxes,
                      enumerate_polymers, interior_boxes, interior_count,
                      linf_dist, pairwise_max_dist, project_pi, project_Pi)
from .interaction import (HypothesisConstants, InteractionSpec,
                          PairCouplingSpec, SitePotentialSpec,
                          hypothesis_constants, interaction_split,
                          potential_value)
from .hamiltonian import (FactoredHamiltonian, GridSpec, LatticeOperator,
                          TraceEstimate, build_hamiltonian, heat_operator,
                          partition_function, slq_trace)
from .kernel import (DuhamelResult, KernelField, SolverParams, duhamel_solve,
                     extract_psi, gaussian_propagator,
                     harmonic_psi_closed_form, kernel_from_operator,
                     linear_psi_closed_form, load_kernel_field, residual_check,
                     save_kernel_field, spectral_psi_field,
                     translate_difference, weighted_norm)

__version__ = "0.1.0"
