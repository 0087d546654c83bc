"""
Worker contributions to team output from collaboration-hypergraph data.

Additive fixed-effects production with bias-corrected variance decompositions,
discrete-type production fit by variational EM, output-maximising allocation, and
Monte Carlo tools.
"""
__version__ = '0.1.0'

from .hypergraph import (Hypergraph, HypergraphError, ParseError, Team, Worker, dump_teams,
                         filter_min_productions, load_teams, net_year_effects)
from .identification import (DesignSystem, IdentificationError, IdentifiedSet, build_design,
                             identified_workers, prune_to_identified)
from .additive import (AdditiveFit, EstimationError, QuadForm, VarianceDecomposition, bias_correct,
                       estimate_alpha, estimate_lambda, estimate_sigma2, fit_additive,
                       variance_components)
from .mixture import (MixtureConfig, MixtureModel, VariationalState, elbo, fit_mixture,
                      loglik_team, m_step, mean_output_matrix, nonlinear_variance_decomposition,
                      posterior_predict, posterior_type_matrix, type_proxies, update_q)
from .allocation import (AllocationProblem, AllocationSolution, allocation_matrix, budgets_from_fit,
                         solve_allocation)
from .simulate import (AdditiveTruth, MonteCarloReport, NetworkSpec, SimDesign, run_monte_carlo,
                       simulate_additive, simulate_mixture)
from .report import descriptive_stats, emit_bundle
