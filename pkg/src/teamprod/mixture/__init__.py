"""Discrete-type production on 1- and 2-worker teams, fit by variational EM."""
from .families import FamilyError, LogNormal, NegativeBinomial, get_family, loglik_team
from .model import (MixtureData, MixtureError, MixtureModel, VariationalState, e_step, elbo,
                    m_step, team_logliks, update_q)
from .summaries import (ProxyError, TypeProxies, mean_output_matrix, nonlinear_variance_decomposition,
                        posterior_predict, posterior_type_matrix, type_proxies)
from .vem import MixtureConfig, MonotonicityError, canonical_order, fit_mixture, run_vem
