"""
Discrete worker types with complementarity, fit by variational EM.

Two log-normal types. Solo output of type 2 is higher, and two type-2 workers together
produce far more than the sum of their parts. We fit K = 2, look at the estimated
parameters, the sorting and mean-output matrices, and the nonlinear variance
decomposition of pair output.

Run:  python demos/02_mixture_model.py
"""
import numpy as np

from teamprod.mixture import (fit_mixture, mean_output_matrix, nonlinear_variance_decomposition,
                              posterior_type_matrix, type_proxies)
from teamprod.simulate import LARGE_NETWORK, SimDesign, mixture_parameters, panel_a_truth, simulate_mixture

np.set_printoptions(precision=3, suppress=True)

truth = panel_a_truth()
h, tr = simulate_mixture(SimDesign('mixture', truth, LARGE_NETWORK, assortativity=0.3, seed=2))
print(f'{h.N} workers, {sum(t.size == 1 for t in h.teams)} solo and '
      f'{sum(t.size == 2 for t in h.teams)} pair teams')

model, state = fit_mixture(h, 2, 'lognormal', 'independent', seed=0, restarts=5)
print(f'ELBO {state.elbo:.2f} after {state.iterations} iterations (converged={state.converged})')

est, true = mixture_parameters(model), mixture_parameters(truth)
for name in est:
    print(f'  {name:<18} {est[name]:7.3f}   (truth {true[name]:.2f})')

# types are recovered well for workers with many teams
hit = (state.q.argmax(axis=1) == tr['types'][list(state.worker_ids)]).mean()
print(f'\nmodal posterior type matches the true type for {100 * hit:.1f}% of workers')

print('\nsorting matrix (share of pair teams by type pair):')
print(posterior_type_matrix(model, state, h))
M, _ = mean_output_matrix(model, state, h)
print('mean output by type pair:')
print(M)

dec = nonlinear_variance_decomposition(model, state, h)[2]
tot = dec['total']
print('\npair output variance shares: ' + ', '.join(
    f'{k} {dec[k] / tot:.2f}' for k in ('heterogeneity', 'sorting', 'nonlinearities', 'other')))

# the model-free view: bin workers by mean solo output
S, P = type_proxies(h, n_bins=2, min_solo=5).matrices(h)
print('\nproxy mean output by proxy-type pair (noisier, selected sample):')
print(P)
