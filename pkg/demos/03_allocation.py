"""
Output-maximising allocation of typed workers to teams.

With a supermodular pair technology it pays to put equal types together; with a
submodular one, to mix them. We solve both by linear programming and then compute the
allocation implied by a fitted mixture model.

Run:  python demos/03_allocation.py
"""
import numpy as np

from teamprod.allocation import AllocationProblem, allocation_matrix, budgets_from_fit, solve_allocation
from teamprod.mixture import fit_mixture, posterior_type_matrix
from teamprod.simulate import SimDesign, SMALL_NETWORK, panel_a_truth, simulate_mixture

np.set_printoptions(precision=3, suppress=True)

for label, mu2 in [('supermodular', [[1.0, 2.0], [2.0, 4.0]]), ('submodular', [[1.0, 3.0], [3.0, 4.0]])]:
    sol = solve_allocation(AllocationProblem([0.0, 0.0], mu2, [0, 0], [10, 10]))
    print(f'{label}: pair counts\n{sol.tau2}\n  total output {sol.objective:g}')

h, _ = simulate_mixture(SimDesign('mixture', panel_a_truth(), SMALL_NETWORK, seed=3))
model, state = fit_mixture(h, 2, seed=0, restarts=5)
p = budgets_from_fit(model, state, h)
sol = solve_allocation(p)
print('\nfitted model: solo budgets', p.T1, ' pair-slot budgets', p.T2)
print('observed sorting matrix:\n', posterior_type_matrix(model, state, h))
print('output-maximising allocation:\n', allocation_matrix(sol))
print(f'expected output {sol.objective:.1f} (LP bound {sol.lp_bound:.1f}, integral vertex: {sol.integral})')
