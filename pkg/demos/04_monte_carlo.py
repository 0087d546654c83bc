"""
Monte Carlo check of the variational estimator.

Replicates the two-type design on the ~900-worker network: types and outputs are
redrawn, the model is refit, and the replication means and nearest-rank 2.5 / 97.5
percentiles are tabulated next to the true values. Pass --reps to change the number of
replications (default 20 here to keep the demo short).

Run:  python demos/04_monte_carlo.py --reps 20
"""
import argparse
import time

from teamprod.simulate import MixtureEstimator, get_design, run_monte_carlo

parser = argparse.ArgumentParser()
parser.add_argument('--design', default='panelA2')
parser.add_argument('--reps', type=int, default=20)
parser.add_argument('--seed', type=int, default=7)
args = parser.parse_args()

design = get_design(args.design, args.reps, args.seed)
t = time.time()
rep = run_monte_carlo(design, MixtureEstimator(design.truth.K, restarts=10))
print(f'{args.reps} replications of {args.design} in {time.time() - t:.0f}s\n')
print(f'{"parameter":<18} {"truth":>7} {"mean":>7} {"p2.5":>7} {"p97.5":>7}')
for r in rep.summary():
    print(f'{r["parameter"]:<18} {r["truth"]:7.2f} {r["mean"]:7.2f} {r["p2.5"]:7.2f} {r["p97.5"]:7.2f}')
