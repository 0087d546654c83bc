"""Independent reference computations used by several test modules."""
import functools
import itertools

import mpmath
import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.special import logsumexp

from teamprod.hypergraph import Hypergraph, Team


def rank_oracle(B):
    # worker i identified iff appending e_i' to B leaves the rank unchanged
    B = np.asarray(B.toarray() if sp.issparse(B) else B, dtype=float)
    r = np.linalg.matrix_rank(B)
    out = []
    for i in range(B.shape[1]):
        e = np.zeros((1, B.shape[1]))
        e[0, i] = 1.0
        out.append(np.linalg.matrix_rank(np.vstack([B, e])) == r)
    return np.array(out)


def team_logpdf(family, theta, y):
    m, v = theta
    if family == 'lognormal':
        return stats.lognorm.logpdf(y, s=np.sqrt(v), scale=np.exp(m))
    # scipy's nbinom loses ~1e-7 near the Poisson limit; use 50-digit arithmetic
    m, v = np.broadcast_arrays(np.asarray(m, dtype=float), np.asarray(v, dtype=float))
    out = np.array([_nb_mp(a, b, y) for a, b in zip(m.ravel(), v.ravel())])
    return out.reshape(m.shape) if m.ndim else float(out[0])


@functools.lru_cache(maxsize=None)
def _nb_mp(m, r, y):
    with mpmath.workdps(50):
        M, R = mpmath.mpf(m), mpmath.mpf(r)
        v = (mpmath.loggamma(y + R) - mpmath.loggamma(R) - mpmath.loggamma(y + 1)
             + R * mpmath.log(R / (R + M)) + y * mpmath.log(M / (R + M)))
    return float(v)


def exact_loglik(model, data, h):
    '''Log marginal likelihood by summing over every type assignment (small N only).'''
    N, K = data.N, model.K
    logprior = model.log_prior(data)
    idx = {w: i for i, w in enumerate(data.worker_ids)}
    teams = [([idx[m] for m in t.members], t.output_adj) for t in h.teams if t.size <= 2]
    fam = model.family
    # every assignment as a row, enumerated in the same order as itertools.product
    types = np.array(list(itertools.product(range(K), repeat=N)), dtype=int).reshape(-1, N)
    v = logprior[np.arange(N), types].sum(axis=1)
    for mem, y in teams:
        if fam != 'lognormal':
            y = np.floor(y + 0.5)
        th = model.theta1 if len(mem) == 1 else model.theta2
        table = team_logpdf(fam, (th[..., 0], th[..., 1]), y)
        v = v + (table[types[:, mem[0]]] if len(mem) == 1 else table[types[:, mem[0]], types[:, mem[1]]])
    if model.variant == 'joint':
        for i in range(N):
            v = v + stats.poisson.logpmf(data.n_solo[i], model.rho1[types[:, i]])
        counts = {}
        for a, b, c in zip(data.upair_a, data.upair_b, data.upair_n):
            counts[(min(a, b), max(a, b))] = c
        for i in range(N):
            for k in range(i + 1, N):
                v = v + stats.poisson.logpmf(counts.get((i, k), 0), model.rho2[types[:, i], types[:, k]])
    return float(logsumexp(v))


def random_instance(rng, N, K, family='lognormal', variant='independent'):
    from teamprod.mixture import MixtureData, MixtureModel
    teams = []
    for i in range(N):
        for _ in range(int(rng.integers(0, 3))):
            teams.append((i,))
    for _ in range(int(rng.integers(1, 2 * N))):
        a, b = rng.choice(N, 2, replace=False)
        teams.append((int(a), int(b)))
    # every worker appears somewhere
    for i in range(N):
        if not any(i in t for t in teams):
            teams.append((i,))
    if family == 'lognormal':
        y = np.exp(rng.normal(0.5, 1.0, len(teams)))
        th1 = np.column_stack([rng.normal(0.5, 1, K), rng.uniform(0.3, 2, K)])
        m2 = rng.normal(0.5, 1, (K, K))
        v2 = rng.uniform(0.3, 2, (K, K))
    else:
        y = rng.poisson(3.0, len(teams)).astype(float)
        th1 = np.column_stack([rng.uniform(0.5, 6, K), rng.uniform(0.5, 20, K)])
        m2 = rng.uniform(0.5, 6, (K, K))
        v2 = rng.uniform(0.5, 20, (K, K))
    th2 = np.stack([(m2 + m2.T) / 2, (v2 + v2.T) / 2], axis=-1)
    h = Hypergraph([Team(j, t, float(v)) for j, (t, v) in enumerate(zip(teams, y))])
    data = MixtureData(h, family)
    if variant == 'correlated':
        pi = rng.normal(0, 0.3, (5, K))
        pi[:, 0] = 0
    else:
        pi = rng.dirichlet(np.ones(K))
    rho1 = rho2 = None
    if variant == 'joint':
        rho1 = rng.uniform(0.3, 2, K)
        r2 = rng.uniform(0.05, 0.5, (K, K))
        rho2 = (r2 + r2.T) / 2
    model = MixtureModel(K, pi, th1, th2, family, variant, rho1, rho2)
    return h, data, model
