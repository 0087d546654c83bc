"""Variational EM driver: initialisation, restarts, convergence and canonical labels."""
from dataclasses import dataclass, replace

import numpy as np

from .families import LogNormal
from .model import (MixtureData, MixtureError, MixtureModel, VariationalState, e_step, elbo,
                    m_step, team_logliks)
from .summaries import type_proxies, ProxyError


@dataclass
class MixtureConfig:
    '''
    Arguments:
        restarts (int): number of runs; the first starts from type proxies when available
        max_iter (int): iterations per run
        tol (float): convergence when the bound rises by less than this in one iteration
        seed: seed for random restarts
        mode (str): 'sequential' (monotone) or 'parallel' (Jacobi sweeps)
        min_solo (int): solo teams needed for a worker to enter the proxy initialisation
        weight_floor (float): relative cell-weight floor of the M-step
        slack (float): relative tolerance of the monotonicity check
        proxy_init (bool): use type proxies for the first run
    '''
    restarts: int = 10
    max_iter: int = 2000
    tol: float = 1e-3
    seed: object = None
    mode: str = 'sequential'
    min_solo: int = 5
    weight_floor: float = 1e-6
    slack: float = 1e-9
    proxy_init: bool = True


class MonotonicityError(MixtureError):
    pass


def _initial_model(data, K, family, variant):
    fam = data.family
    y = np.concatenate([data.solo_y, data.pair_y])
    if isinstance(fam, LogNormal):
        base = np.array([np.log(y).mean(), max(np.log(y).var(), 1e-2)]) if y.size else np.array([0.0, 1.0])
    else:
        base = np.array([max(y.mean(), 1e-3), 1.0]) if y.size else np.array([1.0, 1.0])
    theta1 = np.tile(base, (K, 1))
    theta2 = np.tile(base, (K, K, 1))
    if variant == 'correlated':
        pi = np.zeros((data.features().shape[1], K))
    else:
        pi = np.full(K, 1.0 / K)
    rho1 = rho2 = None
    if variant == 'joint':
        rho1 = np.full(K, max(data.n_solo.mean(), 1e-3))
        npairs = max(data.N * (data.N - 1) / 2, 1)
        rho2 = np.full((K, K), max(data.J2 / npairs, 1e-9))
    return MixtureModel(K, pi, theta1, theta2, fam.name, variant, rho1, rho2)


def _proxy_q(h, data, K, min_solo):
    try:
        prox = type_proxies(h, K, min_solo=min_solo, family=data.family)
    except ProxyError:
        return None
    q = np.full((data.N, K), 1.0 / K)
    idx = {w: i for i, w in enumerate(data.worker_ids)}
    for w, b in prox.labels.items():
        q[idx[w]] = 0.1 / K
        q[idx[w], b] += 0.9
    return q


def canonical_order(model, has_solo=True):
    '''
    Type order with ascending expected solo output (expected output of same-type pairs
    when there are no solo teams). For the log-normal family this is ``exp(m + v / 2)``,
    which separates types with close log locations but different dispersions.
    '''
    mu1, mu2 = model.implied_means()
    key = mu1 if has_solo else np.diagonal(mu2)
    return np.argsort(key, kind='stable')


def run_vem(data, model, q, config, check=True):
    '''
    One variational EM run from factors ``q`` (the first M-step uses ``q``).

    Returns:
        (MixtureModel, VariationalState)
    '''
    mode = config.mode
    model = m_step(model, q, data, config.weight_floor)
    L = team_logliks(model, data)
    trace = [elbo(model, q, data, L)]
    converged = False
    it = 0

    def _check(new, old, what):
        if check and mode == 'sequential' and new < old - config.slack * max(1.0, abs(old)):
            raise MonotonicityError(f'evidence lower bound fell in the {what} by {old - new:.3e}')

    for it in range(1, config.max_iter + 1):
        q = e_step(model, q, data, mode, L)
        e1 = elbo(model, q, data, L)
        _check(e1, trace[-1], 'E-step')
        model = m_step(model, q, data, config.weight_floor)
        L = team_logliks(model, data)
        e2 = elbo(model, q, data, L)
        _check(e2, e1, 'M-step')
        trace.append(e2)
        if abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break
    state = VariationalState(q, data.worker_ids, trace, converged, 0, it)
    return model, state


def fit_mixture(h, K, family='lognormal', variant='independent', config=None, data=None, **kw):
    '''
    Fit the discrete-type model on the 1- and 2-worker teams of ``h`` by variational EM.

    Runs ``config.restarts`` times (first run from type proxies when enough workers
    have solo teams, the rest from random Dirichlet factors) and keeps the run with the
    highest bound. Types are relabelled by ascending expected solo output.

    Arguments:
        h (Hypergraph): data; teams with three or more members are ignored
        K (int): number of types
        family (str): 'lognormal' or 'negbin'
        variant (str): 'independent', 'correlated' or 'joint'
        config (MixtureConfig): settings; keyword arguments override its fields

    Returns:
        (MixtureModel, VariationalState)
    '''
    config = config or MixtureConfig()
    for k in kw:
        if not hasattr(config, k):
            raise TypeError(f'unknown option {k!r}')
    config = replace(config, **kw)
    if K < 1:
        raise MixtureError('K must be positive')
    if config.restarts < 1:
        raise MixtureError('restarts must be at least 1')
    data = MixtureData(h, family) if data is None else data
    if data.J == 0:
        raise MixtureError('no 1- or 2-worker teams')
    rng = np.random.default_rng(config.seed)
    base = _initial_model(data, K, family, variant)
    best = None
    for r in range(config.restarts):
        q0 = _proxy_q(h, data, K, config.min_solo) if (r == 0 and config.proxy_init) else None
        if q0 is None:
            q0 = rng.dirichlet(np.ones(K), size=data.N)
        model, state = run_vem(data, base, q0, config)
        if best is None or state.elbo > best[1].elbo:
            best = (model, state)
    model, state = best
    perm = canonical_order(model, data.J1 > 0)
    model, state = model.permute(perm), state.permute(perm)
    state.restarts_used = config.restarts
    return model, state
