"""
Synthetic collaboration data and a Monte Carlo harness.

Networks are either replayed from a template hypergraph or generated by matching
participation stubs: every worker gets a minimum number of participations plus a
skewed extra share; stubs are then split into solo teams and randomly matched pairs
(optionally within type, for assortative formation). Outputs are drawn from the
additive model or from the discrete-type model given the network.
"""
import csv
import inspect
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .hypergraph import Hypergraph, Team
from .mixture.families import get_family
from .mixture.model import MixtureModel


class SimulationError(ValueError):
    pass


@dataclass
class NetworkSpec:
    '''
    Arguments:
        n_workers (int): number of workers
        team_counts (dict): number of teams by size (sizes 1, 2, 3, ...)
        min_degree (int): participations every worker gets
        skew (float): standard deviation of the log activity weight that spreads the
            remaining participations
    '''
    n_workers: int
    team_counts: dict
    min_degree: int = 1
    skew: float = 0.8


@dataclass
class AdditiveTruth:
    '''
    Arguments:
        lam (dict): team-size scales
        sigma (dict): shock standard deviation by size
        alpha (ndarray or None): fixed worker effects; drawn each time when None
        alpha_mean, alpha_sd (float): normal distribution of drawn effects
    '''
    lam: dict
    sigma: dict
    alpha: np.ndarray = None
    alpha_mean: float = 1.0
    alpha_sd: float = 1.0


@dataclass
class SimDesign:
    '''
    Arguments:
        generator (str): 'additive' or 'mixture'
        truth (AdditiveTruth or MixtureModel): data-generating parameters
        network (Hypergraph or NetworkSpec): replayed template or synthetic specification
        assortativity (float): share of pair slots matched within type (mixture only)
        replications (int): Monte Carlo replications
        seed: master seed
        fixed_network (bool): build a synthetic network once and reuse it in every
            replication (ignored for assortative mixture designs)
    '''
    generator: str
    truth: object
    network: object
    assortativity: float = 0.0
    replications: int = 100
    seed: object = 0
    fixed_network: bool = True
    name: str = ''

    def __post_init__(self):
        if self.generator not in ('additive', 'mixture'):
            raise SimulationError("generator must be 'additive' or 'mixture'")
        if self.replications < 1:
            raise SimulationError('replications must be at least 1')
        if not 0.0 <= self.assortativity <= 1.0:
            raise SimulationError('assortativity must lie in [0, 1]')
        if self.generator == 'mixture' and not isinstance(self.truth, MixtureModel):
            raise SimulationError('a mixture design needs a MixtureModel truth')


# ---------------------------------------------------------------- networks

def _degrees(spec, rng):
    n = spec.n_workers
    slots = sum(int(s) * int(c) for s, c in spec.team_counts.items())
    base = spec.min_degree * n
    if base > slots:
        raise SimulationError('minimum degree exceeds the number of participations')
    w = np.exp(rng.normal(0.0, spec.skew, n))
    return spec.min_degree + rng.multinomial(slots - base, w / w.sum())


def _match(stubs, size, rng, partial=False):
    # group a shuffled stub list into teams of ``size`` distinct workers; with
    # ``partial`` the groups that cannot be repaired are returned as leftover stubs
    stubs = stubs[rng.permutation(stubs.size)]
    groups = stubs.reshape(-1, size)
    for _ in range(100):
        bad = np.flatnonzero([len(set(g)) < size for g in groups])
        if bad.size == 0:
            return (groups, stubs[:0]) if partial else groups
        for b in bad:
            other = rng.integers(groups.shape[0])
            i, j = rng.integers(size), rng.integers(size)
            groups[b, i], groups[other, j] = groups[other, j], groups[b, i]
    if partial:
        bad = np.array([len(set(g)) < size for g in groups])
        return groups[~bad], groups[bad].ravel()
    raise SimulationError('could not form teams of distinct workers')


def synthetic_network(spec, rng, types=None, assortativity=0.0):
    '''
    Team memberships from participation stubs.

    Returns:
        (list of tuple) member index tuples, solo teams first, then by size
    '''
    deg = _degrees(spec, rng)
    stubs = np.repeat(np.arange(spec.n_workers), deg)
    stubs = stubs[rng.permutation(stubs.size)]
    teams = []
    pos = 0
    sizes = sorted(int(s) for s in spec.team_counts)
    for s in sizes:
        cnt = int(spec.team_counts[s])
        take = stubs[pos:pos + s * cnt]
        pos += s * cnt
        if s == 1:
            teams.extend((int(w),) for w in take)
            continue
        if s == 2 and types is not None and assortativity > 0:
            teams.extend(_assortative_pairs(take, types, assortativity, rng, teams))
            continue
        teams.extend(tuple(int(x) for x in g) for g in _match(take, s, rng))
    return teams


def _assortative_pairs(take, types, a, rng, teams):
    sorted_mask = rng.random(take.size) < a
    pool = list(take[~sorted_mask])
    out = []
    for k in np.unique(types):
        grp = take[sorted_mask & (types[take] == k)]
        if grp.size % 2:
            pool.append(grp[-1])
            grp = grp[:-1]
        if grp.size:
            # a type dominated by one worker cannot be fully paired within type
            groups, rest = _match(grp, 2, rng, partial=True)
            out.extend(tuple(int(x) for x in g) for g in groups)
            pool.extend(rest)
    pool = np.array(pool, dtype=int)
    if a >= 1.0:
        # at full sorting leftover odd slots become solo teams rather than mixed pairs
        teams.extend((int(w),) for w in pool)
        return out
    if pool.size % 2:
        teams.append((int(pool[-1]),))
        pool = pool[:-1]
    if pool.size:
        groups, rest = _match(pool, 2, rng, partial=True)
        out.extend(tuple(int(x) for x in g) for g in groups)
        teams.extend((int(w),) for w in rest)
    return out


def _network_members(design, rng, types=None):
    net = design.network
    if isinstance(net, Hypergraph):
        idx = {w.id: i for i, w in enumerate(net.workers)}
        return [tuple(idx[m] for m in t.members) for t in net.teams], net.N
    return synthetic_network(net, rng, types, design.assortativity), net.n_workers


def _hypergraph(members, y):
    return Hypergraph([Team(j, m, float(v)) for j, (m, v) in enumerate(zip(members, y))])


# ---------------------------------------------------------------- generators

def simulate_additive(design, rng=None, members=None):
    '''
    Draw one additive data set: worker effects (fixed or normal), network, and outputs
    ``lambda_n * sum(alpha) + eps`` with ``eps ~ Normal(0, sigma_n^2)`` independent of
    everything else.

    Returns:
        (Hypergraph, dict) data and truth record with keys 'alpha', 'lam', 'sigma', 'members'
    '''
    rng = np.random.default_rng(design.seed) if rng is None else rng
    tr = design.truth
    if members is None:
        members, N = _network_members(design, rng)
    else:
        N = 1 + max(max(m) for m in members)
    alpha = (np.asarray(tr.alpha, dtype=float) if tr.alpha is not None
             else rng.normal(tr.alpha_mean, tr.alpha_sd, N))
    if alpha.size < N:
        raise SimulationError('fewer effects than workers')
    y = np.empty(len(members))
    for j, m in enumerate(members):
        n = len(m)
        y[j] = tr.lam[n] * alpha[list(m)].sum()
    sd = np.array([tr.sigma[len(m)] for m in members], dtype=float)
    y = y + sd * rng.standard_normal(len(members))
    return _hypergraph(members, y), {'alpha': alpha, 'lam': dict(tr.lam), 'sigma': dict(tr.sigma),
                                     'members': members}


def simulate_mixture(design, rng=None, members=None):
    '''
    Draw one data set from the discrete-type model: types i.i.d. from the type
    probabilities, network (assortative within type when requested), and outputs from
    the family at the solo / pair parameters.

    Returns:
        (Hypergraph, dict) data and truth record with keys 'types', 'model', 'members'
    '''
    rng = np.random.default_rng(design.seed) if rng is None else rng
    model = design.truth
    fam = get_family(model.family)
    net = design.network
    N = net.N if isinstance(net, Hypergraph) else (net.n_workers if members is None
                                                    else 1 + max(max(m) for m in members))
    types = rng.choice(model.K, size=N, p=model.pi)
    if members is None:
        members, _ = _network_members(design, rng, types)
    y = np.empty(len(members))
    solo = np.array([len(m) == 1 for m in members])
    if np.any([len(m) > 2 for m in members]):
        raise SimulationError('the discrete-type model covers 1- and 2-worker teams only')
    if solo.any():
        k = types[[m[0] for m, s in zip(members, solo) if s]]
        y[solo] = fam.sample(model.theta1[k], rng)
    if (~solo).any():
        pr = np.array([m for m, s in zip(members, solo) if not s])
        y[~solo] = fam.sample(model.theta2[types[pr[:, 0]], types[pr[:, 1]]], rng)
    return _hypergraph(members, y), {'types': types, 'model': model, 'members': members}


# ---------------------------------------------------------------- Monte Carlo

def mixture_parameters(model):
    '''Named parameters in the layout of the Monte Carlo tables (types numbered from 1).'''
    K = model.K
    out = {}
    for k in range(K):
        out[f'Mean type {k + 1}'] = float(model.theta1[k, 0])
    for k in range(K):
        out[f'Var. type {k + 1}'] = float(model.theta1[k, 1])
    pairs = [(k, l) for l in range(K) for k in range(l + 1)]
    for k, l in pairs:
        out[f'Mean type ({k + 1},{l + 1})'] = float(model.theta2[k, l, 0])
    for k, l in pairs:
        out[f'Var. type ({k + 1},{l + 1})'] = float(model.theta2[k, l, 1])
    shares = model.type_shares() if model.variant != 'correlated' else None
    if shares is not None:
        for k in range(K - 1):
            out[f'Prop. type {k + 1}'] = float(shares[k])
    return out


def nearest_rank_quantile(x, p):
    '''Nearest-rank percentile: the smallest value with at least ``p`` of the mass at or below it.'''
    return float(np.quantile(np.asarray(x, dtype=float), p, method='inverted_cdf'))


@dataclass
class MonteCarloReport:
    names: list
    truth: dict
    estimates: np.ndarray
    failures: int = 0
    meta: dict = field(default_factory=dict)

    def summary(self):
        rows = []
        for j, nm in enumerate(self.names):
            col = self.estimates[:, j]
            rows.append({'parameter': nm, 'truth': self.truth.get(nm, float('nan')),
                         'mean': float(col.mean()), 'p2.5': nearest_rank_quantile(col, 0.025),
                         'p97.5': nearest_rank_quantile(col, 0.975)})
        return rows

    def row(self, name):
        return next(r for r in self.summary() if r['parameter'] == name)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(['parameter', 'truth', 'mean', 'p2.5', 'p97.5'])
        for r in self.summary():
            w.writerow([r['parameter']] + ['%.6g' % r[k] for k in ('truth', 'mean', 'p2.5', 'p97.5')])
        text = buf.getvalue()
        if path is not None:
            with open(path, 'w', newline='') as f:
                f.write(text)
        return text


class MixtureEstimator:
    '''Default Monte Carlo estimator: fit the discrete-type model and report its parameters.'''

    def __init__(self, K, family='lognormal', variant='independent', **config):
        self.K, self.family, self.variant, self.config = K, family, variant, config

    def __call__(self, h, seed=None):
        from .mixture.vem import fit_mixture
        model, _ = fit_mixture(h, self.K, self.family, self.variant, seed=seed, **self.config)
        return mixture_parameters(model)


def _replicate(args):
    design, estimator, members, seq = args
    rng = np.random.default_rng(seq)
    gen = simulate_mixture if design.generator == 'mixture' else simulate_additive
    h, truth = gen(design, rng, members)
    est_seed = int(rng.integers(2 ** 32))
    if 'seed' in inspect.signature(estimator).parameters:
        return estimator(h, seed=est_seed)
    return estimator(h)


def run_monte_carlo(design, estimator=None, replications=None, n_jobs=1, truth=None):
    '''
    Replicate data generation and estimation.

    Each replication draws from its own stream spawned from the design seed. With a
    synthetic network and ``design.fixed_network`` the memberships are generated once
    and reused, so only types (or effects) and outputs vary across replications.

    Arguments:
        design (SimDesign)
        estimator (callable): maps a Hypergraph (and a ``seed`` keyword) to a dict of
            named estimates; defaults to the mixture fit for mixture designs
        replications (int or None): overrides ``design.replications``
        n_jobs (int): worker processes
        truth (dict or None): true values by name; defaults to the mixture parameters

    Returns:
        (MonteCarloReport)
    '''
    R = design.replications if replications is None else int(replications)
    if R < 1:
        raise SimulationError('replications must be at least 1')
    if estimator is None:
        if design.generator != 'mixture':
            raise SimulationError('an estimator is required for additive designs')
        estimator = MixtureEstimator(design.truth.K, design.truth.family)
    if truth is None and design.generator == 'mixture':
        truth = mixture_parameters(design.truth)
    root = np.random.SeedSequence(design.seed)
    net_seq, rep_root = root.spawn(2)
    members = None
    # assortative networks depend on the types, so they are redrawn with them
    if (not isinstance(design.network, Hypergraph) and design.fixed_network
            and not (design.generator == 'mixture' and design.assortativity > 0)):
        members = synthetic_network(design.network, np.random.default_rng(net_seq))
    tasks = [(design, estimator, members, s) for s in rep_root.spawn(R)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as ex:
            results = list(ex.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]
    names = list(results[0])
    est = np.array([[r[n] for n in names] for r in results], dtype=float)
    return MonteCarloReport(names, dict(truth or {}), est,
                            meta={'replications': R, 'design': design.name, 'seed': design.seed})


# ---------------------------------------------------------------- named designs

def panel_a_truth():
    '''Two log-normal types: solo log means (0, 2), pair log means 0, 1, 4, all variances 0.5.'''
    th1 = np.array([[0.0, 0.5], [2.0, 0.5]])
    th2 = np.full((2, 2, 2), 0.5)
    th2[..., 0] = [[0.0, 1.0], [1.0, 4.0]]
    return MixtureModel(2, np.array([0.6, 0.4]), th1, th2, 'lognormal')


def panel_b_truth():
    '''Four log-normal types.'''
    m1 = [-0.52, -0.47, 0.07, 1.62]
    v1 = [0.01, 0.48, 1.74, 2.16]
    pm = {(0, 0): -0.53, (0, 1): -0.39, (1, 1): -0.53, (0, 2): 0.01, (1, 2): -0.11, (2, 2): 0.35,
          (0, 3): 1.38, (1, 3): 0.66, (2, 3): 1.36, (3, 3): 2.35}
    pv = {(0, 0): 0.01, (0, 1): 0.43, (1, 1): 0.01, (0, 2): 1.76, (1, 2): 1.18, (2, 2): 1.98,
          (0, 3): 2.09, (1, 3): 1.48, (2, 3): 1.91, (3, 3): 1.61}
    th2 = np.zeros((4, 4, 2))
    for (k, l), v in pm.items():
        th2[k, l, 0] = th2[l, k, 0] = v
        th2[k, l, 1] = th2[l, k, 1] = pv[(k, l)]
    th1 = np.column_stack([m1, v1])
    return MixtureModel(4, np.array([0.15, 0.20, 0.36, 0.29]), th1, th2, 'lognormal')


# solo / pair team counts and worker numbers of the two synthetic template networks
SMALL_NETWORK = NetworkSpec(156, {1: 748, 2: 148}, min_degree=5)
LARGE_NETWORK = NetworkSpec(921, {1: 4550, 2: 897}, min_degree=5)

DESIGNS = {
    'panelA1': (panel_a_truth, SMALL_NETWORK),
    'panelA2': (panel_a_truth, LARGE_NETWORK),
    'panelB1': (panel_b_truth, SMALL_NETWORK),
    'panelB2': (panel_b_truth, LARGE_NETWORK),
}


def get_design(name, replications=100, seed=0):
    '''Named Monte Carlo design: ``panelA1``/``panelA2`` (K=2), ``panelB1``/``panelB2`` (K=4), small/large network.'''
    try:
        truth, net = DESIGNS[name]
    except KeyError:
        raise SimulationError(f'unknown design {name!r}; choose from {sorted(DESIGNS)}') from None
    return SimDesign('mixture', truth(), net, replications=replications, seed=seed, name=name)
