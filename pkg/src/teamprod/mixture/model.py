"""
Discrete-type production on 1- and 2-worker teams: parameters, variational state, the
evidence lower bound and its coordinate updates.

Workers carry a type in ``{0, ..., K-1}``. A solo team's output has density
``f(y; theta1[k])`` and a pair's ``f(y; theta2[k, k'])`` with ``theta2`` symmetric. The
posterior over types is approximated by independent factors ``q_i``.
"""
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln, logsumexp

from .families import get_family

VARIANTS = ('independent', 'correlated', 'joint')


class MixtureError(ValueError):
    pass


# ---------------------------------------------------------------- data

class MixtureData:
    '''
    Array view of a hypergraph restricted to 1- and 2-worker teams.

    Arguments:
        h (Hypergraph): data; larger teams are ignored, every worker is kept
        family: output family (decides the preparation of outputs)
    '''

    def __init__(self, h, family):
        fam = get_family(family)
        self.family = fam
        # workers without small teams stay: they carry the prior and, for joint RE,
        # zero formation counts
        h = h.restrict_sizes({1, 2}, keep_isolated=True)
        self.worker_ids = tuple(w.id for w in h.workers)
        self.N = len(self.worker_ids)
        solo_w, solo_y, pa, pb, py = [], [], [], [], []
        idx = {w: i for i, w in enumerate(self.worker_ids)}
        for t in h.teams:
            if t.size == 1:
                solo_w.append(idx[t.members[0]])
                solo_y.append(t.output_adj)
            else:
                pa.append(idx[t.members[0]])
                pb.append(idx[t.members[1]])
                py.append(t.output_adj)
        self.solo_w = np.array(solo_w, dtype=int)
        self.pair_a = np.array(pa, dtype=int)
        self.pair_b = np.array(pb, dtype=int)
        y1, n1 = fam.prepare(np.array(solo_y, dtype=float))
        y2, n2 = fam.prepare(np.array(py, dtype=float))
        self.n_rounded = n1 + n2
        self.solo_y, self.pair_y = y1, y2
        self.st1 = fam.stats(y1)
        self.st2 = fam.stats(y2)
        self.J1, self.J2 = self.solo_w.size, self.pair_a.size
        self.n_solo = np.bincount(self.solo_w, minlength=self.N).astype(float)
        self.n_pair = (np.bincount(self.pair_a, minlength=self.N)
                       + np.bincount(self.pair_b, minlength=self.N)).astype(float)
        # unordered pair counts for team formation
        if self.J2:
            key = self.pair_a.astype(np.int64) * self.N + self.pair_b
            uk, cnt = np.unique(key, return_counts=True)
            self.upair_a, self.upair_b = uk // self.N, uk % self.N
            self.upair_n = cnt.astype(float)
        else:
            self.upair_a = self.upair_b = np.zeros(0, dtype=int)
            self.upair_n = np.zeros(0)
        self._colors = None
        self._adj = None

    @property
    def J(self):
        return self.J1 + self.J2

    def features(self):
        '''Per-worker covariates: constant, solo count, pair count and their zero indicators.'''
        n1, n2 = self.n_solo, self.n_pair
        return np.column_stack([np.ones(self.N), n1, n2, (n1 == 0).astype(float),
                                (n2 == 0).astype(float)])

    def pair_lists(self):
        '''For each worker, the pair teams it belongs to and the partner in each.'''
        if self._adj is None:
            teams = np.concatenate([np.arange(self.J2), np.arange(self.J2)])
            owner = np.concatenate([self.pair_a, self.pair_b])
            partner = np.concatenate([self.pair_b, self.pair_a])
            order = np.argsort(owner, kind='stable')
            bounds = np.searchsorted(owner[order], np.arange(self.N + 1))
            self._adj = (teams[order], partner[order], bounds)
        return self._adj

    def colors(self):
        '''
        Greedy colouring of the co-worker graph. Workers sharing a colour never share a
        team, so their factors can be updated together without approximation.
        '''
        if self._colors is None:
            teams, partner, bounds = self.pair_lists()
            color = -np.ones(self.N, dtype=int)
            deg = np.diff(bounds)
            for i in np.argsort(-deg, kind='stable'):
                used = set(color[partner[bounds[i]:bounds[i + 1]]].tolist())
                c = 0
                while c in used:
                    c += 1
                color[i] = c
            self._colors = [np.flatnonzero(color == c) for c in range(color.max() + 1)] if self.N else []
        return self._colors


# ---------------------------------------------------------------- parameters and state

@dataclass
class MixtureModel:
    '''
    Arguments:
        K (int): number of types
        pi (ndarray): type probabilities (K,), or logit coefficients (F, K) for correlated RE
        theta1 (ndarray): (K, 2) solo parameters
        theta2 (ndarray): (K, K, 2) pair parameters, symmetric in the first two axes
        family (str): 'lognormal' or 'negbin'
        variant (str): 'independent', 'correlated' or 'joint'
        rho1, rho2: Poisson team-formation rates (joint RE only)
        held (dict): cells whose parameters were held at previous values for lack of weight
    '''
    K: int
    pi: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    family: str = 'lognormal'
    variant: str = 'independent'
    rho1: np.ndarray = None
    rho2: np.ndarray = None
    held: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.K < 1:
            raise MixtureError('K must be positive')
        self.pi = np.asarray(self.pi, dtype=float)
        self.theta1 = np.asarray(self.theta1, dtype=float)
        self.theta2 = np.asarray(self.theta2, dtype=float)
        if self.variant not in VARIANTS:
            raise MixtureError(f'variant must be one of {VARIANTS}')
        if self.variant != 'correlated':
            if np.any(self.pi < 0) or not np.isclose(self.pi.sum(), 1.0):
                raise MixtureError('type probabilities must be a probability vector')
        if not np.allclose(self.theta2, self.theta2.transpose(1, 0, 2)):
            raise MixtureError('pair parameters must be symmetric')
        if self.rho2 is not None and not np.allclose(self.rho2, self.rho2.T):
            raise MixtureError('pair formation rates must be symmetric')

    @property
    def fam(self):
        return get_family(self.family)

    def log_prior(self, data):
        '''(N, K) log type probabilities for every worker.'''
        if self.variant == 'correlated':
            eta = data.features() @ self.pi
            return eta - logsumexp(eta, axis=1, keepdims=True)
        with np.errstate(divide='ignore'):
            return np.broadcast_to(np.log(self.pi), (data.N, self.K))

    def prior(self, data):
        return np.exp(self.log_prior(data))

    def type_shares(self, data=None):
        '''Type proportions (averaged over workers for correlated RE).'''
        if self.variant == 'correlated':
            return self.prior(data).mean(axis=0)
        return self.pi.copy()

    def implied_means(self):
        fam = self.fam
        return fam.mean(self.theta1), fam.mean(self.theta2)

    def permute(self, perm):
        '''Relabel types: new type ``k`` is old type ``perm[k]``.'''
        perm = np.asarray(perm)
        if self.variant == 'correlated':
            beta = self.pi[:, perm]
            pi = beta - beta[:, :1]
        else:
            pi = self.pi[perm]
        return replace(self, pi=pi, theta1=self.theta1[perm], theta2=self.theta2[perm][:, perm],
                       rho1=None if self.rho1 is None else self.rho1[perm],
                       rho2=None if self.rho2 is None else self.rho2[perm][:, perm],
                       held=dict(self.held))

    def to_dict(self):
        d = {'K': self.K, 'family': self.family, 'variant': self.variant,
             'pi': self.pi.tolist(), 'theta1': self.theta1.tolist(), 'theta2': self.theta2.tolist(),
             'held': {str(k): v for k, v in sorted(self.held.items())}}
        if self.rho1 is not None:
            d['rho1'] = self.rho1.tolist()
            d['rho2'] = self.rho2.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(int(d['K']), np.array(d['pi']), np.array(d['theta1']), np.array(d['theta2']),
                   d.get('family', 'lognormal'), d.get('variant', 'independent'),
                   None if d.get('rho1') is None else np.array(d['rho1']),
                   None if d.get('rho2') is None else np.array(d['rho2']))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class VariationalState:
    q: np.ndarray
    worker_ids: tuple = ()
    elbo_trace: list = field(default_factory=list)
    converged: bool = False
    restarts_used: int = 0
    iterations: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if np.any(self.q < -1e-12) or not np.allclose(self.q.sum(axis=1), 1.0):
            raise MixtureError('every q row must be a probability vector')

    @property
    def elbo(self):
        return self.elbo_trace[-1] if self.elbo_trace else None

    def permute(self, perm):
        return replace(self, q=self.q[:, perm], elbo_trace=list(self.elbo_trace))


# ---------------------------------------------------------------- likelihood pieces

def team_logliks(model, data):
    '''Solo (J1, K) and pair (J2, K, K) log densities at the current parameters.'''
    fam = data.family
    L1 = fam.logpdf(model.theta1, data.st1) if data.J1 else np.zeros((0, model.K))
    L2 = fam.logpdf(model.theta2, data.st2) if data.J2 else np.zeros((0, model.K, model.K))
    return L1, L2


def _xlogy_q(q, logp):
    # sum q * logp with 0 * log 0 = 0
    with np.errstate(invalid='ignore'):
        t = np.where(q > 0, q * logp, 0.0)
    return t.sum()


def _formation_terms(model, data, q):
    # expected Poisson log likelihood of solo counts and of all unordered pair counts
    rho1, rho2 = model.rho1, model.rho2
    with np.errstate(divide='ignore'):
        lr1, lr2 = np.log(rho1), np.log(rho2)
    solo = np.sum(q * (data.n_solo[:, None] * np.where(rho1 > 0, lr1, 0.0) - rho1)) \
        - gammaln(data.n_solo + 1).sum()
    s = q.sum(axis=0)
    pair_w = 0.5 * (np.outer(s, s) - q.T @ q)
    pair = -np.sum(pair_w * rho2)
    if data.upair_n.size:
        qa, qb = q[data.upair_a], q[data.upair_b]
        pair += np.einsum('j,jk,kl,jl->', data.upair_n, qa, np.where(rho2 > 0, lr2, 0.0), qb)
        pair -= gammaln(data.upair_n + 1).sum()
    return solo + pair


def elbo(model, state, data, logliks=None):
    '''
    Evidence lower bound: q-weighted team log likelihoods plus
    ``sum_i sum_k q_i(k) (ln pi_i(k) - ln q_i(k))``, plus the q-weighted team-formation
    log likelihood for joint RE.
    '''
    q = state.q if isinstance(state, VariationalState) else np.asarray(state)
    if q.shape != (data.N, model.K):
        raise MixtureError(f'q has shape {q.shape}, expected {(data.N, model.K)}')
    if np.any(q.sum(axis=1) <= 0):
        raise MixtureError('a q row has zero mass')
    L1, L2 = team_logliks(model, data) if logliks is None else logliks
    val = 0.0
    if data.J1:
        val += _xlogy_q(q[data.solo_w], L1)
    if data.J2:
        val += np.einsum('jk,jkl,jl->', q[data.pair_a], L2, q[data.pair_b])
    logpi = model.log_prior(data)
    with np.errstate(divide='ignore'):
        logq = np.log(q)
    val += _xlogy_q(q, logpi) - _xlogy_q(q, logq)
    if model.variant == 'joint':
        val += _formation_terms(model, data, q)
    return float(val)


def _solo_messages(data, L1, K):
    S = np.zeros((data.N, K))
    if data.J1:
        np.add.at(S, data.solo_w, L1)
    return S


def _normalise(logits):
    if np.any(np.all(~np.isfinite(logits) | (logits == -np.inf), axis=1)):
        raise MixtureError('a worker has zero posterior mass on every type')
    q = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    return q / q.sum(axis=1, keepdims=True)


def _formation_local(model, data, q, s, i):
    # terms of the joint-RE formation likelihood that involve q_i (pairs enter below)
    rho1, rho2 = model.rho1, model.rho2
    with np.errstate(divide='ignore'):
        lr1 = np.where(rho1 > 0, np.log(rho1), 0.0)
    return data.n_solo[i] * lr1 - rho1 - rho2 @ (s - q[i])


def update_q(model, state, data, worker, logliks=None):
    '''
    Coordinate-ascent update of one worker's factor:
    ``q_i(k) ~ pi_i(k) exp(sum over i's teams of E_q[ln f(y_j | k, partner type)])``
    (plus the formation terms for joint RE). Exact maximiser of the bound in ``q_i``.

    Returns:
        (ndarray) the new ``q_i``; ``state`` is not modified
    '''
    q = state.q if isinstance(state, VariationalState) else np.asarray(state)
    L1, L2 = team_logliks(model, data) if logliks is None else logliks
    i = int(worker)
    logit = np.array(model.log_prior(data)[i], dtype=float)
    if data.J1:
        logit += L1[data.solo_w == i].sum(axis=0)
    teams, partner, bounds = data.pair_lists()
    ts, ps = teams[bounds[i]:bounds[i + 1]], partner[bounds[i]:bounds[i + 1]]
    if ts.size:
        # theta2 symmetric, so the own type is always the first axis
        logit += np.einsum('jkl,jl->k', L2[ts], q[ps])
    if model.variant == 'joint':
        logit += _formation_local(model, data, q, q.sum(axis=0), i)
        if ts.size:
            with np.errstate(divide='ignore'):
                lr2 = np.where(model.rho2 > 0, np.log(model.rho2), 0.0)
            logit += (q[ps] @ lr2).sum(axis=0)
    return _normalise(logit[None, :])[0]


def e_step(model, q, data, mode='sequential', logliks=None):
    '''
    One sweep of factor updates.

    ``sequential`` updates colour classes of the co-worker graph in turn (or single
    workers for joint RE, whose formation term links every pair); each update maximises
    the bound exactly, so the bound never decreases. ``parallel`` updates every worker
    from the previous sweep's factors, which is not guaranteed to be monotone.
    '''
    L1, L2 = team_logliks(model, data) if logliks is None else logliks
    K = model.K
    logprior = model.log_prior(data)
    base = logprior + _solo_messages(data, L1, K)
    q = q.copy()
    teams, partner, bounds = data.pair_lists()
    owner = np.repeat(np.arange(data.N), np.diff(bounds))

    if model.variant == 'joint':
        if mode == 'parallel':
            return _joint_parallel(model, data, q, base, L2, teams, partner, owner)
        with np.errstate(divide='ignore'):
            lr2 = np.where(model.rho2 > 0, np.log(model.rho2), 0.0)
        s = q.sum(axis=0)
        for i in range(data.N):
            sl = slice(bounds[i], bounds[i + 1])
            logit = base[i] + _formation_local(model, data, q, s, i)
            if bounds[i + 1] > bounds[i]:
                ps = partner[sl]
                logit = logit + np.einsum('jkl,jl->k', L2[teams[sl]], q[ps]) + (q[ps] @ lr2).sum(axis=0)
            new = _normalise(logit[None, :])[0]
            s += new - q[i]
            q[i] = new
        return q

    def messages(workers_mask):
        sel = workers_mask[owner]
        M = np.zeros((data.N, K))
        if sel.any():
            np.add.at(M, owner[sel], np.einsum('jkl,jl->jk', L2[teams[sel]], q[partner[sel]]))
        return M

    if mode == 'parallel':
        return _normalise(base + messages(np.ones(data.N, dtype=bool)))
    for cls in data.colors():
        mask = np.zeros(data.N, dtype=bool)
        mask[cls] = True
        M = messages(mask)
        q[cls] = _normalise(base[cls] + M[cls])
    return q


def _joint_parallel(model, data, q, base, L2, teams, partner, owner):
    with np.errstate(divide='ignore'):
        lr2 = np.where(model.rho2 > 0, np.log(model.rho2), 0.0)
        lr1 = np.where(model.rho1 > 0, np.log(model.rho1), 0.0)
    s = q.sum(axis=0)
    logit = base + data.n_solo[:, None] * lr1 - model.rho1 - (s[None, :] - q) @ model.rho2
    if teams.size:
        contrib = np.einsum('jkl,jl->jk', L2[teams], q[partner]) + q[partner] @ lr2
        np.add.at(logit, owner, contrib)
    return _normalise(logit)


# ---------------------------------------------------------------- M-step

def _pair_weights(q, data):
    # (J2, K, K) weights of the unordered cells: (k,k') and (k',k) pooled on both entries
    W = q[data.pair_a][:, :, None] * q[data.pair_b][:, None, :]
    Ws = W + W.transpose(0, 2, 1)
    K = q.shape[1]
    d = np.arange(K)
    Ws[:, d, d] = W[:, d, d]
    return Ws


def _fit_logit(beta, X, q, ridge=1e-6, max_iter=50, tol=1e-10):
    # weighted multinomial logit, type 0 is the reference; accept steps only if the
    # unpenalised objective does not fall
    N, F = X.shape
    K = q.shape[1]

    def obj(b):
        eta = X @ b
        return float(np.sum(q * (eta - logsumexp(eta, axis=1, keepdims=True))))

    b = beta.copy()
    f0 = obj(b)
    for _ in range(max_iter):
        eta = X @ b
        P = np.exp(eta - logsumexp(eta, axis=1, keepdims=True))
        G = (X.T @ (q - P))[:, 1:] - 2 * ridge * b[:, 1:]
        H = np.zeros((F * (K - 1), F * (K - 1)))
        for a in range(1, K):
            for c in range(1, K):
                w = P[:, a] * ((a == c) - P[:, c])
                H[(a - 1) * F:a * F, (c - 1) * F:c * F] = (X * w[:, None]).T @ X
        H += 2 * ridge * np.eye(H.shape[0])
        step = np.linalg.solve(H, G.T.reshape(-1)).reshape(K - 1, F).T
        t = 1.0
        while t > 1e-10:
            cand = b.copy()
            cand[:, 1:] += t * step
            f1 = obj(cand)
            if f1 >= f0 - 1e-12 * abs(f0):
                break
            t *= 0.5
        else:
            break
        if f1 < f0:
            break
        b, improvement, f0 = cand, f1 - f0, f1
        if improvement < tol * max(1.0, abs(f0)):
            break
    return b


def m_step(model, q, data, weight_floor=1e-6):
    '''
    Weighted maximum likelihood for (pi, theta, rho) given the factors.

    Solo cells are weighted by ``q_i(k)``, pair cells by ``q_i(k) q_i'(k')`` with the
    two orderings of a mixed pair pooled. A cell whose total weight is below
    ``weight_floor * J`` keeps its previous parameters and is recorded in ``held``.
    '''
    fam = data.family
    K = model.K
    floor = weight_floor * max(data.J, 1)
    held = {}
    theta1 = model.theta1.copy()
    if data.J1:
        W1 = q[data.solo_w]
        for k in range(K):
            if W1[:, k].sum() < floor:
                held[f'theta1[{k}]'] = float(W1[:, k].sum())
                continue
            theta1[k] = fam.fit_cell(W1[:, k], data.st1, model.theta1[k])
    theta2 = model.theta2.copy()
    if data.J2:
        W2 = _pair_weights(q, data)
        for k in range(K):
            for l in range(k, K):
                w = W2[:, k, l]
                if w.sum() < floor:
                    held[f'theta2[{k},{l}]'] = float(w.sum())
                    continue
                theta2[k, l] = theta2[l, k] = fam.fit_cell(w, data.st2, model.theta2[k, l])
    if model.variant == 'correlated':
        pi = _fit_logit(model.pi, data.features(), q)
    else:
        pi = q.mean(axis=0)
        pi = pi / pi.sum()
    for k in np.flatnonzero(q.sum(axis=0) < floor):
        held.setdefault(f'type[{k}]', float(q[:, k].sum()))
    rho1 = rho2 = None
    if model.variant == 'joint':
        rho1, rho2 = _formation_mstep(model, q, data)
    return replace(model, pi=pi, theta1=theta1, theta2=theta2, rho1=rho1, rho2=rho2, held=held)


def _formation_mstep(model, q, data):
    mass = q.sum(axis=0)
    rho1 = np.where(mass > 0, (q * data.n_solo[:, None]).sum(axis=0) / np.where(mass > 0, mass, 1), model.rho1)
    s = mass
    expo = 0.5 * (np.outer(s, s) - q.T @ q)
    C = np.zeros((model.K, model.K))
    if data.upair_n.size:
        C = np.einsum('j,jk,jl->kl', data.upair_n, q[data.upair_a], q[data.upair_b])
    Cs, Es = C + C.T, expo + expo.T
    d = np.arange(model.K)
    Cs[d, d] = C[d, d]
    Es[d, d] = expo[d, d]
    rho2 = np.where(Es > 1e-300, Cs / np.where(Es > 1e-300, Es, 1.0), model.rho2)
    return rho1, 0.5 * (rho2 + rho2.T)
