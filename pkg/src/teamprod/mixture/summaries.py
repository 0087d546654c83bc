"""
Reports derived from a fitted discrete-type model: type-pair proportions, mean output
by type pair, the variance decomposition with a nonlinearity term, type proxies and
out-of-sample matrices.
"""
import numpy as np

from ..hypergraph import Hypergraph, _id_key


class ProxyError(ValueError):
    pass


def _sym_normalise(M):
    M = 0.5 * (M + M.T)
    tot = M.sum()
    return M / tot


def _pair_index(h_or_data, worker_ids):
    idx = {w: i for i, w in enumerate(worker_ids)}
    a, b, y = [], [], []
    for t in h_or_data.teams:
        if t.size == 2:
            a.append(idx[t.members[0]])
            b.append(idx[t.members[1]])
            y.append(t.output_adj)
    return np.array(a, dtype=int), np.array(b, dtype=int), np.array(y, dtype=float)


def _q(state):
    return state.q if hasattr(state, 'q') else np.asarray(state)


def posterior_type_matrix(model, state, h):
    '''
    K x K proportions of type pairs in 2-worker teams: the sum over pair teams of
    ``q_i q_i'^T``, symmetrised and normalised to sum to one.
    '''
    a, b, _ = _pair_index(h, state.worker_ids)
    if a.size == 0:
        raise ValueError('no 2-worker teams')
    q = _q(state)
    return _sym_normalise(q[a].T @ q[b])


def mean_output_matrix(model, state, h, min_weight=1e-8):
    '''
    q-weighted average observed output of 2-worker teams by type pair.

    Cells with total weight below ``min_weight`` times the number of pair teams fall
    back to the model-implied mean and are listed in the returned flags.

    Returns:
        (ndarray, list) matrix and the (k, l) cells that used the fallback
    '''
    a, b, y = _pair_index(h, state.worker_ids)
    if a.size == 0:
        raise ValueError('no 2-worker teams')
    q = _q(state)
    W = q[a][:, :, None] * q[b][:, None, :]
    W = 0.5 * (W + W.transpose(0, 2, 1))
    den = W.sum(axis=0)
    num = np.einsum('jkl,j->kl', W, y)
    _, implied = model.implied_means()
    empty = den < min_weight * a.size
    out = np.where(empty, implied, num / np.where(empty, 1.0, den))
    flags = [(int(k), int(l)) for k, l in zip(*np.nonzero(empty)) if k <= l]
    return out, flags


def _weighted_var(values, weights):
    w = weights / weights.sum()
    m = np.sum(w * values)
    return float(np.sum(w * (values - m) ** 2))


def nonlinear_variance_decomposition(model, state, h):
    '''
    Variance decomposition of solo and pair output in levels.

    For each size, total is the population variance of observed output and "other"
    is total minus the variance of the conditional mean of output given types, where
    types are distributed as the q-weighted (and, for pairs, symmetrised) empirical
    type distribution. For pairs the conditional mean is projected on
    ``c + a(k) + a(k')``; heterogeneity is ``2 Var(a)``, sorting ``2 Cov(a(k), a(k'))``
    and nonlinearities the remaining variance of the conditional mean. Conditional
    means are the model-implied means.

    Returns:
        (dict) size -> components, plus the fitted additive type effects for pairs
    '''
    q = _q(state)
    idx = {w: i for i, w in enumerate(state.worker_ids)}
    mu1, mu2 = model.implied_means()
    out = {}
    solo = [(idx[t.members[0]], t.output_adj) for t in h.teams if t.size == 1]
    if solo:
        w_i = np.array([s[0] for s in solo])
        y1 = np.array([s[1] for s in solo])
        p1 = q[w_i].sum(axis=0)
        vc = _weighted_var(mu1, p1)
        tot = float(np.var(y1))
        out[1] = {'total': tot, 'heterogeneity': vc, 'sorting': 0.0, 'nonlinearities': 0.0,
                  'other': tot - vc, 'n_teams': len(solo)}
    a, b, y2 = _pair_index(h, state.worker_ids)
    if a.size:
        P = q[a].T @ q[b]
        P = 0.5 * (P + P.T) / a.size
        K = model.K
        kk, ll = np.meshgrid(np.arange(K), np.arange(K), indexing='ij')
        w = P.ravel()
        X = np.zeros((K * K, K + 1))
        X[:, 0] = 1.0
        X[np.arange(K * K), 1 + kk.ravel()] += 1.0
        X[np.arange(K * K), 1 + ll.ravel()] += 1.0
        sw = np.sqrt(w)
        coef, *_ = np.linalg.lstsq(X * sw[:, None], mu2.ravel() * sw, rcond=None)
        lin = X @ coef
        eff = coef[1:]
        marg = P.sum(axis=1)
        var_a = _weighted_var(eff, marg)
        ma = marg @ eff
        cov = float(np.sum(P * np.outer(eff - ma, eff - ma)))
        v_cond = _weighted_var(mu2.ravel(), w)
        v_lin = _weighted_var(lin, w)
        tot = float(np.var(y2))
        # a projection residual: nonnegative up to rounding
        nonlin = max(v_cond - v_lin, 0.0)
        out[2] = {'total': tot, 'heterogeneity': 2 * var_a, 'sorting': 2 * cov,
                  'nonlinearities': nonlin,
                  'other': tot - v_cond, 'n_teams': int(a.size), 'type_effects': (eff - ma).tolist()}
    return out


class TypeProxies:
    '''Proxy type labels from binned mean solo output, and the matrices they imply.'''

    def __init__(self, labels, bins, means):
        self.labels = labels
        self.bins = bins
        self.means = means

    def matrices(self, h):
        '''Sorting (proportions) and mean-output matrices over pairs of labelled workers.'''
        B = self.bins
        cnt = np.zeros((B, B))
        tot = np.zeros((B, B))
        for t in h.teams:
            if t.size != 2 or t.members[0] not in self.labels or t.members[1] not in self.labels:
                continue
            k, l = self.labels[t.members[0]], self.labels[t.members[1]]
            for u, v in ((k, l), (l, k)):
                cnt[u, v] += 0.5
                tot[u, v] += 0.5 * t.output_adj
        if cnt.sum() == 0:
            raise ProxyError('no 2-worker teams between labelled workers')
        with np.errstate(invalid='ignore', divide='ignore'):
            mean = np.where(cnt > 0, tot / cnt, np.nan)
        return cnt / cnt.sum(), mean


def type_proxies(h, n_bins=4, min_solo=5, family=None):
    '''
    Bin workers with at least ``min_solo`` solo teams into ``n_bins`` equal-count bins of
    mean solo output (log output for a log-normal family). Workers are ranked by
    (mean, worker id), so ties at a bin boundary go to the lower id first. Bin ``b``
    holds ranks ``r`` with ``floor(r * n_bins / n) == b``.

    Returns:
        (TypeProxies)
    '''
    sums, counts = {}, {}
    logs = family is not None and getattr(family, 'name', family) in ('lognormal', 'log-normal')
    for t in h.teams:
        if t.size == 1:
            w = t.members[0]
            y = np.log(t.output_adj) if logs else t.output_adj
            sums[w] = sums.get(w, 0.0) + y
            counts[w] = counts.get(w, 0) + 1
    eligible = [w for w in counts if counts[w] >= min_solo]
    if len(eligible) < n_bins or not eligible:
        raise ProxyError(f'{len(eligible)} workers with at least {min_solo} solo teams, '
                         f'fewer than {n_bins} bins')
    means = {w: sums[w] / counts[w] for w in eligible}
    order = sorted(eligible, key=lambda w: (means[w], _id_key(w)))
    n = len(order)
    labels = {w: (r * n_bins) // n for r, w in enumerate(order)}
    return TypeProxies(labels, n_bins, means)


def posterior_predict(model, state, h_future):
    '''
    Sorting and mean-output matrices on a later sample, with the type factors frozen at
    their fitted values. Teams with a worker absent from the fit are dropped.

    Returns:
        (dict) keys 'sorting', 'mean_output', 'fallback_cells', 'n_used', 'n_dropped'
    '''
    known = set(state.worker_ids)
    pairs = [t for t in h_future.teams if t.size == 2]
    keep = [t for t in pairs if all(m in known for m in t.members)]
    if not keep:
        raise ValueError('no future 2-worker team consists of fitted workers')
    sub = Hypergraph(keep)
    S = posterior_type_matrix(model, state, sub)
    M, flags = mean_output_matrix(model, state, sub)
    return {'sorting': S, 'mean_output': M, 'fallback_cells': flags, 'n_used': len(keep),
            'n_dropped': len(pairs) - len(keep)}
