"""
Tables and plot-ready files.

Every float is written with 6 significant digits and every mapping with sorted keys, so
emitting the same fit objects twice gives byte-identical files. Percentiles use the
nearest-rank convention; standard deviations use the population convention.
"""
import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

PERCENTILES = (10, 50, 90, 95, 99)
FLOAT_FMT = '%.6g'


def _pct(x, p):
    return float(np.quantile(np.asarray(x, dtype=float), p / 100.0, method='inverted_cdf'))


def _describe(y, counts):
    row = {'n_teams': int(len(y))}
    if len(y):
        row['mean_output'] = float(np.mean(y))
        row['sd_output'] = float(np.std(y))
        for p in PERCENTILES:
            row[f'p{p}_output'] = _pct(y, p)
    if len(counts):
        row['mean_productions'] = float(np.mean(counts))
        for p in PERCENTILES:
            row[f'p{p}_productions'] = _pct(counts, p)
    return row


def descriptive_stats(h):
    '''
    One row per team size and one for all teams: worker and team counts, mean and
    (population) standard deviation of output, output percentiles, and percentiles of
    the number of teams per worker.

    Returns:
        (list of dict)
    '''
    if h.J == 0:
        return []
    y = h.outputs
    sizes = h.sizes
    rows = []
    for n in sorted(set(sizes.tolist())):
        counts = [w.degree_by_size.get(n, 0) for w in h.workers if w.degree_by_size.get(n, 0) > 0]
        row = {'size': str(n), 'n_workers': len(counts)}
        row.update(_describe(y[sizes == n], counts))
        rows.append(row)
    counts = [w.degree for w in h.workers if w.degree > 0]
    row = {'size': 'all', 'n_workers': len(counts)}
    row.update(_describe(y, counts))
    rows.append(row)
    return rows


# ---------------------------------------------------------------- formatting

def fmt(x):
    if x is None:
        return ''
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(float(x)):
            return 'nan' if math.isnan(float(x)) else ('inf' if x > 0 else '-inf')
        return FLOAT_FMT % float(x)
    return str(x)


def canonical(obj):
    '''Copy of ``obj`` with floats rounded to 6 significant digits and arrays as lists.'''
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return float(FLOAT_FMT % x) if math.isfinite(x) else None
    return obj


def dumps(obj):
    return json.dumps(canonical(obj), sort_keys=True, indent=2) + '\n'


def table_csv(rows, columns=None):
    if not rows:
        return ''
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def matrix_long_csv(M, labels=None):
    '''Long-format matrix: one ``row_type,col_type,value`` line per cell, types from 1.'''
    M = np.asarray(M, dtype=float)
    labels = labels or [str(k + 1) for k in range(M.shape[0])]
    rows = [{'row_type': labels[i], 'col_type': labels[j], 'value': M[i, j]}
            for i in range(M.shape[0]) for j in range(M.shape[1])]
    return table_csv(rows, ['row_type', 'col_type', 'value'])


def matrix_csv(M, columns=None):
    M = np.asarray(M, dtype=float)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    if columns is not None:
        w.writerow(columns)
    for row in M:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------- bundle

def additive_record(fit, dec):
    rec = dec.to_dict()
    rec['spec'] = fit.spec
    rec['lambda'] = {str(k): v for k, v in sorted(fit.lam.items())}
    rec['mu'] = {str(k): v for k, v in sorted(fit.mu.items())}
    rec['sigma2'] = {str(k): v for k, v in sorted(fit.sigma2.items())}
    if fit.identified is not None:
        rec['identified'] = fit.identified.report()
    for n, c in dec.by_size.items():
        if c.heterogeneity is not None:
            rec['sizes'][str(n)]['shares'] = c.shares()
    return rec


def mixture_record(model, state, h=None):
    rec = {'model': model.to_dict(),
           'state': {'elbo': state.elbo, 'converged': state.converged, 'iterations': state.iterations,
                     'restarts_used': state.restarts_used, 'n_workers': len(state.worker_ids)}}
    if h is not None:
        from .mixture.summaries import nonlinear_variance_decomposition
        dec = nonlinear_variance_decomposition(model, state, h)
        for comp in dec.values():
            tot = comp['heterogeneity'] + comp['sorting'] + comp['nonlinearities'] + comp['other']
            comp['shares'] = {k: comp[k] / tot for k in ('heterogeneity', 'sorting', 'nonlinearities', 'other')}
        rec['variance_decomposition'] = {str(k): v for k, v in dec.items()}
    return rec


def posteriors_csv(state, h=None):
    '''Posterior type probabilities per worker, with solo and pair team counts when ``h`` is given.'''
    K = state.q.shape[1]
    cols = ['worker_id'] + [f'q{k + 1}' for k in range(K)]
    rows = [dict({'worker_id': w}, **{f'q{k + 1}': state.q[i, k] for k in range(K)})
            for i, w in enumerate(state.worker_ids)]
    if h is not None:
        deg = {w.id: w.degree_by_size for w in h.workers}
        for r in rows:
            d = deg.get(r['worker_id'], {})
            r['n_solo'], r['n_pair'] = d.get(1, 0), d.get(2, 0)
        cols += ['n_solo', 'n_pair']
    return table_csv(rows, cols)


def _sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def emit_bundle(path, h=None, additive=None, mixtures=None, allocations=None, proxies=None,
                meta=None):
    '''
    Write report files into directory ``path``.

    Arguments:
        h (Hypergraph or None): data, for ``descriptives.csv`` and mixture decompositions
        additive ((AdditiveFit, VarianceDecomposition) or None): ``additive.json``
        mixtures (dict K -> (MixtureModel, VariationalState)): ``mixture_K{k}.json``,
            ``posteriors_K{k}.csv`` and the sorting / mean-output matrices
        allocations (dict K -> AllocationSolution): ``matrix_allocation_K{k}.csv``
        proxies (TypeProxies or None): proxy matrices
        meta (dict or None): run metadata copied into the manifest

    Returns:
        (dict) the manifest, also written to ``manifest.json``
    '''
    from .mixture.summaries import mean_output_matrix, posterior_type_matrix
    from .allocation import allocation_matrix

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, text):
        (out / name).write_text(text)
        files[name] = {'sha256': _sha(text), 'bytes': len(text.encode())}

    if h is not None:
        put('descriptives.csv', table_csv(descriptive_stats(h)))
    if additive is not None:
        put('additive.json', dumps(additive_record(*additive)))
    for K, (model, state) in sorted((mixtures or {}).items()):
        put(f'mixture_K{K}.json', dumps(mixture_record(model, state, h)))
        put(f'posteriors_K{K}.csv', posteriors_csv(state, h))
        if h is not None and any(t.size == 2 for t in h.teams):
            put(f'matrix_sorting_K{K}.csv', matrix_long_csv(posterior_type_matrix(model, state, h)))
            M, _ = mean_output_matrix(model, state, h)
            put(f'matrix_mean_output_K{K}.csv', matrix_long_csv(M))
    for K, sol in sorted((allocations or {}).items()):
        put(f'matrix_allocation_K{K}.csv', matrix_long_csv(allocation_matrix(sol)))
        put(f'allocation_K{K}.json', dumps(sol.to_dict()))
    if proxies is not None and h is not None:
        S, M = proxies.matrices(h)
        put('matrix_proxy_sorting.csv', matrix_long_csv(S))
        put('matrix_proxy_mean_output.csv', matrix_long_csv(M))
    manifest = {'files': dict(sorted(files.items())), 'meta': meta or {},
                'conventions': {'float_format': FLOAT_FMT, 'percentiles': 'nearest rank',
                                'variance': 'population'}}
    text = dumps(manifest)
    (out / 'manifest.json').write_text(text)
    return canonical(manifest)
