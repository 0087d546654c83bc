"""
Additive team production: output of an n-worker team is ``lambda_n`` times the sum of
its members' effects plus an independent shock.

The estimator follows the fixed-effects route: team-size scales from quasi-differenced
moment conditions, worker effects by least squares on the identified subnetwork, and
variance components with a homoskedastic (per team size) bias correction.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.stats import rankdata

from ._linalg import FactorizationError, LeastSquares, hutchinson, matrix_rank
from .identification import (DesignSystem, IdentificationError, build_design,
                             identified_workers, prune_to_identified)

SPECS = ('levels', 'logs', 'ranks')


class EstimationError(ValueError):
    '''Estimation failure; ``stage`` names the pipeline step that failed.'''

    def __init__(self, msg, stage=None):
        self.stage = stage
        super().__init__(f'[{stage}] {msg}' if stage else msg)


class NegativeComponentWarning(UserWarning):
    pass


# ---------------------------------------------------------------- team-size effects

def _size_blocks(sizes):
    return {int(n): np.flatnonzero(sizes == n) for n in np.unique(sizes)}


def _annihilator(ds):
    try:
        return LeastSquares(ds.A, full_rank=True)
    except FactorizationError as e:
        raise IdentificationError(
            'worker effects are not identified on this design; prune it first') from e


def _moment_system(ds, vectors):
    # G[m, k] = Z_m' (I - A A^+) v_k
    ls = _annihilator(ds)
    blocks = _size_blocks(ds.sizes)
    G = np.empty((len(blocks), len(vectors)))
    for k, v in enumerate(vectors):
        r = ls.residual(v)
        for m, n in enumerate(blocks):
            G[m, k] = r[blocks[n]].sum()
    return G, list(blocks)


def _solve_moments(G, rhs, scale, what):
    if G.shape[1] == 0:
        return np.zeros(0)
    s = np.linalg.svd(G, compute_uv=False)
    if s[0] <= 1e-10 * scale or s[-1] <= 1e-8 * s[0]:
        raise EstimationError(f'{what} not identified: the moment system is singular', 'estimate_lambda'
                              if what.startswith('lambda') else 'estimate_mu')
    sol, *_ = np.linalg.lstsq(G, rhs, rcond=None)
    return sol


def lambda_from_design(ds, y=None):
    '''Team-size scales from the design of an identified subnetwork (see :func:`estimate_lambda`).'''
    y = ds.y if y is None else np.asarray(y, dtype=float)
    blocks = _size_blocks(ds.sizes)
    sizes = list(blocks)
    if sizes == [1]:
        return {1: 1.0}
    if 1 not in blocks:
        raise EstimationError('lambda not identified: no solo teams to anchor the normalisation',
                              'estimate_lambda')
    # D^{-1} Y = sum_n gamma_n Y^(n), gamma_n = 1 / lambda_n, gamma_1 = 1
    vecs = []
    for n in sizes:
        v = np.zeros_like(y)
        v[blocks[n]] = y[blocks[n]]
        vecs.append(v)
    G, _ = _moment_system(ds, vecs)
    scale = np.linalg.norm(y) * np.sqrt(y.size) + 1e-300
    gamma = _solve_moments(G[:, 1:], -G[:, 0], scale, 'lambda')
    if np.any(gamma <= 0):
        raise EstimationError(f'non-positive inverse team scale estimates {gamma}', 'estimate_lambda')
    lam = {1: 1.0}
    lam.update({n: float(1.0 / g) for n, g in zip(sizes[1:], gamma)})
    return lam


def estimate_lambda(h):
    '''
    Team-size scales ``lambda_n`` (``lambda_1 = 1``) from the quasi-differenced moments
    ``Z_n' (I - A A^+) D_lambda^{-1} Y = 0``, which are linear in ``1 / lambda_n``.

    ``h`` must be an identified subnetwork. Raises :class:`EstimationError` when the
    moment system is singular (the scales are then not identified).
    '''
    return lambda_from_design(build_design(h))


def mu_from_design(ds, y):
    '''Team-size intercepts of the log specification (``mu_1 = 0``).'''
    blocks = _size_blocks(ds.sizes)
    sizes = list(blocks)
    if sizes == [1]:
        return {1: 0.0}
    if 1 not in blocks:
        raise EstimationError('mu not identified: no solo teams to anchor mu_1 = 0', 'estimate_mu')
    vecs = [np.asarray(y, dtype=float)]
    for n in sizes[1:]:
        z = np.zeros(y.size)
        z[blocks[n]] = 1.0
        vecs.append(z)
    G, _ = _moment_system(ds, vecs)
    scale = np.sqrt(y.size) * np.sqrt(y.size)
    mu = _solve_moments(G[:, 1:], G[:, 0], scale, 'mu')
    out = {1: 0.0}
    out.update({n: float(m) for n, m in zip(sizes[1:], mu)})
    return out


# ---------------------------------------------------------------- worker effects, shock variances

def estimate_alpha(ds, y=None):
    '''
    Least-squares worker effects ``(B'B)^{-1} B'Y`` through a sparse LU of ``B'B``.

    Returns:
        (ndarray, ndarray) effects in ``ds.col_index`` order, and residuals
    '''
    y = ds.y if y is None else np.asarray(y, dtype=float)
    try:
        ls = LeastSquares(ds.B, full_rank=True)
    except FactorizationError as e:
        raise IdentificationError(
            'B\'B is singular: the design was not pruned to its identified subnetwork') from e
    alpha = ls.coef(y)
    return alpha, y - ds.B @ alpha


def estimate_sigma2(ds, y, n, dense_max_cells=4_000_000):
    '''
    Shock variance of size-``n`` teams,
    ``Y_n' (I - A_n A_n^+) Y_n / Trace(I - A_n A_n^+)``, where ``A_n`` keeps the size-n rows.

    The trace equals ``J_n - rank(A_n)``. Small blocks are handled densely; large ones by
    a sparse rank computation and ridge-refined sparse LU solves.
    '''
    y = np.asarray(y, dtype=float)
    rows = np.flatnonzero(ds.sizes == n)
    if rows.size == 0:
        raise EstimationError(f'no teams of size {n}', 'estimate_sigma2')
    An = ds.A[rows]
    used = np.flatnonzero(np.diff(An.tocsc().indptr) > 0)
    An = An[:, used].tocsr()
    yn = y[rows]
    if An.shape[0] * An.shape[1] <= dense_max_cells:
        Ad = An.toarray()
        coef, *_ = np.linalg.lstsq(Ad, yn, rcond=None)
        resid = yn - Ad @ coef
        rank = np.linalg.matrix_rank(Ad)
    else:
        resid = LeastSquares(An, full_rank=False).residual(yn)
        rank = matrix_rank(An)
    df = rows.size - rank
    if df <= 0:
        raise EstimationError(f'sigma^2 not estimable for size {n}: no residual degrees of freedom',
                              'estimate_sigma2')
    return float(max(resid @ resid, 0.0) / df)


# ---------------------------------------------------------------- quadratic forms

class QuadForm:
    '''
    Symmetric N x N matrix ``Q = diag(d) + sum_l s_l u_l u_l' + sum_g s_g G_g' H G_g / J_g``
    where ``H`` centres over the J_g rows of the sparse block ``G_g``. Only products with
    vectors and blocks of vectors are formed.
    '''

    def __init__(self, dim, diag=None, lowrank=(), centred_grams=()):
        self.dim = dim
        self.diag = None if diag is None else np.asarray(diag, dtype=float)
        self.lowrank = [(float(s), np.asarray(u, dtype=float)) for s, u in lowrank]
        self.grams = [(float(s), sp.csr_matrix(G)) for s, G in centred_grams]

    @classmethod
    def zero(cls, dim):
        return cls(dim)

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        if vec:
            X = X[:, None]
        out = np.zeros_like(X)
        if self.diag is not None:
            out += self.diag[:, None] * X
        for s, u in self.lowrank:
            out += s * np.outer(u, u @ X)
        for s, G in self.grams:
            GX = G @ X
            GX = GX - GX.mean(axis=0, keepdims=True)
            out += s * (G.T @ GX) / G.shape[0]
        return out[:, 0] if vec else out

    def value(self, a):
        a = np.asarray(a, dtype=float)
        return float(a @ self.apply(a))

    def __add__(self, other):
        d = None
        if self.diag is not None or other.diag is not None:
            d = np.zeros(self.dim)
            if self.diag is not None:
                d = d + self.diag
            if other.diag is not None:
                d = d + other.diag
        return QuadForm(self.dim, d, self.lowrank + other.lowrank, self.grams + other.grams)

    def __mul__(self, c):
        return QuadForm(self.dim, None if self.diag is None else c * self.diag,
                        [(c * s, u) for s, u in self.lowrank], [(c * s, G) for s, G in self.grams])

    __rmul__ = __mul__

    def __sub__(self, other):
        return self + (-1.0) * other

    def dense(self):
        return self.apply(np.eye(self.dim))


def size_quadforms(ds, n, scale=1.0):
    '''
    Heterogeneity and sorting quadratic forms for size-``n`` teams.

    Member positions are symmetrised: every member slot of every size-n team is pooled,
    so heterogeneity is ``scale^2 * n * Var(alpha over member slots)`` and sorting is the
    variance of the (scaled) team sum minus heterogeneity. Variances use the J_n
    denominator.

    Returns:
        (QuadForm, QuadForm) heterogeneity, sorting
    '''
    rows = np.flatnonzero(ds.sizes == n)
    N = ds.A.shape[1]
    if rows.size == 0:
        return QuadForm.zero(N), QuadForm.zero(N)
    An = ds.A[rows]
    c = np.asarray(An.sum(axis=0)).ravel() / (n * rows.size)
    het = QuadForm(N, diag=scale ** 2 * n * c, lowrank=[(-scale ** 2 * n, c)])
    signal = QuadForm(N, centred_grams=[(scale ** 2, An)])
    return het, signal - het


# ---------------------------------------------------------------- bias correction

@dataclass
class CorrectedComponent:
    raw: float
    bias: float
    corrected: float
    method: str
    trace_se: float = 0.0


def bias_correct(alpha, ds, Q, sigma2, draws=1000, seed=None, dense_max=2000, rng=None):
    '''
    Bias-corrected estimate of ``alpha' Q alpha``.

    The plug-in value ``alpha_hat' Q alpha_hat`` overstates the quadratic form by
    ``Trace((B'B)^{-1} Q (B'B)^{-1} B' Omega B)`` with ``Omega`` diagonal, equal to the
    shock variance of each team's size. The trace is computed exactly when the design
    has at most ``dense_max`` rows, and otherwise with ``draws`` Rademacher probes.

    Arguments:
        alpha (ndarray): estimated effects
        ds (DesignSystem): the (scaled) design the effects were estimated on
        Q (QuadForm): quadratic form
        sigma2 (dict): shock variance by team size
        draws (int): Hutchinson probes
        seed: seed for the probes (ignored when ``rng`` is given)

    Returns:
        (CorrectedComponent)
    '''
    if draws < 1:
        raise ValueError('draws must be at least 1')
    sizes = np.unique(ds.sizes)
    missing = [int(n) for n in sizes if int(n) not in sigma2]
    if missing:
        raise EstimationError(f'shock variance unavailable for sizes {missing}', 'bias_correct')
    raw = Q.value(alpha)
    if not Q.lowrank and not Q.grams and (Q.diag is None or not np.any(Q.diag)):
        return CorrectedComponent(raw, 0.0, raw, 'exact')
    omega_half = np.sqrt(np.array([sigma2[int(n)] for n in ds.sizes]))
    ls = LeastSquares(ds.B, full_rank=True, refine=1)
    J = ds.B.shape[0]

    def project(Z):
        # (B'B)^{-1} B' Omega^{1/2} Z
        return ls.solve_normal(ds.B.T @ (omega_half[:, None] * Z))

    if J <= dense_max:
        X = project(np.eye(J))
        bias = float(np.sum(X * Q.apply(X)))
        return CorrectedComponent(raw, bias, raw - bias, 'exact')
    rng = np.random.default_rng(seed) if rng is None else rng

    def quad(Z):
        U = project(Z)
        return np.sum(U * Q.apply(U), axis=0)

    bias, se = hutchinson(quad, J, draws, rng)
    return CorrectedComponent(raw, bias, raw - bias, 'hutchinson', se)


def exact_bias(ds, Q, sigma2):
    '''Dense reference value of the bias trace (small systems only).'''
    B = ds.B.toarray()
    Minv = np.linalg.inv(B.T @ B)
    omega = np.diag([sigma2[int(n)] for n in ds.sizes])
    Qd = Q.dense()
    return float(np.trace(Minv @ Qd @ Minv @ B.T @ omega @ B))


# ---------------------------------------------------------------- results

@dataclass
class SizeComponents:
    n: int
    n_teams: int
    total: float
    heterogeneity_raw: float
    sorting_raw: float
    other_raw: float
    heterogeneity: float = None
    sorting: float = None
    other: float = None
    scale: float = 1.0
    shift: float = 0.0
    negative: tuple = ()

    def shares(self, corrected=True):
        if corrected and self.heterogeneity is None:
            raise ValueError('no corrected components for this size')
        h, s, o = ((self.heterogeneity, self.sorting, self.other) if corrected
                   else (self.heterogeneity_raw, self.sorting_raw, self.other_raw))
        tot = h + (s or 0.0) + o
        return {'heterogeneity': h / tot, 'sorting': (s or 0.0) / tot, 'other': o / tot}

    def to_dict(self):
        d = {'total': self.total, 'heterogeneity': self.heterogeneity,
             'heterogeneity_raw': self.heterogeneity_raw,
             'sorting': self.sorting if self.n > 1 else None,
             'sorting_raw': self.sorting_raw if self.n > 1 else None,
             'other': self.other, 'other_raw': self.other_raw,
             'lambda': self.scale, 'mu': self.shift, 'n_teams': self.n_teams,
             'negative_corrected': list(self.negative)}
        return d


@dataclass
class VarianceDecomposition:
    by_size: dict = field(default_factory=dict)
    variance_convention: str = 'population (denominator J_n)'

    def __getitem__(self, n):
        return self.by_size[n]

    def to_dict(self):
        return {'variance_convention': self.variance_convention,
                'sizes': {str(n): c.to_dict() for n, c in sorted(self.by_size.items())}}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


@dataclass
class AdditiveFit:
    lam: dict
    mu: dict
    alpha: np.ndarray
    worker_ids: tuple
    sigma2: dict
    spec: str
    design: DesignSystem = None
    y: np.ndarray = None
    residuals: np.ndarray = None
    identified: object = None

    def __post_init__(self):
        if self.spec in ('levels', 'ranks') and not np.isclose(self.lam.get(1, 1.0), 1.0):
            raise ValueError('lambda_1 must be 1')
        if self.spec == 'logs' and not np.isclose(self.mu.get(1, 0.0), 0.0):
            raise ValueError('mu_1 must be 0')
        if any(v < 0 for v in self.sigma2.values()):
            raise ValueError('negative shock variance')

    def alpha_by_worker(self):
        return dict(zip(self.worker_ids, self.alpha))


def variance_components(fit, h=None, n=1):
    '''
    Plug-in (uncorrected) variance decomposition of size-``n`` outputs:
    total = heterogeneity + sorting + other factors, computed from the fitted effects on
    the fit's estimation sample. ``h`` is accepted for symmetry with the other stages and
    is only used to check that it carries size-n teams.
    '''
    ds = fit.design
    rows = np.flatnonzero(ds.sizes == n)
    if rows.size < 2:
        raise EstimationError(f'need at least 2 teams of size {n}', 'variance_components')
    scale = fit.lam.get(n, 1.0) if fit.spec != 'logs' else 1.0
    het_q, sort_q = size_quadforms(ds, n, scale)
    total = float(np.var(fit.y[rows]))
    het = het_q.value(fit.alpha)
    sort = sort_q.value(fit.alpha) if n > 1 else 0.0
    return SizeComponents(n, int(rows.size), total, het, sort, total - het - sort,
                          scale=scale, shift=fit.mu.get(n, 0.0))


# ---------------------------------------------------------------- pipeline

def fractional_ranks(values, groups=None):
    '''Average-tie ranks rescaled to [0, 1] within each group (a lone value gets 0.5).'''
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    if groups is None:
        groups = np.zeros(values.size)
    groups = np.asarray([(-1 if g is None else g) for g in groups])
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        if idx.size == 1:
            out[idx] = 0.5
            continue
        out[idx] = (rankdata(values[idx]) - 1.0) / (idx.size - 1.0)
    return out


def _transform_outcome(h, spec):
    y = h.outputs
    if spec == 'levels':
        return y
    if spec == 'logs':
        if np.any(y <= 0):
            raise EstimationError('log specification needs positive outputs', 'transform')
        return np.log(y)
    if spec == 'ranks':
        return fractional_ranks(y, h.years)
    raise ValueError(f'unknown spec {spec!r}')


def fit_additive(h, spec='levels', lam=None, hutchinson_draws=1000, seed=None, dense_max=2000,
                 tol=1e-8):
    '''
    Full additive pipeline.

    Prunes to the identified subnetwork at unit scales, estimates the team-size scales
    (levels, ranks) or team-size intercepts (logs), re-checks identification at the
    estimated scales, estimates worker effects and per-size shock variances, then
    decomposes each size's output variance with and without bias correction.

    Arguments:
        h (Hypergraph): data (adjusted outputs are used)
        spec (str): 'levels', 'logs' or 'ranks' (fractional within-year ranks)
        lam (dict or None): fixed team-size scales; estimated when None
        hutchinson_draws (int): probes used when the design exceeds ``dense_max`` teams
        seed: seed for the probes

    Returns:
        (AdditiveFit, VarianceDecomposition)
    '''
    if spec not in SPECS:
        raise ValueError(f'spec must be one of {SPECS}')
    if h.J == 0:
        raise EstimationError('no teams', 'prune')
    y_all = _transform_outcome(h, spec)
    ds0 = build_design(h.with_outputs(y_all))
    ident = prune_to_identified(ds0, tol)
    if ident.teams.size == 0:
        raise EstimationError('the identified subnetwork is empty', 'prune')
    ds = ds0.subset(ident.teams, ident.workers)
    y = ds.y

    mu = {int(n): 0.0 for n in np.unique(ds.sizes)}
    if spec == 'logs':
        lam_hat = {int(n): 1.0 for n in np.unique(ds.sizes)}
        mu = mu_from_design(ds, y)
    elif lam is not None:
        lam_hat = {int(k): float(v) for k, v in dict(lam).items()}
    else:
        lam_hat = lambda_from_design(ds, y)
    try:
        ds = ds.with_lambda(lam_hat)
    except KeyError as e:
        raise EstimationError(f'no team-size scale for size {e}', 'estimate_lambda') from None
    if not identified_workers(ds.B, tol).all():
        raise EstimationError('identification changed after rescaling rows', 'prune')

    y_eff = y - np.array([mu[int(n)] for n in ds.sizes])
    try:
        alpha, resid = estimate_alpha(ds, y_eff)
    except IdentificationError as e:
        raise EstimationError(str(e), 'estimate_alpha') from e

    sigma2 = {}
    for n in np.unique(ds.sizes):
        try:
            sigma2[int(n)] = estimate_sigma2(ds, y_eff, int(n))
        except EstimationError:
            pass
    fit = AdditiveFit(lam_hat, mu, alpha, ds.col_index, sigma2, spec, ds, y, resid, ident)

    rng = np.random.default_rng(seed)
    dec = VarianceDecomposition()
    missing = [int(n) for n in np.unique(ds.sizes) if int(n) not in sigma2]
    if missing:
        warnings.warn(f'shock variance not estimable for sizes {missing}; '
                      'only uncorrected components are reported', stacklevel=2)
    for n in np.unique(ds.sizes):
        n = int(n)
        if np.sum(ds.sizes == n) < 2:
            continue
        comp = variance_components(fit, h, n)
        dec.by_size[n] = comp
        if missing:
            continue
        het_q, sort_q = size_quadforms(ds, n, comp.scale)
        het = bias_correct(alpha, ds, het_q, sigma2, hutchinson_draws, dense_max=dense_max, rng=rng)
        comp.heterogeneity = het.corrected
        if n > 1:
            srt = bias_correct(alpha, ds, sort_q, sigma2, hutchinson_draws, dense_max=dense_max, rng=rng)
            comp.sorting = srt.corrected
        else:
            comp.sorting = 0.0
        comp.other = sigma2[n]
        neg = tuple(k for k in ('heterogeneity', 'sorting') if getattr(comp, k) < 0)
        if neg:
            comp.negative = neg
            warnings.warn(f'negative bias-corrected {", ".join(neg)} for size {n}',
                          NegativeComponentWarning, stacklevel=2)
    return fit, dec
