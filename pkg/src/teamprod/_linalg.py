"""Sparse linear-algebra helpers shared by the identification and additive estimators."""
from collections import deque

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu, eigsh


class FactorizationError(np.linalg.LinAlgError):
    """A sparse factorization failed; ``diagnostics`` describes the matrix."""

    def __init__(self, msg, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(f'{msg} {self.diagnostics}' if diagnostics else msg)


def _diagnostics(M):
    d = M.diagonal()
    return {'shape': M.shape, 'nnz': int(M.nnz), 'min_diag': float(d.min()) if d.size else None,
            'max_diag': float(d.max()) if d.size else None}


class LeastSquares:
    '''
    Least-squares solves against a fixed sparse design through a sparse LU factorization
    of its Gram matrix.

    With ``full_rank=False`` a tiny ridge is added to the Gram matrix and removed again by
    iterative refinement; the coefficients then converge to the minimum-norm solution and
    residuals are exact up to rounding even when the design is rank deficient.

    Arguments:
        X (sparse matrix): design, rows are observations
        full_rank (bool): whether X has full column rank
        refine (int): number of refinement steps
    '''

    def __init__(self, X, full_rank=True, refine=2):
        self.X = sp.csr_matrix(X, dtype=float)
        G = (self.X.T @ self.X).tocsc()
        self.ridge = 0.0
        if not full_rank:
            scale = G.diagonal().mean() if G.shape[0] else 1.0
            self.ridge = 1e-10 * scale
            G = (G + self.ridge * sp.identity(G.shape[0], format='csc')).tocsc()
        self.gram = G
        self.refine = refine if not full_rank else max(refine, 1)
        try:
            self._lu = splu(G)
        except RuntimeError as e:
            raise FactorizationError(f'sparse LU failed: {e}', _diagnostics(G)) from None
        if full_rank:
            # splu happily factors numerically singular matrices; check pivots
            u = np.abs(self._lu.U.diagonal())
            if u.size and u.min() <= 1e-11 * u.max():
                raise FactorizationError('Gram matrix is numerically singular', _diagnostics(G))

    def solve_normal(self, rhs):
        '''Solve (X'X) x = rhs, ridge removed by refinement.'''
        rhs = np.asarray(rhs, dtype=float)
        x = self._lu.solve(rhs)
        for _ in range(self.refine):
            r = rhs - self.X.T @ (self.X @ x)
            x = x + self._lu.solve(r)
        return x

    def coef(self, v):
        return self.solve_normal(self.X.T @ np.asarray(v, dtype=float))

    def residual(self, v):
        v = np.asarray(v, dtype=float)
        return v - self.X @ self.coef(v)


def _peel(B):
    # columns whose unit vector is reachable by repeatedly using rows with one unknown entry
    B = sp.csr_matrix(B)
    B.eliminate_zeros()
    J, N = B.shape
    Bc = B.tocsc()
    unknown_count = np.diff(B.indptr).astype(int)
    known = np.zeros(N, dtype=bool)
    queue = deque(np.flatnonzero(unknown_count == 1))
    while queue:
        r = queue.popleft()
        if unknown_count[r] != 1:
            continue
        cols = B.indices[B.indptr[r]:B.indptr[r + 1]]
        free = cols[~known[cols]]
        if free.size != 1:
            continue
        c = free[0]
        known[c] = True
        for r2 in Bc.indices[Bc.indptr[c]:Bc.indptr[c + 1]]:
            unknown_count[r2] -= 1
            if unknown_count[r2] == 1:
                queue.append(r2)
    return known


def _dense_null(M):
    if M.shape[0] == 0:
        return np.eye(M.shape[1])
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def _sparse_null(M, max_dim=None):
    # null space of M'M by shift-invert Lanczos around a small negative shift
    G = (M.T @ M).tocsc()
    n = G.shape[0]
    scale = abs(G.diagonal()).max()
    sigma = -1e-8 * scale
    k = min(8, n - 2)
    while True:
        vals, vecs = eigsh(G, k=k, sigma=sigma, which='LM')
        zero = vals < 1e-9 * scale
        if not zero.all() or k >= n - 2 or (max_dim is not None and k >= max_dim):
            return np.linalg.qr(vecs[:, zero])[0] if zero.any() else np.zeros((n, 0))
        k = min(2 * k, n - 2)


def null_space_blocks(B, dense_max=1500):
    '''
    Null space of a sparse matrix, organised by connected block.

    Columns whose unit vector lies in the row space are found combinatorially first; the
    remaining columns split into connected blocks whose null spaces are computed
    separately (dense SVD for small blocks, shift-invert Lanczos on the sparse Gram matrix
    for large ones).

    Returns:
        (list of (ndarray, ndarray)) pairs ``(columns, basis)`` with ``basis`` an
        orthonormal ``len(columns) x d`` null-space basis supported on ``columns``
    '''
    B = sp.csr_matrix(B, dtype=float)
    J, N = B.shape
    known = _peel(B)
    rest = np.flatnonzero(~known)
    if rest.size == 0:
        return []
    R = B[:, rest]
    rows = np.flatnonzero(np.diff(R.indptr) > 0)
    R = R[rows]
    # bipartite row/column graph
    nr = R.shape[0]
    adj = sp.bmat([[None, R], [R.T, None]], format='csr')
    adj.data[:] = 1.0
    n_comp, labels = connected_components(adj, directed=False)
    row_lab, col_lab = labels[:nr], labels[nr:]
    out = []
    order = np.argsort(col_lab, kind='stable')
    bounds = np.searchsorted(col_lab[order], np.arange(n_comp + 1))
    row_order = np.argsort(row_lab, kind='stable')
    row_bounds = np.searchsorted(row_lab[row_order], np.arange(n_comp + 1))
    for c in range(n_comp):
        cols = order[bounds[c]:bounds[c + 1]]
        if cols.size == 0:
            continue
        rws = row_order[row_bounds[c]:row_bounds[c + 1]]
        block = R[rws][:, cols]
        if cols.size <= dense_max:
            basis = _dense_null(block.toarray())
        else:
            basis = _sparse_null(block.tocsr())
        if basis.shape[1]:
            out.append((rest[cols], basis))
    return out


def matrix_rank(B, dense_max=1500):
    '''Rank of a sparse matrix (number of columns minus null-space dimension).'''
    B = sp.csr_matrix(B)
    return B.shape[1] - sum(b.shape[1] for _, b in null_space_blocks(B, dense_max))


def hutchinson(quad, dim, draws, rng, batch=250):
    '''
    Hutchinson estimate of the trace of a symmetric ``dim x dim`` matrix C.

    Arguments:
        quad (callable): maps a ``dim x k`` block of probes Z to the k values ``z' C z``
        dim (int): dimension of C
        draws (int): number of Rademacher probes
        rng (np.random.Generator): random source
        batch (int): probes per call to ``quad``

    Returns:
        (float, float) trace estimate and its Monte Carlo standard error
    '''
    vals = []
    left = draws
    while left > 0:
        k = min(batch, left)
        Z = rng.choice(np.array([-1.0, 1.0]), size=(dim, k))
        vals.append(np.asarray(quad(Z), dtype=float))
        left -= k
    vals = np.concatenate(vals)
    se = vals.std(ddof=1) / np.sqrt(draws) if draws > 1 else np.nan
    return float(vals.mean()), float(se)
