"""
Incidence system of a collaboration hypergraph and the subnetwork on which every
worker effect is identified.

A worker effect is identified when the worker's unit vector lies in the row space of
the scaled incidence matrix ``B = D_lambda A``; equivalently when the worker has zero
loading on every null-space direction of ``B``.
"""
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._linalg import null_space_blocks


class IdentificationError(ValueError):
    pass


@dataclass(frozen=True)
class DesignSystem:
    A: sp.csr_matrix
    D_lambda: sp.dia_matrix
    B: sp.csr_matrix
    row_index: tuple
    col_index: tuple
    y: np.ndarray = None
    sizes: np.ndarray = None

    @property
    def shape(self):
        return self.A.shape

    def subset(self, rows, cols):
        '''Restrict to the given row and column positions (numpy index arrays).'''
        rows = np.asarray(rows, dtype=int)
        cols = np.asarray(cols, dtype=int)
        A = self.A[rows][:, cols].tocsr()
        d = self.D_lambda.diagonal()[rows]
        D = sp.diags(d)
        return DesignSystem(A, D, sp.csr_matrix(D @ A), tuple(self.row_index[i] for i in rows),
                            tuple(self.col_index[i] for i in cols),
                            None if self.y is None else self.y[rows],
                            None if self.sizes is None else self.sizes[rows])

    def with_lambda(self, lam):
        lam = _lambda_map(lam)
        d = np.array([lam[n] for n in self.sizes], dtype=float)
        D = sp.diags(d)
        return DesignSystem(self.A, D, sp.csr_matrix(D @ self.A), self.row_index, self.col_index,
                            self.y, self.sizes)


def _lambda_map(lam):
    if lam is None:
        return _Ones()
    if isinstance(lam, dict):
        return {int(k): float(v) for k, v in lam.items()}
    # sequence indexed from size 1
    return {n + 1: float(v) for n, v in enumerate(lam)}


class _Ones(dict):
    def __missing__(self, key):
        return 1.0


def build_design(h, lam=None):
    '''
    Incidence matrix of ``h`` (rows = teams, columns = workers with at least one team)
    and its row-scaled version ``B = D_lambda A``.

    Arguments:
        h (Hypergraph): data
        lam (dict, sequence or None): team-size scales, keyed by size or listed from size 1;
            None means all ones

    Returns:
        (DesignSystem)
    '''
    lam = _lambda_map(lam)
    sizes = h.sizes
    for n in np.unique(sizes):
        if not isinstance(lam, _Ones) and int(n) not in lam:
            raise IdentificationError(f'no team-size scale given for size {n}')
    if 1 in set(sizes.tolist()) and not np.isclose(lam[1], 1.0):
        raise IdentificationError('the solo-team scale must be normalised to 1')
    workers = [w.id for w in h.workers if w.degree > 0]
    col = {w: i for i, w in enumerate(workers)}
    rows, cols = [], []
    for j, t in enumerate(h.teams):
        for m in t.members:
            rows.append(j)
            cols.append(col[m])
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(h.J, len(workers)))
    d = np.array([lam[n] for n in sizes], dtype=float)
    D = sp.diags(d)
    return DesignSystem(A, D, sp.csr_matrix(D @ A), tuple(t.id for t in h.teams), tuple(workers),
                        h.outputs, sizes)


def identified_workers(B, tol=1e-8):
    '''
    Flag the columns of ``B`` whose effect is identified, i.e. ``(I - B'(B')^+) e_i = 0``
    in sup norm up to ``tol``.

    The projection is formed from the null space of ``B``, computed block by block after
    peeling off the columns reachable through rows with a single undetermined entry. No
    dense pseudo-inverse of ``B`` is formed.
    '''
    if tol <= 0:
        raise ValueError('tol must be positive')
    B = sp.csr_matrix(B)
    if B.shape[0] == 0 or B.shape[1] == 0:
        raise IdentificationError('empty design')
    ok = np.ones(B.shape[1], dtype=bool)
    for cols, basis in null_space_blocks(B):
        # sup norm of P_null e_i for every column i in the block
        proj = np.abs(basis @ basis.T).max(axis=0)
        ok[cols[proj > tol]] = False
    return ok


@dataclass(frozen=True)
class IdentifiedSet:
    workers: np.ndarray
    teams: np.ndarray
    iterations: int

    def report(self):
        return {'n_workers_kept': int(self.workers.size), 'n_teams_kept': int(self.teams.size),
                'iterations': int(self.iterations)}

    def to_json(self):
        return json.dumps(self.report(), sort_keys=True)


def prune_to_identified(ds, tol=1e-8):
    '''
    Largest set of workers and teams such that every worker effect is identified.

    Repeats: keep identified workers, keep teams made only of kept workers, drop workers
    left without teams; stops when a pass changes nothing.

    Returns:
        (IdentifiedSet) positions into ``ds`` rows/columns, and the number of passes
    '''
    B = sp.csr_matrix(ds.B)
    rows = np.arange(B.shape[0])
    cols = np.arange(B.shape[1])
    it = 0
    while True:
        it += 1
        if rows.size == 0 or cols.size == 0:
            return IdentifiedSet(np.array([], dtype=int), np.array([], dtype=int), it)
        sub = B[rows][:, cols]
        ok = identified_workers(sub, tol)
        # a team survives only if every member is identified
        bad_cols = sp.csr_matrix(sub[:, ~ok])
        keep_rows = np.diff(bad_cols.indptr) == 0
        # all of a team's members must lie within the current column set
        full = np.asarray((B[rows] != 0).sum(axis=1)).ravel() == np.asarray((sub != 0).sum(axis=1)).ravel()
        keep_rows &= full
        new_rows = rows[keep_rows]
        used = np.asarray(abs(B[new_rows][:, cols]).sum(axis=0)).ravel() > 0
        new_cols = cols[ok & used]
        if new_rows.size == rows.size and new_cols.size == cols.size:
            return IdentifiedSet(cols, rows, it)
        rows, cols = new_rows, new_cols
