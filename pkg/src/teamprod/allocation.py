"""
Output-maximising allocation of typed workers to solo and two-worker teams.

Variables are the number of solo teams of each type and the number of pair teams of
each unordered type pair. Each type has a budget of solo teams and a budget of pair
slots (a same-type pair uses two slots of that type). The linear relaxation is solved
by a dense tableau simplex; with even pair budgets its vertices are integral.
"""
import json
from dataclasses import dataclass

import numpy as np


class AllocationError(ValueError):
    pass


@dataclass
class AllocationProblem:
    '''
    Arguments:
        mu1 (ndarray): (K,) expected solo output by type
        mu2 (ndarray): (K, K) symmetric expected pair output by type pair
        T1 (ndarray): (K,) solo budgets
        T2 (ndarray): (K,) pair-slot budgets
    '''
    mu1: np.ndarray
    mu2: np.ndarray
    T1: np.ndarray
    T2: np.ndarray

    def __post_init__(self):
        self.mu1 = np.asarray(self.mu1, dtype=float)
        self.mu2 = np.asarray(self.mu2, dtype=float)
        self.T1 = np.asarray(self.T1, dtype=float)
        self.T2 = np.asarray(self.T2, dtype=float)
        K = self.K
        if self.mu2.shape != (K, K) or self.T1.shape != (K,) or self.T2.shape != (K,):
            raise AllocationError('inconsistent problem dimensions')
        if not np.allclose(self.mu2, self.mu2.T):
            raise AllocationError('mu2 must be symmetric')
        if np.any(self.T1 < 0) or np.any(self.T2 < 0):
            raise AllocationError('budgets must be nonnegative')
        if not (np.all(np.isfinite(self.T1)) and np.all(np.isfinite(self.T2))):
            raise AllocationError('budgets must be finite')
        if not (np.all(np.isfinite(self.mu1)) and np.all(np.isfinite(self.mu2))):
            raise AllocationError('expected outputs must be finite')

    @property
    def K(self):
        return self.mu1.size

    def pairs(self):
        return [(k, l) for k in range(self.K) for l in range(k, self.K)]

    def lp(self):
        '''(c, A, b) of ``max c'x s.t. A x <= b, x >= 0``; x = (tau1, tau2 upper triangle).'''
        K = self.K
        pairs = self.pairs()
        n = K + len(pairs)
        c = np.concatenate([self.mu1, [self.mu2[k, l] for k, l in pairs]])
        A = np.zeros((2 * K, n))
        A[np.arange(K), np.arange(K)] = 1.0
        for p, (k, l) in enumerate(pairs):
            if k == l:
                A[K + k, K + p] = 2.0
            else:
                A[K + k, K + p] = 1.0
                A[K + l, K + p] = 1.0
        b = np.concatenate([self.T1, self.T2])
        return c, A, b

    def objective(self, tau1, tau2):
        tau1, tau2 = np.asarray(tau1, dtype=float), np.asarray(tau2, dtype=float)
        off = ~np.eye(self.K, dtype=bool)
        return float(tau1 @ self.mu1 + np.sum(np.diag(tau2) * np.diag(self.mu2))
                     + 0.5 * np.sum((tau2 * self.mu2)[off]))

    def feasible(self, tau1, tau2, tol=1e-9):
        tau1, tau2 = np.asarray(tau1, dtype=float), np.asarray(tau2, dtype=float)
        slots = 2 * np.diag(tau2) + tau2.sum(axis=1) - np.diag(tau2)
        return bool(np.all(tau1 >= -tol) and np.all(tau2 >= -tol) and np.allclose(tau2, tau2.T)
                    and np.all(tau1 <= self.T1 + tol) and np.all(slots <= self.T2 + tol))


@dataclass
class AllocationSolution:
    tau1: np.ndarray
    tau2: np.ndarray
    objective: float
    integral: bool
    lp_bound: float
    pivots: int = 0

    def to_dict(self):
        return {'tau1': self.tau1.tolist(), 'tau2': self.tau2.tolist(), 'objective': self.objective,
                'integral': self.integral, 'lp_bound': self.lp_bound, 'pivots': self.pivots}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def simplex_max(c, A, b, tol=1e-10, max_pivots=10000):
    '''
    Maximise ``c'x`` subject to ``A x <= b``, ``x >= 0`` with ``b >= 0``, by the tableau
    simplex method started from the slack basis. Bland's rule prevents cycling.

    Returns:
        (ndarray, float, int) solution, optimal value, number of pivots
    '''
    c, A, b = (np.asarray(v, dtype=float) for v in (c, A, b))
    m, n = A.shape
    if np.any(b < 0):
        raise AllocationError('right-hand side must be nonnegative')
    T = np.zeros((m + 1, n + m + 1))
    T[:m, :n] = A
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = b
    T[m, :n] = -c
    basis = list(range(n, n + m))
    pivots = 0
    while True:
        enter = next((j for j in range(n + m) if T[m, j] < -tol), None)
        if enter is None:
            break
        col = T[:m, enter]
        ratios = np.full(m, np.inf)
        pos = col > tol
        ratios[pos] = T[:m, -1][pos] / col[pos]
        if not np.isfinite(ratios).any():
            raise AllocationError('unbounded linear program')
        best = ratios.min()
        # Bland: among tied rows leave with the smallest basic index
        ties = [i for i in range(m) if ratios[i] <= best + tol * max(1.0, abs(best))]
        leave = min(ties, key=lambda i: basis[i])
        T[leave] /= T[leave, enter]
        for i in range(m + 1):
            if i != leave and T[i, enter] != 0.0:
                T[i] -= T[i, enter] * T[leave]
        basis[leave] = enter
        pivots += 1
        if pivots > max_pivots:
            raise AllocationError('simplex did not terminate')
    x = np.zeros(n + m)
    x[basis] = T[:m, -1]
    return x[:n], float(T[m, -1]), pivots


def _unpack(p, x):
    K = p.K
    tau1 = x[:K].copy()
    tau2 = np.zeros((K, K))
    for v, (k, l) in zip(x[K:], p.pairs()):
        tau2[k, l] = tau2[l, k] = v
    return tau1, tau2


def _repair(p, x):
    # lower fractional variables to their floor, cheapest first, then spend leftover
    # budget one team at a time on the best positive-value variable that still fits
    c, A, b = p.lp()
    x = x.copy()
    for j in sorted(np.flatnonzero(np.abs(x - np.round(x)) > 1e-9), key=lambda j: c[j]):
        x[j] = np.floor(x[j] + 1e-9)
    x = np.round(x)
    for j in np.argsort(-c, kind='stable'):
        if c[j] <= 0:
            break
        while np.all(A @ x + A[:, j] <= b + 1e-9):
            x[j] += 1
    return x


def solve_allocation(p):
    '''
    Solve the linear relaxation of the allocation problem. An integral vertex is
    returned as is; otherwise a feasible integral allocation is built by rounding down
    and greedy filling, and the relaxation's value is kept as ``lp_bound``.

    Returns:
        (AllocationSolution)
    '''
    c, A, b = p.lp()
    x, val, piv = simplex_max(c, A, b)
    x[np.abs(x) < 1e-9] = 0.0
    integral = bool(np.all(np.abs(x - np.round(x)) <= 1e-7))
    if integral:
        x = np.round(x)
    else:
        x = _repair(p, x)
    tau1, tau2 = _unpack(p, x)
    return AllocationSolution(tau1, tau2, p.objective(tau1, tau2), integral, val, piv)


def allocation_matrix(s):
    '''
    Type-pair proportions of the allocated pair teams: a mixed team puts half its mass on
    each ordering, a same-type team all of it on the diagonal.
    '''
    tau2 = np.asarray(s.tau2 if hasattr(s, 'tau2') else s, dtype=float)
    M = tau2.copy()
    off = ~np.eye(M.shape[0], dtype=bool)
    M[off] *= 0.5
    tot = M.sum()
    if tot <= 0:
        raise AllocationError('no pair teams allocated')
    return M / tot


def nearest_even(x):
    '''Nearest even integer, halfway cases rounded up.'''
    return 2.0 * np.floor(np.asarray(x, dtype=float) / 2.0 + 0.5)


def budgets_from_fit(model, state, h):
    '''
    Allocation problem implied by a fitted discrete-type model: expected outputs are the
    model-implied type(-pair) means; budgets are q-weighted counts of solo teams
    (rounded to the nearest integer) and of pair participations (rounded to the nearest
    even integer, ties up).

    Returns:
        (AllocationProblem)
    '''
    q = state.q
    idx = {w: i for i, w in enumerate(state.worker_ids)}
    K = model.K
    T1 = np.zeros(K)
    T2 = np.zeros(K)
    for t in h.teams:
        if t.size == 1 and t.members[0] in idx:
            T1 += q[idx[t.members[0]]]
        elif t.size == 2 and all(m in idx for m in t.members):
            T2 += q[idx[t.members[0]]] + q[idx[t.members[1]]]
    mu1, mu2 = model.implied_means()
    return AllocationProblem(mu1, mu2, np.floor(T1 + 0.5), nearest_even(T2))
