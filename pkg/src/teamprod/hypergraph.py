"""
Collaboration hypergraphs: workers linked by teams (hyperedges) that each
produce one output observation.

A :class:`Hypergraph` is immutable once built. Teams store their members in
canonical sorted order, so a team is the same object whatever order its
members were listed in.
"""
import csv
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class HypergraphError(ValueError):
    """Ill-formed collaboration data."""


class ParseError(HypergraphError):
    """A row of a team file could not be read."""

    def __init__(self, row, msg):
        self.row = row
        super().__init__(f'row {row}: {msg}')


def _id_key(x):
    # ints sort numerically, everything else as strings, ints first
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return (0, int(x), '')
    return (1, 0, str(x))


def _norm_id(x):
    if isinstance(x, np.integer):
        return int(x)
    return x


@dataclass(frozen=True)
class Worker:
    id: object
    degree_by_size: dict = field(default_factory=dict)

    @property
    def degree(self):
        return sum(self.degree_by_size.values())


@dataclass(frozen=True)
class Team:
    id: object
    members: tuple
    output: float
    output_adj: float = None
    year: int = None

    def __post_init__(self):
        members = tuple(_norm_id(m) for m in self.members)
        if len(members) == 0:
            raise HypergraphError(f'team {self.id!r} has no members')
        if len(set(members)) != len(members):
            raise HypergraphError(f'team {self.id!r} lists a worker more than once: {members}')
        object.__setattr__(self, 'members', tuple(sorted(members, key=_id_key)))
        object.__setattr__(self, 'output', float(self.output))
        if self.output_adj is None:
            object.__setattr__(self, 'output_adj', float(self.output))
        else:
            object.__setattr__(self, 'output_adj', float(self.output_adj))
        if self.year is not None:
            object.__setattr__(self, 'year', int(self.year))

    @property
    def size(self):
        return len(self.members)


class Hypergraph:
    '''
    Workers and the teams they produce in.

    Arguments:
        teams (iterable of Team): teams; members must be distinct within a team
        n_max (int or None): teams larger than this are dropped and counted in ``n_dropped``
        extra_workers (iterable or None): ids of workers without any team (kept with zero degree)
    '''

    def __init__(self, teams=(), n_max=None, extra_workers=None):
        kept, dropped = [], 0
        seen = set()
        for t in teams:
            if t.id in seen:
                raise HypergraphError(f'duplicate team id {t.id!r}')
            seen.add(t.id)
            if n_max is not None and t.size > n_max:
                dropped += 1
                continue
            kept.append(t)
        self._teams = tuple(kept)
        self.n_dropped = dropped

        degrees = defaultdict(Counter)
        for t in self._teams:
            for m in t.members:
                degrees[m][t.size] += 1
        ids = set(degrees)
        if extra_workers is not None:
            ids.update(_norm_id(w) for w in extra_workers)
        ordered = sorted(ids, key=_id_key)
        self._workers = tuple(Worker(w, dict(sorted(degrees[w].items()))) for w in ordered)
        self._index = {w.id: i for i, w in enumerate(self._workers)}
        sizes = [t.size for t in self._teams]
        self.n_max = n_max if n_max is not None else (max(sizes) if sizes else 0)

    # basic accessors
    @property
    def teams(self):
        return self._teams

    @property
    def workers(self):
        return self._workers

    @property
    def N(self):
        return len(self._workers)

    @property
    def J(self):
        return len(self._teams)

    def worker_index(self, wid):
        return self._index[_norm_id(wid)]

    def __contains__(self, wid):
        return _norm_id(wid) in self._index

    def __len__(self):
        return self.J

    def __eq__(self, other):
        if not isinstance(other, Hypergraph):
            return NotImplemented
        return self._workers == other._workers and self._teams == other._teams

    def __repr__(self):
        return f'Hypergraph(N={self.N}, J={self.J}, sizes={dict(sorted(Counter(self.sizes.tolist()).items()))})'

    # array views
    @property
    def sizes(self):
        return np.array([t.size for t in self._teams], dtype=int)

    @property
    def outputs(self):
        '''Adjusted outputs (equal to raw outputs unless effects were netted out).'''
        return np.array([t.output_adj for t in self._teams], dtype=float)

    @property
    def raw_outputs(self):
        return np.array([t.output for t in self._teams], dtype=float)

    @property
    def years(self):
        return [t.year for t in self._teams]

    def member_indices(self, team):
        return [self._index[m] for m in team.members]

    def size_counts(self):
        return dict(sorted(Counter(self.sizes.tolist()).items()))

    def first_years(self):
        '''Year of each worker's first team, keyed by worker id.'''
        first = {}
        for t in self._teams:
            if t.year is None:
                raise HypergraphError(f'team {t.id!r} has no year')
            for m in t.members:
                if m not in first or t.year < first[m]:
                    first[m] = t.year
        return first

    # derived graphs
    def subgraph(self, team_mask=None, keep_isolated=False):
        '''
        Keep the teams flagged in ``team_mask``; workers left without teams are dropped
        unless ``keep_isolated``.
        '''
        if team_mask is None:
            teams = self._teams
        else:
            team_mask = np.asarray(team_mask, dtype=bool)
            teams = [t for t, k in zip(self._teams, team_mask) if k]
        extra = [w.id for w in self._workers] if keep_isolated else None
        return Hypergraph(teams, n_max=self.n_max, extra_workers=extra)

    def restrict_sizes(self, sizes, keep_isolated=False):
        sizes = set(sizes)
        return self.subgraph([t.size in sizes for t in self._teams], keep_isolated)

    def with_outputs(self, outputs, adjusted=True):
        '''New hypergraph with replaced (adjusted or raw) outputs, same structure.'''
        outputs = np.asarray(outputs, dtype=float)
        if outputs.shape != (self.J,):
            raise HypergraphError(f'expected {self.J} outputs, got shape {outputs.shape}')
        if adjusted:
            teams = [replace(t, output_adj=float(y)) for t, y in zip(self._teams, outputs)]
        else:
            teams = [replace(t, output=float(y), output_adj=float(y)) for t, y in zip(self._teams, outputs)]
        g = Hypergraph(teams, n_max=self.n_max, extra_workers=[w.id for w in self._workers])
        return g

    # serialization
    def to_dict(self):
        return {
            'n_max': self.n_max,
            'workers': [w.id for w in self._workers],
            'teams': [
                {'id': t.id, 'members': list(t.members), 'output': t.output,
                 'output_adj': t.output_adj, 'year': t.year}
                for t in self._teams
            ],
        }

    @classmethod
    def from_dict(cls, d):
        teams = [Team(t['id'], tuple(t['members']), t['output'], t.get('output_adj'), t.get('year'))
                 for t in d['teams']]
        return cls(teams, n_max=d.get('n_max'), extra_workers=d.get('workers'))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


DEFAULT_SCHEMA = {'team_id': 'team_id', 'worker_ids': 'worker_ids', 'output': 'output', 'year': 'year'}


def _parse_token(tok):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        return tok


def load_teams(path, schema=None, n_max=3, delimiter=',', member_sep=';'):
    '''
    Read a delimiter-separated team file.

    Columns (renamable through ``schema``) are ``team_id``, ``worker_ids`` (members
    joined by ``member_sep``), ``output`` and an optional ``year``. Worker ids that
    parse as integers are stored as integers.

    Arguments:
        path (str or Path): input file
        schema (dict or None): maps the canonical column names to the file's column names
        n_max (int or None): larger teams are dropped and counted in ``Hypergraph.n_dropped``

    Returns:
        (Hypergraph) parsed data
    '''
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    text = Path(path).read_text()
    if not text.strip():
        return Hypergraph([], n_max=n_max)
    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    header = reader.fieldnames or []
    for key in ('team_id', 'worker_ids', 'output'):
        if cols[key] not in header:
            raise ParseError(1, f'missing column {cols[key]!r}')
    has_year = cols['year'] in header

    teams, seen = [], set()
    for row_no, row in enumerate(reader, start=2):
        if None in row or any(row.get(c) is None for c in header):
            raise ParseError(row_no, 'wrong number of fields')
        tid = _parse_token(row[cols['team_id']])
        if tid in seen:
            raise ParseError(row_no, f'duplicate team id {tid!r}')
        seen.add(tid)
        raw_members = row[cols['worker_ids']].strip()
        if not raw_members:
            raise ParseError(row_no, 'no worker ids')
        members = tuple(_parse_token(m) for m in raw_members.split(member_sep))
        if len(set(members)) != len(members):
            raise ParseError(row_no, f'repeated worker id in {raw_members!r}')
        try:
            output = float(row[cols['output']])
        except ValueError:
            raise ParseError(row_no, f'output {row[cols["output"]]!r} is not a number') from None
        if not math.isfinite(output):
            raise ParseError(row_no, f'output {output} is not finite')
        if output < 0:
            raise ParseError(row_no, f'negative output {output}')
        year = None
        if has_year and row[cols['year']].strip() != '':
            try:
                year = int(row[cols['year']])
            except ValueError:
                raise ParseError(row_no, f'year {row[cols["year"]]!r} is not an integer') from None
        teams.append(Team(tid, members, output, None, year))
    return Hypergraph(teams, n_max=n_max)


def dump_teams(h, path, delimiter=',', member_sep=';'):
    '''Write ``h`` in the format read by :func:`load_teams` (raw outputs).'''
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, delimiter=delimiter, lineterminator='\n')
        w.writerow(['team_id', 'worker_ids', 'output', 'year'])
        for t in h.teams:
            w.writerow([t.id, member_sep.join(str(m) for m in t.members), repr(t.output),
                        '' if t.year is None else t.year])


def filter_min_productions(h, m, iterative=True):
    '''
    Drop workers with fewer than ``m`` teams, together with every team they belong to.

    Removing a team can push its other members below the threshold, so by default the
    removal is repeated until no worker falls below ``m``. With ``iterative=False`` a
    single pass is made.
    '''
    if m < 1:
        raise ValueError('m must be at least 1')
    g = h
    while True:
        low = {w.id for w in g.workers if w.degree < m}
        if not low:
            return g
        g = g.subgraph([not any(mm in low for mm in t.members) for t in g.teams])
        if not iterative:
            return g


def _year_dummies(values, reference):
    levels = sorted(set(values))
    if reference not in levels:
        raise HypergraphError(f'reference level {reference} has no teams')
    others = [v for v in levels if v != reference]
    col = {v: i for i, v in enumerate(others)}
    X = np.zeros((len(values), len(others)))
    for r, v in enumerate(values):
        if v != reference:
            X[r, col[v]] = 1.0
    return X, others


def _poisson_fit(X, y, max_iter=100, tol=1e-10):
    # log-link Poisson by Newton; X includes the intercept column
    beta = np.zeros(X.shape[1])
    beta[0] = np.log(y.mean())
    for _ in range(max_iter):
        mu = np.exp(X @ beta)
        grad = X.T @ (y - mu)
        hess = X.T @ (X * mu[:, None])
        step = np.linalg.solve(hess, grad)
        beta += step
        if np.max(np.abs(step)) < tol:
            break
    return beta


def net_year_effects(h, reference_year, family='multiplicative'):
    '''
    Net out multiplicative year effects from team outputs.

    The fitted effect of ``reference_year`` is normalised to 1 and the adjusted output is
    ``output / effect(year)``.

    Arguments:
        h (Hypergraph): every team must carry a year
        reference_year (int): year whose effect is 1
        family (str): 'multiplicative' (least squares on log output, outputs must be
            positive), 'poisson' (Poisson regression on year dummies, zeros allowed) or
            'poisson-with-age' (Poisson regression on year and worker-age dummies, where
            age is the year minus the first year any member of the team produced;
            team age is the mean member age, rounded down)

    Returns:
        (Hypergraph) copy of ``h`` with ``output_adj`` replaced
    '''
    if h.J == 0:
        return h
    years = h.years
    if any(y is None for y in years):
        raise HypergraphError('every team needs a year to net out year effects')
    y = h.raw_outputs
    D, _ = _year_dummies(years, int(reference_year))
    if family == 'multiplicative':
        if np.any(y <= 0):
            raise HypergraphError('multiplicative netting needs positive outputs; use the poisson family')
        X = np.column_stack([np.ones(h.J), D])
        beta, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
        log_effect = D @ beta[1:]
    elif family in ('poisson', 'poisson-with-age'):
        factors = [years]
        if family == 'poisson-with-age':
            first = h.first_years()
            ages = [int(np.floor(np.mean([t.year - first[m] for m in t.members]))) for t in h.teams]
            A, _ = _year_dummies(ages, min(ages))
            D = np.column_stack([D, A])
            factors.append(ages)
        _check_poisson_cells(factors, y)
        X = np.column_stack([np.ones(h.J), D])
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise HypergraphError('year and age effects are not separately identified (collinear dummies)')
        beta = _poisson_fit(X, y)
        log_effect = D @ beta[1:]
    else:
        raise ValueError(f'unknown family {family!r}')
    return h.with_outputs(y / np.exp(log_effect))


def _check_poisson_cells(factors, y):
    if not np.any(y > 0):
        raise HypergraphError('all outputs are zero: Poisson year effects are not defined')
    for values in factors:
        values = np.asarray(values)
        for v in np.unique(values):
            if not np.any(y[values == v] > 0):
                raise HypergraphError(f'cell {v} has only zero outputs: its effect is not defined')
