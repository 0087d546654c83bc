import csv
import hashlib
import io
import json

import numpy as np
import pytest

from teamprod.additive import fit_additive
from teamprod.allocation import budgets_from_fit, solve_allocation
from teamprod.hypergraph import Hypergraph, Team
from teamprod.mixture import fit_mixture, type_proxies
from teamprod.report import (canonical, descriptive_stats, dumps, emit_bundle, fmt, matrix_long_csv,
                             table_csv)
from teamprod.simulate import (AdditiveTruth, NetworkSpec, SimDesign, panel_a_truth,
                               simulate_additive, simulate_mixture)

from conftest import toy_graph

LAM = {1: 1.0, 2: 0.67, 3: 0.48}


def _rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_descriptives_toy_network():
    rows = descriptive_stats(toy_graph([1, 2, 3, 4, 5]))
    total = rows[-1]
    assert total['size'] == 'all'
    assert total['n_workers'] == 5 and total['n_teams'] == 5
    assert total['p50_output'] == 3.0
    assert total['mean_output'] == 3.0
    assert total['sd_output'] == pytest.approx(np.sqrt(2.0))
    # per-worker participations: 1, 2, 2, 2, 2
    assert total['mean_productions'] == pytest.approx(1.8)
    assert total['p10_productions'] == 1 and total['p50_productions'] == 2
    assert [r['size'] for r in rows] == ['1', '2', '3', 'all']
    assert [r['n_teams'] for r in rows[:3]] == [2, 2, 1]
    # size 2: teams A, C with outputs 1, 3; workers 1, 2, 3, 4
    assert rows[1]['n_workers'] == 4 and rows[1]['mean_output'] == 2.0


def test_descriptives_empty_and_single():
    assert descriptive_stats(Hypergraph([])) == []
    assert table_csv([]) == ''
    rows = descriptive_stats(Hypergraph([Team('a', (1, 2), 7.0)]))
    assert rows[-1]['sd_output'] == 0.0
    assert rows[-1]['p99_output'] == 7.0


def test_percentiles_nearest_rank():
    h = Hypergraph([Team(j, (j,), float(j + 1)) for j in range(10)])
    row = descriptive_stats(h)[-1]
    assert row['p10_output'] == 1.0 and row['p90_output'] == 9.0 and row['p95_output'] == 10.0


def test_formatting():
    assert fmt(1 / 3) == '0.333333'
    assert fmt(True) == 'true' and fmt(None) == '' and fmt(np.int64(4)) == '4'
    assert fmt(float('nan')) == 'nan' and fmt(-np.inf) == '-inf'
    assert canonical({'a': np.array([1 / 3, np.nan])}) == {'a': [0.333333, None]}
    assert json.loads(dumps({'b': 1, 'a': 2})) == {'a': 2, 'b': 1}
    assert dumps({'b': 1, 'a': 2}).index('"a"') < dumps({'b': 1, 'a': 2}).index('"b"')


def test_matrix_long_format():
    rows = _rows(matrix_long_csv(np.array([[0.1, 0.2], [0.3, 0.4]])))
    assert [(r['row_type'], r['col_type'], r['value']) for r in rows] == [
        ('1', '1', '0.1'), ('1', '2', '0.2'), ('2', '1', '0.3'), ('2', '2', '0.4')]


@pytest.fixture(scope='module')
def additive_fit():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1, 2: 1, 3: 1}, alpha_mean=3.0),
                  NetworkSpec(80, {1: 200, 2: 150, 3: 120}, min_degree=3), seed=1)
    h, _ = simulate_additive(d)
    return h, fit_additive(h, lam=LAM)


@pytest.fixture(scope='module')
def mixture_fit():
    d = SimDesign('mixture', panel_a_truth(), NetworkSpec(150, {1: 600, 2: 200}, 3), seed=2)
    h, _ = simulate_mixture(d)
    model, state = fit_mixture(h, 2, seed=0, restarts=2)
    return h, model, state


def test_additive_only_bundle(tmp_path, additive_fit):
    _, (fit, dec) = additive_fit
    man = emit_bundle(tmp_path, additive=(fit, dec))
    assert sorted(man['files']) == ['additive.json']
    assert sorted(p.name for p in tmp_path.iterdir()) == ['additive.json', 'manifest.json']
    rec = json.loads((tmp_path / 'additive.json').read_text())
    for n in ('1', '2', '3'):
        s = rec['sizes'][n]['shares']
        assert sum(s.values()) == pytest.approx(1.0, abs=1e-5)
        assert rec['sizes'][n]['heterogeneity'] == pytest.approx(dec[int(n)].heterogeneity, rel=1e-5)
    assert rec['lambda'] == {'1': 1.0, '2': 0.67, '3': 0.48}


def test_full_bundle_manifest(tmp_path, mixture_fit):
    h, model, state = mixture_fit
    sol = solve_allocation(budgets_from_fit(model, state, h))
    proxies = type_proxies(h, 2, 3)
    man = emit_bundle(tmp_path, h=h, mixtures={2: (model, state)}, allocations={2: sol},
                      proxies=proxies, meta={'seed': 0})
    expect = {'descriptives.csv', 'mixture_K2.json', 'posteriors_K2.csv', 'matrix_sorting_K2.csv',
              'matrix_mean_output_K2.csv', 'matrix_allocation_K2.csv', 'allocation_K2.json',
              'matrix_proxy_sorting.csv', 'matrix_proxy_mean_output.csv'}
    assert set(man['files']) == expect
    assert {p.name for p in tmp_path.iterdir()} == expect | {'manifest.json'}
    for name, info in man['files'].items():
        data = (tmp_path / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == info['sha256'] and len(data) == info['bytes']
    assert man['meta'] == {'seed': 0}
    rec = json.loads((tmp_path / 'mixture_K2.json').read_text())
    shares = rec['variance_decomposition']['2']['shares']
    assert sum(shares.values()) == pytest.approx(1.0, abs=1e-5)
    post = _rows((tmp_path / 'posteriors_K2.csv').read_text())
    assert len(post) == len(state.worker_ids)
    assert set(post[0]) == {'worker_id', 'q1', 'q2', 'n_solo', 'n_pair'}
    sort = _rows((tmp_path / 'matrix_sorting_K2.csv').read_text())
    assert sum(float(r['value']) for r in sort) == pytest.approx(1.0, abs=1e-4)


def test_reemit_is_byte_identical(tmp_path, additive_fit, mixture_fit):
    h, model, state = mixture_fit
    _, fit = additive_fit
    a = emit_bundle(tmp_path / 'a', h=h, additive=fit, mixtures={2: (model, state)})
    b = emit_bundle(tmp_path / 'b', h=h, additive=fit, mixtures={2: (model, state)})
    assert a == b
    for name in list(a['files']) + ['manifest.json']:
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
