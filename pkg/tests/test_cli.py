import csv
import json
import subprocess
import sys

import pytest

from teamprod.cli import main
from teamprod.hypergraph import dump_teams
from teamprod.simulate import NetworkSpec, SimDesign, panel_a_truth, simulate_mixture

from conftest import toy_graph


@pytest.fixture
def toy_csv(tmp_path):
    p = tmp_path / 'toy.csv'
    dump_teams(toy_graph(), p)
    return p


@pytest.fixture(scope='module')
def mixture_csv(tmp_path_factory):
    d = SimDesign('mixture', panel_a_truth(), NetworkSpec(120, {1: 500, 2: 160}, 3), seed=4)
    h, _ = simulate_mixture(d)
    p = tmp_path_factory.mktemp('data') / 'teams.csv'
    dump_teams(h, p)
    return p


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2


def test_bad_flag_is_usage_error(capsys):
    assert main(['fit-additive', '--spec', 'cubes']) == 2
    assert 'configuration error' in capsys.readouterr().err


def test_missing_input(tmp_path, capsys):
    assert main(['ingest', '--out', str(tmp_path)]) == 2
    assert main(['ingest', '--input', str(tmp_path / 'nope.csv'), '--out', str(tmp_path)]) == 2


def test_unknown_config_key(tmp_path, toy_csv):
    cfg = tmp_path / 'c.toml'
    cfg.write_text(f'input = "{toy_csv}"\ncolour = "blue"\n')
    assert main(['ingest', '--config', str(cfg), '--out', str(tmp_path / 'o')]) == 2


def test_malformed_rows(tmp_path, capsys):
    p = tmp_path / 'bad.csv'
    p.write_text('team_id,worker_ids,output\nA,1;2,3.0\nB,,1.0\n')
    assert main(['ingest', '--input', str(p), '--out', str(tmp_path / 'o')]) == 2
    assert 'ingest' in capsys.readouterr().err


def test_toy_network_lambda_failure(tmp_path, toy_csv, capsys):
    assert main(['fit-additive', '--input', str(toy_csv), '--out', str(tmp_path / 'o')]) == 3
    assert 'lambda not identified' in capsys.readouterr().err


def test_ingest_writes_hypergraph(tmp_path, toy_csv):
    out = tmp_path / 'o'
    assert main(['ingest', '--input', str(toy_csv), '--out', str(out)]) == 0
    assert (out / 'hypergraph.json').exists() and (out / 'descriptives.csv').exists()
    man = json.loads((out / 'manifest.json').read_text())
    assert man['meta']['command'] == 'ingest' and 'numpy' in man['meta']['versions']


def test_output_dir_from_environment(tmp_path, toy_csv, monkeypatch):
    monkeypatch.setenv('TEAMPROD_OUTPUT_DIR', str(tmp_path / 'env'))
    assert main(['ingest', '--input', str(toy_csv)]) == 0
    assert (tmp_path / 'env' / 'manifest.json').exists()


def _pipeline(tmp_path, data, name, seed=3):
    cfg = tmp_path / f'{name}.toml'
    cfg.write_text(f'input = "{data}"\nk_list = [1, 2]\nrestarts = 2\nadditive = false\n'
                   f'min_solo = 3\nbins = 2\n')
    out = tmp_path / name
    assert main(['pipeline', '--config', str(cfg), '--seed', str(seed), '--out', str(out)]) == 0
    return out


def test_pipeline_reproducible(tmp_path, mixture_csv):
    a = _pipeline(tmp_path, mixture_csv, 'a')
    b = _pipeline(tmp_path, mixture_csv, 'b')
    ma = json.loads((a / 'manifest.json').read_text())
    mb = json.loads((b / 'manifest.json').read_text())
    # identical settings and seed: same config hash and same file hashes
    assert ma['meta']['config_hash'] == mb['meta']['config_hash']
    assert ma['files'] == mb['files']
    assert {'mixture_K1.json', 'mixture_K2.json', 'matrix_allocation_K2.csv',
            'matrix_proxy_sorting.csv'} <= set(ma['files'])
    c = _pipeline(tmp_path, mixture_csv, 'c', seed=4)
    mc = json.loads((c / 'manifest.json').read_text())
    assert mc['meta']['config_hash'] != ma['meta']['config_hash']


def test_fit_mixture_then_allocate(tmp_path, mixture_csv):
    fit = tmp_path / 'fit'
    assert main(['fit-mixture', '--input', str(mixture_csv), '--k', '2', '--restarts', '2',
                 '--seed', '1', '--out', str(fit)]) == 0
    alloc = tmp_path / 'alloc'
    assert main(['allocate', '--model', str(fit / 'mixture_K2.json'),
                 '--posteriors', str(fit / 'posteriors_K2.csv'), '--out', str(alloc)]) == 0
    rows = list(csv.DictReader(open(alloc / 'matrix_allocation_K2.csv')))
    assert sum(float(r['value']) for r in rows) == pytest.approx(1.0, abs=1e-5)
    diag = json.loads((alloc / 'allocation_K2.json').read_text())
    assert all(t % 2 == 0 for t in diag['T2'])


def test_allocate_needs_inputs(tmp_path):
    assert main(['allocate', '--out', str(tmp_path)]) == 2


def test_fit_additive_levels(tmp_path):
    from teamprod.simulate import AdditiveTruth, simulate_additive
    d = SimDesign('additive', AdditiveTruth({1: 1.0, 2: 0.67, 3: 0.48}, {1: 0.5, 2: 0.5, 3: 0.5}, alpha_mean=6.0),
                  NetworkSpec(80, {1: 200, 2: 150, 3: 120}, min_degree=3), seed=8)
    h, _ = simulate_additive(d)
    assert h.outputs.min() > 0
    p = tmp_path / 'add.csv'
    dump_teams(h, p)
    out = tmp_path / 'o'
    assert main(['fit-additive', '--input', str(p), '--hutchinson-draws', '50', '--out', str(out)]) == 0
    rec = json.loads((out / 'additive.json').read_text())
    assert set(rec['sizes']) == {'1', '2', '3'}
    assert rec['spec'] == 'levels'


def test_simulate_csv(tmp_path):
    out = tmp_path / 'report.csv'
    assert main(['simulate', '--design', 'panelA1', '--reps', '2', '--seed', '7', '--restarts', '2',
                 '--out', str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ['parameter', 'truth', 'mean', 'p2.5', 'p97.5']
    assert len(rows) == 12
    man = json.loads((tmp_path / 'manifest.json').read_text())
    assert man['meta']['seed'] == 7 and 'report.csv' in man['files']


def test_simulate_unknown_design(tmp_path):
    assert main(['simulate', '--design', 'panelZ', '--reps', '1', '--out', str(tmp_path)]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, '-m', 'teamprod', '--version'], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
    r = subprocess.run([sys.executable, '-m', 'teamprod'], capture_output=True, text=True)
    assert r.returncode == 2
