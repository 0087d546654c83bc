import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from teamprod.mixture import MixtureModel
from teamprod.simulate import (AdditiveTruth, MonteCarloReport, NetworkSpec, SimDesign,
                               SimulationError, get_design, mixture_parameters,
                               nearest_rank_quantile, panel_a_truth, panel_b_truth,
                               run_monte_carlo, simulate_additive, simulate_mixture,
                               synthetic_network)

from conftest import TOY, TOY_ALPHA, toy_graph

LAM = {1: 1.0, 2: 0.67, 3: 0.48}
SPEC = NetworkSpec(40, {1: 60, 2: 50, 3: 20}, min_degree=2)


def _outputs(h):
    return np.array([t.output for t in h.teams])


def test_network_shape():
    members = synthetic_network(SPEC, np.random.default_rng(0))
    sizes = np.array([len(m) for m in members])
    assert [int((sizes == n).sum()) for n in (1, 2, 3)] == [60, 50, 20]
    assert all(len(set(m)) == len(m) for m in members)
    deg = np.bincount(np.concatenate(members), minlength=40)
    assert deg.min() >= 2 and deg.sum() == 60 + 100 + 60


def test_network_min_degree_too_large():
    with pytest.raises(SimulationError):
        synthetic_network(NetworkSpec(100, {1: 50}, min_degree=1), np.random.default_rng(0))


def test_additive_deterministic():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1, 2: 1, 3: 1}), SPEC, seed=5)
    h1, t1 = simulate_additive(d)
    h2, t2 = simulate_additive(d)
    np.testing.assert_array_equal(_outputs(h1), _outputs(h2))
    np.testing.assert_array_equal(t1['alpha'], t2['alpha'])
    h3, _ = simulate_additive(SimDesign('additive', d.truth, SPEC, seed=6))
    assert not np.array_equal(_outputs(h1), _outputs(h3))


def test_additive_zero_noise_exact():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 0, 2: 0, 3: 0}), SPEC, seed=1)
    h, tr = simulate_additive(d)
    expect = [LAM[len(m)] * tr['alpha'][list(m)].sum() for m in tr['members']]
    np.testing.assert_allclose(_outputs(h), expect, rtol=1e-15)


def test_toy_network_replay():
    # replaying the template keeps its memberships; ids are re-indexed from 0
    d = SimDesign('additive', AdditiveTruth({1: 1, 2: 1, 3: 1}, {1: 0, 2: 0, 3: 0}, alpha=TOY_ALPHA),
                  toy_graph(), seed=0)
    h, tr = simulate_additive(d)
    assert [tuple(m + 1 for m in mem) for mem in tr['members']] == [mem for _, mem in TOY]
    np.testing.assert_allclose(_outputs(h), _outputs(toy_graph()))


def test_shock_variance():
    d = SimDesign('additive', AdditiveTruth({1: 1}, {1: 2.0}, alpha=np.zeros(50)),
                  NetworkSpec(50, {1: 20000}), seed=3)
    h, _ = simulate_additive(d)
    assert np.var(_outputs(h)) == pytest.approx(4.0, rel=0.05)


def test_mixture_single_type():
    m = MixtureModel(1, np.array([1.0]), np.array([[0.0, 0.5]]), np.array([[[1.0, 0.5]]]))
    h, tr = simulate_mixture(SimDesign('mixture', m, NetworkSpec(30, {1: 40, 2: 30}), seed=0))
    assert not tr['types'].any()
    assert h.J == 70


def test_mixture_rejects_large_teams():
    with pytest.raises(SimulationError):
        simulate_mixture(SimDesign('mixture', panel_a_truth(), SPEC, seed=0))


def test_mixture_output_moments():
    d = SimDesign('mixture', panel_a_truth(), NetworkSpec(3000, {1: 30000, 2: 1}), seed=2)
    h, tr = simulate_mixture(d)
    solo = [t for t in h.teams if t.size == 1]
    ly = np.log([t.output for t in solo])
    k = tr['types'][[t.members[0] for t in solo]]
    for j, mean in enumerate((0.0, 2.0)):
        assert ly[k == j].mean() == pytest.approx(mean, abs=0.03)
        assert ly[k == j].var() == pytest.approx(0.5, rel=0.05)
    assert (tr['types'] == 0).mean() == pytest.approx(0.6, abs=0.03)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000))
def test_full_assortativity(seed):
    d = SimDesign('mixture', panel_b_truth(), NetworkSpec(60, {1: 30, 2: 80}, min_degree=1),
                  assortativity=1.0, seed=seed)
    h, tr = simulate_mixture(d)
    types = tr['types']
    ids = {w.id: i for i, w in enumerate(h.workers)}
    pairs = [t for t in h.teams if t.size == 2]
    assert all(types[t.members[0]] == types[t.members[1]] for t in pairs)
    # leftover odd slots become solo teams, so every participation is kept
    assert sum(t.size for t in h.teams) == 30 + 160
    assert len(ids) <= 60


def test_design_validation():
    with pytest.raises(SimulationError):
        SimDesign('other', None, SPEC)
    with pytest.raises(SimulationError):
        SimDesign('mixture', AdditiveTruth(LAM, {1: 1}), SPEC)
    with pytest.raises(SimulationError):
        SimDesign('mixture', panel_a_truth(), SPEC, assortativity=1.5)
    with pytest.raises(SimulationError):
        get_design('panelC')


def test_mixture_parameter_names():
    names = list(mixture_parameters(panel_b_truth()))
    assert names[:4] == [f'Mean type {k}' for k in (1, 2, 3, 4)]
    assert names[8:11] == ['Mean type (1,1)', 'Mean type (1,2)', 'Mean type (2,2)']
    assert names[-3:] == ['Prop. type 1', 'Prop. type 2', 'Prop. type 3']
    assert len(names) == 4 + 4 + 10 + 10 + 3


def test_nearest_rank():
    x = np.arange(1.0, 101.0)
    assert nearest_rank_quantile(x, 0.025) == 3.0
    assert nearest_rank_quantile(x, 0.975) == 98.0
    assert nearest_rank_quantile([4.0], 0.5) == 4.0


def _truth_estimator(h, seed=None):
    return {'a': 1.5, 'b': -2.0}


def test_identity_estimator_zero_width():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1, 2: 1, 3: 1}), SPEC, replications=7, seed=0)
    rep = run_monte_carlo(d, _truth_estimator, truth={'a': 1.5, 'b': -2.0})
    for r in rep.summary():
        assert r['mean'] == r['p2.5'] == r['p97.5'] == r['truth']


def _mean_output(h):
    return {'mean': float(np.mean([t.output for t in h.teams]))}


def test_single_replication():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1, 2: 1, 3: 1}), SPEC, seed=0)
    rep = run_monte_carlo(d, _mean_output, replications=1)
    r = rep.row('mean')
    assert r['mean'] == r['p2.5'] == r['p97.5']
    assert np.isnan(r['truth'])


def test_monte_carlo_reproducible_and_parallel():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1, 2: 1, 3: 1}), SPEC, replications=6, seed=11)
    a = run_monte_carlo(d, _mean_output)
    b = run_monte_carlo(d, _mean_output)
    c = run_monte_carlo(d, _mean_output, n_jobs=2)
    np.testing.assert_array_equal(a.estimates, b.estimates)
    np.testing.assert_array_equal(a.estimates, c.estimates)
    # replications use distinct streams
    assert np.unique(a.estimates).size == 6


def test_additive_design_needs_estimator():
    d = SimDesign('additive', AdditiveTruth(LAM, {1: 1}), SPEC)
    with pytest.raises(SimulationError):
        run_monte_carlo(d)


def test_csv_layout(tmp_path):
    rep = MonteCarloReport(['Mean type 1', 'Prop. type 1'], {'Mean type 1': 0.0, 'Prop. type 1': 0.6},
                           np.array([[0.1, 0.5], [-0.1, 0.7], [0.0, 0.6]]))
    text = rep.to_csv(tmp_path / 'r.csv')
    assert (tmp_path / 'r.csv').read_text() == text
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ['parameter', 'truth', 'mean', 'p2.5', 'p97.5']
    assert rows[1] == ['Mean type 1', '0', '0', '-0.1', '0.1']
    assert rows[2] == ['Prop. type 1', '0.6', '0.6', '0.5', '0.7']


def test_default_mixture_monte_carlo_small():
    d = get_design('panelA1', replications=2, seed=3)
    rep = run_monte_carlo(d)
    assert rep.estimates.shape == (2, 11)
    assert rep.truth['Mean type (2,2)'] == 4.0
    assert abs(rep.row('Mean type 2')['mean'] - 2.0) < 0.2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.floats(0.05, 0.95))
def test_partial_assortativity_keeps_slots(seed, a):
    d = SimDesign('mixture', panel_b_truth(), NetworkSpec(30, {1: 10, 2: 60}, min_degree=1),
                  assortativity=a, seed=seed)
    h, _ = simulate_mixture(d)
    assert sum(t.size for t in h.teams) == 10 + 120
    assert all(len(set(t.members)) == t.size for t in h.teams)


def test_assortativity_raises_same_type_share():
    def share(a):
        d = SimDesign('mixture', panel_a_truth(), NetworkSpec(400, {1: 200, 2: 2000}, min_degree=1),
                      assortativity=a, seed=1)
        h, tr = simulate_mixture(d)
        ty = tr['types']
        return np.mean([ty[t.members[0]] == ty[t.members[1]] for t in h.teams if t.size == 2])
    # random matching with shares (0.6, 0.4) gives 0.52 same-type pairs
    assert share(0.0) == pytest.approx(0.52, abs=0.03)
    assert share(0.5) > share(0.0) + 0.1
