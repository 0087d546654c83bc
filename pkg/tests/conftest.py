import numpy as np
import pytest

from teamprod.hypergraph import Hypergraph, Team

# five teams over five workers: A={1,2}, B={2,4,5}, C={3,4}, D={5}, E={3}
TOY = [('A', (1, 2)), ('B', (2, 4, 5)), ('C', (3, 4)), ('D', (5,)), ('E', (3,))]
TOY_ALPHA = np.array([1.0, 2.0, 3.0, 4.0, 5.0])


def toy_graph(outputs=None):
    if outputs is None:
        outputs = [sum(TOY_ALPHA[m - 1] for m in mem) for _, mem in TOY]
    return Hypergraph([Team(t, mem, y) for (t, mem), y in zip(TOY, outputs)])


@pytest.fixture
def toy():
    return toy_graph()


def random_graph(rng, n_workers, n_teams, max_size=3, solo_share=0.4):
    teams = []
    for j in range(n_teams):
        n = 1 if rng.random() < solo_share else int(rng.integers(2, max_size + 1))
        n = min(n, n_workers)
        mem = tuple(rng.choice(n_workers, size=n, replace=False).tolist())
        teams.append(Team(j, mem, float(rng.random())))
    return Hypergraph(teams)


def pytest_configure(config):
    config.addinivalue_line('markers', 'acceptance: acceptance criteria (slow)')


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get('test_acceptance')
    lines = getattr(mod, 'RESULTS', None)
    if lines:
        terminalreporter.section('acceptance criteria')
        for line in lines:
            terminalreporter.write_line(line)
