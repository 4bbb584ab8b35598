import numpy as np
import pytest

from cdsgd import data, objectives, topology


def quadratic_swarm(n_agents=5, d=10, cond=100.0, n=1000, scale=0.3, seed=0, beta=0.2):
    """Ring swarm on a random quadratic with per-sample linear perturbations."""
    ds = data.generate_noise(n, d, scale, seed)
    shards = data.partition(ds, n_agents, "iid", seed)
    spec = objectives.QuadraticObjective.random(d, cond, seed)
    pi = topology.build_ring(n_agents, beta) if n_agents >= 3 else topology.build_fully_connected(n_agents, 0.5)
    return spec, shards, pi


def central_diff(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        gf[i] = (f((flat + e).reshape(x.shape)) - f((flat - e).reshape(x.shape))) / (2 * h)
    return g


@pytest.fixture
def quad_swarm():
    return quadratic_swarm()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
