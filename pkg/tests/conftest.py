import itertools

import numpy as np
import pytest

from regiongen.partition import adjacency_from_edges, connected_components


def grid_edges(nx, ny):
    e = []
    for y in range(ny):
        for x in range(nx):
            i = y * nx + x
            if x + 1 < nx:
                e.append((i, i + 1))
            if y + 1 < ny:
                e.append((i, i + nx))
    return e


def grid_adj(nx, ny):
    return adjacency_from_edges(nx * ny, grid_edges(nx, ny))


def random_connected(rng, n, p_lo=0.25, p_hi=0.6):
    """Adjacency of a random connected graph on n nodes."""
    while True:
        p = rng.uniform(p_lo, p_hi)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        adj = adjacency_from_edges(n, edges)
        if len(connected_components(adj)) == 1:
            return adj


def periodic_demand(rng, n, days=4, lag=24):
    h = np.arange(days * lag)
    amp = rng.uniform(0, 1, n)
    ph = rng.uniform(0, 2 * np.pi, n)
    rate = rng.uniform(0.5, 5, n)
    lam = np.clip(rate * (1 + amp * np.sin(2 * np.pi * h[:, None] / lag + ph)), 0, None)
    return rng.poisson(lam).astype(float)


def all_assignments(n, M):
    """Every surjective labelling of n nodes onto M clusters."""
    for a in itertools.product(range(M), repeat=n):
        if len(set(a)) == M:
            yield np.array(a)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
