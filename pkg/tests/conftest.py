import numpy as np
import pytest
import scipy.sparse as sp

from phasesync_se.harness import random_network, three_bus_fixture
from phasesync_se.netmodel import load_case

TWO_BUS = """function mpc = twobus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1	0	230	1	1.1	0.9;
	2	1	0	0	0	0	1	1	0	230	1	1.1	0.9;
];
mpc.gen = [
	1	0	0	300	-300	1	100	1	250	10	0	0	0	0	0	0	0	0	0	0	0;
];
%% branch data
mpc.branch = [
	1	2	0	0.1	0	250	250	250	0	0	1	-360	360;
];
mpc.gencost = [
	2	0	0	3	0.01	40	0;
];
mpc.bus_name = {
	'one';
	'two';
};
"""

# acceptance-suite lines, printed at the end of the session
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[k])


@pytest.fixture(scope="session")
def pegase():
    return load_case("case1354pegase")


@pytest.fixture(scope="session")
def pegase_v(pegase):
    return pegase.Vm * np.exp(1j * pegase.Va)


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def three_bus():
    return three_bus_fixture()


@pytest.fixture(scope="session")
def net10():
    return random_network(10, seed=10)


@pytest.fixture(scope="session")
def net5():
    return random_network(5, seed=5)


def random_state(n, rng, spread_deg=30.0, reference=0):
    u = rng.uniform(0.9, 1.1, n)
    th = np.deg2rad(rng.uniform(-spread_deg, spread_deg, n))
    th[reference] = 0.0
    return u * np.exp(1j * th)


def random_hermitian_pd(n, rng, deg=3):
    """Sparse Hermitian PD: magnetic Laplacian of a random multigraph plus a positive diagonal."""
    i = rng.integers(0, n, deg * n)
    j = rng.integers(0, n, deg * n)
    keep = i != j
    i, j = i[keep], j[keep]
    w = rng.uniform(0.1, 1.0, i.size) * np.exp(1j * rng.uniform(-np.pi, np.pi, i.size))
    A = sp.coo_matrix((w, (i, j)), shape=(n, n)).tocsc()
    d = np.asarray(abs(A).sum(axis=0)).ravel() + np.asarray(abs(A).sum(axis=1)).ravel()
    return (sp.diags(d + rng.uniform(0.05, 2.0, n)) - A - A.conj().T).tocsc()


def fd_jacobian(net, mset, state, mode="full", h=None):
    """Central differences of the weighted residual in (free angles, magnitudes).

    Default step cbrt(eps) balances truncation against roundoff.
    """
    from phasesync_se.estimator import VoltageState, linearize

    free = np.delete(np.arange(net.n), state.reference)
    z0 = np.r_[state.theta[free], state.u] if mode == "full" else state.theta[free].copy()

    def resid(z):
        th = state.theta.copy()
        th[free] = z[:free.size]
        u = z[free.size:] if mode == "full" else state.u
        return linearize(net, mset, VoltageState(u, th, state.reference), mode).r

    h = np.cbrt(np.finfo(float).eps) if h is None else h
    cols = []
    for k in range(z0.size):
        e = np.zeros_like(z0)
        e[k] = h
        cols.append((resid(z0 + e) - resid(z0 - e)) / (2 * h))
    return np.column_stack(cols)
