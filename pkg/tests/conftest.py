import numpy as np
import pytest

from riverextremes.events import EventMatrix, to_pareto
from riverextremes.kernels import NetworkGeometry, hr_structure
from riverextremes.simulate import sample_hr
from riverextremes.toydata import toy_kernel_params, toy_network, toy_stations


@pytest.fixture(scope="session")
def toy_net():
    return toy_network()


@pytest.fixture(scope="session")
def toy_sts():
    return toy_stations()


@pytest.fixture(scope="session")
def theta0():
    return toy_kernel_params()


@pytest.fixture(scope="session")
def toy_geom(toy_net, toy_sts):
    return NetworkGeometry.from_stations(toy_net, toy_sts)


def as_events(draws: np.ndarray, station_ids, n_blocks: int = 50) -> EventMatrix:
    """Wrap simulated draws as a Pareto-transformed event matrix."""
    n = draws.shape[0]
    em = EventMatrix(
        raw=draws,
        station_ids=tuple(station_ids),
        window_starts=np.arange(n),
        window_lengths=np.ones(n, dtype=int),
        window_blocks=np.zeros(n, dtype=int),
        n_blocks=n_blocks,
        window_days=9,
    )
    return to_pareto(em)


@pytest.fixture(scope="session")
def sim500(toy_net, toy_sts, theta0):
    """500 events simulated from the true toy parameters, Pareto scale."""
    hr = hr_structure(theta0, toy_net, toy_sts)
    draws = sample_hr(hr, 500, seed=101)
    return as_events(draws, toy_sts.ids)


def fd_mixed(f, x, coords, h_rel=5e-3):
    """Central mixed finite difference of ``f`` in the listed coordinates."""
    coords = list(coords)
    if not coords:
        return f(np.asarray(x, dtype=float))
    i, rest = coords[0], coords[1:]
    h = h_rel * x[i]
    xp = np.array(x, dtype=float)
    xm = np.array(x, dtype=float)
    xp[i] += h
    xm[i] -= h
    return (fd_mixed(f, xp, rest, h_rel) - fd_mixed(f, xm, rest, h_rel)) / (2.0 * h)
