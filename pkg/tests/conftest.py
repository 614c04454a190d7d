"""
Shared fixtures: the sample match table, small economies and a planted benchmark
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from labornet.blockmodel import make_planted_benchmark
from labornet.panel import WorkerPanel
from labornet.roy_equilibrium import DemandSide, LaborSupplyParameters, ModelParameters, Technology
from labornet.shared.rng import substream

FIXTURES = Path(__file__).parent / 'fixtures'


@pytest.fixture
def sample_edges_path() -> Path:
    return FIXTURES / 'sample_edges.csv'


@pytest.fixture
def small_supply() -> LaborSupplyParameters:
    return LaborSupplyParameters(
        psi=np.array([[1.0, 0.4], [0.5, 1.2], [0.8, 0.8]]),
        xi=np.array([-0.2, 0.1]),
        nu=0.5,
        masses=np.array([0.5, 0.3, 0.2]),
    )


@pytest.fixture
def small_technology() -> Technology:
    return Technology(np.array([[0.4, 0.2], [0.26, 0.46]]))


@pytest.fixture
def small_demand() -> DemandSide:
    return DemandSide(np.array([0.6, 0.4]), eta=2.0)


@pytest.fixture
def small_params(small_supply, small_technology, small_demand) -> ModelParameters:
    return ModelParameters(
        supply=small_supply,
        technology=small_technology,
        demand=small_demand,
        k=1.0,
        sigma=np.full((3, 2), 0.2),
        separation_rate=0.3,
        sector_given_market=np.array([[0.7, 0.3], [0.2, 0.8]]),
        occupation_given_type=np.array([[0.6, 0.3, 0.1], [0.1, 0.2, 0.7], [0.3, 0.4, 0.3]]),
    )


def random_economy(seed: int, n_types: int, n_markets: int, n_sectors: int) -> ModelParameters:
    """Random but well-conditioned economy for solver and shock tests"""
    rng = substream(seed, 'tests', 'economy')
    beta = rng.uniform(0.1, 1.0, size=(n_markets, n_sectors))
    beta = 0.66 * beta / beta.sum(axis=0)
    return ModelParameters(
        supply=LaborSupplyParameters(
            psi=rng.uniform(0.5, 1.5, size=(n_types, n_markets)),
            xi=rng.normal(0.0, 0.3, size=n_markets),
            nu=0.5,
            masses=np.full(n_types, 1.0 / n_types),
        ),
        technology=Technology(beta),
        demand=DemandSide(np.full(n_sectors, 1.0 / n_sectors), eta=2.0),
        sigma=np.full((n_types, n_markets), 0.1),
        separation_rate=0.3,
    )


def specialized_economy(size: int = 4) -> ModelParameters:
    """Each type strongly prefers its own market; sector 0 leans on the low-numbered markets"""
    exposure = 2.0 ** -np.arange(size)
    beta = np.full((size, size), 0.66 / size)
    beta[:, 0] = 0.66 * exposure / exposure.sum()
    return ModelParameters(
        supply=LaborSupplyParameters(
            psi=1.0 + 1.5 * np.eye(size),
            xi=np.zeros(size),
            nu=0.2,
            masses=np.full(size, 1.0 / size),
        ),
        technology=Technology(beta),
        demand=DemandSide(np.full(size, 1.0 / size), eta=2.0),
        sigma=np.full((size, size), 0.1),
        separation_rate=0.5,
    )


@pytest.fixture
def economy_factory():
    return random_economy


@pytest.fixture
def specialized_params() -> ModelParameters:
    return specialized_economy()


@pytest.fixture
def planted_benchmark():
    return make_planted_benchmark(n_workers=60, n_jobs=30, n_types=2, n_markets=2, mean_degree=12.0,
                                  ratio=10.0, rng=substream(7, 'tests', 'planted'))


def make_panel(rows, extra=None) -> WorkerPanel:
    """Build a panel from (worker_id, t, iota, gamma, omega, c) tuples"""
    frame = pd.DataFrame(rows, columns=['worker_id', 't', 'iota', 'gamma', 'omega', 'c'])
    frame['worker_id'] = frame['worker_id'].astype(str)
    frame['omega'] = frame['omega'].astype(float)
    for name, values in (extra or {}).items():
        frame[name] = values
    return WorkerPanel(frame)


@pytest.fixture
def panel_factory():
    return make_panel
