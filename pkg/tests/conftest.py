import numpy as np
import pytest

from soda_rl.datamodel import Dataset, Schema, Trajectory
from soda_rl.simulator import SimConfig, simulate_dataset


def make_dataset(lengths, dim=3, seed=0, split='train', actions=None):
    """Dataset of random trajectories with the given lengths"""

    rng = np.random.default_rng(seed)
    schema = Schema.continuous(['f{}'.format(i) for i in range(dim)])
    trajectories = []

    for i, length in enumerate(lengths):
        acts = rng.integers(0, 20, size=length) if actions is None else np.full(length, actions)
        trajectories.append(Trajectory('stay-{}'.format(i), rng.normal(size=(length, dim)), acts,
                                       rng.uniform(size=length)))

    return Dataset(tuple(trajectories), schema, split)


@pytest.fixture
def random_dataset():
    return make_dataset([5, 3, 7, 4, 6, 2, 5, 5])


@pytest.fixture(scope='session')
def sim_config():
    return SimConfig(horizon=8)


@pytest.fixture(scope='session')
def sim_dataset(sim_config):
    return simulate_dataset(sim_config, 80, seed=1)


@pytest.fixture(scope='session')
def sim_test_dataset(sim_config):
    return simulate_dataset(sim_config, 40, seed=2, split='test')
