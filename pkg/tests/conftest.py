import pytest

from edgedrive.agent import AgentConfig, train_agent
from edgedrive.benchmark import default_classifier
from edgedrive.simulation import EpisodeConfig

MASTER_SEED = 42
TRAIN_EPISODES = 2000


@pytest.fixture(scope="session")
def default_scenario():
    return EpisodeConfig()


@pytest.fixture(scope="session")
def agent_config():
    return AgentConfig()


@pytest.fixture(scope="session")
def master_training(default_scenario, agent_config):
    """The full training run shared by the convergence and deployment
    criteria; trained once per session because it takes minutes."""
    return train_agent(default_scenario, agent_config, TRAIN_EPISODES, MASTER_SEED)


@pytest.fixture(scope="session")
def cell_classifier():
    return default_classifier()
