import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from blockflow import Environment, RewardModel, RewardSpec, Topology, Vocabulary

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
CONFIGS = Path(__file__).resolve().parent.parent / "configs"

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


@pytest.fixture(scope="session")
def bridge_env() -> Environment:
    return Environment(Topology.load(FIXTURES / "topo_bridge.json"),
                       Vocabulary.load(FIXTURES / "vocab_bridge.csv"))


@pytest.fixture(scope="session")
def bridge_reward(bridge_env) -> RewardModel:
    # cutoff below every fixture GSA so all 12 terminals score positive
    return RewardModel(RewardSpec(cutoff=2500.0, surrogate_scale=1000.0), bridge_env)


@pytest.fixture(scope="session")
def single_env() -> Environment:
    return Environment(Topology.load(FIXTURES / "topo_single.json"),
                       Vocabulary.load(FIXTURES / "vocab_bridge.csv"))


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(1234))


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def stub_adapter_command(body: str) -> tuple[str, ...]:
    """An adapter implemented as an inline interpreter one-liner."""
    return (sys.executable, "-c", body)
