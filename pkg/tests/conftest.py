from pathlib import Path

import pytest

from otr import load_network, load_policy, load_tree

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def example_net():
    """The 2-3-1 relu regression network used as the worked example everywhere."""
    return load_network(FIXTURES / "relu_2_3_1.json")


@pytest.fixture(scope="session")
def mcc_tree():
    return load_tree(FIXTURES / "mountaincar_policy.tree.json")


@pytest.fixture(scope="session")
def mcc_tree_simplified():
    return load_tree(FIXTURES / "mountaincar_policy_simplified.tree.json")


@pytest.fixture(scope="session")
def pendulum_pid():
    return load_policy(FIXTURES / "pendulum_pid.json")
