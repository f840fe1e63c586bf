import pytest

from gridfreq.cli import load_scenario
from gridfreq.fixtures import fixture_path


@pytest.fixture(scope="session")
def two_gen_scenario():
    return load_scenario(fixture_path("two_gen.scn"))


@pytest.fixture(scope="session")
def ring9_scenario():
    return load_scenario(fixture_path("ring9.scn"))
