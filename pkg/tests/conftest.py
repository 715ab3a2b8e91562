import sys
from importlib import resources
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from voi import model

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SYNTHETIC = Path(str(resources.files("voi").joinpath("data/synthetic")))


@pytest.fixture(scope="session")
def synthetic_dir():
    return SYNTHETIC


@pytest.fixture(scope="session")
def tables():
    return model.load_tables(SYNTHETIC / "travel.csv", SYNTHETIC / "population.csv", SYNTHETIC / "burden.csv")


@pytest.fixture(scope="session")
def curves():
    return model.load_curves(SYNTHETIC / "curves.csv")


@pytest.fixture(scope="session")
def frozen():
    import oracles

    return oracles.frozen()
