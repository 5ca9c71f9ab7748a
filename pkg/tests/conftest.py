import numpy as np
import pytest

from components.geometry import Bodies
from components.input import RunConfig


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    """Run every test in a scratch directory so logs/ and data/output stay out of the tree."""
    monkeypatch.chdir(tmp_path)
    return tmp_path


@pytest.fixture
def make_config(tmp_path):
    def make(**overrides):
        values = {
            "num_bodies": 512,
            "order": 6,
            "theta": 0.5,
            "ncrit": 16,
            "nspawn": 1000,
            "ranks": 1,
            "output": str(tmp_path / "output"),
        }
        values.update(overrides)
        return RunConfig(**values)

    return make


@pytest.fixture
def random_bodies():
    def make(n, seed=0, low=0.0, high=1.0, charges="random"):
        rng = np.random.default_rng(seed)
        position = rng.uniform(low, high, (n, 3))
        charge = rng.uniform(-1.0, 1.0, n) if charges == "random" else np.full(n, 1.0 / n)
        return Bodies.from_arrays(position, charge)

    return make
