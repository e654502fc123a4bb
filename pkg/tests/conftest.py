import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from mace_engine.graph import Configuration  # noqa: E402
from mace_engine.model import MACEConfig, init_params  # noqa: E402
from mace_engine.synthetic import random_cluster  # noqa: E402

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")

DATA_DIR = Path(__file__).resolve().parents[1] / "data"


def small_config(**kw):
    base = dict(
        elements=(1, 8), channels=3, correlation=2, l_max=2, L_max=1, num_layers=2,
        radial={"mlp_widths": (6,), "r_cut": 4.0},
    )
    base.update(kw)
    return MACEConfig(**base)


def toy_config(num_layers=2):
    """Two channels, l_max 1: under 200 parameters, small enough for full finite differences."""
    return small_config(
        channels=2, l_max=1, L_max=1, correlation=2, num_layers=num_layers,
        radial={"mlp_widths": (4,), "r_cut": 4.0, "n_basis": 4}, readout_mlp_width=4,
    )


def small_model(rng, **kw):
    return init_params(small_config(**kw), rng, shift=-0.5, scale=1.5, norm=2.0)


def molecule(rng, n=5, elements=(1, 8)):
    pos, species = random_cluster(rng, n, elements)
    return Configuration(pos, species)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synthetic_path():
    return DATA_DIR / "synthetic_200.extxyz"


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in module.RESULTS:
            terminalreporter.write_line(line)
