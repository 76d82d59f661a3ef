import os
from pathlib import Path

import numpy as np
import pytest

from arzcontrol.arz_sim import SimConfig
from arzcontrol.bench.config import ExperimentConfig
from arzcontrol.bench.experiments import trained_operator
from arzcontrol.traffic_model import ModelParams, linearization


@pytest.fixture(scope="session")
def params():
    return ModelParams()


@pytest.fixture(scope="session")
def default_lin(params):
    return linearization(0.12, params)


@pytest.fixture(scope="session")
def sim_cfg(params, default_lin):
    return SimConfig(params, default_lin[0])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


MODEL_CACHE = Path(os.environ.get("ARZ_MODEL_CACHE", Path(__file__).resolve().parents[1] / ".model_cache"))


@pytest.fixture(scope="session")
def experiment():
    return ExperimentConfig()


@pytest.fixture(scope="session")
def trained(experiment):
    """Full-size kernel and law operators (900 lambda2 instances each).

    Built once through the same pipeline as the command line and cached
    under .model_cache/ keyed by the configuration hash; the first run
    takes roughly twelve minutes on one CPU core.
    """
    return {kind: trained_operator(experiment, kind, MODEL_CACHE) for kind in ("kernel", "law")}
