"""Shared fixtures: a default world, its decoder and a reduced harness config."""

import numpy as np
import pytest
import yaml

from lpf.core.config import get_settings
from lpf.core.prob import GaussianPosterior, LabelDist
from lpf.harness.config import parse_config
from lpf.services.factorizer import SoftFactor, bayes_decoder
from lpf.services.world import WorldConfig, build_world

# every experiment shrunk to a few seconds; same structure as the defaults
SMALL_CONFIG = {
    "seed": 42,
    "t1": {"n_test": 40, "K": 5, "M": 8, "n_train_learned": 30, "epochs": 2},
    "t2": {"M_values": [4, 16], "trials": 5, "posteriors": 4, "order": 20},
    "t3": {"N_values": [60, 120], "n_test": 30, "seeds": 1, "epochs": 2, "d_eff_fixed": 10},
    "t4": {"n_entities": 20, "K": 5, "M": 8},
    "t5": {"epsilons": [0.0, 0.2, 0.5], "trials": 2, "n_entities": 10, "K": 5, "M": 8},
    "t6": {"K_values": [1, 2, 5], "trials": 2, "n_entities": 20, "M": 8},
    "t7": {"K_values": [1, 2], "n_entities": 5, "M": 50},
    "assumptions": {
        "correlation_entities": 60,
        "calibration_items": 100,
        "closure_cases": 20,
        "n_latents": 100,
        "norm_entities": 50,
        "M": 8,
    },
}


@pytest.fixture(autouse=True)
def clean_settings(monkeypatch):
    """Isolate tests from LPF_* variables in the caller's environment"""
    for name in ("LPF_SEED", "LPF_OUT_DIR", "LPF_JOBS", "LPF_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def world():
    return build_world(WorldConfig())


@pytest.fixture
def decoder(world):
    return bayes_decoder(world)


@pytest.fixture
def small_config():
    return parse_config(SMALL_CONFIG)


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL_CONFIG), encoding="utf-8")
    return path


def make_factor(probs, weight=1.0, source_id=0) -> SoftFactor:
    return SoftFactor(dist=LabelDist(np.asarray(probs, dtype=np.float64)), weight=weight, source_id=source_id)


def make_posterior(mean, var, source_id=0) -> GaussianPosterior:
    return GaussianPosterior(mean=np.asarray(mean, dtype=np.float64), var=np.asarray(var, dtype=np.float64), source_id=source_id)
