import json

import numpy as np
import pytest

from mgan.config import DatasetConfig, EvaluationConfig, ExperimentConfig, McmcSettings
from mgan.losses import LossConfig
from mgan.metrics import KdeConfig
from mgan.nn import init_network
from mgan.trainer import TrainConfig


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    """Run every test without MGAN_* overrides from the developer's shell."""
    for name in ('MGAN_THREADS', 'MGAN_LOG_LEVEL', 'MGAN_PROGRESS'):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_net():
    """3 -> 5 -> 4 -> 2 leaky-ReLU network"""
    return init_network([3, 5, 4, 2], rng_seed=11)


@pytest.fixture
def scalar_net():
    """4 -> 6 -> 5 -> 1 critic-shaped network"""
    return init_network([4, 6, 5, 1], rng_seed=13)


@pytest.fixture
def tiny_train_config():
    return TrainConfig(
        loss=LossConfig('lsgan'),
        lam=0.01,
        batch_size=20,
        epochs=3,
        generator_hidden=[8, 8],
        discriminator_hidden=[8, 8],
        monotonicity_pairs=200,
        keep_last=2,
        seed=5,
    )


@pytest.fixture
def tiny_experiment(tmp_path, tiny_train_config):
    """synthetic-4 experiment small enough to run every stage in seconds"""
    return ExperimentConfig(
        problem='synthetic-4',
        dataset=DatasetConfig(N=200, seed=7),
        train=tiny_train_config,
        evaluation=EvaluationConfig(
            metrics=['kl', 'relative_l2', 'mono_prob'],
            num_samples=200,
            test_samples=500,
            grid_resolution=40,
            kde=KdeConfig(bandwidth='scott'),
        ),
        output_dir=str(tmp_path / 'run'),
    )


@pytest.fixture
def tiny_bod_experiment(tmp_path, tiny_train_config):
    return ExperimentConfig(
        problem='bod',
        dataset=DatasetConfig(N=200, seed=3),
        train=tiny_train_config,
        evaluation=EvaluationConfig(
            x_star=[[0.18, 0.32, 0.42, 0.49, 0.54]],
            metrics=['kl', 'relative_l2', 'mmd', 'moments', 'mono_prob'],
            num_samples=300,
            grid_resolution=30,
            mcmc=McmcSettings(chain_length=500, burn_in=100, proposal_std=[0.3, 0.5], tune=False, seed=2),
        ),
        output_dir=str(tmp_path / 'bod'),
    )


@pytest.fixture
def write_config(tmp_path):
    """Write an ExperimentConfig (or raw dict) to JSON and return the path."""

    def write(config, name='experiment.json'):
        payload = config if isinstance(config, dict) else config.to_dict()
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return path

    return write
