from __future__ import annotations

import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from latentview.alignment import TrainConfig, train
from latentview.data import DataConfig, generate_dataset
from latentview.geometry import enumerate_candidates
from latentview.model import NetConfig, init_network

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def random_stack(rng: np.random.Generator, M: int, N: int, rows: int | None = None) -> np.ndarray:
    """M row-stochastic prediction matrices of shape (rows, N + 1)."""
    logits = rng.normal(scale=2.0, size=(M, rows or M, N + 1))
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(DataConfig(), seed=0)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(DataConfig(n_classes=2, n_train=3, n_test=2, image_size=8), seed=3)


@pytest.fixture(scope="session")
def trained_default(default_dataset):
    """The default benchmark run: (dataset, net, candidates, history)."""
    ds = default_dataset
    cands = enumerate_candidates(ds.setup)
    net = init_network(NetConfig(rows=ds.M, cols=ds.config.n_classes + 1))
    net, hist = train(ds.train, cands, net, TrainConfig(epochs=30, variance_every=50))
    return ds, net, cands, hist


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
